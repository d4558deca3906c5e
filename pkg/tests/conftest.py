import math

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def check_path_properties(eta, ell, q=0.3):
    """All five structural properties of the origin-emptying flip path."""
    from fa1f import canonical_path, config_path, constraint

    vol = eta.volume
    window = vol.window_box(ell)
    steps = config_path(eta, ell)
    origin = vol.origin
    d = vol.d

    if not steps:
        assert eta.occupancy[origin] == 0
        return None

    # 1: starts at eta, ends with the origin empty
    assert np.array_equal(steps[0].before.occupancy, eta.occupancy)
    assert steps[-1].after.occupancy[origin] == 0

    # 2: consecutive flips with the constraint holding
    for a, b in zip(steps, steps[1:]):
        assert np.array_equal(a.after.occupancy, b.before.occupancy)
    for s in steps:
        assert constraint(s.before, s.site) == 1

    # 3: flipped sites lie on the canonical path of the target vacancy,
    # each used at most twice; step count bounded by 2 d ell
    empties = window[eta.occupancy[window] == 0]
    coords = vol.coords[empties]
    norms = np.abs(coords).sum(axis=1)
    order = np.lexsort(tuple(coords[:, a] for a in reversed(range(d))) + (norms,))
    z = tuple(int(c) for c in coords[order[0]])
    gamma_sites = [vol.index_of(g) for g in canonical_path(z).steps]
    used = [s.site for s in steps]
    assert set(used) <= set(gamma_sites)
    for site in set(used):
        assert used.count(site) <= 2
    assert len(steps) <= 2 * d * ell
    if d == 1:
        assert len(steps) <= 2 * ell

    # 4: off-the-flipped-site window vacancies never exceed the original
    # window vacancy count
    base_count = int((eta.occupancy[window] == 0).sum())
    win_set = set(int(w) for w in window)
    for s in steps:
        occ = s.before.occupancy
        count = sum(1 for w in win_set if w != s.site and occ[w] == 0)
        assert count <= base_count

    # reversibility-ratio consequence: mu(eta) / R(eta'^x, eta') <= 1/q
    logq, logp = math.log(q), math.log(1 - q)

    def log_mu(occ):
        k = int((occ == 0).sum())
        return k * logq + (len(occ) - k) * logp

    for s in steps:
        occ = s.before.occupancy
        log_r = math.log(q) + math.log(1 - q) + sum(
            logq if occ[y] == 0 else logp
            for y in range(vol.n_sites)
            if y != s.site
        )
        assert log_mu(eta.occupancy) - log_r <= -logq + 1e-9

    return z, steps


def exact_tent_mean(q, ell):
    """Closed-form mean of the tent observable on the radius-2*ell volume:
    the nearest-vacancy distance is geometric with P(xi > k) = (1-q)^(2k+1)."""
    p = 1.0 - q
    theta = 1.0 - p * p
    total = 0.0
    for k in range(1, ell):
        total += k * p ** (2 * k - 1) * theta
    for k in range(ell, 2 * ell):
        total += (2 * ell - k) * p ** (2 * k - 1) * theta
    return total


def exact_tent_dirichlet(q, ell):
    """Closed-form Dirichlet form of the tent observable: changing flips are
    fill/empty events at the nearest-vacancy front, all with unit square."""
    p = 1.0 - q
    theta = 1.0 - p * p
    core = theta * (q + p)
    for x in range(1, 2 * ell):
        core += 2.0 * (p ** (2 * x) * q * q + p ** (2 * x + 1) * q)
    return q * p * core


def graph_family():
    """Small connected graphs used across oracle tests."""
    from fa1f import Volume

    rng = np.random.default_rng(99)
    graphs = {
        "P2": Volume.graph(2, [(0, 1)]),
        "P3": Volume.graph(3, [(0, 1), (1, 2)]),
        "C4": Volume.graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)]),
        "K4": Volume.graph(4, [(i, j) for i in range(4) for j in range(i + 1, 4)]),
        "S5": Volume.graph(6, [(0, i) for i in range(1, 6)]),
        "C6": Volume.graph(6, [(i, (i + 1) % 6) for i in range(6)]),
        "P10": Volume.graph(10, [(i, i + 1) for i in range(9)]),
    }
    # one random connected graph on 8 vertices: a path plus random chords
    edges = [(i, i + 1) for i in range(7)]
    extra = set()
    while len(extra) < 4:
        u, v = sorted(rng.integers(0, 8, size=2))
        if u != v and (u, v) not in edges and (u, v) not in extra:
            extra.add((u, v))
    graphs["R8"] = Volume.graph(8, edges + sorted(extra))
    return graphs
