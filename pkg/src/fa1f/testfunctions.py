"""Observables used in the variational bounds, with declared dependency sets.

Every factory returns a :class:`TestFunction` whose `support` lists the site
indices whose flip can change the value; flips outside the support never
change it, which the Dirichlet estimators exploit.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .model import Configuration, Volume


class TestFunction:
    """Real-valued observable on configurations of a fixed volume.

    Parameters
    ----------
    label : str
        Short name used in CSV output.
    volume : Volume
        The volume the observable is defined on.
    support : array of int
        Sites whose occupancy can affect the value.
    fn : callable(Configuration) -> float
    batch_fn : callable(occupancy matrix) -> values, optional
        Vectorized evaluation over an (m, n_sites) uint8 matrix.
    dirichlet_batch_fn : callable(occupancy matrix) -> summands, optional
        Per-row sum_x c_x (f(eta^x)-f(eta))^2; used as a fast path by the
        Dirichlet estimator.
    """

    __test__ = False  # not a pytest class

    def __init__(self, label, volume, support, fn, batch_fn=None, dirichlet_batch_fn=None):
        self.label = label
        self.volume = volume
        self.support = np.asarray(support, dtype=np.int64)
        self._fn = fn
        self._batch_fn = batch_fn
        self.dirichlet_batch_fn = dirichlet_batch_fn

    def __call__(self, config: Configuration) -> float:
        return self._fn(config)

    def value_batch(self, occ: np.ndarray) -> np.ndarray:
        if self._batch_fn is not None:
            return np.asarray(self._batch_fn(occ), dtype=np.float64)
        vol = self.volume
        return np.array(
            [self._fn(Configuration(vol, row)) for row in occ], dtype=np.float64
        )

    def __repr__(self):
        return f"TestFunction({self.label!r}, |support|={len(self.support)})"


def _window_subgraph(volume: Volume, sites: np.ndarray):
    """CSR adjacency of the volume restricted to `sites` (local indexing)."""
    pos = -np.ones(volume.n_sites, dtype=np.int64)
    pos[sites] = np.arange(len(sites))
    indptr = [0]
    indices = []
    for site in sites:
        for nbr in volume.neighbors(int(site)):
            p = pos[nbr]
            if p >= 0:
                indices.append(p)
        indptr.append(len(indices))
    return (
        np.asarray(indptr, dtype=np.int64),
        np.asarray(indices, dtype=np.int32),
    )


# ---------------------------------------------------------------------------
# cluster count
# ---------------------------------------------------------------------------


def cluster_count(config: Configuration, ell: int) -> int:
    """Number of connected clusters of empty sites inside the window
    {0..ell-1}^d (adjacency restricted to the window)."""
    return int(cluster_count_function(config.volume, ell)(config))


def cluster_count_function(volume: Volume, ell: int) -> TestFunction:
    window = volume.window_box(ell)
    win_sites = window.astype(np.int64)
    win_indptr, win_indices = _window_subgraph(volume, win_sites)
    full_indptr = volume.indptr.astype(np.int64)
    full_indices = volume.indices

    def fn(config):
        occ_win = config.occupancy[win_sites][None, :]
        return float(kernels.cluster_count_batch(occ_win, win_indptr, win_indices)[0])

    def batch_fn(occ):
        occ_win = np.ascontiguousarray(occ[:, win_sites])
        return kernels.cluster_count_batch(occ_win, win_indptr, win_indices)

    def dirichlet_batch_fn(occ):
        occ = np.ascontiguousarray(occ, dtype=np.uint8)
        _, summands = kernels.cluster_stats_batch(
            occ, win_sites, win_indptr, win_indices, full_indptr, full_indices
        )
        return summands

    return TestFunction(
        "cluster_count", volume, window, fn, batch_fn, dirichlet_batch_fn
    )


# ---------------------------------------------------------------------------
# window vacancy indicator
# ---------------------------------------------------------------------------


def has_window_vacancy(config: Configuration, ell: int) -> int:
    """1 iff the window {0..ell-1}^d contains a vacancy."""
    window = config.volume.window_box(ell)
    return int((config.occupancy[window] == 0).any())


def window_vacancy_function(volume: Volume, ell: int) -> TestFunction:
    window = volume.window_box(ell)

    def fn(config):
        return float((config.occupancy[window] == 0).any())

    def batch_fn(occ):
        return (occ[:, window] == 0).any(axis=1).astype(np.float64)

    return TestFunction("window_vacancy", volume, window, fn, batch_fn)


# ---------------------------------------------------------------------------
# one-dimensional tent of the nearest-vacancy distance
# ---------------------------------------------------------------------------


def _tent_profile(xi: np.ndarray, ell: int) -> np.ndarray:
    return np.where(xi < ell, xi, np.where(xi < 2 * ell, 2 * ell - xi, 0)).astype(
        np.float64
    )


def vacancy_distance_tent(config: Configuration, ell: int) -> float:
    """Tent profile of the distance xi to the nearest vacancy: xi below ell,
    then 2*ell - xi, and 0 from 2*ell on (d=1, symmetric volume)."""
    return float(tent_function(config.volume, ell)(config))


def tent_function(volume: Volume, ell: int) -> TestFunction:
    if volume.kind == "graph" or volume.d != 1:
        raise ValueError("the tent observable requires a d=1 lattice volume")
    ball = volume.window_ball(2 * ell)  # validates the radius fits
    norms = np.abs(volume.centered_coords()).sum(axis=1)
    order = np.argsort(norms[ball], kind="stable")
    scan_sites = ball[order]
    scan_norms = norms[scan_sites]
    support = scan_sites[scan_norms < 2 * ell]

    def xi_batch(occ):
        empt = occ[:, scan_sites] == 0
        any_empty = empt.any(axis=1)
        first = np.argmax(empt, axis=1)
        return np.where(any_empty, scan_norms[first], 2 * ell)

    def fn(config):
        return float(_tent_profile(xi_batch(config.occupancy[None, :]), ell)[0])

    def batch_fn(occ):
        return _tent_profile(xi_batch(occ), ell)

    return TestFunction("tent", volume, support, fn, batch_fn)


# ---------------------------------------------------------------------------
# capped log distance to the nearest vacancy (d=2)
# ---------------------------------------------------------------------------


def capped_log_distance(config: Configuration, ell: int) -> float:
    """min over empty sites of log(1 + min(\\|x\\|_1, ell)); log(1+ell) when no
    vacancy lies in the open 1-norm ball of radius ell (d=2)."""
    return float(log_distance_function(config.volume, ell)(config))


def log_distance_function(volume: Volume, ell: int) -> TestFunction:
    if volume.kind == "graph" or volume.d != 2:
        raise ValueError("the log-distance observable requires a d=2 lattice volume")
    ball = volume.window_ball(ell)  # validates the closed ball fits
    norms = np.abs(volume.centered_coords()).sum(axis=1)
    inner = ball[norms[ball] < ell]
    order = np.argsort(norms[inner], kind="stable")
    scan_sites = inner[order]
    scan_norms = norms[scan_sites]
    cap = float(np.log1p(ell))

    def batch_fn(occ):
        empt = occ[:, scan_sites] == 0
        any_empty = empt.any(axis=1)
        first = np.argmax(empt, axis=1)
        return np.where(any_empty, np.log1p(scan_norms[first]), cap)

    def fn(config):
        return float(batch_fn(config.occupancy[None, :])[0])

    return TestFunction("log_distance", volume, scan_sites, fn, batch_fn)


# ---------------------------------------------------------------------------
# origin occupancy
# ---------------------------------------------------------------------------


def origin_occupation(config: Configuration) -> int:
    return int(config.occupancy[config.volume.origin])


def origin_function(volume: Volume) -> TestFunction:
    o = volume.origin

    def fn(config):
        return float(config.occupancy[o])

    def batch_fn(occ):
        return occ[:, o].astype(np.float64)

    return TestFunction("origin", volume, np.array([o]), fn, batch_fn)


# ---------------------------------------------------------------------------
# largest pairwise meeting time among vacancies
# ---------------------------------------------------------------------------


def max_meeting_time(config: Configuration, meet_table) -> float:
    """max tau_meet(x, y) over ordered pairs of empty sites; 0 with fewer
    than two vacancies."""
    if config.volume.n_sites != meet_table.tau.shape[0]:
        raise ValueError("configuration volume does not match the meeting table")
    empties = np.flatnonzero(config.occupancy == 0)
    if len(empties) < 2:
        return 0.0
    return float(meet_table.tau[np.ix_(empties, empties)].max())


def meeting_time_function(meet_table) -> TestFunction:
    volume = meet_table.graph
    tau = meet_table.tau

    def fn(config):
        return max_meeting_time(config, meet_table)

    def batch_fn(occ):
        out = np.empty(len(occ), dtype=np.float64)
        for r, row in enumerate(occ):
            empties = np.flatnonzero(row == 0)
            out[r] = 0.0 if len(empties) < 2 else tau[np.ix_(empties, empties)].max()
        return out

    return TestFunction(
        "max_tau_meet", volume, np.arange(volume.n_sites), fn, batch_fn
    )
