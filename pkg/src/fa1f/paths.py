"""Canonical lattice paths from the origin, cones, and the vacancy-shuttling
configuration path.

The canonical path to a target z is the nearest-neighbour discretization of
the straight segment [0, z]: axis crossings s*z_a in (0,1] are collected,
sorted lexicographically (exact rational arithmetic, so ties are broken by
axis), and walked one unit step at a time. Step i always sits at 1-norm i.
Targets with negative coordinates are reflected into the nonnegative orthant
axis by axis and the finished path is reflected back.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import PreconditionError
from .model import Configuration, constraint, flip


@dataclass(frozen=True)
class GeometricPath:
    """Path gamma_0 .. gamma_n from the origin to `target`, with the sorted
    crossing witnesses (s_i, axis_i); axes are 1-based."""

    target: tuple
    steps: tuple
    witnesses: tuple

    @property
    def n(self) -> int:
        return len(self.steps) - 1

    def __getitem__(self, i):
        return self.steps[i]


def canonical_path(z) -> GeometricPath:
    """Canonical geometric path from the origin to z (z != 0)."""
    z = tuple(int(c) for c in z)
    n = sum(abs(c) for c in z)
    if n == 0:
        raise ValueError("the target must differ from the origin")
    signs = tuple(1 if c >= 0 else -1 for c in z)
    absz = tuple(abs(c) for c in z)
    witnesses = []
    for axis, za in enumerate(absz, start=1):
        for k in range(1, za + 1):
            witnesses.append((Fraction(k, za), axis))
    witnesses.sort()
    steps = [(0,) * len(z)]
    for _, axis in witnesses:
        cur = list(steps[-1])
        cur[axis - 1] += signs[axis - 1]
        steps.append(tuple(cur))
    return GeometricPath(target=z, steps=tuple(steps), witnesses=tuple(witnesses))


def floor_alpha(y, alpha: int):
    """Floor the first `alpha` coordinates of y and apply ceil-minus-one to
    the rest (alpha is 1-based)."""
    y = tuple(y)
    if not (1 <= alpha <= len(y)):
        raise ValueError(f"alpha must lie in 1..{len(y)}; got {alpha}")
    head = tuple(math.floor(c) for c in y[:alpha])
    tail = tuple(math.ceil(c) - 1 for c in y[alpha:])
    return head + tail


def cone(y, ell: int) -> list:
    """Targets z in the nonnegative orthant with \\|y\\|_1 < \\|z\\|_1 <= ell whose
    canonical path passes through y at step \\|y\\|_1; brute-force enumeration
    over the ell-ball."""
    y = tuple(int(c) for c in y)
    if any(c < 0 for c in y):
        raise ValueError("y must lie in the nonnegative orthant")
    m = sum(y)
    if m > ell:
        raise ValueError(f"\\|y\\|_1 = {m} exceeds ell = {ell}")
    d = len(y)
    out = []
    for z in itertools.product(range(ell + 1), repeat=d):
        nz = sum(z)
        if not (m < nz <= ell):
            continue
        if canonical_path(z).steps[m] == y:
            out.append(z)
    return sorted(out)


@dataclass(frozen=True)
class ConfigPathStep:
    """One constrained flip: `after` equals `before` flipped at `site`, and
    the constraint at `site` holds in `before`."""

    site: int
    before: Configuration
    after: Configuration

    def __post_init__(self):
        if constraint(self.before, self.site) != 1:
            raise ValueError(f"constraint violated at site {self.site}")
        diff = np.flatnonzero(self.before.occupancy != self.after.occupancy)
        if diff.tolist() != [self.site]:
            raise ValueError("after must equal before flipped at site")


def config_path(eta: Configuration, ell: int) -> list:
    """Constrained flip sequence that empties the origin, shuttling the
    nearest window vacancy inward along its canonical path.

    Requires a vacancy inside the window {0..ell-1}^d. The emitted sites
    alternate empty-one-step-in / refill-behind along the canonical path of
    the minimal-1-norm vacancy z (ties broken lexicographically), ending as
    soon as the origin is empty. Each path site appears at most twice and no
    step increases the number of vacancies in the window off the flipped
    site beyond the original count.
    """
    vol = eta.volume
    window = vol.window_box(ell)
    empties = window[eta.occupancy[window] == 0]
    if len(empties) == 0:
        raise PreconditionError(f"no vacancy inside the {ell}-window")
    coords = vol.coords[empties]
    norms = np.abs(coords).sum(axis=1)
    order = np.lexsort(tuple(coords[:, a] for a in reversed(range(vol.d))) + (norms,))
    z = tuple(int(c) for c in coords[order[0]])
    n = int(norms[order[0]])
    if n == 0:
        return []
    gamma = canonical_path(z).steps
    sites = []
    for i in range(2 * n - 1):
        k = n - i // 2 - 1 if i % 2 == 0 else n - (i - 1) // 2
        sites.append(vol.index_of(gamma[k]))
    origin = vol.origin
    steps = []
    cur = eta
    for site in sites:
        nxt = flip(cur, site)
        steps.append(ConfigPathStep(site=site, before=cur, after=nxt))
        cur = nxt
        if cur.occupancy[origin] == 0:
            break
    return steps
