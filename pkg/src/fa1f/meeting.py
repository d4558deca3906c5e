"""Meeting times of two independent rate-1 random walkers on a finite graph.

tau_meet(x, y) is the expected time for walkers started at x and y to come
within graph distance 1; it solves the Poisson problem -L_RW tau = 1 on
pairs at distance > 1 with zero boundary values. Only those pairs enter the
linear system; moves landing at distance <= 1 contribute boundary zeros.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .errors import (
    DegenerateEstimateError,
    NumericalError,
    PreconditionError,
    StructuralError,
)
from .model import Parameters, Volume
from .montecarlo import Estimate

# LU fill-in on two-walker product graphs is catastrophic well below the
# nominal 5e4-unknown scale (minutes vs milliseconds for CG at 2e4), so the
# direct path is reserved for small systems; the system matrix is symmetric
# and strictly diagonally dominant, so preconditioned CG converges fast.
_DIRECT_LIMIT = 2000
_RESIDUAL_TOL = 1e-10


@dataclass
class MeetTable:
    """Pairwise expected meeting times on a graph volume."""

    graph: Volume
    tau: np.ndarray
    mean: float


def graph_distances(volume: Volume) -> np.ndarray:
    """All-pairs graph distances by BFS; raises on disconnected graphs."""
    n = volume.n_sites
    adj = sp.csr_matrix(
        (np.ones(len(volume.indices)), volume.indices, volume.indptr), shape=(n, n)
    )
    ncomp, _ = csgraph.connected_components(adj, directed=False)
    if ncomp != 1:
        raise StructuralError(f"graph is disconnected ({ncomp} components)")
    dist = csgraph.shortest_path(adj, method="D", unweighted=True)
    return dist.astype(np.int64)


def _expand_neighbors(indptr, indices, sites):
    """For each entry of `sites`, the slice of its neighbours, flattened;
    returns (owner row per entry, neighbour site per entry)."""
    lens = (indptr[sites + 1] - indptr[sites]).astype(np.int64)
    total = int(lens.sum())
    owners = np.repeat(np.arange(len(sites)), lens)
    offsets = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    flat = indices[np.repeat(indptr[sites], lens) + offsets]
    return owners, flat


def solve_meeting_times(volume: Volume) -> MeetTable:
    """Solve the meeting-time Poisson problem on all ordered vertex pairs."""
    n = volume.n_sites
    if n * n > 1_000_000:
        raise ValueError(f"{n}^2 pair states exceed the 10^6 unknown cap")
    dist = graph_distances(volume)
    unknown = np.flatnonzero((dist > 1).ravel())
    tau = np.zeros((n, n), dtype=np.float64)
    if len(unknown) == 0:
        return MeetTable(volume, tau, 0.0)
    pos = -np.ones(n * n, dtype=np.int64)
    pos[unknown] = np.arange(len(unknown))
    indptr = volume.indptr.astype(np.int64)
    indices = volume.indices.astype(np.int64)
    deg = np.diff(indptr)
    ux = unknown // n
    uy = unknown % n
    diag = (deg[ux] + deg[uy]).astype(np.float64)
    rows_parts, cols_parts = [], []
    for sites, other, move_first in ((ux, uy, True), (uy, ux, False)):
        owners, flat = _expand_neighbors(indptr, indices, sites)
        pair = flat * n + other[owners] if move_first else other[owners] * n + flat
        p = pos[pair]
        keep = p >= 0
        rows_parts.append(owners[keep])
        cols_parts.append(p[keep])
    rows = np.concatenate(rows_parts)
    cols = np.concatenate(cols_parts)
    mat = sp.coo_matrix(
        (-np.ones(len(rows)), (rows, cols)), shape=(len(unknown), len(unknown))
    ).tocsr() + sp.diags(diag)
    b = np.ones(len(unknown))
    if len(unknown) <= _DIRECT_LIMIT:
        sol = spla.spsolve(mat.tocsc(), b)
    else:
        precond = spla.LinearOperator(
            mat.shape, matvec=lambda v: v / diag
        )
        sol, info = spla.cg(mat, b, rtol=1e-14, atol=0.0, maxiter=20_000, M=precond)
        if info != 0:
            raise NumericalError(f"meeting-time solver did not converge (info={info})")
    resid = np.abs(mat @ sol - b).max()
    if resid > _RESIDUAL_TOL:
        raise NumericalError(f"meeting-time solve residual {resid:.2e} > 1e-10")
    tau.ravel()[unknown] = sol
    tau = 0.5 * (tau + tau.T)  # remove solver round-off; the problem is symmetric
    return MeetTable(volume, tau, float(tau.sum() / n**2))


def rw_dirichlet(g: np.ndarray, volume: Volume) -> float:
    """Dirichlet form of the two-walker product chain:
    sum over pairs and single-walker moves of squared increments, divided by
    2 |V|^2."""
    n = volume.n_sites
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (n, n):
        raise ValueError(f"g must be a {n}x{n} matrix")
    src = np.repeat(np.arange(n), np.diff(volume.indptr))
    dst = volume.indices
    row_part = ((g[dst, :] - g[src, :]) ** 2).sum()
    col_part = ((g[:, dst] - g[:, src]) ** 2).sum()
    return float(row_part + col_part) / (2.0 * n * n)


def log_distance_pair_function(volume: Volume) -> np.ndarray:
    """The default variational trial function log(d(x,y) or 1)."""
    dist = graph_distances(volume)
    return np.log(np.maximum(dist, 1)).astype(np.float64)


def meet_lower_bound(g, volume: Volume) -> float:
    """(mean of g)^2 / D_RW(g): a lower bound on the mean meeting time for
    pair functions vanishing at distance <= 1. `g=None` uses
    log(d(x,y) or 1)."""
    dist = graph_distances(volume)
    if g is None:
        g = np.log(np.maximum(dist, 1)).astype(np.float64)
    g = np.asarray(g, dtype=np.float64)
    if np.abs(g[dist <= 1]).max(initial=0.0) > 0.0:
        raise PreconditionError("g must vanish on pairs at distance <= 1")
    denom = rw_dirichlet(g, volume)
    if denom <= 0.0:
        raise DegenerateEstimateError("D_RW(g) vanished; the bound is undefined")
    mean = g.sum() / volume.n_sites**2
    return mean**2 / denom


@dataclass
class FiniteGapReport:
    """Ingredients of the finite-graph gap upper bound."""

    q_over_meet: float
    mc_bound: Estimate | None
    exact_gap: float | None
    degenerate: bool = False


def finite_gap_report(
    volume: Volume,
    params: Parameters,
    n: int,
    rng: np.random.Generator,
    expected_c: float | None = None,
) -> FiniteGapReport:
    """q / mean meeting time, the Monte Carlo gap bound D_G(f)/Var_G(f) for
    the largest-pairwise-meeting-time observable under the conditioned
    measure, and (on at most 20 vertices) the exact spectral gap.

    When `expected_c` is given, warns if |V| strays from expected_c / q by
    more than 20%.
    """
    from . import exact as exact_mod
    from .montecarlo import gap_upper_bound
    from .testfunctions import meeting_time_function

    if expected_c is not None:
        target = expected_c / params.q
        if abs(volume.n_sites - target) > 0.2 * target:
            warnings.warn(
                f"|V| = {volume.n_sites} is more than 20% away from "
                f"c/q = {target:.1f}",
                stacklevel=2,
            )
    table = solve_meeting_times(volume)
    gap_exact = None
    if volume.n_sites <= exact_mod.MAX_SITES:
        space, gen = exact_mod.build_generator(volume, params, conditioned=True)
        gap_exact = exact_mod.exact_gap(space, gen)
    if table.mean <= 0.0:
        return FiniteGapReport(math.inf, None, gap_exact, degenerate=True)
    q_over_meet = params.q / table.mean
    f = meeting_time_function(table)
    try:
        bound = gap_upper_bound(f, params, volume, n, rng, conditioned=True)
    except DegenerateEstimateError:
        return FiniteGapReport(q_over_meet, None, gap_exact, degenerate=True)
    return FiniteGapReport(q_over_meet, bound, gap_exact)
