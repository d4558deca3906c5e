"""Exhaustive small-volume oracle: explicit generator, exact spectral gap,
exact expected origin-emptying time, persistence by uniformization, exact
moments and Dirichlet forms, the oriented block Dirichlet form, and the
window-Poincare report.

States are the integers 0 .. 2^n - 1 with bit i giving the occupancy of site
i (1 = occupied); enumeration order is ascending, weights are the product
measure (set to zero on the all-occupied state when conditioned). The
all-occupied state is always isolated: no constrained flip enters or leaves
it, so the conditioned generator is just the full generator with reweighted
states.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .errors import PreconditionError, ResourceLimitError, StructuralError
from .model import Parameters, Volume
from .testfunctions import TestFunction

MAX_SITES = 20


@dataclass
class StateSpace:
    """Full enumeration of configurations on a volume with mu weights."""

    volume: Volume
    q: float
    conditioned: bool
    weights: np.ndarray

    @property
    def n_sites(self) -> int:
        return self.volume.n_sites

    @property
    def n_states(self) -> int:
        return 1 << self.volume.n_sites

    def occupancy_matrix(self) -> np.ndarray:
        """(n_states, n_sites) uint8 matrix of occupancies."""
        states = np.arange(self.n_states, dtype=np.int64)
        n = self.n_sites
        occ = np.empty((self.n_states, n), dtype=np.uint8)
        for i in range(n):
            occ[:, i] = (states >> i) & 1
        return occ


class SparseRateMatrix:
    """Generator on an enumerated state space: nonnegative off-diagonal
    rates, diagonal equal to minus the row sums."""

    def __init__(self, dimension: int, rows, cols, rates):
        rates = np.asarray(rates, dtype=np.float64)
        if rates.size and rates.min() < 0:
            raise ValueError("off-diagonal rates must be nonnegative")
        off = sp.coo_matrix(
            (rates, (rows, cols)), shape=(dimension, dimension)
        ).tocsr()
        diag = -np.asarray(off.sum(axis=1)).ravel()
        self.dimension = dimension
        self.csr = (off + sp.diags(diag)).tocsr()
        self._off = off

    def off_diagonal(self) -> sp.csr_matrix:
        return self._off

    def check_detailed_balance(self, weights: np.ndarray, tol: float = 1e-12) -> float:
        """Largest entrywise violation of mu(i) L(i,j) = mu(j) L(j,i)."""
        flow = sp.diags(weights) @ self._off
        gap = abs(flow - flow.T)
        worst = gap.max() if gap.nnz else 0.0
        if worst > tol * max(1.0, abs(self._off.max() if self._off.nnz else 0.0)):
            raise PreconditionError(
                f"detailed balance violated by {worst:.3e}"
            )
        return float(worst)


def _check_size(volume: Volume, cap: int = MAX_SITES):
    if volume.n_sites > cap:
        raise ResourceLimitError(
            f"exact enumeration capped at {cap} sites; volume has {volume.n_sites}"
        )


def _neighbor_masks(volume: Volume) -> np.ndarray:
    masks = np.zeros(volume.n_sites, dtype=np.int64)
    for x in range(volume.n_sites):
        m = 0
        for y in volume.neighbors(x):
            m |= 1 << int(y)
        masks[x] = m
    return masks


def state_weights(volume: Volume, q: float, conditioned: bool) -> np.ndarray:
    n = volume.n_sites
    states = np.arange(1 << n, dtype=np.int64)
    occupied = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        occupied += (states >> i) & 1
    w = (1.0 - q) ** occupied * q ** (n - occupied)
    if conditioned:
        w[-1] = 0.0  # the all-occupied state
    return w / w.sum()


def build_generator(volume: Volume, params: Parameters, conditioned: bool = False):
    """Explicit FA1f generator: each constrained site resamples at rate 1,
    emptying with probability q. Returns (StateSpace, SparseRateMatrix)."""
    _check_size(volume)
    q = params.q
    n = volume.n_sites
    states = np.arange(1 << n, dtype=np.int64)
    masks = _neighbor_masks(volume)
    rows, cols, rates = [], [], []
    for x in range(n):
        mask = masks[x]
        if mask == 0:
            continue  # isolated site: constraint can never hold
        constrained = (states & mask) != mask
        src = states[constrained]
        dst = src ^ (1 << x)
        occupied = (src >> x) & 1
        rate = np.where(occupied == 1, q, 1.0 - q)
        rows.append(src)
        cols.append(dst)
        rates.append(rate)
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        rates = np.concatenate(rates)
    gen = SparseRateMatrix(1 << n, rows, cols, rates)
    space = StateSpace(volume, q, conditioned, state_weights(volume, q, conditioned))
    return space, gen


def _ergodic_class(gen: SparseRateMatrix) -> np.ndarray:
    """States communicating with the all-empty configuration."""
    adj = gen.off_diagonal() + gen.off_diagonal().T
    _, labels = csgraph.connected_components(adj, directed=False)
    return labels == labels[0]


def exact_gap(space: StateSpace, gen: SparseRateMatrix) -> float:
    """Smallest nonzero eigenvalue of -L on the ergodic class carrying the
    conditioned measure (the all-occupied state is always excluded); 0 if
    that class is split."""
    gen.check_detailed_balance(space.weights)
    member = _ergodic_class(gen)
    support = state_weights(space.volume, space.q, conditioned=True) > 0
    if not member[support].all():
        return 0.0
    idx = np.flatnonzero(member)
    if len(idx) < 2:
        return 0.0
    sub = gen.csr[np.ix_(idx, idx)].toarray()
    w = state_weights(space.volume, space.q, conditioned=True)[idx]
    root = np.sqrt(w)
    sym = root[:, None] * sub / root[None, :]
    sym = 0.5 * (sym + sym.T)
    eig = np.linalg.eigvalsh(-sym)
    eig.sort()
    return float(max(0.0, eig[1]))


def _killed_generator(gen: SparseRateMatrix, keep: np.ndarray) -> sp.csr_matrix:
    return gen.csr[np.ix_(keep, keep)].tocsr()


def exact_expected_tau0(volume: Volume, params: Parameters) -> float:
    """Expected first time the origin empties, started from the vacancy-
    conditioned equilibrium (the all-occupied state never empties and is
    excluded).

    Solves (-L restricted to {origin occupied}) u = 1 and averages u.
    """
    _check_size(volume)
    space, gen = build_generator(volume, params, conditioned=True)
    n = volume.n_sites
    origin = volume.origin
    states = np.arange(1 << n, dtype=np.int64)
    occupied_origin = ((states >> origin) & 1) == 1
    keep = np.flatnonzero(occupied_origin & (space.weights > 0))
    if len(keep) == 0:
        return 0.0
    killed = _killed_generator(gen, keep)
    ones = np.ones(len(keep))
    if len(keep) <= 4096:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", spla.MatrixRankWarning)
                u = spla.spsolve(-killed.tocsc(), ones)
        except RuntimeError as exc:  # pragma: no cover - umfpack variants
            raise StructuralError(f"killed generator is singular: {exc}") from exc
    else:
        # direct factorization suffers hypercube fill-in; the killed
        # generator is symmetrizable and positive definite, so use CG on
        # D^(1/2) (-L) D^(-1/2) with a Jacobi preconditioner
        root = np.sqrt(space.weights[keep])
        sym = sp.diags(root) @ (-killed) @ sp.diags(1.0 / root)
        sym = (0.5 * (sym + sym.T)).tocsr()
        diag = sym.diagonal()
        if diag.min() <= 0:
            raise StructuralError("killed generator is singular: origin never empties")
        precond = spla.LinearOperator(sym.shape, matvec=lambda v: v / diag)
        v, info = spla.cg(sym, root, rtol=1e-12, atol=0.0, maxiter=200_000, M=precond)
        if info != 0:
            raise StructuralError(f"killed solve did not converge (info={info})")
        u = v / root
    if not np.all(np.isfinite(u)):
        raise StructuralError("killed generator is singular: origin never empties")
    resid = np.abs(-killed @ u - ones).max()
    if resid > 1e-8:
        raise StructuralError(
            f"killed solve failed (residual {resid:.2e}); origin may never empty"
        )
    return float(space.weights[keep] @ u)


def exact_persistence(volume: Volume, params: Parameters, t: float) -> float:
    """P(origin still never emptied by time t) from equilibrium, by
    uniformization of the killed generator; truncation error < 1e-10."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    _check_size(volume, cap=16)
    space, gen = build_generator(volume, params, conditioned=False)
    n = volume.n_sites
    origin = volume.origin
    states = np.arange(1 << n, dtype=np.int64)
    keep = np.flatnonzero(((states >> origin) & 1) == 1)
    killed = _killed_generator(gen, keep)
    weights = space.weights[keep]
    if t == 0.0:
        return float(weights.sum())
    lam = float(-killed.diagonal().min())
    if lam <= 0.0:
        return float(weights.sum())
    kernel = (sp.identity(len(keep), format="csr") + killed / lam).tocsr()
    v = np.ones(len(keep))
    # split long horizons so Poisson weights stay within double range
    chunks = max(1, int(math.ceil(lam * t / 600.0)))
    dt = t / chunks
    for _ in range(chunks):
        v = _uniformized_apply(kernel, v, lam * dt)
    return float(weights @ v)


def _uniformized_apply(kernel: sp.csr_matrix, v: np.ndarray, lt: float) -> np.ndarray:
    out = np.zeros_like(v)
    weight = math.exp(-lt)
    cum = weight
    term = v.copy()
    out += weight * term
    k = 0
    while 1.0 - cum > 1e-10:
        k += 1
        term = kernel @ term
        weight *= lt / k
        out += weight * term
        cum += weight
        if k > 10_000_000:  # pragma: no cover
            raise RuntimeError("uniformization failed to converge")
    return out


@dataclass(frozen=True)
class ExactMoments:
    mean: float
    variance: float
    dirichlet: float


def exact_moments(f: TestFunction, space: StateSpace) -> ExactMoments:
    """Full-summation mean, variance, and Dirichlet form of f under the
    space's measure (the Monte Carlo oracle)."""
    _check_size(space.volume)
    w = space.weights
    values = f.value_batch(space.occupancy_matrix())
    mean = float(w @ values)
    variance = float(w @ (values - mean) ** 2)
    q = space.q
    n = space.n_sites
    states = np.arange(space.n_states, dtype=np.int64)
    masks = _neighbor_masks(space.volume)
    dirichlet = 0.0
    for x in range(n):
        if masks[x] == 0:
            continue
        constrained = (states & masks[x]) != masks[x]
        flipped = states ^ (1 << x)
        diff = values[flipped] - values
        dirichlet += float(w[constrained] @ (diff[constrained] ** 2))
    return ExactMoments(mean, variance, q * (1.0 - q) * dirichlet)


def _block_anchors(volume: Volume, ell: int) -> list:
    if volume.coords is None:
        raise ValueError("block dynamics requires a lattice volume")
    if any(l != 0 for l in volume.lo) or any(s % ell for s in volume.shape):
        raise ValueError(
            f"volume {volume.shape} with lo={volume.lo} is not partitioned by "
            f"{ell}-blocks"
        )
    ranges = [range(0, s, ell) for s in volume.shape]
    out = [()]
    for r in ranges:
        out = [prev + (a,) for prev in out for a in r]
    return out


def _block_sites(volume: Volume, anchor, ell: int) -> np.ndarray:
    coords = volume.coords
    mask = np.ones(volume.n_sites, dtype=bool)
    for a, base in enumerate(anchor):
        mask &= (coords[:, a] >= base) & (coords[:, a] < base + ell)
    return np.flatnonzero(mask)


def aux_dirichlet(f: TestFunction, ell_block: int, space: StateSpace) -> float:
    """Oriented block Dirichlet form: resample each ell-block whose forward
    neighbour blocks (one per axis) all contain a vacancy.

    Out-of-volume neighbour blocks count as fully occupied for boxes (the
    constraint then never holds) and wrap on tori.
    """
    _check_size(space.volume)
    volume = space.volume
    anchors = _block_anchors(volume, ell_block)
    d = volume.d
    n = volume.n_sites
    states = np.arange(space.n_states, dtype=np.int64)
    w = space.weights
    values = f.value_batch(space.occupancy_matrix())
    q = space.q
    total = 0.0
    for anchor in anchors:
        # constraint: every forward neighbour block holds a vacancy
        cons = np.ones(space.n_states, dtype=bool)
        alive = True
        for a in range(d):
            nbr = list(anchor)
            nbr[a] += ell_block
            if nbr[a] >= volume.shape[a]:
                if volume.kind == "torus":
                    nbr[a] %= volume.shape[a]
                else:
                    alive = False
                    break
            sites = _block_sites(volume, tuple(nbr), ell_block)
            mask = 0
            for s in sites:
                mask |= 1 << int(s)
            cons &= (states & mask) != mask
        if not alive or not cons.any():
            continue
        sites = _block_sites(volume, anchor, ell_block)
        b = len(sites)
        block_mask = 0
        for s in sites:
            block_mask |= 1 << int(s)
        strip = states & ~np.int64(block_mask)
        m1 = np.zeros(space.n_states)
        m2 = np.zeros(space.n_states)
        for pattern in range(1 << b):
            sub = 0
            bits = 0
            for j in range(b):
                if (pattern >> j) & 1:
                    sub |= 1 << int(sites[j])
                    bits += 1
            pw = (1.0 - q) ** bits * q ** (b - bits)
            fv = values[strip | sub]
            m1 += pw * fv
            m2 += pw * fv**2
        total += float(w[cons] @ (m2[cons] - m1[cons] ** 2))
    return total


@dataclass(frozen=True)
class PathPoincareReport:
    """Side-by-side report for mu(chi_ell f^2) <= tau_ell D(f)."""

    lhs: float
    dirichlet: float
    ratio: float
    tau_ell: float


def reference_tau(ell: int, q: float, d: int) -> float:
    """Reference Poincare scale (constant set to 1): ell^2/q in d=1,
    log(ell) ell^2/q in d=2, ell^d/q in higher d."""
    if d == 1:
        return ell**2 / q
    if d == 2:
        return math.log(ell) * ell**2 / q
    return ell**d / q


def path_poincare_report(
    f: TestFunction, ell: int, space: StateSpace
) -> PathPoincareReport:
    _check_size(space.volume)
    window = space.volume.window_box(ell)
    occ = space.occupancy_matrix()
    chi = (occ[:, window] == 0).any(axis=1)
    values = f.value_batch(occ)
    lhs = float(space.weights[chi] @ values[chi] ** 2)
    dirichlet = exact_moments(f, space).dirichlet
    if dirichlet > 0.0:
        ratio = lhs / dirichlet
    else:
        ratio = 0.0 if lhs == 0.0 else math.inf
    d = space.volume.d
    return PathPoincareReport(lhs, dirichlet, ratio, reference_tau(ell, space.q, d))
