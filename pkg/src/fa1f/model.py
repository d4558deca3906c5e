"""Volumes, configurations, and equilibrium sampling for FA1f dynamics.

Occupancy convention: 1 = occupied, 0 = empty. The equilibrium measure is a
product of Bernoulli(1-q) variables, so each site is empty with probability
q. A site's kinetic constraint is satisfied when at least one 1-norm
neighbour is empty; for boxes everything outside the volume counts as
occupied ("filled" boundary), tori wrap.

Site indexing is row-major over box/torus coordinates; graph volumes keep
the input vertex order. Stable indexing is part of the file-format
contract (configuration dumps are one 0/1 character per site in index
order).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def critical_length(q: float, q0: float, d: int) -> int:
    """Box side at which a d-dimensional box holds a vacancy with probability
    about q0: ceil((log(1-q0)/log(1-q))**(1/d)).
    """
    if not (0.0 < q < 1.0) or not (0.0 < q0 < 1.0):
        raise ValueError(f"q and q0 must lie in (0,1); got q={q!r}, q0={q0!r}")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    ratio = math.log1p(-q0) / math.log1p(-q)
    return max(1, math.ceil(ratio ** (1.0 / d)))


@dataclass(frozen=True)
class Parameters:
    """Model parameters: vacancy density q, dimension d, reference density q0
    used by the critical length, and a box side ell (defaults to the critical
    length for (q, q0, d))."""

    q: float
    d: int = 1
    q0: float = 0.5
    ell: int | None = None

    def __post_init__(self):
        if not (0.0 < self.q < 1.0):
            raise ValueError(f"q must lie in (0,1); got {self.q!r}")
        if not (0.0 < self.q0 < 1.0):
            raise ValueError(f"q0 must lie in (0,1); got {self.q0!r}")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.ell is None:
            object.__setattr__(self, "ell", critical_length(self.q, self.q0, self.d))
        if self.ell < 1:
            raise ValueError("ell must be a positive integer")


class Volume:
    """A finite site set with 1-norm adjacency: a box, a torus, or a graph.

    Adjacency is stored in CSR form (`indptr`, `indices`); lattice kinds also
    carry the integer coordinates of every site.
    """

    def __init__(self, kind, indptr, indices, shape=None, lo=None, coords=None):
        self.kind = kind
        self.indptr = indptr
        self.indices = indices
        self.shape = None if shape is None else tuple(int(s) for s in shape)
        self.lo = None if lo is None else tuple(int(a) for a in lo)
        self.coords = coords
        self.n_sites = len(indptr) - 1
        self._origin = None

    # -- constructors ---------------------------------------------------

    @classmethod
    def box(cls, shape, lo=None) -> "Volume":
        """Box with filled boundary; sites are lo + {0..shape-1} per axis."""
        shape = _as_extents(shape)
        lo = tuple(0 for _ in shape) if lo is None else tuple(int(a) for a in lo)
        if len(lo) != len(shape):
            raise ValueError("lo and shape must have the same dimension")
        coords = _lattice_coords(shape, lo)
        indptr, indices = _lattice_adjacency(shape, coords, lo, periodic=False)
        return cls("box", indptr, indices, shape=shape, lo=lo, coords=coords)

    @classmethod
    def box_centered(cls, radius: int, d: int) -> "Volume":
        """Box {-radius..radius}^d, symmetric around the origin."""
        if radius < 0:
            raise ValueError("radius must be >= 0")
        return cls.box((2 * radius + 1,) * d, lo=(-radius,) * d)

    @classmethod
    def torus(cls, shape) -> "Volume":
        shape = _as_extents(shape)
        lo = tuple(0 for _ in shape)
        coords = _lattice_coords(shape, lo)
        indptr, indices = _lattice_adjacency(shape, coords, lo, periodic=True)
        return cls("torus", indptr, indices, shape=shape, lo=lo, coords=coords)

    @classmethod
    def graph(cls, n: int, edges) -> "Volume":
        if n < 1:
            raise ValueError("graph needs at least one vertex")
        seen = set()
        adj = [[] for _ in range(n)]
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u},{v}) out of range for n={n}")
            if u == v:
                raise ValueError(f"self-loop at vertex {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge ({u},{v})")
            seen.add(key)
            adj[u].append(v)
            adj[v].append(u)
        indptr = np.zeros(n + 1, dtype=np.int64)
        for i, nbrs in enumerate(adj):
            nbrs.sort()
            indptr[i + 1] = indptr[i] + len(nbrs)
        indices = np.fromiter(
            (v for nbrs in adj for v in nbrs), dtype=np.int32, count=int(indptr[-1])
        )
        return cls("graph", indptr, indices)

    @classmethod
    def from_edge_list(cls, path) -> "Volume":
        """Read the edge-list format: first line "n m", then m lines "u v"."""
        text = Path(path).read_text().split("\n")
        lines = [ln for ln in (s.strip() for s in text) if ln and not ln.startswith("#")]
        if not lines:
            raise ValueError(f"empty graph file {path}")
        header = lines[0].split()
        if len(header) != 2:
            raise ValueError("first line must be 'n m'")
        n, m = int(header[0]), int(header[1])
        if len(lines) - 1 != m:
            raise ValueError(f"expected {m} edges, found {len(lines) - 1}")
        edges = []
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != 2:
                raise ValueError(f"bad edge line: {ln!r}")
            edges.append((int(parts[0]), int(parts[1])))
        return cls.graph(n, edges)

    # -- basic queries ---------------------------------------------------

    @property
    def d(self) -> int:
        if self.shape is None:
            raise ValueError("graph volumes have no lattice dimension")
        return len(self.shape)

    def neighbors(self, site: int) -> np.ndarray:
        self._check_site(site)
        return self.indices[self.indptr[site] : self.indptr[site + 1]]

    def _check_site(self, site: int):
        if not (0 <= site < self.n_sites):
            raise IndexError(f"site {site} out of range [0, {self.n_sites})")

    def index_of(self, coord) -> int:
        """Site index of a lattice coordinate (row-major)."""
        if self.coords is None:
            raise ValueError("graph volumes are not coordinate-addressable")
        coord = tuple(int(c) for c in coord)
        if len(coord) != self.d:
            raise ValueError("coordinate dimension mismatch")
        rel = []
        for a, (c, l, s) in enumerate(zip(coord, self.lo, self.shape)):
            r = c - l
            if self.kind == "torus":
                r %= s
            elif not (0 <= r < s):
                raise IndexError(f"coordinate {coord} outside the box on axis {a}")
            rel.append(r)
        return int(np.ravel_multi_index(rel, self.shape))

    @property
    def origin(self) -> int:
        """Index of the coordinate origin; vertex 0 for graph volumes."""
        if self._origin is None:
            if self.kind == "graph":
                self._origin = 0
            else:
                self._origin = self.index_of((0,) * self.d)
        return self._origin

    def centered_coords(self) -> np.ndarray:
        """Signed coordinates; torus axes use the representative nearest 0."""
        if self.coords is None:
            raise ValueError("graph volumes have no coordinates")
        out = self.coords.copy()
        if self.kind == "torus":
            for a, s in enumerate(self.shape):
                col = out[:, a]
                out[:, a] = np.where(col <= s // 2, col, col - s)
        return out

    # -- windows ----------------------------------------------------------

    def window_box(self, ell: int) -> np.ndarray:
        """Site indices of the window {0..ell-1}^d, sorted by index."""
        if self.coords is None:
            raise ValueError("windows require a lattice volume")
        if ell < 1:
            raise ValueError("ell must be >= 1")
        for a, s in enumerate(self.shape):
            if self.kind == "torus":
                if ell > s:
                    raise ValueError(f"window side {ell} exceeds torus side {s}")
            elif not (self.lo[a] <= 0 and ell <= self.lo[a] + s):
                raise ValueError(f"window side {ell} does not fit the box on axis {a}")
        mask = np.all((self.coords >= 0) & (self.coords < ell), axis=1)
        return np.flatnonzero(mask)

    def window_ball(self, ell: int) -> np.ndarray:
        """Site indices of the 1-norm ball {\\|x\\|_1 <= ell} around the origin."""
        if self.coords is None:
            raise ValueError("windows require a lattice volume")
        if ell < 0:
            raise ValueError("ell must be >= 0")
        for a, s in enumerate(self.shape):
            if self.kind == "torus":
                if 2 * ell + 1 > s:
                    raise ValueError(f"ball radius {ell} exceeds torus side {s}")
            elif not (self.lo[a] <= -ell and ell < self.lo[a] + s):
                raise ValueError(f"ball radius {ell} does not fit the box on axis {a}")
        norms = np.abs(self.centered_coords()).sum(axis=1)
        return np.flatnonzero(norms <= ell)

    def as_graph(self) -> "Volume":
        """The same adjacency as a kind=graph volume (vertex i = site i)."""
        return Volume("graph", self.indptr.copy(), self.indices.copy())

    def __repr__(self):
        if self.kind == "graph":
            return f"Volume(graph, n={self.n_sites}, m={len(self.indices) // 2})"
        return f"Volume({self.kind}, shape={self.shape}, lo={self.lo})"


def _as_extents(shape):
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ValueError(f"extents must be positive integers, got {shape}")
    return shape


def _lattice_coords(shape, lo):
    grids = np.meshgrid(*[np.arange(l, l + s) for l, s in zip(lo, shape)], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def _lattice_adjacency(shape, coords, lo, periodic):
    n = coords.shape[0]
    d = len(shape)
    rel = coords - np.asarray(lo, dtype=np.int64)
    pairs_src = []
    pairs_dst = []
    for a in range(d):
        for direction in (-1, 1):
            nbr = rel.copy()
            nbr[:, a] += direction
            if periodic:
                nbr[:, a] %= shape[a]
                valid = np.ones(n, dtype=bool)
                if shape[a] == 1:
                    valid[:] = False  # self-neighbour through the wrap
                if shape[a] == 2:
                    # both directions reach the same site; keep one copy
                    valid[:] = direction == 1
            else:
                valid = (nbr[:, a] >= 0) & (nbr[:, a] < shape[a])
            if not valid.any():
                continue
            src = np.flatnonzero(valid)
            dst = np.ravel_multi_index(nbr[valid].T, shape)
            pairs_src.append(src)
            pairs_dst.append(dst)
    if pairs_src:
        src = np.concatenate(pairs_src)
        dst = np.concatenate(pairs_dst)
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    return indptr, dst.astype(np.int32)


@dataclass
class Configuration:
    """Occupancy assignment over a volume (1 = occupied, 0 = empty)."""

    volume: Volume
    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=np.uint8)
        if occ.shape != (self.volume.n_sites,):
            raise ValueError(
                f"occupancy length {occ.shape} does not match volume "
                f"with {self.volume.n_sites} sites"
            )
        if occ.size and occ.max() > 1:
            raise ValueError("occupancy entries must be 0 or 1")
        self.occupancy = occ

    def copy(self) -> "Configuration":
        return Configuration(self.volume, self.occupancy.copy())


def constraint(config: Configuration, site: int) -> int:
    """1 iff some neighbour of `site` is empty (outside a box counts as
    occupied)."""
    vol = config.volume
    vol._check_site(site)
    nbrs = vol.indices[vol.indptr[site] : vol.indptr[site + 1]]
    return int((config.occupancy[nbrs] == 0).any())


def flip(config: Configuration, site: int) -> Configuration:
    """The configuration differing from `config` exactly at `site`."""
    config.volume._check_site(site)
    occ = config.occupancy.copy()
    occ[site] ^= 1
    return Configuration(config.volume, occ)


def sample_config(volume: Volume, q: float, rng: np.random.Generator) -> Configuration:
    """Draw from the product measure: each site empty with probability q."""
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q must lie in [0,1]; got {q!r}")
    occ = (rng.random(volume.n_sites) >= q).astype(np.uint8)
    return Configuration(volume, occ)


_REJECTION_CAP = 200


def sample_config_conditioned(
    volume: Volume, q: float, rng: np.random.Generator
) -> Configuration:
    """Draw from the product measure conditioned on at least one vacancy.

    Plain rejection; after 200 consecutive all-occupied draws, switch to an
    exact conditional scheme: force a uniformly chosen site empty, sample the
    rest, and accept with probability 1/(number of vacancies).
    """
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q must lie in [0,1]; got {q!r}")
    n = volume.n_sites
    for _ in range(_REJECTION_CAP):
        occ = (rng.random(n) >= q).astype(np.uint8)
        if (occ == 0).any():
            return Configuration(volume, occ)
    while True:
        occ = (rng.random(n) >= q).astype(np.uint8)
        occ[rng.integers(n)] = 0
        k = int((occ == 0).sum())
        if k == 1 or rng.random() < 1.0 / k:
            return Configuration(volume, occ)


class EquilibriumSampler:
    """Product-measure sampler bound to a volume; supports batch draws."""

    conditioned = False

    def __init__(self, volume: Volume, q: float):
        if not (0.0 <= q <= 1.0):
            raise ValueError(f"q must lie in [0,1]; got {q!r}")
        self.volume = volume
        self.q = q

    def sample(self, rng: np.random.Generator) -> Configuration:
        return sample_config(self.volume, self.q, rng)

    def sample_batch(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return (rng.random((m, self.volume.n_sites)) >= self.q).astype(np.uint8)


class ConditionedSampler(EquilibriumSampler):
    """Product measure conditioned on at least one vacancy."""

    conditioned = True

    def sample(self, rng: np.random.Generator) -> Configuration:
        return sample_config_conditioned(self.volume, self.q, rng)

    def sample_batch(self, rng: np.random.Generator, m: int) -> np.ndarray:
        n = self.volume.n_sites
        out = np.empty((m, n), dtype=np.uint8)
        filled = 0
        rounds = 0
        while filled < m and rounds < _REJECTION_CAP:
            draw = (rng.random((m - filled, n)) >= self.q).astype(np.uint8)
            keep = draw[(draw == 0).any(axis=1)]
            out[filled : filled + len(keep)] = keep
            filled += len(keep)
            rounds += 1
        while filled < m:
            out[filled] = sample_config_conditioned(self.volume, self.q, rng).occupancy
            filled += 1
        return out


def dump_configuration(config: Configuration) -> str:
    """One line of 0/1 characters in site-index order."""
    return "".join("1" if b else "0" for b in config.occupancy)


def load_configuration(volume: Volume, line: str) -> Configuration:
    line = line.strip()
    if len(line) != volume.n_sites or set(line) - {"0", "1"}:
        raise ValueError("configuration line does not match the volume")
    return Configuration(volume, np.frombuffer(line.encode(), dtype=np.uint8) - ord("0"))
