"""Event-driven continuous-time FA1f simulation: origin-emptying times and
the persistence curve.

One exponential clock of rate |active set| drives the dynamics; the fired
site resamples its occupancy from equilibrium (a draw equal to the current
state is a null event that still advances the clock). The active set
{x : c_x = 1} is maintained incrementally: a flip at x can only change the
constraint of x's neighbours.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import FitError
from .model import Configuration, Parameters, Volume
from .streams import derive_key

_CODE_REASON = {kernels.CODE_TMAX: "tmax", kernels.CODE_FROZEN: "frozen"}


@dataclass(frozen=True)
class Tau0Result:
    """Origin-emptying time, or a censoring flag ('tmax' or 'frozen')."""

    time: float
    censored: bool
    reason: str | None = None


def default_t_max(q: float, d: int) -> float:
    """Censoring horizon: 50 q^-3 (d=1), 50 q^-2 log(1/q) (d=2), 50 q^-2
    otherwise; generous multiples of the theoretical decay scales."""
    if d == 1:
        return 50.0 / q**3
    if d == 2:
        return 50.0 * math.log(1.0 / q) / q**2
    return 50.0 / q**2


def default_torus_side(params: Parameters) -> int:
    """max(4 * critical length, 8); keeps the critical window deep inside."""
    return max(4 * params.ell, 8)


def _check_volume(volume: Volume):
    if volume.kind == "box":
        raise ValueError("KMC runs on tori (d=1,2,3) or graphs, not boxes")
    if volume.kind == "torus" and volume.d > 3:
        raise ValueError("KMC tori are supported for d <= 3")


def _adjacency(volume: Volume):
    return volume.indptr.astype(np.int64), volume.indices.astype(np.int32)


def sample_tau0_batch(
    volume: Volume,
    q: float,
    n_traj: int,
    seed: int,
    t_max: float,
    conditioned: bool = False,
):
    """n_traj independent origin-emptying times; initial states from the
    product measure (conditioned on a vacancy when requested). Returns
    (times, codes) with codes 0=emptied, 1=time-censored, 2=frozen."""
    _check_volume(volume)
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if not (0.0 <= q <= 1.0):
        raise ValueError(f"q must lie in [0,1]; got {q!r}")
    indptr, indices = _adjacency(volume)
    return kernels.tau0_batch(
        indptr,
        indices,
        volume.origin,
        float(q),
        float(t_max),
        np.uint64(seed & (2**64 - 1)),
        int(n_traj),
        bool(conditioned),
    )


def simulate_tau0(
    volume: Volume,
    params: Parameters,
    rng: np.random.Generator,
    t_max: float | None = None,
    conditioned: bool | None = None,
) -> Tau0Result:
    """One trajectory from equilibrium; graphs default to the vacancy-
    conditioned initial law, tori to the plain product measure."""
    if conditioned is None:
        conditioned = volume.kind == "graph"
    d = 3 if volume.kind == "graph" else volume.d
    if t_max is None:
        t_max = default_t_max(params.q, d)
    seed = int(rng.integers(0, 2**63))
    times, codes = sample_tau0_batch(volume, params.q, 1, seed, t_max, conditioned)
    code = int(codes[0])
    if code == kernels.CODE_EMPTIED:
        return Tau0Result(float(times[0]), False)
    return Tau0Result(float(t_max), True, _CODE_REASON[code])


class Trajectory:
    """A single evolving FA1f trajectory with an incrementally maintained
    active set; used for stepping a fixed number of events."""

    def __init__(self, volume: Volume, config: Configuration, seed: int):
        _check_volume(volume)
        self.volume = volume
        self.occupancy = config.occupancy.copy()
        self.clock = 0.0
        self._indptr, self._indices = _adjacency(volume)
        n = volume.n_sites
        self._active = np.empty(n, dtype=np.int32)
        self._pos = np.empty(n, dtype=np.int32)
        self.n_active = int(
            kernels.build_active_set(
                self.occupancy, self._indptr, self._indices, self._active, self._pos
            )
        )
        self._rng_state = np.array([derive_key(seed)], dtype=np.uint64)

    @property
    def current(self) -> Configuration:
        return Configuration(self.volume, self.occupancy.copy())

    @property
    def active_sites(self) -> set:
        return set(int(x) for x in self._active[: self.n_active])

    def step_events(self, n_events: int, q: float, debug: bool = False) -> float:
        """Advance exactly n_events events (null resamples included).

        With `debug`, the incrementally maintained active set is re-derived
        from scratch every 10^4 events and must match.
        """
        total = 0.0
        chunk = 10_000 if debug else n_events
        done = 0
        while done < n_events:
            step = min(chunk, n_events - done)
            dt, self.n_active = kernels.advance_events(
                self.occupancy,
                self._indptr,
                self._indices,
                float(q),
                int(step),
                self._rng_state,
                self._active,
                self._pos,
                self.n_active,
            )
            total += dt
            done += step
            if debug and self.active_sites != self.recompute_active():
                raise AssertionError("incremental active set diverged")
        self.clock += total
        return total

    def recompute_active(self) -> set:
        """Active set rebuilt from scratch (for soundness checks)."""
        occ = self.occupancy
        out = set()
        for x in range(self.volume.n_sites):
            nbrs = self._indices[self._indptr[x] : self._indptr[x + 1]]
            if (occ[nbrs] == 0).any():
                out.add(x)
        return out


@dataclass
class PersistenceCurve:
    """Empirical survival of the origin occupancy on a time grid."""

    times: np.ndarray
    survival: np.ndarray
    stderr: np.ndarray
    n_traj: int


def survival_curve(
    times: np.ndarray, codes: np.ndarray, time_grid, t_max: float
) -> PersistenceCurve:
    """Empirical survival from (times, codes) batches; censored runs count
    as survivors up to t_max."""
    grid = np.asarray(time_grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("the time grid must be strictly increasing")
    if grid[-1] > t_max:
        raise ValueError("the time grid must not exceed the censoring horizon")
    n = len(times)
    emptied = codes == kernels.CODE_EMPTIED
    tau = np.where(emptied, times, np.inf)
    surv = (tau[None, :] > grid[:, None]).mean(axis=1)
    stderr = np.sqrt(surv * (1.0 - surv) / n)
    return PersistenceCurve(grid, surv, stderr, n)


def estimate_persistence(
    volume: Volume,
    params: Parameters,
    time_grid,
    n_traj: int,
    rng: np.random.Generator,
    t_max: float | None = None,
    conditioned: bool | None = None,
) -> PersistenceCurve:
    """Survival probability of the never-emptied origin on a time grid, from
    n_traj independent trajectories with binomial standard errors."""
    if n_traj < 100:
        raise ValueError("need at least 100 trajectories")
    if conditioned is None:
        conditioned = volume.kind == "graph"
    d = 3 if volume.kind == "graph" else volume.d
    if t_max is None:
        t_max = max(default_t_max(params.q, d), float(np.max(time_grid)))
    seed = int(rng.integers(0, 2**63))
    times, codes = sample_tau0_batch(volume, params.q, n_traj, seed, t_max, conditioned)
    return survival_curve(times, codes, time_grid, t_max)


@dataclass(frozen=True)
class RateFit:
    rate: float
    rate_err: float
    r2: float


def persistence_rate_fit(curve: PersistenceCurve) -> RateFit:
    """Decay rate from a weighted linear fit of log survival against time,
    restricted to grid points with survival in (0.01, 0.9)."""
    mask = (curve.survival > 0.01) & (curve.survival < 0.9)
    if mask.sum() < 5:
        raise FitError(
            f"only {int(mask.sum())} grid points with survival in (0.01, 0.9)"
        )
    t = curve.times[mask]
    s = curve.survival[mask]
    sig = curve.stderr[mask]
    y = np.log(s)
    w = (s / np.maximum(sig, 1e-12)) ** 2
    xbar = (w * t).sum() / w.sum()
    ybar = (w * y).sum() / w.sum()
    sxx = (w * (t - xbar) ** 2).sum()
    slope = float((w * (t - xbar) * (y - ybar)).sum() / sxx)
    resid = y - ybar - slope * (t - xbar)
    ss_res = float((w * resid**2).sum())
    ss_tot = float((w * (y - ybar) ** 2).sum())
    dof = int(mask.sum()) - 2
    err = math.sqrt(ss_res / dof / sxx) if dof > 0 else 0.0
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(-slope, err, r2)


def quantile_grid(
    times: np.ndarray, codes: np.ndarray, levels
) -> np.ndarray:
    """Time grid hitting the requested survival levels, read off the
    empirical distribution of emptied runs (censored runs count as infinite)."""
    emptied = codes == kernels.CODE_EMPTIED
    tau = np.where(emptied, times, np.inf)
    out = []
    for level in levels:
        g = float(np.quantile(tau, 1.0 - level, method="higher"))
        if math.isfinite(g) and (not out or g > out[-1]):
            out.append(g)
    return np.asarray(out)
