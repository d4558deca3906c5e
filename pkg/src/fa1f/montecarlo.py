"""Monte Carlo estimators of means, variances, Dirichlet forms, the
variational gap upper bound and the tau_0 lower bound, plus log-log exponent
fitting.

Estimators draw configurations in chunks, accumulate per-sample values, and
report plain standard errors (delete-1 jackknife for the sample variance).
Ratio estimates carry first-order propagated errors from independent
substreams, so the variational inequalities can be tested at stated sigma
levels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEstimateError, FitError, PreconditionError
from .model import Configuration, ConditionedSampler, EquilibriumSampler, Parameters, Volume
from .testfunctions import TestFunction

_CHUNK = 4096


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo value with standard error and sample count."""

    mean: float
    stderr: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("an Estimate needs at least two samples")
        if not (self.stderr >= 0.0):
            raise ValueError("stderr must be nonnegative")


@dataclass(frozen=True)
class ScalingSeries:
    """Log-log fit of a scan: slope of log(value) against log(q)."""

    points: tuple
    slope: float
    slope_err: float
    r2: float

    def __post_init__(self):
        if len(self.points) < 3:
            raise ValueError("a scaling series needs at least three points")
        qs = [p[0] for p in self.points]
        if any(b >= a for a, b in zip(qs, qs[1:])):
            raise ValueError("q values must be strictly decreasing")


def _collect_values(f: TestFunction, sampler, n: int, rng) -> np.ndarray:
    values = np.empty(n, dtype=np.float64)
    done = 0
    while done < n:
        m = min(_CHUNK, n - done)
        occ = sampler.sample_batch(rng, m)
        values[done : done + m] = f.value_batch(occ)
        done += m
    return values


def estimate_mean(f: TestFunction, sampler, n: int, rng) -> Estimate:
    """Sample mean of f under the sampler's law."""
    if n < 2:
        raise ValueError("need n >= 2 samples")
    values = _collect_values(f, sampler, n, rng)
    return Estimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(n)), n)


def _jackknife_variance_stderr(values: np.ndarray) -> float:
    n = len(values)
    if n < 3:
        return 0.0
    v = values - values.mean()  # variance is translation invariant
    s1 = v.sum()
    s2 = (v**2).sum()
    loo = (s2 - v**2 - (s1 - v) ** 2 / (n - 1)) / (n - 2)
    return float(math.sqrt(max(0.0, (n - 1) / n * ((loo - loo.mean()) ** 2).sum())))


def estimate_variance(f: TestFunction, sampler, n: int, rng) -> Estimate:
    """Unbiased sample variance of f; stderr by delete-1 jackknife."""
    if n < 2:
        raise ValueError("need n >= 2 samples")
    values = _collect_values(f, sampler, n, rng)
    return Estimate(float(values.var(ddof=1)), _jackknife_variance_stderr(values), n)


def generic_dirichlet_summands(f: TestFunction, occ: np.ndarray) -> np.ndarray:
    """Reference path for sum_x c_x (f(eta^x)-f(eta))^2: loop the support and
    one neighbour shell, flipping one site at a time.

    Off-support terms vanish identically because flipping outside the support
    cannot change f; the shell is scanned anyway per the estimator contract.
    """
    vol = f.volume
    sites = set(int(s) for s in f.support)
    for s in list(sites):
        sites.update(int(v) for v in vol.neighbors(s))
    sites = sorted(sites)
    indptr, indices = vol.indptr, vol.indices
    out = np.empty(len(occ), dtype=np.float64)
    for r, row in enumerate(occ):
        base = float(f(Configuration(vol, row)))
        total = 0.0
        for x in sites:
            nbrs = indices[indptr[x] : indptr[x + 1]]
            if not (row[nbrs] == 0).any():
                continue
            row[x] ^= 1
            diff = float(f(Configuration(vol, row))) - base
            row[x] ^= 1
            total += diff * diff
        out[r] = total
    return out


def _check_support_in_volume(f: TestFunction, volume: Volume):
    if len(f.support) and (f.support.min() < 0 or f.support.max() >= volume.n_sites):
        raise ValueError("support escapes the volume")


def estimate_dirichlet(
    f: TestFunction,
    params: Parameters,
    volume: Volume,
    n: int,
    rng,
    conditioned: bool = False,
) -> Estimate:
    """Monte Carlo estimate of D(f) = q(1-q) sum_x mu(c_x (f(eta^x)-f(eta))^2).

    The sum runs over the support of f plus one neighbour shell; all other
    terms vanish identically. With `conditioned`, sampling (and hence the
    estimated form) is under the vacancy-conditioned measure.
    """
    if n < 2:
        raise ValueError("need n >= 2 samples")
    _check_support_in_volume(f, volume)
    q = params.q
    sampler = (ConditionedSampler if conditioned else EquilibriumSampler)(volume, q)
    scale = q * (1.0 - q)
    values = np.empty(n, dtype=np.float64)
    done = 0
    while done < n:
        m = min(_CHUNK, n - done)
        occ = sampler.sample_batch(rng, m)
        if f.dirichlet_batch_fn is not None:
            summands = np.asarray(f.dirichlet_batch_fn(occ), dtype=np.float64)
        else:
            summands = generic_dirichlet_summands(f, occ)
        values[done : done + m] = scale * summands
        done += m
    return Estimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(n)), n)


def gap_upper_bound(
    f: TestFunction,
    params: Parameters,
    volume: Volume,
    n: int,
    rng,
    conditioned: bool = False,
) -> Estimate:
    """D(f)/Var(f) with first-order error propagation; an upper bound on the
    spectral gap up to statistical error."""
    sampler = (ConditionedSampler if conditioned else EquilibriumSampler)(
        volume, params.q
    )
    seeds = rng.integers(0, 2**63, size=2)
    var = estimate_variance(f, sampler, n, _philox(seeds[0]))
    dir_ = estimate_dirichlet(f, params, volume, n, _philox(seeds[1]), conditioned)
    if var.mean <= 0.0:
        raise DegenerateEstimateError(
            f"variance estimate of {f.label} vanished; the ratio is undefined"
        )
    ratio = dir_.mean / var.mean
    rel = 0.0
    if dir_.mean != 0.0:
        rel += (dir_.stderr / dir_.mean) ** 2
    rel += (var.stderr / var.mean) ** 2
    return Estimate(ratio, abs(ratio) * math.sqrt(rel), n)


def _philox(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


_V0_CHECK_SAMPLES = 1000


def tau0_lower_bound(
    f: TestFunction,
    params: Parameters,
    volume: Volume,
    n: int,
    rng,
    conditioned: bool = False,
) -> Estimate:
    """mu(f)^2 / D(f) with propagated error: a lower bound on the expected
    origin-emptying time for observables vanishing when the origin is empty.

    Membership in that class is asserted by forcing the origin empty on 10^3
    sampled configurations. With `conditioned`, both moments are taken under
    the vacancy-conditioned measure (the meaningful finite-volume bound,
    since the all-occupied state never empties).
    """
    sampler = (ConditionedSampler if conditioned else EquilibriumSampler)(
        volume, params.q
    )
    seeds = rng.integers(0, 2**63, size=3)
    probe = sampler.sample_batch(_philox(seeds[0]), _V0_CHECK_SAMPLES)
    probe[:, volume.origin] = 0
    if np.abs(f.value_batch(probe)).max() > 0.0:
        raise PreconditionError(
            f"{f.label} does not vanish when the origin is empty"
        )
    mean = estimate_mean(f, sampler, n, _philox(seeds[1]))
    dir_ = estimate_dirichlet(f, params, volume, n, _philox(seeds[2]), conditioned)
    if dir_.mean <= 0.0:
        raise DegenerateEstimateError(
            f"Dirichlet estimate of {f.label} vanished; the ratio is undefined"
        )
    bound = mean.mean**2 / dir_.mean
    rel = (dir_.stderr / dir_.mean) ** 2
    if mean.mean != 0.0:
        rel += (2.0 * mean.stderr / mean.mean) ** 2
    return Estimate(bound, abs(bound) * math.sqrt(rel), n)


def fit_exponent(series) -> ScalingSeries:
    """Weighted least squares of log(value) on log(q).

    `series` holds (q, value), (q, value, weight), or (q, Estimate) items
    with positive values. Weights default to 1; an Estimate with a positive
    stderr is weighted by its inverse relative variance (the log-scale
    inverse variance). Returns slope, its residual-based standard error, and
    the weighted R^2.
    """
    pts = []
    for item in series:
        q = float(item[0])
        if isinstance(item[1], Estimate):
            est = item[1]
            value = est.mean
            weight = (value / est.stderr) ** 2 if est.stderr > 0 and value > 0 else 1.0
        else:
            value = float(item[1])
            weight = float(item[2]) if len(item) > 2 else 1.0
            stderr = value / math.sqrt(weight) if value > 0 else 0.0
            est = Estimate(value, stderr, 2)
        if value <= 0.0:
            raise ValueError(f"values must be positive for a log-log fit; got {value}")
        if weight <= 0.0:
            raise ValueError("weights must be positive")
        pts.append((q, value, weight, est))
    if len(pts) < 3:
        raise FitError("need at least three points")
    pts.sort(key=lambda p: -p[0])
    qs = [p[0] for p in pts]
    if any(b >= a for a, b in zip(qs, qs[1:])):
        raise ValueError("q values must be distinct")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    w = np.array([p[2] for p in pts])
    xbar = (w * x).sum() / w.sum()
    ybar = (w * y).sum() / w.sum()
    sxx = (w * (x - xbar) ** 2).sum()
    slope = float((w * (x - xbar) * (y - ybar)).sum() / sxx)
    intercept = ybar - slope * xbar
    resid = y - intercept - slope * x
    ss_res = float((w * resid**2).sum())
    ss_tot = float((w * (y - ybar) ** 2).sum())
    dof = len(pts) - 2
    slope_err = math.sqrt(ss_res / dof / sxx) if dof > 0 else 0.0
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    points = tuple((p[0], p[3]) for p in pts)
    return ScalingSeries(points, slope, slope_err, r2)
