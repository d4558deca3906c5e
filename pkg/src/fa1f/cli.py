"""Experiment runner: reproducible scans with atomic CSV output and exponent
fits.

Exit codes: 0 success, 1 usage/configuration/input error, 2 numerical
failure (solver non-convergence or degenerate estimate). Identical
(config, seed) pairs produce byte-identical CSV files regardless of the
thread count: every replica stream is keyed by (seed, point index, replica)
and partial results are merged in replica order.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FitError, NumericalError, StructuralError
from .model import Parameters, Volume, critical_length
from .montecarlo import fit_exponent, tau0_lower_bound
from .streams import derive_key, substream
from .testfunctions import (
    cluster_count_function,
    log_distance_function,
    origin_function,
    tent_function,
)
from . import exact as exact_mod
from . import kmc as kmc_mod
from . import meeting as meeting_mod
from .paths import canonical_path, cone

_SCAN_SUBCOMMANDS = ("gap-scan", "tau0", "persistence")
_LEVELS = np.geomspace(0.2, 0.02, 10)


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    q_list: list = field(default_factory=list)
    dim: int = 1
    samples: int = 100_000
    trajectories: int = 2000
    seed: int = 1
    method: str = "variational"
    side: list = field(default_factory=list)
    t_max: float | None = None
    q0: float = 0.5
    graph: str | None = None
    torus: str | None = None
    z: str | None = None
    cone_y: str | None = None
    ell: int | None = None
    q: float | None = None
    out: str | None = None
    threads: int = 1

    def validate(self):
        if self.subcommand in _SCAN_SUBCOMMANDS:
            if not self.q_list:
                raise UsageError("--q-list is required")
            if any(not (0.0 < q < 1.0) for q in self.q_list):
                raise UsageError("q values must lie strictly inside (0,1)")
            if any(b >= a for a, b in zip(self.q_list, self.q_list[1:])):
                raise UsageError("q values must be strictly decreasing")
            if self.subcommand == "gap-scan" and self.samples < 100:
                raise UsageError("statistical runs need --samples >= 100")
            if self.subcommand == "tau0" and self.method == "variational" and self.samples < 100:
                raise UsageError("statistical runs need --samples >= 100")
            if self.subcommand in ("persistence",) and self.trajectories < 100:
                raise UsageError("need --trajectories >= 100")
            if self.side and len(self.side) not in (1, len(self.q_list)):
                raise UsageError("--side takes one value or one per q")
        if self.threads < 1:
            raise UsageError("--threads must be >= 1")

    def meta(self) -> str:
        parts = [f"version={__version__}", f"subcommand={self.subcommand}"]
        for key in (
            "q_list", "dim", "samples", "trajectories", "seed", "method",
            "side", "t_max", "q0", "graph", "torus", "z", "cone_y", "ell",
            "q",
        ):
            value = getattr(self, key)
            if isinstance(value, list):
                value = ",".join(repr(v) for v in value)
            parts.append(f"{key}={value!r}")
        return "#meta " + " ".join(parts)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fa1f", description=__doc__)
    parser.add_argument("--config", help="flat key=value config file")
    sub = parser.add_subparsers(dest="subcommand")

    def common(p, samples=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--q-list", dest="q_list", help="comma list, decreasing")
        p.add_argument("--dim", type=int)
        if samples:
            p.add_argument("--samples", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--q0", type=float)
        p.add_argument("--threads", type=int)

    p = sub.add_parser("gap-scan", description="cluster-count gap upper bound scan")
    common(p)

    p = sub.add_parser("tau0", description="origin-emptying time scans")
    common(p)
    p.add_argument("--method", choices=("variational", "kmc"))
    p.add_argument("--trajectories", type=int)
    p.add_argument("--side", help="torus side, one value or comma list per q")
    p.add_argument("--t-max", dest="t_max", type=float)

    p = sub.add_parser("persistence", description="KMC persistence curves")
    common(p, samples=False)
    p.add_argument("--trajectories", type=int)
    p.add_argument("--side", help="torus side, one value or comma list per q")
    p.add_argument("--t-max", dest="t_max", type=float)

    p = sub.add_parser("exact", description="small-volume diagnostics")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--dim", type=int)
    p.add_argument("--q", type=float)
    p.add_argument("--side", help="box side")
    p.add_argument("--ring", dest="torus", help="torus side")
    p.add_argument("--graph")
    p.add_argument("--ell", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("meet", description="meeting-time tables")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--graph")
    p.add_argument("--torus", help="LxL")
    p.add_argument("--out")

    p = sub.add_parser("path", description="dump a canonical path or cone")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--z", help="comma coordinates of the target")
    p.add_argument("--cone-y", dest="cone_y", help="comma coordinates of the apex")
    p.add_argument("--ell", type=int)
    p.add_argument("--out")
    return parser


def parse_config(argv, config_file: str | None = None) -> RunConfig:
    """Parse flags (and an optional key=value file; flags win)."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    if ns.subcommand is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(1)
    file_path = config_file or getattr(ns, "config", None)
    file_values = {}
    if file_path:
        file_values = _read_config_file(file_path, ns.subcommand)
    cfg = RunConfig(subcommand=ns.subcommand)
    for key, value in file_values.items():
        setattr(cfg, key, value)
    for key, value in vars(ns).items():
        if key in ("config", "subcommand") or value is None:
            continue
        setattr(cfg, key, _convert(key, value))
    cfg.validate()
    return cfg


def _convert(key, value):
    if key == "q_list":
        return [float(x) for x in str(value).split(",") if x]
    if key == "side":
        return [int(x) for x in str(value).split(",") if x]
    return value


def _read_config_file(path, subcommand):
    known = {f.name for f in RunConfig.__dataclass_fields__.values()}
    known -= {"subcommand"}
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for raw in lines:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"bad config line (need key=value): {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in known:
            raise UsageError(f"unknown config key {key!r}")
        ftype = RunConfig.__dataclass_fields__[key].type
        if key in ("q_list", "side"):
            out[key] = _convert(key, value)
        elif ftype in ("int", "int | None") or key in ("dim", "samples", "trajectories", "seed", "ell", "threads"):
            out[key] = int(value)
        elif key in ("t_max", "q0", "q"):
            out[key] = float(value)
        else:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _out_path(cfg: RunConfig, default_name: str) -> Path:
    if cfg.out:
        return Path(cfg.out)
    base = os.environ.get("FA1F_OUTDIR", ".")
    return Path(base) / default_name


def _atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fit_line(fit) -> str:
    return f"#fit slope={fit.slope!r} err={fit.slope_err!r} r2={fit.r2!r}"


def _flatness_line(q_values, values, model, label) -> str:
    ratios = [v / model(q) for q, v in zip(q_values, values)]
    flat = max(ratios) / min(ratios)
    return f"#flatness model={label} maxmin={flat!r}"


# ---------------------------------------------------------------------------
# subcommand drivers
# ---------------------------------------------------------------------------


def _scan_rows(rows) -> list:
    out = ["q,value,stderr,n,label"]
    for q, est, label in rows:
        out.append(f"{q!r},{est.mean!r},{est.stderr!r},{est.n},{label}")
    return out


def _run_gap_scan(cfg: RunConfig) -> int:
    from .model import EquilibriumSampler
    from .montecarlo import Estimate, estimate_dirichlet, estimate_variance

    d = cfg.dim
    rows = []
    ratios = []
    for qi, q in enumerate(cfg.q_list):
        ell = max(1, int(1.0 / q))
        volume = Volume.box((ell + 2,) * d, lo=(-1,) * d)
        params = Parameters(q=q, d=d, q0=cfg.q0, ell=ell)
        f = cluster_count_function(volume, ell)
        var = estimate_variance(
            f, EquilibriumSampler(volume, q), cfg.samples, substream(cfg.seed, qi, 0)
        )
        dir_ = estimate_dirichlet(
            f, params, volume, cfg.samples, substream(cfg.seed, qi, 1)
        )
        ratio = dir_.mean / var.mean
        rel = (dir_.stderr / dir_.mean) ** 2 if dir_.mean else 0.0
        rel += (var.stderr / var.mean) ** 2
        est = Estimate(ratio, abs(ratio) * math.sqrt(rel), cfg.samples)
        ratios.append((q, est))
        rows.append((q, est, "cluster_gap_bound"))
        rows.append((q, var, "cluster_variance"))
        rows.append((q, dir_, "cluster_dirichlet"))
    lines = _scan_rows(rows) + [cfg.meta()]
    if len(ratios) >= 3:
        fit = fit_exponent(ratios)
        lines.append(_fit_line(fit))
        print(
            f"gap-scan d={d}: slope={fit.slope:.4f} err={fit.slope_err:.4f} "
            f"r2={fit.r2:.5f}"
        )
    else:
        print(f"gap-scan d={d}: {len(ratios)} points, no exponent fit")
    if d == 2:
        lines.append(
            _flatness_line(
                cfg.q_list,
                [est.mean for _, est in ratios],
                lambda q: q**2 / math.log(1.0 / q),
                "q^2/log(1/q)",
            )
        )
    _atomic_write(_out_path(cfg, "gap_scan.csv"), "\n".join(lines) + "\n")
    return 0


def _tau0_function(cfg: RunConfig, q: float):
    d = cfg.dim
    if d == 1:
        ell = math.ceil(1.0 / q)
        volume = Volume.box_centered(2 * ell, 1)
        return tent_function(volume, ell), volume, ell
    if d == 2:
        ell = critical_length(q, cfg.q0, 2)
        volume = Volume.box_centered(ell, 2)
        return log_distance_function(volume, ell), volume, ell
    volume = Volume.box_centered(1, d)
    return origin_function(volume), volume, 1


def _run_tau0(cfg: RunConfig) -> int:
    if cfg.method == "variational":
        rows = []
        for qi, q in enumerate(cfg.q_list):
            f, volume, ell = _tau0_function(cfg, q)
            params = Parameters(q=q, d=cfg.dim, q0=cfg.q0, ell=ell)
            est = tau0_lower_bound(
                f, params, volume, cfg.samples, substream(cfg.seed, qi)
            )
            rows.append((q, est, f.label))
        lines = _scan_rows(rows) + [cfg.meta()]
        if len(rows) >= 3:
            fit = fit_exponent([(q, est) for q, est, _ in rows])
            lines.append(_fit_line(fit))
            print(
                f"tau0 variational d={cfg.dim}: slope={fit.slope:.4f} "
                f"err={fit.slope_err:.4f} r2={fit.r2:.5f}"
            )
        else:
            print(f"tau0 variational d={cfg.dim}: {len(rows)} points, no exponent fit")
        if cfg.dim == 2:
            lines.append(
                _flatness_line(
                    cfg.q_list,
                    [est.mean for _, est, _ in rows],
                    lambda q: math.log(1.0 / q) / q**2,
                    "log(1/q)/q^2",
                )
            )
        _atomic_write(_out_path(cfg, "tau0_variational.csv"), "\n".join(lines) + "\n")
        return 0
    # kmc sampling of tau0
    lines = ["q,run,tau0,censored"]
    summaries = []
    means = []
    for qi, q in enumerate(cfg.q_list):
        volume, t_max = _kmc_volume(cfg, q, qi)
        times, codes = _threaded_tau0(cfg, volume, q, t_max, cfg.trajectories, qi)
        for r, (t, c) in enumerate(zip(times, codes)):
            label = "" if c == 0 else ("frozen" if c == 2 else "tmax")
            lines.append(f"{q!r},{r},{float(t)!r},{label}")
        ok = codes == 0
        if ok.sum() >= 2:
            mean = float(times[ok].mean())
            stderr = float(times[ok].std(ddof=1) / math.sqrt(ok.sum()))
            means.append((q, mean, stderr))
            summaries.append(
                f"#summary q={q!r} mean={mean!r} stderr={stderr!r} "
                f"n={int(ok.sum())} frozen={int((codes == 2).sum())}"
            )
    lines += [cfg.meta()] + summaries
    if len(means) >= 3:
        fit = fit_exponent([(q, m, (m / s) ** 2 if s > 0 else 1.0) for q, m, s in means])
        lines.append(_fit_line(fit))
        print(
            f"tau0 kmc d={cfg.dim}: slope={fit.slope:.4f} err={fit.slope_err:.4f} "
            f"r2={fit.r2:.5f}"
        )
    _atomic_write(_out_path(cfg, "tau0_kmc.csv"), "\n".join(lines) + "\n")
    return 0


def _kmc_volume(cfg: RunConfig, q: float, qi: int):
    params = Parameters(q=q, d=cfg.dim, q0=cfg.q0)
    if cfg.side:
        side = cfg.side[0] if len(cfg.side) == 1 else cfg.side[qi]
    else:
        side = kmc_mod.default_torus_side(params)
    volume = Volume.torus((side,) * cfg.dim)
    t_max = cfg.t_max if cfg.t_max is not None else kmc_mod.default_t_max(q, cfg.dim)
    return volume, t_max


def _threaded_tau0(cfg, volume, q, t_max, n_traj, qi):
    """Replica-parallel batch; byte-identical results for any thread count."""
    replicas = min(16, max(1, n_traj // 100))
    sizes = [n_traj // replicas + (1 if r < n_traj % replicas else 0) for r in range(replicas)]
    seeds = [derive_key(cfg.seed, qi, r) for r in range(replicas)]

    def work(r):
        return kmc_mod.sample_tau0_batch(volume, q, sizes[r], seeds[r], t_max)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(work, range(replicas)))
    else:
        parts = [work(r) for r in range(replicas)]
    times = np.concatenate([p[0] for p in parts])
    codes = np.concatenate([p[1] for p in parts])
    return times, codes


def _run_persistence(cfg: RunConfig) -> int:
    out_base = _out_path(cfg, "persistence.csv")
    rates = []
    for qi, q in enumerate(cfg.q_list):
        volume, t_max = _kmc_volume(cfg, q, qi)
        times, codes = _threaded_tau0(cfg, volume, q, t_max, cfg.trajectories, qi)
        grid = kmc_mod.quantile_grid(times, codes, _LEVELS)
        curve = kmc_mod.survival_curve(times, codes, grid, t_max)
        lines = ["t,survival,stderr,n", cfg.meta()]
        for t, s, e in zip(curve.times, curve.survival, curve.stderr):
            lines.append(f"{float(t)!r},{float(s)!r},{float(e)!r},{curve.n_traj}")
        try:
            fit = kmc_mod.persistence_rate_fit(curve)
            rates.append((q, fit.rate, fit.rate_err))
            lines.append(f"#fit rate={fit.rate!r} err={fit.rate_err!r} r2={fit.r2!r}")
            print(f"persistence q={q}: rate={fit.rate:.6g} r2={fit.r2:.5f}")
        except FitError as exc:
            print(f"persistence q={q}: fit skipped ({exc})")
        path = out_base.with_name(f"{out_base.stem}_q{q}{out_base.suffix}")
        _atomic_write(path, "\n".join(lines) + "\n")
    if len(rates) >= 3:
        fit = fit_exponent([(q, r, (r / e) ** 2 if e > 0 else 1.0) for q, r, e in rates])
        print(
            f"persistence d={cfg.dim}: rate exponent slope={fit.slope:.4f} "
            f"err={fit.slope_err:.4f} r2={fit.r2:.5f}"
        )
        if cfg.dim == 2:
            ratios = [r / (q**2 / math.log(1.0 / q)) for q, r, _ in rates]
            print(f"persistence d=2 flatness vs q^2/log(1/q): {max(ratios)/min(ratios):.4f}")
    return 0


def _run_exact(cfg: RunConfig) -> int:
    if cfg.q is None:
        raise UsageError("exact needs --q")
    if cfg.graph:
        volume = Volume.from_edge_list(cfg.graph)
        d = 1
    elif cfg.torus:
        side = int(cfg.torus)
        d = cfg.dim or 1
        volume = Volume.torus((side,) * d)
    elif cfg.side:
        side = cfg.side[0]
        d = cfg.dim or 1
        volume = Volume.box((side,) * d)
    else:
        raise UsageError("exact needs --side, --ring, or --graph")
    ell = cfg.ell or 1
    params = Parameters(q=cfg.q, d=max(d, 1), q0=cfg.q0, ell=ell)
    space, gen = exact_mod.build_generator(volume, params, conditioned=True)
    lines = ["quantity,label,value", cfg.meta()]
    gap = exact_mod.exact_gap(space, gen)
    lines.append(f"gap,,{gap!r}")
    tau0 = exact_mod.exact_expected_tau0(volume, params)
    lines.append(f"expected_tau0,,{tau0!r}")
    fns = [origin_function(volume)]
    if volume.kind != "graph":
        try:
            fns.append(cluster_count_function(volume, min(ell, min(volume.shape))))
        except ValueError:
            pass
    for f in fns:
        m = exact_mod.exact_moments(f, space)
        lines.append(f"mean,{f.label},{m.mean!r}")
        lines.append(f"variance,{f.label},{m.variance!r}")
        lines.append(f"dirichlet,{f.label},{m.dirichlet!r}")
    _atomic_write(_out_path(cfg, "exact.csv"), "\n".join(lines) + "\n")
    print(f"exact: gap={gap:.6g} E[tau0]={tau0:.6g}")
    return 0


def _run_meet(cfg: RunConfig) -> int:
    if cfg.graph:
        volume = Volume.from_edge_list(cfg.graph)
    elif cfg.torus:
        parts = cfg.torus.lower().split("x")
        volume = Volume.torus(tuple(int(p) for p in parts)).as_graph()
    else:
        raise UsageError("meet needs --graph or --torus")
    table = meeting_mod.solve_meeting_times(volume)
    lines = ["x,y,tau", cfg.meta()]
    n = volume.n_sites
    for x in range(n):
        for y in range(n):
            lines.append(f"{x},{y},{float(table.tau[x, y])!r}")
    lines.append(f"#mean_tau={table.mean!r}")
    _atomic_write(_out_path(cfg, "meet.csv"), "\n".join(lines) + "\n")
    print(f"meet: n={n} mean_tau={table.mean:.6g}")
    return 0


def _run_path(cfg: RunConfig) -> int:
    if cfg.z:
        z = tuple(int(c) for c in cfg.z.split(","))
        path = canonical_path(z)
        header = "i," + ",".join(f"x{a}" for a in range(len(z)))
        lines = [header, cfg.meta()]
        for i, step in enumerate(path.steps):
            lines.append(f"{i}," + ",".join(str(c) for c in step))
        _atomic_write(_out_path(cfg, "path.csv"), "\n".join(lines) + "\n")
        print(f"path: {len(path.steps)} sites to {z}")
        return 0
    if cfg.cone_y:
        if cfg.ell is None:
            raise UsageError("cone dumps need --ell")
        y = tuple(int(c) for c in cfg.cone_y.split(","))
        members = cone(y, cfg.ell)
        header = ",".join(f"x{a}" for a in range(len(y)))
        lines = [header, cfg.meta()] + [",".join(str(c) for c in z) for z in members]
        _atomic_write(_out_path(cfg, "cone.csv"), "\n".join(lines) + "\n")
        print(f"cone: {len(members)} targets through {y}")
        return 0
    raise UsageError("path needs --z or --cone-y")


_DRIVERS = {
    "gap-scan": _run_gap_scan,
    "tau0": _run_tau0,
    "persistence": _run_persistence,
    "exact": _run_exact,
    "meet": _run_meet,
    "path": _run_path,
}


def run(config: RunConfig) -> int:
    """Execute a validated RunConfig; returns the process exit code."""
    try:
        return _DRIVERS[config.subcommand](config)
    except (NumericalError, FitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, OSError, StructuralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
