"""Command-line front end.

Commands: run, ensemble, vf eval, vf zero, sweep beta2|batch|asym,
check schedule, selftest.  Configuration comes from an optional
line-oriented ``key = value`` file plus flags; flags win.  The resolved
configuration is echoed into every output file's provenance block, so a
result can be reproduced from the file alone.

Config keys and defaults (flags mirror them 1:1, dashes for underscores):

    beta1 = 0.9        beta2 = 0.999      eps = 1e-8
    lr_c = 1.0         lr_r = 0.99        batch = 1
    steps = 400000     reps = 100         seed = 0
    v = -1.0           w = 0.1            theta0 = 1.0
    ref = minimizer    out = .            plot = false

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from .adam import NumericsError, OptimizerKind, run_trajectory
from .experiments import (
    EnsembleConfig,
    run_ensemble,
    schedule_diagnostics,
    sweep_asymmetry,
    sweep_batch,
    sweep_beta2,
)
from .model import (
    AdamHyperparams,
    LearningRateSchedule,
    QuadraticSOP,
    two_point_mean_zero,
)
from .output import ResultTable, emit_csv, emit_svg_plot, fmt17
from .streams import make_stream
from .vectorfield import TruncationPolicy, estimate_vf, find_zero_1d
from .version import __version__


class ConfigError(Exception):
    pass


_SCHEMA = {
    "beta1": float,
    "beta2": float,
    "eps": float,
    "lr_c": float,
    "lr_r": float,
    "batch": int,
    "steps": int,
    "reps": int,
    "seed": int,
    "v": float,
    "w": float,
    "theta0": float,
    "ref": str,
    "out": str,
    "plot": bool,
}

_DEFAULTS = {
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "lr_c": 1.0,
    "lr_r": 0.99,
    "batch": 1,
    "steps": 400000,
    "reps": 100,
    "seed": 0,
    "v": -1.0,
    "w": 0.1,
    "theta0": 1.0,
    "ref": "minimizer",
    "out": ".",
    "plot": False,
}


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"invalid boolean for key {key!r}: {raw!r}")


def read_config_file(path: str) -> dict:
    """Parse a key = value file against the documented schema."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        typ = _SCHEMA[key]
        try:
            if typ is bool:
                out[key] = _parse_bool(raw, key)
            else:
                out[key] = typ(raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: invalid value for key {key!r}: {raw!r}") from exc
    return out


@dataclass
class RunConfig:
    """Fully resolved configuration for one CLI invocation."""

    beta1: float
    beta2: float
    eps: float
    lr_c: float
    lr_r: float
    batch: int
    steps: int
    reps: int
    seed: int
    v: float
    w: float
    theta0: float
    ref: str
    out: str
    plot: bool

    def provenance(self, command: str) -> dict:
        prov = {"command": command, "artifact_version": __version__}
        for key in _SCHEMA:
            prov[key] = getattr(self, key)
        return prov


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    merged = dict(_DEFAULTS)
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key in _SCHEMA:
        flag_val = getattr(args, key, None)
        if flag_val is not None and flag_val is not False:
            merged[key] = flag_val
    cfg = RunConfig(**merged)
    if cfg.ref not in ("minimizer", "vfzero"):
        raise ConfigError(f"ref must be minimizer or vfzero, got {cfg.ref!r}")
    if cfg.steps < 1:
        raise ConfigError(f"steps must be >= 1, got {cfg.steps}")
    if cfg.reps < 2:
        raise ConfigError(f"reps must be >= 2, got {cfg.reps}")
    if cfg.batch < 1:
        raise ConfigError(f"batch must be >= 1, got {cfg.batch}")
    return cfg


def _hyper(cfg: RunConfig) -> AdamHyperparams:
    try:
        return AdamHyperparams(beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.eps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _schedule(cfg: RunConfig) -> LearningRateSchedule:
    try:
        return LearningRateSchedule.power_law(cfg.lr_c, cfg.lr_r)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _sop(cfg: RunConfig) -> QuadraticSOP:
    try:
        return QuadraticSOP(two_point_mean_zero(cfg.v, cfg.w))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _outdir(cfg: RunConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _ensemble_config(cfg: RunConfig) -> EnsembleConfig:
    return EnsembleConfig(
        sop=_sop(cfg),
        kind=OptimizerKind.adam(_hyper(cfg)),
        schedule=_schedule(cfg),
        n_steps=cfg.steps,
        reps=cfg.reps,
        batch_size=cfg.batch,
        theta0=cfg.theta0,
        base_seed=cfg.seed,
        reference=cfg.ref,
    )


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    tr = run_trajectory(
        _sop(cfg),
        OptimizerKind.adam(_hyper(cfg)),
        _schedule(cfg),
        cfg.batch,
        cfg.steps,
        cfg.theta0,
        make_stream(cfg.seed, 0),
    )
    table = ResultTable(
        columns=["n", "theta"],
        rows=[(int(n), float(t[0])) for n, t in zip(tr.ns, tr.thetas)],
        provenance=cfg.provenance("run"),
    )
    out = _outdir(cfg)
    path = os.path.join(out, "run.csv")
    emit_csv(table, path)
    print(f"run: {cfg.steps} steps, final theta = {fmt17(tr.final.theta[0])} -> {path}")
    if cfg.plot:
        plot_rows = [r for r in table.rows if r[0] >= 1]
        ptab = ResultTable(columns=table.columns, rows=plot_rows, provenance=table.provenance)
        svg = os.path.join(out, "run.svg")
        emit_svg_plot(ptab, "n", ["theta"], svg, logx=True, title="iterate vs step")
        print(f"plot -> {svg}")
    return 0


def cmd_ensemble(args) -> int:
    cfg = resolve_config(args)
    series = run_ensemble(_ensemble_config(cfg))
    table = ResultTable(
        columns=["n", "mean", "stderr"],
        rows=[
            (int(n), float(m), float(s))
            for n, m, s in zip(series.ns, series.means, series.stderrs)
        ],
        provenance={
            **cfg.provenance("ensemble"),
            "reference_kind": series.reference_kind,
            "reference": float(series.reference[0]),
            "series_fingerprint": series.fingerprint,
        },
    )
    out = _outdir(cfg)
    path = os.path.join(out, "ensemble.csv")
    emit_csv(table, path)
    print(
        f"ensemble: R={cfg.reps}, final mean error = {fmt17(series.means[-1])} "
        f"+- {fmt17(series.stderrs[-1])} -> {path}"
    )
    if cfg.plot:
        plot_rows = [r for r in table.rows if r[0] >= 1 and r[1] > 0]
        ptab = ResultTable(columns=table.columns, rows=plot_rows, provenance=table.provenance)
        svg = os.path.join(out, "ensemble.svg")
        emit_svg_plot(ptab, "n", ["mean"], svg, logx=True, logy=True, title="mean error vs step")
        print(f"plot -> {svg}")
    return 0


def cmd_vf_eval(args) -> int:
    cfg = resolve_config(args)
    est = estimate_vf(
        _sop(cfg),
        args.theta,
        _hyper(cfg),
        cfg.batch,
        TruncationPolicy(),
        cfg.reps,
        make_stream(cfg.seed, 0),
        control_variate=args.cv,
    )
    table = ResultTable(
        columns=["theta", "value", "stderr", "truncation_n", "replications"],
        rows=[(args.theta, float(est.value[0]), float(est.stderr[0]), est.truncation_n, est.replications)],
        provenance={**cfg.provenance("vf eval"), "theta": args.theta, "cv": args.cv},
    )
    path = os.path.join(_outdir(cfg), "vf_eval.csv")
    emit_csv(table, path)
    print(
        f"vf({fmt17(args.theta)}) = {fmt17(est.value[0])} +- {fmt17(est.stderr[0])} "
        f"(N={est.truncation_n}, R={est.replications}) -> {path}"
    )
    return 0


def cmd_vf_zero(args) -> int:
    cfg = resolve_config(args)
    zero = find_zero_1d(
        _sop(cfg),
        _hyper(cfg),
        cfg.batch,
        TruncationPolicy(),
        cfg.reps,
        make_stream(cfg.seed, 0),
        abs_tol=args.abs_tol,
    )
    table = ResultTable(
        columns=[
            "theta_star", "bracket_lo", "bracket_hi", "residual", "residual_stderr",
            "iterations", "monotone",
        ],
        rows=[
            (
                zero.theta_star,
                zero.bracket[0],
                zero.bracket[1],
                float(zero.residual.value[0]),
                float(zero.residual.stderr[0]),
                zero.iterations,
                zero.monotonicity_verified,
            )
        ],
        provenance={**cfg.provenance("vf zero"), "abs_tol": args.abs_tol},
    )
    path = os.path.join(_outdir(cfg), "vf_zero.csv")
    emit_csv(table, path)
    print(
        f"theta* = {fmt17(zero.theta_star)} (residual {fmt17(zero.residual.value[0])} "
        f"+- {fmt17(zero.residual.stderr[0])}, monotone={zero.monotonicity_verified}) -> {path}"
    )
    return 0


def beta2_default_grid() -> list:
    return [1.0 - 2.0 ** (-4.0 - 5.0 * i / 9.0) for i in range(10)]


def asym_default_grid() -> list:
    return [2.0 ** i for i in range(-8, 8)]


def _sweep_grid(args, default):
    if getattr(args, "grid", None):
        try:
            return [float(tok) for tok in args.grid.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"invalid --grid: {args.grid!r}") from exc
    return default


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    base = _ensemble_config(cfg)
    out = _outdir(cfg)
    if args.sweep_kind == "beta2":
        grid = _sweep_grid(args, beta2_default_grid())
        table = sweep_beta2(base, grid)
        name = "sweep_beta2"
    elif args.sweep_kind == "batch":
        grid = [int(x) for x in _sweep_grid(args, list(range(1, 7)))]
        table = sweep_batch(base, grid)
        name = "sweep_batch"
    else:
        grid = _sweep_grid(args, asym_default_grid())
        table = sweep_asymmetry(base, grid)
        name = "sweep_asym"
    table.provenance = {**cfg.provenance(f"sweep {args.sweep_kind}"), **table.provenance}
    path = os.path.join(out, f"{name}.csv")
    emit_csv(table, path)
    print(f"{name}: {len(table.rows)} rows -> {path}")
    if cfg.plot:
        svg = os.path.join(out, f"{name}.svg")
        if args.sweep_kind == "beta2":
            ptab = ResultTable(
                columns=["one_minus_beta2", "abs_theta_star", "mean_abs_theta"],
                rows=[(1.0 - r[0], abs(r[3]), r[1]) for r in table.rows],
                provenance=table.provenance,
            )
            emit_svg_plot(
                ptab, "one_minus_beta2", ["abs_theta_star", "mean_abs_theta"], svg,
                logx=True, logy=True, title="field zero vs 1 - beta2",
            )
        elif args.sweep_kind == "batch":
            ptab = ResultTable(
                columns=["m", "abs_theta_star", "mean_abs_theta"],
                rows=[(r[0], abs(r[3]), r[1]) for r in table.rows],
                provenance=table.provenance,
            )
            emit_svg_plot(
                ptab, "m", ["abs_theta_star", "mean_abs_theta"], svg,
                logx=True, logy=True, title="field zero vs batch size",
            )
        else:
            ptab = ResultTable(
                columns=["p_v", "mean_theta", "theta_star"],
                rows=[(r[1], r[2], r[4]) for r in table.rows],
                provenance=table.provenance,
            )
            emit_svg_plot(
                ptab, "p_v", ["mean_theta", "theta_star"], svg,
                title="signed plateau vs asymmetry",
            )
        print(f"plot -> {svg}")
    return 0


def cmd_check_schedule(args) -> int:
    cfg = resolve_config(args)
    if args.lr_kind == "constant":
        schedule = LearningRateSchedule.constant(cfg.lr_c)
    else:
        schedule = _schedule(cfg)
    report = schedule_diagnostics(schedule, args.n_max, args.p)
    table = ResultTable(
        columns=[
            "n_max", "p", "max_tail_ratio", "partial_sum_p", "rel_increment_p",
            "increment_ratio_p", "divergence_sum", "decay_ok", "summable_ok", "consistent",
            "verdict",
        ],
        rows=[
            (
                report.n_max, report.p, report.max_tail_ratio, report.partial_sum_p,
                report.rel_increment_p, report.increment_ratio_p, report.divergence_sum,
                report.decay_ok, report.summable_ok, report.consistent,
                report.verdict,
            )
        ],
        provenance={
            **cfg.provenance("check schedule"),
            "lr_kind": args.lr_kind,
            "n_max": args.n_max,
            "p": args.p,
        },
    )
    path = os.path.join(_outdir(cfg), "check_schedule.csv")
    emit_csv(table, path)
    print(f"schedule {schedule!r}: {report.verdict}")
    print(
        f"  max tail ratio {fmt17(report.max_tail_ratio)}, "
        f"sum gamma^p {fmt17(report.partial_sum_p)}, "
        f"last-decade share {fmt17(report.rel_increment_p)} -> {path}"
    )
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    cfg = resolve_config(args)
    ok = run_selftest(seed=cfg.seed)
    return 0 if ok else 3


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="FILE", help="key = value config file")
    parser.add_argument("--beta1", type=float)
    parser.add_argument("--beta2", type=float)
    parser.add_argument("--eps", type=float)
    parser.add_argument("--lr-c", dest="lr_c", type=float)
    parser.add_argument("--lr-r", dest="lr_r", type=float)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--reps", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--v", type=float)
    parser.add_argument("--w", type=float)
    parser.add_argument("--theta0", type=float)
    parser.add_argument("--ref", choices=["minimizer", "vfzero"])
    parser.add_argument("--out", metavar="DIR")
    parser.add_argument("--plot", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adamlab",
        description="Numerical laboratory for Adam on quadratic two-point problems",
    )
    parser.add_argument("--version", action="version", version=f"adamlab {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("run", help="single optimizer trajectory")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = subs.add_parser("ensemble", help="replicated error curve")
    _add_common(p)
    p.set_defaults(func=cmd_ensemble)

    p = subs.add_parser("vf", help="vector field operations")
    vf_subs = p.add_subparsers(dest="vf_command", required=True)
    pe = vf_subs.add_parser("eval", help="Monte Carlo field value at one theta")
    _add_common(pe)
    pe.add_argument("--theta", type=float, default=0.0)
    pe.add_argument("--cv", action="store_true", help="variance-reduced estimator")
    pe.set_defaults(func=cmd_vf_eval)
    pz = vf_subs.add_parser("zero", help="zero of the field by CRN bisection")
    _add_common(pz)
    pz.add_argument("--abs-tol", dest="abs_tol", type=float, default=1e-6)
    pz.set_defaults(func=cmd_vf_zero)

    p = subs.add_parser("sweep", help="parameter sweeps")
    sw_subs = p.add_subparsers(dest="sweep_kind", required=True)
    for kind_name, help_text in [
        ("beta2", "final error and field zero across beta2"),
        ("batch", "final error and field zero across batch size"),
        ("asym", "signed plateau and field zero across w"),
    ]:
        ps = sw_subs.add_parser(kind_name, help=help_text)
        _add_common(ps)
        ps.add_argument("--grid", help="comma-separated grid override")
        ps.set_defaults(func=cmd_sweep, sweep_kind=kind_name)

    p = subs.add_parser("check", help="diagnostics")
    ch_subs = p.add_subparsers(dest="check_command", required=True)
    pc = ch_subs.add_parser("schedule", help="learning-rate condition report")
    _add_common(pc)
    pc.add_argument("--n-max", dest="n_max", type=int, default=10**6)
    pc.add_argument("--p", type=float, default=2.0)
    pc.add_argument("--lr-kind", dest="lr_kind", choices=["power", "constant"], default="power")
    pc.set_defaults(func=cmd_check_schedule)

    p = subs.add_parser("selftest", help="fast property suites")
    _add_common(p)
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
