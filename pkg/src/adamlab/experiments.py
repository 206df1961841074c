"""Ensemble error curves, log-log rate fits, parameter sweeps, diagnostics.

The ensemble runner steps all replications in lockstep on vectorized
state, but consumes each replication's random stream exactly as the
scalar trajectory runner would, with identical arithmetic, so the two
are bit-for-bit interchangeable (tested).  Sweeps fan rows out over a
process pool sized by ADAMLAB_THREADS and fold results back in row
order, so thread count never changes output.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .adam import (
    NumericsError,
    OptimizerKind,
    default_record_grid,
    trajectory_bound,
)
from .model import (
    AdamHyperparams,
    LearningRateSchedule,
    QuadraticSOP,
    _as_point,
    minimizer,
    two_point_mean_zero,
)
from .output import ResultTable, config_fingerprint
from .streams import make_stream
from .vectorfield import TruncationPolicy, ZeroResult, find_zero_1d

# Stream ids: replication r uses stream_offset + r; zero-finding gets its
# own id far above any replication index; sweep rows space their offsets
# by _ROW_STRIDE so nothing collides.
REFERENCE_STREAM_ID = 2 ** 32
_ROW_STRIDE = 2 ** 21
_BLOCK_STEPS = 16384


def worker_count() -> int:
    """Process-pool size: ADAMLAB_THREADS if set, else machine parallelism."""
    env = os.environ.get("ADAMLAB_THREADS")
    if env is None or env == "":
        return os.cpu_count() or 1
    try:
        n = int(env)
    except ValueError as exc:
        raise ValueError(f"ADAMLAB_THREADS must be an integer, got {env!r}") from exc
    if n < 1:
        raise ValueError(f"ADAMLAB_THREADS must be >= 1, got {n}")
    return n


def _parallel_map(fn, jobs):
    if worker_count() <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(worker_count(), len(jobs))) as pool:
        return list(pool.map(fn, jobs))


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything a reproducible ensemble needs, including its seeds."""

    sop: QuadraticSOP
    kind: OptimizerKind
    schedule: LearningRateSchedule
    n_steps: int
    reps: int
    batch_size: int = 1
    theta0: Union[float, np.ndarray] = 1.0
    record_grid: Optional[np.ndarray] = None
    base_seed: int = 0
    stream_offset: int = 0
    reference: Union[str, float, np.ndarray] = "minimizer"
    error_mode: str = "abs"
    zero_reps: int = 10000
    zero_abs_tol: float = 1e-6
    trunc_tol: float = 1e-12

    def __post_init__(self):
        if self.reps < 2:
            raise ValueError(f"need reps >= 2, got {self.reps}")
        if self.n_steps < 1:
            raise ValueError(f"need n_steps >= 1, got {self.n_steps}")
        if self.batch_size < 1:
            raise ValueError(f"need batch size >= 1, got {self.batch_size}")
        if self.error_mode not in ("abs", "clipped"):
            raise ValueError(f"error mode must be abs or clipped, got {self.error_mode!r}")
        if isinstance(self.reference, str) and self.reference not in ("minimizer", "vfzero"):
            raise ValueError(f"unknown reference {self.reference!r}")


@dataclass
class ErrorSeries:
    """Mean and standard error of the chosen distance at each recorded step."""

    ns: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    reference: np.ndarray
    reference_kind: str
    error_mode: str
    reps: int
    fingerprint: str
    final_theta_mean: np.ndarray
    final_theta_stderr: np.ndarray

    def __post_init__(self):
        self.ns = np.asarray(self.ns, dtype=np.int64)
        if np.any(np.diff(self.ns) <= 0):
            raise ValueError("series step indices must be strictly increasing")
        if np.any(np.asarray(self.stderrs) < 0):
            raise ValueError("stderr must be nonnegative")


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    window: tuple
    count: int


def _resolve_reference(config: EnsembleConfig):
    ref = config.reference
    if isinstance(ref, str):
        if ref == "minimizer":
            return minimizer(config.sop), "minimizer"
        if config.kind.kind != "adam":
            raise ValueError("vfzero reference needs the Adam optimizer")
        zr = find_zero_1d(
            config.sop,
            config.kind.hp,
            config.batch_size,
            TruncationPolicy(tol=config.trunc_tol),
            config.zero_reps,
            make_stream(config.base_seed, config.stream_offset + REFERENCE_STREAM_ID),
            abs_tol=config.zero_abs_tol,
        )
        return np.array([zr.theta_star]), "vfzero"
    return _as_point(ref), "explicit"


def _fingerprint_of(config: EnsembleConfig, ref_point, ref_kind) -> str:
    dist = config.sop.data
    entries = {
        "optimizer": config.kind.kind,
        "schedule": repr(config.schedule),
        "batch_size": config.batch_size,
        "n_steps": config.n_steps,
        "reps": config.reps,
        "theta0": _as_point(config.theta0),
        "base_seed": config.base_seed,
        "stream_offset": config.stream_offset,
        "v": dist.v,
        "w": dist.w,
        "p_v": dist.p_v,
        "reference_kind": ref_kind,
        "reference": ref_point,
        "error_mode": config.error_mode,
    }
    if config.kind.kind == "adam":
        hp = config.kind.hp
        entries.update(beta1=hp.beta1, beta2=hp.beta2, epsilon=hp.epsilon)
    return config_fingerprint(entries)


def run_ensemble(config: EnsembleConfig) -> ErrorSeries:
    """R lockstep trajectories; per-step mean and stderr of the error.

    Replication r consumes the stream (base_seed, stream_offset + r)
    exactly like run_trajectory would, so any single replication can be
    reproduced in isolation.  Finiteness is checked at least once per
    16384-step block and the a priori bound at every record point.
    """
    sop = config.sop
    dist = sop.data
    d = dist.dim
    grid = (
        default_record_grid(config.n_steps)
        if config.record_grid is None
        else np.asarray(config.record_grid, dtype=np.int64)
    )
    if np.any(np.diff(grid) <= 0) or (len(grid) and grid[-1] > config.n_steps):
        raise ValueError("record grid must be strictly increasing and end <= n_steps")
    ref_point, ref_kind = _resolve_reference(config)
    if len(ref_point) == 1 and d > 1:
        ref_point = np.full(d, ref_point[0])
    if len(ref_point) != d:
        raise ValueError("reference dimension mismatch")

    t0 = _as_point(config.theta0)
    if len(t0) == 1 and d > 1:
        t0 = np.full(d, t0[0])
    if len(t0) != d:
        raise ValueError("theta0 dimension mismatch")

    reps = config.reps
    streams = [make_stream(config.base_seed, config.stream_offset + r) for r in range(reps)]
    hp = config.kind.hp
    is_adam = config.kind.kind == "adam"
    schedule = config.schedule
    p_v = dist.p_v
    av, aw = dist.v, dist.w
    mbf = float(config.batch_size)

    bound = None
    if is_adam and math.sqrt(hp.beta2) > hp.beta1:
        c = float(max(np.max(np.abs(av)), np.max(np.abs(aw))))
        bound = trajectory_bound(t0, c, hp, schedule.gamma(1))

    thetas = np.tile(t0, (reps, 1))
    m = np.zeros((reps, d))
    v = np.zeros((reps, d))
    means = np.empty(len(grid))
    stderrs = np.empty(len(grid))
    clip = config.error_mode == "clipped"

    def record(idx):
        diff = thetas - ref_point
        errs = np.sqrt(np.sum(diff * diff, axis=1))
        if clip:
            errs = np.minimum(1.0, errs)
        means[idx] = errs.mean()
        stderrs[idx] = errs.std(ddof=1) / math.sqrt(reps)

    gi = 0
    if len(grid) and grid[0] == 0:
        record(0)
        gi = 1

    counts = np.empty((reps, _BLOCK_STEPS), dtype=np.int64)
    n0 = 1
    while n0 <= config.n_steps:
        blk = min(_BLOCK_STEPS, config.n_steps - n0 + 1)
        for r in range(reps):
            u = streams[r].random((blk, config.batch_size))
            counts[r, :blk] = (u < p_v).sum(axis=1)
        for s in range(blk):
            n = n0 + s
            k = counts[:, s].astype(np.float64)
            xbar = (k[:, None] * av + (mbf - k)[:, None] * aw) / mbf
            g = 2.0 * (thetas - xbar)
            gamma_n = schedule.gamma(n)
            if is_adam:
                m = hp.beta1 * m + (1.0 - hp.beta1) * g
                v = hp.beta2 * v + (1.0 - hp.beta2) * (g * g)
                bc1 = 1.0 - hp.beta1 ** n
                bc2 = 1.0 - hp.beta2 ** n
                thetas = thetas - gamma_n * ((m / bc1) / (hp.epsilon + np.sqrt(v / bc2)))
            else:
                thetas = thetas - gamma_n * g
            if gi < len(grid) and n == grid[gi]:
                if not np.all(np.isfinite(thetas)):
                    raise NumericsError(f"non-finite iterate in ensemble at step {n}")
                if bound is not None and np.max(np.abs(thetas)) > bound:
                    raise NumericsError(
                        f"ensemble iterate escaped the a priori bound at step {n}: "
                        f"{np.max(np.abs(thetas))} > {bound}"
                    )
                record(gi)
                gi += 1
        if not np.all(np.isfinite(thetas)):
            raise NumericsError(
                f"non-finite iterate in ensemble between steps {n0} and {n0 + blk - 1}"
            )
        n0 += blk

    return ErrorSeries(
        ns=grid.copy(),
        means=means,
        stderrs=stderrs,
        reference=ref_point,
        reference_kind=ref_kind,
        error_mode=config.error_mode,
        reps=reps,
        fingerprint=_fingerprint_of(config, ref_point, ref_kind),
        final_theta_mean=thetas.mean(axis=0),
        final_theta_stderr=thetas.std(axis=0, ddof=1) / math.sqrt(reps),
    )


def fit_loglog(series: ErrorSeries, n_min: int, n_max: int) -> RateFit:
    """OLS of log(mean error) on log(n) over the window [n_min, n_max]."""
    mask = (series.ns >= n_min) & (series.ns <= n_max) & (series.ns > 0)
    ns = series.ns[mask]
    ms = np.asarray(series.means)[mask]
    if len(ns) < 5:
        raise ValueError(f"need >= 5 grid points in [{n_min}, {n_max}], have {len(ns)}")
    if np.any(ms <= 0):
        raise ValueError(
            "nonpositive mean inside the fit window; shrink the window to the "
            "pre-plateau regime"
        )
    logn = np.log(ns.astype(np.float64))
    logm = np.log(ms)
    slope, intercept = np.polyfit(logn, logm, 1)
    fitted = slope * logn + intercept
    ss_res = float(np.sum((logm - fitted) ** 2))
    ss_tot = float(np.sum((logm - logm.mean()) ** 2))
    # a flat series leaves ss_tot at rounding scale, not exactly 0; treat
    # anything below machine noise as "no variance left to explain"
    noise = len(logm) * (16 * np.finfo(np.float64).eps * max(1.0, float(np.max(np.abs(logm))))) ** 2
    r2 = 1.0 if ss_tot <= noise else 1.0 - ss_res / ss_tot
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        window=(n_min, n_max),
        count=len(ns),
    )


def _row_zero(config: EnsembleConfig, zero_reps: int, zero_abs_tol: float) -> ZeroResult:
    return find_zero_1d(
        config.sop,
        config.kind.hp,
        config.batch_size,
        TruncationPolicy(tol=config.trunc_tol),
        zero_reps,
        make_stream(config.base_seed, config.stream_offset + REFERENCE_STREAM_ID),
        abs_tol=zero_abs_tol,
    )


def _sweep_job(job):
    config, zero_reps, zero_abs_tol = job
    series = run_ensemble(config)
    zero = _row_zero(config, zero_reps, zero_abs_tol)
    return series, zero


def _base_provenance(base: EnsembleConfig) -> dict:
    hp = base.kind.hp
    dist = base.sop.data
    prov = {
        "optimizer": base.kind.kind,
        "schedule": repr(base.schedule),
        "n_steps": base.n_steps,
        "reps": base.reps,
        "theta0": float(_as_point(base.theta0)[0]),
        "base_seed": base.base_seed,
        "v": float(dist.v[0]),
        "w": float(dist.w[0]),
    }
    if hp is not None:
        prov.update(beta1=hp.beta1, beta2=hp.beta2, epsilon=hp.epsilon)
    return prov


def sweep_beta2(
    base: EnsembleConfig, beta2_grid, zero_reps: int = 20000, zero_abs_tol: float = 1e-6
) -> ResultTable:
    """Final mean |theta| and the field zero across a beta2 grid.

    Values at or below beta1^2 are skipped with a warning since the
    hyperparameters would be invalid.
    """
    if base.kind.kind != "adam":
        raise ValueError("beta2 sweep needs the Adam optimizer")
    hp0 = base.kind.hp
    jobs = []
    kept = []
    for i, b2 in enumerate(beta2_grid):
        b2 = float(b2)
        if b2 <= hp0.beta1 ** 2 or b2 >= 1.0:
            warnings.warn(f"skipping beta2={b2}: outside (beta1^2, 1)")
            continue
        hp = AdamHyperparams(beta1=hp0.beta1, beta2=b2, epsilon=hp0.epsilon)
        cfg = replace(
            base,
            kind=OptimizerKind.adam(hp),
            stream_offset=base.stream_offset + (i + 1) * _ROW_STRIDE,
            reference="minimizer",
            error_mode="abs",
        )
        jobs.append((cfg, zero_reps, zero_abs_tol))
        kept.append(b2)
    results = _parallel_map(_sweep_job, jobs)
    rows = []
    for b2, (series, zero) in zip(kept, results):
        rows.append(
            (
                b2,
                float(series.means[-1]),
                float(series.stderrs[-1]),
                zero.theta_star,
                float(zero.residual.value[0]),
            )
        )
    prov = _base_provenance(base)
    prov.update(sweep="beta2", zero_reps=zero_reps, zero_abs_tol=zero_abs_tol)
    return ResultTable(
        columns=["beta2", "mean_abs_theta", "stderr", "theta_star", "residual"],
        rows=rows,
        provenance=prov,
    )


def sweep_batch(
    base: EnsembleConfig, m_grid, zero_reps: int = 40000, zero_abs_tol: float = 1e-6
) -> ResultTable:
    """Final mean |theta| and the field zero across batch sizes."""
    if base.kind.kind != "adam":
        raise ValueError("batch sweep needs the Adam optimizer")
    jobs = []
    kept = []
    for i, m in enumerate(m_grid):
        m = int(m)
        if m < 1:
            raise ValueError(f"batch size must be >= 1, got {m}")
        cfg = replace(
            base,
            batch_size=m,
            stream_offset=base.stream_offset + (i + 1) * _ROW_STRIDE,
            reference="minimizer",
            error_mode="abs",
        )
        jobs.append((cfg, zero_reps, zero_abs_tol))
        kept.append(m)
    results = _parallel_map(_sweep_job, jobs)
    rows = []
    for m, (series, zero) in zip(kept, results):
        rows.append(
            (
                m,
                float(series.means[-1]),
                float(series.stderrs[-1]),
                zero.theta_star,
                float(zero.residual.value[0]),
            )
        )
    prov = _base_provenance(base)
    prov.update(sweep="batch", zero_reps=zero_reps, zero_abs_tol=zero_abs_tol)
    return ResultTable(
        columns=["m", "mean_abs_theta", "stderr", "theta_star", "residual"],
        rows=rows,
        provenance=prov,
    )


def sweep_asymmetry(
    base: EnsembleConfig, w_grid, zero_reps: int = 40000, zero_abs_tol: float = 1e-6
) -> ResultTable:
    """Signed final mean of theta and the field zero across w.

    Unlike the other sweeps the ensemble column keeps its sign: the
    direction of the bias is the point of this sweep.  v is taken from
    the base problem; each row rebuilds the mean-zero two-point law
    with its own w.
    """
    if base.kind.kind != "adam":
        raise ValueError("asymmetry sweep needs the Adam optimizer")
    dist = base.sop.data
    if dist.dim != 1:
        raise ValueError("asymmetry sweep is 1-d only")
    v = float(dist.v[0])
    if not v < 0:
        raise ValueError(f"asymmetry sweep needs a negative atom v, got {v}")
    jobs = []
    kept = []
    for i, w in enumerate(w_grid):
        w = float(w)
        if not w > 0:
            raise ValueError(f"w must be > 0, got {w}")
        cfg = replace(
            base,
            sop=QuadraticSOP(two_point_mean_zero(v, w)),
            stream_offset=base.stream_offset + (i + 1) * _ROW_STRIDE,
            reference="minimizer",
            error_mode="abs",
        )
        jobs.append((cfg, zero_reps, zero_abs_tol))
        kept.append(w)
    results = _parallel_map(_sweep_job, jobs)
    rows = []
    for w, (series, zero) in zip(kept, results):
        rows.append(
            (
                w,
                w / (w - v),
                float(series.final_theta_mean[0]),
                float(series.final_theta_stderr[0]),
                zero.theta_star,
                float(zero.residual.value[0]),
            )
        )
    prov = _base_provenance(base)
    prov.update(sweep="asym", zero_reps=zero_reps, zero_abs_tol=zero_abs_tol)
    return ResultTable(
        columns=["w", "p_v", "mean_theta", "stderr", "theta_star", "residual"],
        rows=rows,
        provenance=prov,
    )


@dataclass(frozen=True)
class ScheduleReport:
    """Finite-horizon look at the step-size conditions the theory needs.

    The decay condition wants gamma_n^-2 (gamma_n - gamma_{n+1}) -> 0
    and the summability condition wants sum gamma_n^p < inf.  Both are
    limit statements, so along with the literal finite-horizon numbers
    the report classifies the trend: is the decay ratio falling decade
    over decade, and are the partial-sum increments dying off?
    """

    n_max: int
    p: float
    max_tail_ratio: float
    tail_ratio_samples: tuple
    partial_sum_p: float
    rel_increment_p: float
    increment_ratio_p: float
    divergence_sum: float
    decay_ok: bool
    summable_ok: bool
    consistent: bool
    verdict: str


def schedule_diagnostics(schedule: LearningRateSchedule, n_max: int, p: float = 2.0) -> ScheduleReport:
    if n_max < 10:
        raise ValueError(f"need n_max >= 10, got {n_max}")
    if not p > 0:
        raise ValueError("need p > 0")
    g = schedule.gammas(1, n_max + 1)
    diffs = (g[:-1] - g[1:]) / (g[:-1] * g[:-1])
    half = n_max // 2
    max_tail = float(np.max(diffs[half - 1 : n_max]))
    idx = sorted({max(1, n_max // 100), max(2, n_max // 10), n_max})
    samples = tuple(float(diffs[i - 1]) for i in idx)
    decreasing = all(a > b for a, b in zip(samples, samples[1:]))
    decay_ok = (max_tail <= 1e-2) or decreasing

    gp = g[:n_max] ** p
    cs = np.cumsum(gp)
    total = float(cs[-1])
    i10 = max(1, n_max // 10)
    i100 = max(1, n_max // 100)
    inc_last = total - float(cs[i10 - 1])
    inc_prev = float(cs[i10 - 1]) - float(cs[i100 - 1]) if i10 > i100 else float("nan")
    rel_inc = inc_last / total if total > 0 else 0.0
    ratio = inc_last / inc_prev if inc_prev and inc_prev > 0 else float("inf")
    summable_ok = (ratio < 0.5) or (rel_inc < 1e-6)

    consistent = decay_ok and summable_ok
    if consistent:
        verdict = f"condition-consistent at horizon {n_max}"
    else:
        parts = []
        if not decay_ok:
            parts.append("decay ratio not vanishing")
        if not summable_ok:
            parts.append(f"sum gamma^{p:g} still growing")
        verdict = f"fails at horizon {n_max}: " + "; ".join(parts)
    return ScheduleReport(
        n_max=n_max,
        p=p,
        max_tail_ratio=max_tail,
        tail_ratio_samples=samples,
        partial_sum_p=total,
        rel_increment_p=rel_inc,
        increment_ratio_p=ratio,
        divergence_sum=float(g[:n_max].sum()),
        decay_ok=decay_ok,
        summable_ok=summable_ok,
        consistent=consistent,
        verdict=verdict,
    )
