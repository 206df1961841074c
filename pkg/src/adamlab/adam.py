"""Adam and SGD state machines plus a deterministic trajectory runner.

The update implemented here is bias-corrected Adam with the regularizer
eps added OUTSIDE the square root, after bias correction:

    m' = b1*m + (1-b1)*g
    v' = b2*v + (1-b2)*g^2
    mhat = m'/(1 - b1^n'),  vhat = v'/(1 - b2^n')
    theta' = theta - gamma_n * mhat/(eps + sqrt(vhat))

Some deployed Adam variants move eps inside the root or skip bias
correction; the analysis this lab tests is for this exact form, so the
placement is deliberate and pinned by tests.

Note on arithmetic: adam_step, run_trajectory and the vectorized
ensemble runner in experiments.py must all produce bit-identical
iterates for the same stream.  They share the expression structure
below (same parenthesization, bias powers via `beta ** n`), so keep the
three in sync when touching any of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (
    AdamHyperparams,
    LearningRateSchedule,
    MiniBatchGradient,
    QuadraticSOP,
    _as_point,
)
from .streams import RandomStream


class NumericsError(RuntimeError):
    """A trajectory or estimator produced a non-finite or out-of-bound value."""


@dataclass(frozen=True)
class AdamState:
    """Iterate theta plus the two moment accumulators after n steps."""

    n: int
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _as_point(self.theta))
        object.__setattr__(self, "m", _as_point(self.m))
        object.__setattr__(self, "v", _as_point(self.v))
        if self.n < 0:
            raise ValueError(f"step counter must be >= 0, got {self.n}")
        if not (self.theta.shape == self.m.shape == self.v.shape):
            raise ValueError("theta, m, v must share a dimension")
        if np.any(self.v < 0):
            raise ValueError("second-moment accumulator must be nonnegative")


def init_state(theta0) -> AdamState:
    """Fresh state at step 0 with zeroed accumulators."""
    t = _as_point(theta0)
    return AdamState(n=0, theta=t, m=np.zeros_like(t), v=np.zeros_like(t))


@dataclass(frozen=True)
class OptimizerKind:
    """Which update rule to run: Adam with its hyperparameters, or plain SGD."""

    kind: str
    hp: Optional[AdamHyperparams] = None

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.kind == "adam" and self.hp is None:
            raise ValueError("adam kind needs hyperparameters")

    @classmethod
    def adam(cls, hp: AdamHyperparams) -> "OptimizerKind":
        return cls("adam", hp)

    @classmethod
    def sgd(cls) -> "OptimizerKind":
        return cls("sgd", None)


def _gradient_value(g) -> np.ndarray:
    val = g.value if isinstance(g, MiniBatchGradient) else g
    return _as_point(val)


def adam_step(state: AdamState, g, hp: AdamHyperparams, gamma_n: float) -> AdamState:
    """One bias-corrected Adam step.  g is a MiniBatchGradient or a raw point."""
    gv = _gradient_value(g)
    if gv.shape != state.theta.shape:
        raise ValueError(f"gradient dimension {gv.shape} != theta dimension {state.theta.shape}")
    if not np.all(np.isfinite(gv)):
        raise NumericsError(f"non-finite gradient at step {state.n + 1}: {gv}")
    if not gamma_n > 0:
        raise ValueError(f"gamma_n must be > 0, got {gamma_n}")
    n_new = state.n + 1
    m = hp.beta1 * state.m + (1.0 - hp.beta1) * gv
    v = hp.beta2 * state.v + (1.0 - hp.beta2) * (gv * gv)
    bc1 = 1.0 - hp.beta1 ** n_new
    bc2 = 1.0 - hp.beta2 ** n_new
    theta = state.theta - gamma_n * ((m / bc1) / (hp.epsilon + np.sqrt(v / bc2)))
    if not np.all(np.isfinite(theta)):
        raise NumericsError(f"non-finite iterate after step {n_new}: {theta}")
    return AdamState(n=n_new, theta=theta, m=m, v=v)


def sgd_step(state: AdamState, g, gamma_n: float) -> AdamState:
    """Plain stochastic gradient step; the moment accumulators are untouched."""
    gv = _gradient_value(g)
    if gv.shape != state.theta.shape:
        raise ValueError(f"gradient dimension {gv.shape} != theta dimension {state.theta.shape}")
    if not np.all(np.isfinite(gv)):
        raise NumericsError(f"non-finite gradient at step {state.n + 1}: {gv}")
    if not gamma_n > 0:
        raise ValueError(f"gamma_n must be > 0, got {gamma_n}")
    theta = state.theta - gamma_n * gv
    if not np.all(np.isfinite(theta)):
        raise NumericsError(f"non-finite iterate after step {state.n + 1}: {theta}")
    return AdamState(n=state.n + 1, theta=theta, m=state.m, v=state.v)


def trajectory_bound(theta0, data_bound: float, hp: AdamHyperparams, gamma1: float) -> float:
    """A priori sup-norm bound on Adam iterates for data with |X| <= data_bound.

    B = c + 3 * max(|theta0|, c, gamma1*(2+b1)*sqrt(b2) / ((1-b1)*sqrt(1-b2)*(sqrt(b2)-b1)))

    Only valid when sqrt(beta2) > beta1 (otherwise the constant is
    undefined and we raise).  Used as a runtime assertion on recorded
    iterates; a violation means a bug, not a tight estimate.
    """
    c = float(data_bound)
    if c < 0:
        raise ValueError("data bound must be >= 0")
    sb2 = math.sqrt(hp.beta2)
    if sb2 <= hp.beta1:
        raise ValueError(
            f"trajectory bound undefined: sqrt(beta2) = {sb2} <= beta1 = {hp.beta1}"
        )
    t0 = float(np.max(np.abs(_as_point(theta0))))
    third = (
        gamma1 * (2.0 + hp.beta1) * sb2
        / ((1.0 - hp.beta1) * math.sqrt(1.0 - hp.beta2) * (sb2 - hp.beta1))
    )
    return c + 3.0 * max(t0, c, third)


@dataclass
class Trajectory:
    """Recorded (n, theta) pairs, the final state, and enough metadata to rerun."""

    ns: np.ndarray
    thetas: np.ndarray
    final: AdamState
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ns = np.asarray(self.ns, dtype=np.int64)
        if np.any(np.diff(self.ns) <= 0):
            raise ValueError("record step indices must be strictly increasing")
        if len(self.ns) != len(self.thetas):
            raise ValueError("records out of sync")


def default_record_grid(n_steps: int, per_decade: int = 200) -> np.ndarray:
    """Roughly geometric step indices: 0, then ~per_decade points per decade.

    Keeps memory flat over long runs; every grid always ends at n_steps.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    decades = math.log10(n_steps) if n_steps > 1 else 1.0
    count = max(2, int(math.ceil(decades * per_decade)))
    pts = np.unique(np.round(np.logspace(0, math.log10(n_steps), count)).astype(np.int64))
    pts = pts[(pts >= 1) & (pts <= n_steps)]
    if len(pts) == 0 or pts[-1] != n_steps:
        pts = np.append(pts, n_steps)
    return np.concatenate(([0], pts))


def run_trajectory(
    sop: QuadraticSOP,
    kind: OptimizerKind,
    schedule: LearningRateSchedule,
    batch_size: int,
    n_steps: int,
    theta0,
    stream: RandomStream,
    record_grid=None,
    check_bound: bool = True,
) -> Trajectory:
    """Run one optimizer trajectory, drawing batch_size fresh samples per step.

    Deterministic given the stream: step n consumes exactly batch_size
    uniforms, in step order.  Non-finite iterates abort immediately with
    a NumericsError naming the step.  When the a priori bound applies
    (Adam, sqrt(beta2) > beta1) every recorded iterate is checked
    against it.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    dist = sop.data
    theta = _as_point(theta0)
    if len(theta) != dist.dim:
        raise ValueError(f"theta0 dimension {len(theta)} != data dimension {dist.dim}")
    grid = default_record_grid(n_steps) if record_grid is None else np.asarray(record_grid, dtype=np.int64)
    if np.any(np.diff(grid) <= 0) or (len(grid) and grid[-1] > n_steps):
        raise ValueError("record grid must be strictly increasing and end <= n_steps")

    bound = None
    if check_bound and kind.kind == "adam":
        c = float(max(np.max(np.abs(dist.v)), np.max(np.abs(dist.w))))
        if math.sqrt(kind.hp.beta2) > kind.hp.beta1:
            bound = trajectory_bound(theta, c, kind.hp, schedule.gamma(1))

    hp = kind.hp
    p_v = dist.p_v
    av, aw = dist.v, dist.w
    mb = float(batch_size)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)

    rec_ns = []
    rec_thetas = []
    gi = 0
    if len(grid) and grid[0] == 0:
        rec_ns.append(0)
        rec_thetas.append(theta.copy())
        gi = 1

    for n in range(1, n_steps + 1):
        u = stream.random(batch_size)
        k = float(np.count_nonzero(u < p_v))
        xbar = (k * av + (mb - k) * aw) / mb
        g = 2.0 * (theta - xbar)
        gamma_n = schedule.gamma(n)
        if kind.kind == "adam":
            m = hp.beta1 * m + (1.0 - hp.beta1) * g
            v = hp.beta2 * v + (1.0 - hp.beta2) * (g * g)
            bc1 = 1.0 - hp.beta1 ** n
            bc2 = 1.0 - hp.beta2 ** n
            theta = theta - gamma_n * ((m / bc1) / (hp.epsilon + np.sqrt(v / bc2)))
        else:
            theta = theta - gamma_n * g
        if not np.all(np.isfinite(theta)):
            raise NumericsError(f"non-finite iterate at step {n}: {theta}")
        if gi < len(grid) and n == grid[gi]:
            if bound is not None and np.max(np.abs(theta)) > bound:
                raise NumericsError(
                    f"iterate escaped the a priori bound at step {n}: "
                    f"|theta| = {np.max(np.abs(theta))} > {bound}"
                )
            rec_ns.append(n)
            rec_thetas.append(theta.copy())
            gi += 1

    final = AdamState(n=n_steps, theta=theta, m=m, v=v)
    meta = {
        "kind": kind.kind,
        "hp": hp,
        "schedule": repr(schedule),
        "batch_size": batch_size,
        "theta0": _as_point(theta0),
        "seed": stream.base_seed,
        "stream_id": stream.stream_id,
    }
    return Trajectory(
        ns=np.asarray(rec_ns, dtype=np.int64),
        thetas=np.asarray(rec_thetas),
        final=final,
        meta=meta,
    )
