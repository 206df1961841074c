"""Problem definition: two-point data laws, the quadratic loss, and its gradients.

The stochastic optimization problem throughout is

    minimize  theta -> E[ L(theta, X) ],    L(theta, x) = ||theta - x||^2,

with X supported on two points {v, w} of R^d.  The objective is a shifted
quadratic with unique minimizer E[X], so every experiment has an exact
ground truth to compare against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .streams import RandomStream


def _as_point(x) -> np.ndarray:
    """Promote scalars to 1-d points; always returns a float64 copy."""
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64)).copy()
    if arr.ndim != 1:
        raise ValueError(f"a point must be scalar or 1-d, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class AdamHyperparams:
    """Momentum, second-moment and regularization parameters (beta1, beta2, eps)."""

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0):
            raise ValueError(f"beta1 must be in (0,1), got {self.beta1}")
        if not (0.0 < self.beta2 < 1.0):
            raise ValueError(f"beta2 must be in (0,1), got {self.beta2}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.beta1 ** 2 < self.beta2:
            raise ValueError(
                f"require beta1^2 < beta2, got beta1^2 = {self.beta1 ** 2} "
                f">= beta2 = {self.beta2}"
            )


class LearningRateSchedule:
    """Step sizes gamma_n for n >= 1.

    Three kinds: PowerLaw gamma_n = c * n^(-r), Constant, and an Explicit
    table.  All schedules are positive and non-increasing (validated).
    The summability condition behind the convergence theory holds for
    power laws exactly when r < 1; r = 1 and constants are constructible
    on purpose so the schedule diagnostics can classify them as failing.
    """

    def __init__(self, kind: str, c: float = 1.0, r: float = 0.99, table=None):
        if kind not in ("power", "constant", "explicit"):
            raise ValueError(f"unknown schedule kind {kind!r}")
        self.kind = kind
        self.c = float(c)
        self.r = float(r)
        self.table = None
        if kind == "power":
            if not self.c > 0:
                raise ValueError("power-law coefficient c must be > 0")
            if not self.r > 0:
                raise ValueError("power-law exponent r must be > 0")
        elif kind == "constant":
            if not self.c > 0:
                raise ValueError("constant learning rate must be > 0")
        else:
            tab = np.asarray(table, dtype=np.float64)
            if tab.ndim != 1 or len(tab) == 0:
                raise ValueError("explicit schedule needs a nonempty 1-d table")
            if not np.all(tab > 0):
                raise ValueError("explicit schedule must be positive")
            if np.any(np.diff(tab) > 0):
                raise ValueError("explicit schedule must be non-increasing")
            self.table = tab

    @classmethod
    def power_law(cls, c: float = 1.0, r: float = 0.99) -> "LearningRateSchedule":
        return cls("power", c=c, r=r)

    @classmethod
    def constant(cls, gamma: float) -> "LearningRateSchedule":
        return cls("constant", c=gamma)

    @classmethod
    def explicit(cls, table) -> "LearningRateSchedule":
        return cls("explicit", table=table)

    def gamma(self, n: int) -> float:
        """gamma_n for a single step index n >= 1."""
        if n < 1:
            raise ValueError(f"step index must be >= 1, got {n}")
        if self.kind == "power":
            return self.c * float(n) ** (-self.r)
        if self.kind == "constant":
            return self.c
        if n > len(self.table):
            raise ValueError(f"explicit schedule has {len(self.table)} entries, asked for n={n}")
        return float(self.table[n - 1])

    def gammas(self, n_from: int, n_to: int) -> np.ndarray:
        """Vectorized gamma_n for n in [n_from, n_to] inclusive."""
        if n_from < 1 or n_to < n_from:
            raise ValueError("need 1 <= n_from <= n_to")
        if self.kind == "power":
            return self.c * np.arange(n_from, n_to + 1, dtype=np.float64) ** (-self.r)
        if self.kind == "constant":
            return np.full(n_to - n_from + 1, self.c)
        if n_to > len(self.table):
            raise ValueError(f"explicit schedule has {len(self.table)} entries, asked for n={n_to}")
        return self.table[n_from - 1 : n_to].copy()

    def __repr__(self):
        if self.kind == "power":
            return f"LearningRateSchedule.power_law(c={self.c}, r={self.r})"
        if self.kind == "constant":
            return f"LearningRateSchedule.constant({self.c})"
        return f"LearningRateSchedule.explicit(<{len(self.table)} entries>)"


@dataclass(frozen=True)
class TwoPointDistribution:
    """The data law X in {v, w}, P(X = v) = p_v, with v, w points of R^d.

    The degenerate case v = w is a point mass and is how deterministic
    problems are expressed.
    """

    v: np.ndarray
    w: np.ndarray
    p_v: float

    def __post_init__(self):
        object.__setattr__(self, "v", _as_point(self.v))
        object.__setattr__(self, "w", _as_point(self.w))
        if self.v.shape != self.w.shape:
            raise ValueError(f"v and w must share a dimension, got {self.v.shape} vs {self.w.shape}")
        if not (0.0 <= self.p_v <= 1.0):
            raise ValueError(f"p_v must lie in [0,1], got {self.p_v}")

    @property
    def dim(self) -> int:
        return len(self.v)

    @property
    def p_w(self) -> float:
        return 1.0 - self.p_v

    @property
    def mean(self) -> np.ndarray:
        return self.p_v * self.v + (1.0 - self.p_v) * self.w

    @property
    def variance(self) -> np.ndarray:
        """Per-coordinate variance."""
        m = self.mean
        return self.p_v * self.v ** 2 + (1.0 - self.p_v) * self.w ** 2 - m ** 2

    def symmetric(self) -> bool:
        """True iff the law of X - mean equals the law of mean - X.

        For a two-point law this is exact: either both atoms coincide or
        they are equiprobable.
        """
        return bool(np.array_equal(self.v, self.w)) or self.p_v == 0.5

    def is_point_mass(self) -> bool:
        return bool(np.array_equal(self.v, self.w)) or self.p_v in (0.0, 1.0)


def two_point_mean_zero(v: float, w: float) -> TwoPointDistribution:
    """Scalar two-point law on {v, w} with v < 0 < w and E[X] = 0.

    The unique mean-zero probability puts p_v = w/(w-v) on the negative
    atom, so a small positive w makes the negative atom rare.
    """
    v = float(v)
    w = float(w)
    if not (v < 0.0 < w):
        raise ValueError(f"need v < 0 < w, got v={v}, w={w}")
    return TwoPointDistribution(v=np.array([v]), w=np.array([w]), p_v=w / (w - v))


def point_mass(x0) -> TwoPointDistribution:
    """Degenerate law concentrated at x0."""
    p = _as_point(x0)
    return TwoPointDistribution(v=p, w=p.copy(), p_v=1.0)


def sample(dist: TwoPointDistribution, stream: RandomStream) -> np.ndarray:
    """One draw from the law. Consumes exactly one uniform variate."""
    u = stream.random()
    return dist.v.copy() if u < dist.p_v else dist.w.copy()


def sample_batch(dist: TwoPointDistribution, stream: RandomStream, m: int) -> np.ndarray:
    """(m, d) array of i.i.d. draws; consumes exactly m uniforms in order."""
    if m < 1:
        raise ValueError(f"batch size must be >= 1, got {m}")
    u = stream.random(m)
    return np.where((u < dist.p_v)[:, None], dist.v, dist.w)


@dataclass(frozen=True)
class QuadraticSOP:
    """Quadratic stochastic optimization problem over the given data law."""

    data: TwoPointDistribution

    @property
    def dim(self) -> int:
        return self.data.dim

    def loss(self, theta, x) -> float:
        t = _as_point(theta)
        p = _as_point(x)
        if t.shape != p.shape:
            raise ValueError("theta and x must share a dimension")
        return float(np.sum((t - p) ** 2))


def gradient(theta, x) -> np.ndarray:
    """Per-sample gradient of ||theta - x||^2, which is 2(theta - x)."""
    t = _as_point(theta)
    p = _as_point(x)
    if t.shape != p.shape:
        raise ValueError(f"dimension mismatch: theta {t.shape} vs x {p.shape}")
    return 2.0 * (t - p)


@dataclass(frozen=True)
class MiniBatchGradient:
    """Batch-mean gradient together with the batch size that produced it."""

    value: np.ndarray
    m: int


def minibatch_gradient(theta, batch) -> MiniBatchGradient:
    """Arithmetic mean of gradient(theta, x) over a nonempty batch.

    batch is an iterable of points, or an (M, d) array.
    """
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == 0:
        raise ValueError("empty batch")
    t = _as_point(theta)
    if arr.shape[1] != len(t):
        raise ValueError(f"dimension mismatch: theta {t.shape} vs batch {arr.shape}")
    return MiniBatchGradient(value=2.0 * (t - arr.mean(axis=0)), m=arr.shape[0])


def minimizer(sop: QuadraticSOP) -> np.ndarray:
    """The unique minimizer of theta -> E[L(theta, X)], which is E[X]."""
    return sop.data.mean
