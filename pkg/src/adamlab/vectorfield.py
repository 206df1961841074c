"""The Adam vector field: Monte Carlo estimation, exact oracles, zero-finding.

The field evaluated here is the expected Adam drift at a frozen iterate
theta, built from an infinite i.i.d. history of batch gradients G_0,
G_1, ...:

    f(theta) = E[ -(1-b1) sum_n b1^n G_n / (eps + sqrt((1-b2) sum_n b2^n G_n^2)) ]

so f points in the direction Adam actually moves (downhill), is
positive left of its zero and negative right of it, and its zeros are
the only possible limit points of the optimizer.  The infinite sums are
truncated at an N where both geometric tails are below a tolerance.

For two-point data a batch mean is determined by how many of the M
draws hit the atom v, so sample paths are stored as small-integer count
matrices and gradients are reconstructed per evaluation.  That is what
makes common-random-number zero-finding and the exactly-odd paired
estimator cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adam import NumericsError
from .model import AdamHyperparams, QuadraticSOP, TwoPointDistribution, _as_point
from .streams import RandomStream

# Rows per block when materializing gradient matrices; bounds peak memory
# at a few hundred MB even at truncation depths past 2e4.
CHUNK_ROWS = 1024
# Monotonicity grid size inside find_zero_1d, and the finer fallback scan.
GRID_POINTS = 17
SCAN_POINTS = 257
MAX_ENUM_PATHS = 2_000_000


class BracketError(NumericsError):
    """find_zero_1d could not establish a confident sign change."""


class EnumerationTooLarge(ValueError):
    """vf_truncated_exact was asked for more paths than the cap allows."""


@dataclass(frozen=True)
class TruncationPolicy:
    """Where to cut the geometric sums.

    N is derived from the tail tolerance: the smallest N with
    max(b1, b2)^(N+1) < tol.  fixed_n overrides the derivation, which
    the oracle-equivalence tests use to pin tiny depths.
    """

    tol: float = 1e-12
    fixed_n: Optional[int] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("truncation tolerance must be > 0")
        if self.fixed_n is not None and self.fixed_n < 1:
            raise ValueError("fixed truncation depth must be >= 1")

    def n_for(self, hp: AdamHyperparams) -> int:
        if self.fixed_n is not None:
            return self.fixed_n
        bmax = max(hp.beta1, hp.beta2)
        # float estimate, then nudge to the exact smallest N
        n = max(1, int(math.ceil(math.log(self.tol) / math.log(bmax))) - 1)
        while bmax ** (n + 1) >= self.tol:
            n += 1
        while n > 1 and bmax ** n < self.tol:
            n -= 1
        return n


@dataclass(frozen=True)
class VFEstimate:
    """Monte Carlo value of the field with per-coordinate standard errors."""

    value: np.ndarray
    stderr: np.ndarray
    truncation_n: int
    replications: int
    seed: tuple

    def __post_init__(self):
        object.__setattr__(self, "value", _as_point(self.value))
        object.__setattr__(self, "stderr", _as_point(self.stderr))
        if not np.all(np.isfinite(self.stderr)) or np.any(self.stderr < 0):
            raise ValueError("stderr must be finite and nonnegative")


@dataclass
class ZeroResult:
    theta_star: float
    bracket: tuple
    residual: VFEstimate
    iterations: int
    monotonicity_verified: bool
    slope_estimate: float
    attempts: int = 1

    @property
    def uncertainty(self) -> float:
        """Statistical + bisection uncertainty of theta_star.

        abs-tol of the bisection plus the residual noise propagated
        through the local slope.
        """
        width = self.bracket[1] - self.bracket[0]
        se = float(np.max(self.residual.stderr))
        if self.slope_estimate != 0:
            return self.abs_tol + 3.0 * se / abs(self.slope_estimate)
        return width

    # set by find_zero_1d; kept out of the dataclass signature for
    # backward-compatible construction in tests
    abs_tol: float = 1e-6


def _binom_pmf(m: int, p: float) -> np.ndarray:
    j = np.arange(m + 1)
    combs = np.array([math.comb(m, int(k)) for k in j], dtype=np.float64)
    return combs * p ** j * (1.0 - p) ** (m - j)


def _geom_powers(beta: float, n_trunc: int) -> np.ndarray:
    return beta ** np.arange(n_trunc + 1, dtype=np.float64)


def _z_from_counts(counts, theta_i, v_i, w_i, m_batch, b1p, b2p, hp):
    """Drift samples Z and the first geometric sum S1 for one coordinate.

    counts is a (rows, N+1) integer matrix of v-hits per step.  The batch
    mean is reconstructed as (k*v + (M-k)*w)/M, which is exactly
    antisymmetric under k <-> M-k when w = -v; the paired estimator's
    exact oddness rests on that.
    """
    kf = counts.astype(np.float64)
    xbar = (kf * v_i + (m_batch - kf) * w_i) / m_batch
    g = 2.0 * (theta_i - xbar)
    s1 = g @ b1p
    s2 = (g * g) @ b2p
    z = -((1.0 - hp.beta1) * s1) / (hp.epsilon + np.sqrt((1.0 - hp.beta2) * s2))
    return z, s1


def _s1_mean(theta_i, mu_i, hp, n_trunc) -> float:
    """Closed-form E[S1] = 2(theta - mu)(1 - b1^(N+1))/(1 - b1)."""
    return 2.0 * (theta_i - mu_i) * (1.0 - hp.beta1 ** (n_trunc + 1)) / (1.0 - hp.beta1)


def _count_dtype(m_batch: int):
    return np.uint8 if m_batch < 256 else np.int64


def vf_deterministic(x0, theta, hp: AdamHyperparams) -> np.ndarray:
    """Closed form for point-mass data: f_i = -g_i/(eps + |g_i|), g = 2(theta-x0)."""
    g = 2.0 * (_as_point(theta) - _as_point(x0))
    return -g / (hp.epsilon + np.abs(g))


def _point_mass_truncated(x0, theta, hp: AdamHyperparams, n_trunc: int) -> np.ndarray:
    """Exact N-truncated field for a point mass (all G_n equal)."""
    g = 2.0 * (_as_point(theta) - _as_point(x0))
    num = (1.0 - hp.beta1 ** (n_trunc + 1)) * g
    den = hp.epsilon + np.abs(g) * math.sqrt(1.0 - hp.beta2 ** (n_trunc + 1))
    return -num / den


def estimate_vf(
    sop: QuadraticSOP,
    theta,
    hp: AdamHyperparams,
    batch_size: int,
    policy: TruncationPolicy,
    reps: int,
    stream: RandomStream,
    control_variate: bool = False,
    paired: bool = False,
) -> VFEstimate:
    """Monte Carlo estimate of the field at theta.

    Each replication draws a fresh path of N+1 batch counts at frozen
    theta and evaluates one drift sample; value and stderr are the mean
    and standard error over replications.  Point masses short-circuit to
    the exact truncated value with zero stderr and consume no
    randomness.

    control_variate subtracts b*(S1 - E[S1]) with the regression
    coefficient estimated in-sample; it cuts the stderr by an order of
    magnitude or more at large beta2.  paired averages each path with
    its count-flipped mirror, which makes the estimator exactly odd for
    symmetric data; it is meant for symmetric laws and cannot be
    combined with the control variate.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if control_variate and paired:
        raise ValueError("control_variate and paired cannot be combined")
    dist = sop.data
    t = _as_point(theta)
    if len(t) != dist.dim:
        raise ValueError(f"theta dimension {len(t)} != data dimension {dist.dim}")
    n_trunc = policy.n_for(hp)

    if dist.is_point_mass():
        x0 = dist.v if dist.p_v > 0 else dist.w
        val = _point_mass_truncated(x0, t, hp, n_trunc)
        return VFEstimate(
            value=val,
            stderr=np.zeros_like(val),
            truncation_n=n_trunc,
            replications=reps,
            seed=(stream.base_seed, stream.stream_id),
        )

    if reps < 2:
        raise ValueError("need reps >= 2 for a standard error on stochastic data")

    b1p = _geom_powers(hp.beta1, n_trunc)
    b2p = _geom_powers(hp.beta2, n_trunc)
    d = dist.dim
    zvals = np.empty((reps, d))
    s1vals = np.empty((reps, d)) if control_variate else None
    dtype = _count_dtype(batch_size)

    row = 0
    while row < reps:
        rows = min(CHUNK_ROWS, reps - row)
        counts = stream.binomial(batch_size, dist.p_v, size=(rows, n_trunc + 1)).astype(dtype)
        flipped = (batch_size - counts) if paired else None
        for i in range(d):
            z, s1 = _z_from_counts(
                counts, t[i], dist.v[i], dist.w[i], float(batch_size), b1p, b2p, hp
            )
            if paired:
                zf, _ = _z_from_counts(
                    flipped, t[i], dist.v[i], dist.w[i], float(batch_size), b1p, b2p, hp
                )
                z = 0.5 * (z + zf)
            zvals[row : row + rows, i] = z
            if control_variate:
                s1vals[row : row + rows, i] = s1
        row += rows

    value = np.empty(d)
    stderr = np.empty(d)
    mu = dist.mean
    for i in range(d):
        zi = zvals[:, i]
        if control_variate:
            s1i = s1vals[:, i]
            var = s1i.var(ddof=1)
            b = np.cov(zi, s1i)[0, 1] / var if var > 0 else 0.0
            zi = zi - b * (s1i - _s1_mean(t[i], mu[i], hp, n_trunc))
        value[i] = zi.mean()
        stderr[i] = zi.std(ddof=1) / math.sqrt(reps)
    return VFEstimate(
        value=value,
        stderr=stderr,
        truncation_n=n_trunc,
        replications=reps,
        seed=(stream.base_seed, stream.stream_id),
    )


def vf_truncated_exact(
    sop: QuadraticSOP, theta: float, hp: AdamHyperparams, batch_size: int, n_trunc: int
) -> float:
    """Exact N-truncated field by enumerating every weighted sample path.

    A batch mean of M two-point draws takes M+1 values with binomial
    weights, so there are (M+1)^(N+1) paths; capped at 2e6.  Summation
    pairs every path with its count-flipped mirror, which makes the
    result exactly 0 at theta = 0 for symmetric mean-zero data (the
    mirrored drift sample is the exact IEEE negation).
    """
    dist = sop.data
    if dist.dim != 1:
        raise ValueError("exact enumeration is 1-d only")
    if n_trunc < 0:
        raise ValueError("truncation depth must be >= 0")
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    n_paths = (batch_size + 1) ** (n_trunc + 1)
    if n_paths > MAX_ENUM_PATHS:
        raise EnumerationTooLarge(
            f"(M+1)^(N+1) = {n_paths} paths exceeds the {MAX_ENUM_PATHS} cap"
        )
    v_i = float(dist.v[0])
    w_i = float(dist.w[0])
    pmf = _binom_pmf(batch_size, dist.p_v)
    b1p = _geom_powers(hp.beta1, n_trunc)
    b2p = _geom_powers(hp.beta2, n_trunc)
    strides = (batch_size + 1) ** np.arange(n_trunc + 1, dtype=np.int64)

    weighted = np.empty(n_paths)
    start = 0
    while start < n_paths:
        stop = min(start + 65536, n_paths)
        idx = np.arange(start, stop, dtype=np.int64)
        digits = ((idx[:, None] // strides) % (batch_size + 1)).astype(_count_dtype(batch_size))
        z, _ = _z_from_counts(digits, float(theta), v_i, w_i, float(batch_size), b1p, b2p, hp)
        weights = np.prod(pmf[digits], axis=1)
        weighted[start:stop] = weights * z
        start = stop

    half = n_paths // 2
    pairs = weighted[:half] + weighted[n_paths - 1 - np.arange(half)]
    total = float(pairs.sum())
    if n_paths % 2 == 1:
        total += float(weighted[half])
    return total


class FrozenPathField:
    """One frozen set of sample paths, evaluated at many thetas (1-d).

    This is the common-random-numbers object behind find_zero_1d: the
    count matrix is drawn once, so evaluate() is a deterministic
    function of theta and bisection behaves as if the field were noise
    free.  with_truncation() reuses the same paths at a shallower depth,
    which the truncation-control tests exploit.
    """

    def __init__(self, dist: TwoPointDistribution, hp, batch_size, counts, control_variate=True):
        if dist.dim != 1:
            raise ValueError("frozen-path fields are 1-d only")
        self.dist = dist
        self.hp = hp
        self.batch_size = batch_size
        self.counts = counts
        self.control_variate = control_variate
        self.n_trunc = counts.shape[1] - 1
        self._b1p = _geom_powers(hp.beta1, self.n_trunc)
        self._b2p = _geom_powers(hp.beta2, self.n_trunc)

    @classmethod
    def draw(cls, dist, hp, batch_size, n_trunc, reps, stream, control_variate=True):
        if reps < 2:
            raise ValueError("need reps >= 2")
        counts = np.empty((reps, n_trunc + 1), dtype=_count_dtype(batch_size))
        row = 0
        while row < reps:
            rows = min(CHUNK_ROWS, reps - row)
            counts[row : row + rows] = stream.binomial(
                batch_size, dist.p_v, size=(rows, n_trunc + 1)
            )
            row += rows
        return cls(dist, hp, batch_size, counts, control_variate)

    def with_truncation(self, n_trunc: int) -> "FrozenPathField":
        if not 0 <= n_trunc <= self.n_trunc:
            raise ValueError(f"need 0 <= n <= {self.n_trunc}")
        return FrozenPathField(
            self.dist, self.hp, self.batch_size, self.counts[:, : n_trunc + 1],
            self.control_variate,
        )

    def evaluate(self, theta: float):
        """(value, stderr) of the frozen estimate at theta."""
        reps = self.counts.shape[0]
        zvals = np.empty(reps)
        s1vals = np.empty(reps) if self.control_variate else None
        v_i = float(self.dist.v[0])
        w_i = float(self.dist.w[0])
        row = 0
        while row < reps:
            rows = min(CHUNK_ROWS, reps - row)
            z, s1 = _z_from_counts(
                self.counts[row : row + rows], float(theta), v_i, w_i,
                float(self.batch_size), self._b1p, self._b2p, self.hp,
            )
            zvals[row : row + rows] = z
            if self.control_variate:
                s1vals[row : row + rows] = s1
            row += rows
        if self.control_variate:
            var = s1vals.var(ddof=1)
            b = np.cov(zvals, s1vals)[0, 1] / var if var > 0 else 0.0
            mu = float(self.dist.mean[0])
            zvals = zvals - b * (s1vals - _s1_mean(float(theta), mu, self.hp, self.n_trunc))
        return float(zvals.mean()), float(zvals.std(ddof=1) / math.sqrt(reps))


def find_zero_1d(
    sop: QuadraticSOP,
    hp: AdamHyperparams,
    batch_size: int,
    policy: TruncationPolicy,
    reps: int,
    stream: RandomStream,
    bracket=None,
    abs_tol: float = 1e-6,
    control_variate: bool = True,
) -> ZeroResult:
    """Zero of the field by bisection on a CRN-frozen estimate.

    The field is decreasing through its zero, so the bracket must
    satisfy f(lo) > 0 > f(hi) with 4-sigma confidence; the default
    bracket +-(|v|+|w|) always does for two-point data because the
    numerator has a fixed sign outside it.  Monotonicity of the frozen
    estimate is verified on a 17-point grid (which doubles as the slope
    estimate); a non-monotone grid falls back to a finer sign-change
    scan and flags the result.

    The residual is estimated with fresh randomness at the returned
    theta_star.  CRN bias can land theta_star a few frozen-noise units
    off the true zero, so if the residual check fails the whole search
    reruns on newly drawn paths (up to 3 attempts) before giving up.
    """
    dist = sop.data
    if dist.dim != 1:
        raise ValueError("find_zero_1d is 1-d only")
    if dist.is_point_mass():
        control_variate = False
    n_trunc = policy.n_for(hp)
    if bracket is None:
        # wide enough to straddle any zero of the field (the zero lives
        # inside the convex hull of the atoms); floor keeps a point mass
        # at the origin from collapsing the bracket to a point
        r = max(float(abs(dist.v[0]) + abs(dist.w[0])), 1.0)
        bracket = (-r, r)
    lo0, hi0 = float(bracket[0]), float(bracket[1])
    if not lo0 < hi0:
        raise ValueError(f"bad bracket {bracket}")

    last_err = None
    for attempt in range(1, 4):
        field = FrozenPathField.draw(dist, hp, batch_size, n_trunc, reps, stream, control_variate)
        grid = np.linspace(lo0, hi0, GRID_POINTS)
        gvals = np.empty(GRID_POINTS)
        gse = np.empty(GRID_POINTS)
        for i, t in enumerate(grid):
            gvals[i], gse[i] = field.evaluate(float(t))
        if not gvals[0] - 4.0 * gse[0] > 0.0:
            raise BracketError(
                f"no confident positive value at lo={lo0}: {gvals[0]} +- {gse[0]}"
            )
        if not gvals[-1] + 4.0 * gse[-1] < 0.0:
            raise BracketError(
                f"no confident negative value at hi={hi0}: {gvals[-1]} +- {gse[-1]}"
            )
        slope = float(np.polyfit(grid, gvals, 1)[0])
        monotone = bool(np.all(np.diff(gvals) < 0))

        lo, hi = lo0, hi0
        if not monotone:
            scan = np.linspace(lo0, hi0, SCAN_POINTS)
            svals = np.array([field.evaluate(float(t))[0] for t in scan])
            crossings = np.nonzero((svals[:-1] > 0) & (svals[1:] <= 0))[0]
            if len(crossings) == 0:
                raise BracketError("no sign change found on the fallback scan")
            lo, hi = float(scan[crossings[0]]), float(scan[crossings[0] + 1])

        iterations = 0
        theta_star = 0.5 * (lo + hi)
        width_floor = 8.0 * np.finfo(float).eps * max(1.0, abs(lo0), abs(hi0))
        while iterations < 200:
            mid = 0.5 * (lo + hi)
            fmid, semid = field.evaluate(mid)
            iterations += 1
            tight = (hi - lo) <= abs_tol
            if tight and (abs(fmid) <= max(abs_tol, 3.0 * semid) or (hi - lo) <= width_floor):
                theta_star = mid
                break
            if fmid > 0.0:
                lo = mid
            else:
                hi = mid
            theta_star = 0.5 * (lo + hi)
        residual = estimate_vf(
            sop, theta_star, hp, batch_size,
            TruncationPolicy(tol=policy.tol, fixed_n=n_trunc),
            reps, stream, control_variate=control_variate,
        )
        rtol = 3.0 * float(residual.stderr[0]) + abs_tol
        result = ZeroResult(
            theta_star=theta_star,
            bracket=(lo0, hi0),
            residual=residual,
            iterations=iterations,
            monotonicity_verified=monotone,
            slope_estimate=slope,
            attempts=attempt,
            abs_tol=abs_tol,
        )
        if abs(float(residual.value[0])) <= rtol:
            return result
        last_err = NumericsError(
            f"residual {float(residual.value[0])} at theta_star={theta_star} exceeds "
            f"3*stderr + abs_tol = {rtol} (attempt {attempt})"
        )
    raise last_err


@dataclass(frozen=True)
class HalfConcavityReport:
    oddness_defect: float
    min_slope: float
    max_curvature_positive: float
    step: float


def half_concavity_probe(c: float, kappa: float, eps: float, grid) -> HalfConcavityReport:
    """Finite-difference probe of h(x) = x/(eps + sqrt(c + kappa*x^2)).

    h should be odd, strictly increasing, and concave on (0, inf); the
    report carries the worst oddness defect, the smallest central-
    difference slope on the grid, and the largest second difference on
    the positive half.
    """
    if not (c >= 0 and kappa > 0 and eps > 0):
        raise ValueError("need c >= 0, kappa > 0, eps > 0")
    xs = np.asarray(grid, dtype=np.float64)
    if np.any(xs == 0):
        raise ValueError("probe grid must avoid 0")

    def h(x):
        return x / (eps + np.sqrt(c + kappa * x * x))

    step = 1e-4
    odd = float(np.max(np.abs(h(xs) + h(-xs))))
    d1 = (h(xs + step) - h(xs - step)) / (2.0 * step)
    pos = xs[xs > 0]
    d2 = (h(pos + step) - 2.0 * h(pos) + h(pos - step)) / step ** 2
    max_d2 = float(np.max(d2)) if len(pos) else float("-inf")
    return HalfConcavityReport(
        oddness_defect=odd,
        min_slope=float(np.min(d1)),
        max_curvature_positive=max_d2,
        step=step,
    )
