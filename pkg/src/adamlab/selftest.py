"""Fast property suites behind the `adamlab selftest` command.

Each suite is a pure function of the seed and finishes in seconds; the
whole run stays well under a minute.  These are the checks worth running
on every install: estimator-vs-oracle agreement, exact symmetries,
a priori boundedness, and schedule classification.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .adam import OptimizerKind, adam_step, init_state, run_trajectory, trajectory_bound
from .experiments import schedule_diagnostics, EnsembleConfig, run_ensemble
from .model import (
    AdamHyperparams,
    LearningRateSchedule,
    QuadraticSOP,
    point_mass,
    two_point_mean_zero,
)
from .streams import make_stream
from .vectorfield import (
    TruncationPolicy,
    estimate_vf,
    find_zero_1d,
    half_concavity_probe,
    vf_deterministic,
    vf_truncated_exact,
)


def _suite_bias_correction(seed):
    worst = 0.0
    for g0, hp in [
        (1.0, AdamHyperparams(0.9, 0.999, 1e-8)),
        (-0.3, AdamHyperparams(0.6, 0.99, 1e-8)),
        (2.5, AdamHyperparams(0.9, 0.9, 1e-4)),
    ]:
        state = adam_step(init_state(1.0), np.array([g0]), hp, 0.5)
        mhat = state.m[0] / (1.0 - hp.beta1)
        vhat = state.v[0] / (1.0 - hp.beta2)
        worst = max(worst, abs(mhat - g0), abs(vhat - g0 * g0))
        expected = 1.0 - 0.5 * g0 / (hp.epsilon + abs(g0))
        worst = max(worst, abs(state.theta[0] - expected))
    return worst <= 1e-12, f"worst first-step identity defect {worst:.2e}"


def _suite_deterministic_zero(seed):
    hp = AdamHyperparams(0.9, 0.999, 1e-8)
    zero = find_zero_1d(
        QuadraticSOP(point_mass(0.3)), hp, 1, TruncationPolicy(), 100,
        make_stream(seed, 101), bracket=(-2.0, 2.0),
    )
    err = abs(zero.theta_star - 0.3)
    ok = err <= 1e-6 and zero.monotonicity_verified
    return ok, f"point-mass zero off by {err:.2e} after {zero.iterations} bisections"


def _suite_half_concavity(seed):
    triples = [(0.0, 4.0, 1.0), (1.0, 4.0, 1e-2), (0.5, 1.0, 0.1), (2.0, 9.0, 1.0), (0.1, 0.25, 1e-3)]
    grid = np.arange(0.1, 5.0001, 0.1)
    worst_odd = 0.0
    min_slope = math.inf
    max_curv = -math.inf
    for c, kappa, eps in triples:
        rep = half_concavity_probe(c, kappa, eps, grid)
        worst_odd = max(worst_odd, rep.oddness_defect)
        min_slope = min(min_slope, rep.min_slope)
        max_curv = max(max_curv, rep.max_curvature_positive)
    ok = worst_odd == 0.0 and min_slope > 0.0 and max_curv < 0.0
    return ok, (
        f"oddness {worst_odd:.1e}, min slope {min_slope:.3e}, max curvature {max_curv:.3e}"
    )


def _suite_paired_oddness(seed):
    sop = QuadraticSOP(two_point_mean_zero(-1.0, 1.0))
    hp = AdamHyperparams(0.9, 0.9, 1e-8)
    pol = TruncationPolicy(fixed_n=40)
    plus = estimate_vf(sop, 0.37, hp, 2, pol, 2000, make_stream(seed, 7), paired=True)
    minus = estimate_vf(sop, -0.37, hp, 2, pol, 2000, make_stream(seed, 7), paired=True)
    at_zero = estimate_vf(sop, 0.0, hp, 2, pol, 2000, make_stream(seed, 7), paired=True)
    exact = plus.value[0] == -minus.value[0] and at_zero.value[0] == 0.0
    return exact, (
        f"f(0.37)={plus.value[0]:.6f}, f(-0.37)={minus.value[0]:.6f}, f(0)={at_zero.value[0]}"
    )


def _suite_boundedness(seed):
    cases = [
        (AdamHyperparams(0.9, 0.999, 1e-8), two_point_mean_zero(-1.0, 0.1)),
        (AdamHyperparams(0.9, 0.9, 1e-8), two_point_mean_zero(-1.0, 1.0)),
        (AdamHyperparams(0.6, 0.99, 1e-8), two_point_mean_zero(-1.0, 0.25)),
    ]
    sched = LearningRateSchedule.power_law(1.0, 0.99)
    margin = math.inf
    for sid, (hp, dist) in enumerate(cases):
        tr = run_trajectory(
            QuadraticSOP(dist), OptimizerKind.adam(hp), sched, 1, 20000, 1.0,
            make_stream(seed, 300 + sid),
        )
        c = float(max(abs(dist.v[0]), abs(dist.w[0])))
        bound = trajectory_bound(1.0, c, hp, sched.gamma(1))
        peak = float(np.max(np.abs(tr.thetas)))
        margin = min(margin, bound - peak)
    return margin > 0.0, f"smallest bound margin {margin:.6g}"


def _suite_oracle_equivalence(seed):
    rng = make_stream(seed, 999)
    worst_sigma = 0.0
    for case in range(5):
        beta1 = 0.6 if rng.random() < 0.5 else 0.9
        beta2 = beta1 ** 2 + (0.99 - beta1 ** 2) * rng.random()
        hp = AdamHyperparams(beta1, beta2, 10.0 ** (-2.0 - 6.0 * rng.random()))
        m = 1 + int(rng.random() < 0.5)
        n_tr = 2 + int(rng.random() * 6)
        w = 0.05 + 1.95 * rng.random()
        theta = -1.5 + 3.0 * rng.random()
        sop = QuadraticSOP(two_point_mean_zero(-1.0, w))
        exact = vf_truncated_exact(sop, theta, hp, m, n_tr)
        est = estimate_vf(
            sop, theta, hp, m, TruncationPolicy(fixed_n=n_tr), 20000,
            make_stream(seed, 500 + case),
        )
        se = max(float(est.stderr[0]), 1e-15)
        worst_sigma = max(worst_sigma, abs(float(est.value[0]) - exact) / se)
    hp = AdamHyperparams(0.9, 0.999, 1e-8)
    pm = estimate_vf(
        QuadraticSOP(point_mass(0.7)), -0.4, hp, 1, TruncationPolicy(), 10,
        make_stream(seed, 600),
    )
    det_gap = abs(float(pm.value[0]) - float(vf_deterministic(0.7, -0.4, hp)[0]))
    ok = worst_sigma <= 4.0 and det_gap <= 1e-12
    return ok, f"worst |est-exact| = {worst_sigma:.2f} sigma; point-mass gap {det_gap:.1e}"


def _suite_schedule_classification(seed):
    good = schedule_diagnostics(LearningRateSchedule.power_law(1.0, 0.99), 10**5)
    boundary = schedule_diagnostics(LearningRateSchedule.power_law(1.0, 1.0), 10**5)
    const = schedule_diagnostics(LearningRateSchedule.constant(0.1), 10**5)
    ok = good.consistent and not boundary.consistent and not const.consistent
    return ok, (
        f"r=0.99 {good.consistent}, r=1 {boundary.consistent}, constant {const.consistent}"
    )


def _suite_seed_determinism(seed):
    sop = QuadraticSOP(two_point_mean_zero(-1.0, 0.1))
    hp = AdamHyperparams(0.9, 0.9, 1e-8)
    cfg = EnsembleConfig(
        sop=sop, kind=OptimizerKind.adam(hp),
        schedule=LearningRateSchedule.power_law(1.0, 0.99),
        n_steps=500, reps=4, base_seed=seed,
    )
    s1 = run_ensemble(cfg)
    s2 = run_ensemble(cfg)
    e1 = estimate_vf(sop, 0.2, hp, 1, TruncationPolicy(fixed_n=50), 1000, make_stream(seed, 1))
    e2 = estimate_vf(sop, 0.2, hp, 1, TruncationPolicy(fixed_n=50), 1000, make_stream(seed, 1))
    ok = (
        np.array_equal(s1.means, s2.means)
        and np.array_equal(s1.stderrs, s2.stderrs)
        and e1.value[0] == e2.value[0]
    )
    return ok, "reruns bit-identical" if ok else "rerun mismatch"


_SUITES = [
    ("bias-correction identity", _suite_bias_correction),
    ("deterministic field zero", _suite_deterministic_zero),
    ("half-concavity probe", _suite_half_concavity),
    ("paired estimator oddness", _suite_paired_oddness),
    ("trajectory boundedness", _suite_boundedness),
    ("oracle equivalence", _suite_oracle_equivalence),
    ("schedule classification", _suite_schedule_classification),
    ("seed determinism", _suite_seed_determinism),
]


def run_selftest(seed: int = 0, verbose: bool = True) -> bool:
    t0 = time.time()
    all_ok = True
    for name, fn in _SUITES:
        t1 = time.time()
        try:
            ok, detail = fn(seed)
        except Exception as exc:  # a crashed suite is a failed suite
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok = all_ok and ok
        if verbose:
            status = "PASS" if ok else "FAIL"
            print(f"[{status}] {name:28s} {detail} ({time.time() - t1:.2f}s)")
    if verbose:
        verdict = "all suites passed" if all_ok else "FAILURES above"
        print(f"selftest: {verdict} in {time.time() - t0:.1f}s")
    return all_ok
