"""Tests for ensembles, rate fits, sweeps, and schedule diagnostics."""

import numpy as np
import pytest

from adamlab import (
    AdamHyperparams,
    EnsembleConfig,
    ErrorSeries,
    LearningRateSchedule,
    OptimizerKind,
    QuadraticSOP,
    fit_loglog,
    make_stream,
    point_mass,
    run_ensemble,
    run_trajectory,
    schedule_diagnostics,
    sweep_asymmetry,
    sweep_batch,
    sweep_beta2,
    two_point_mean_zero,
    worker_count,
)

HP_09 = AdamHyperparams(0.9, 0.9, 1e-8)
ASYM = QuadraticSOP(two_point_mean_zero(-1.0, 0.1))
POWER = LearningRateSchedule.power_law(1.0, 0.99)


def _cfg(**kw):
    base = dict(
        sop=ASYM,
        kind=OptimizerKind.adam(HP_09),
        schedule=POWER,
        n_steps=500,
        reps=4,
        base_seed=0,
    )
    base.update(kw)
    return EnsembleConfig(**base)


# ---------------------------------------------------------------- ensembles

def test_sgd_point_mass_contracts_exactly():
    # data frozen at 0, constant gamma: |theta_n| = 0.8^n, zero spread
    cfg = EnsembleConfig(
        sop=QuadraticSOP(point_mass(0.0)),
        kind=OptimizerKind.sgd(),
        schedule=LearningRateSchedule.constant(0.1),
        n_steps=20,
        reps=3,
        record_grid=np.arange(0, 21),
    )
    series = run_ensemble(cfg)
    for i, n in enumerate(series.ns):
        assert series.means[i] == pytest.approx(0.8 ** n, rel=1e-12)
        # replications are identical here, so the spread is pure roundoff
        assert series.stderrs[i] <= 1e-15


def test_ensemble_matches_individual_trajectories_bitwise():
    cfg = _cfg(reps=5, record_grid=[0, 500])
    series = run_ensemble(cfg)
    finals = []
    for r in range(5):
        tr = run_trajectory(ASYM, cfg.kind, POWER, 1, 500, 1.0,
                            make_stream(0, cfg.stream_offset + r), record_grid=[0, 500])
        finals.append(tr.final.theta[0])
    finals = np.array(finals)
    assert series.final_theta_mean[0] == finals.mean()
    assert series.means[-1] == np.abs(finals).mean()


def test_ensemble_reference_is_minimizer_by_default():
    series = run_ensemble(_cfg(record_grid=[0, 500]))
    assert series.reference_kind == "minimizer"
    assert series.reference == pytest.approx([0.0], abs=1e-16)
    assert series.reps == 4


def test_ensemble_vfzero_reference():
    cfg = _cfg(n_steps=2000, record_grid=[0, 2000], reference="vfzero",
               zero_reps=3000)
    series = run_ensemble(cfg)
    assert series.reference_kind == "vfzero"
    # the asymmetric zero sits near +0.03; the plateau error is then small
    assert 0.01 < series.reference[0] < 0.06
    assert series.means[-1] < 0.05


def test_vfzero_reference_requires_adam():
    cfg = _cfg(kind=OptimizerKind.sgd(), reference="vfzero")
    with pytest.raises(ValueError):
        run_ensemble(cfg)


def test_ensemble_deterministic_and_seed_sensitive():
    a = run_ensemble(_cfg(record_grid=[0, 500]))
    b = run_ensemble(_cfg(record_grid=[0, 500]))
    c = run_ensemble(_cfg(record_grid=[0, 500], base_seed=1))
    assert np.array_equal(a.means, b.means)
    assert not np.array_equal(a.means, c.means)


def test_clipped_error_mode_caps_at_one():
    # start far away: plain error begins at |theta0| = 30, clipped at 1
    cfg = _cfg(theta0=30.0, record_grid=[0, 500], error_mode="clipped")
    series = run_ensemble(cfg)
    assert series.means[0] == 1.0
    cfg_abs = _cfg(theta0=30.0, record_grid=[0, 500])
    assert run_ensemble(cfg_abs).means[0] == 30.0


@pytest.mark.parametrize(
    "kw",
    [
        dict(reps=1),
        dict(n_steps=0),
        dict(batch_size=0),
        dict(error_mode="median"),
        dict(reference="truth"),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        _cfg(**kw)


# ---------------------------------------------------------------- rate fits

def _series(ns, means):
    ns = np.asarray(ns)
    return ErrorSeries(
        ns=ns,
        means=np.asarray(means, dtype=np.float64),
        stderrs=np.zeros(len(ns)),
        reference=np.array([0.0]),
        reference_kind="minimizer",
        error_mode="abs",
        reps=10,
        fingerprint="test",
        final_theta_mean=np.array([0.0]),
        final_theta_stderr=np.array([0.0]),
    )


def test_fit_recovers_exact_power_law():
    ns = np.unique(np.round(np.logspace(1, 5, 60)).astype(int))
    series = _series(ns, 3.0 * ns.astype(float) ** -0.7)
    fit = fit_loglog(series, 10, 10**5)
    assert fit.slope == pytest.approx(-0.7, abs=1e-12)
    assert fit.r_squared >= 1 - 1e-12
    assert fit.count == len(ns)


def test_fit_on_constant_series():
    ns = np.arange(10, 200, 7)
    fit = fit_loglog(_series(ns, np.full(len(ns), 0.25)), 10, 200)
    assert fit.slope == pytest.approx(0.0, abs=1e-14)
    assert fit.r_squared == 1.0  # zero total variance counts as a perfect fit


def test_fit_window_is_respected():
    ns = np.unique(np.round(np.logspace(1, 4, 40)).astype(int))
    means = 2.0 * ns.astype(float) ** -0.5
    means[ns < 100] = 17.0  # garbage outside the window must not matter
    fit = fit_loglog(_series(ns, means), 100, 10**4)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)


def test_fit_needs_five_points():
    with pytest.raises(ValueError):
        fit_loglog(_series([10, 20, 30, 40], [1, 1, 1, 1]), 1, 100)


def test_fit_rejects_nonpositive_means():
    ns = np.arange(10, 100, 10)
    means = np.linspace(1.0, -0.1, len(ns))
    with pytest.raises(ValueError):
        fit_loglog(_series(ns, means), 10, 100)


# ---------------------------------------------------------------- sweeps

def test_beta2_sweep_threads_do_not_change_results(monkeypatch):
    base = _cfg(n_steps=1000, record_grid=[0, 1000])
    grid = [0.9, 0.95]
    monkeypatch.setenv("ADAMLAB_THREADS", "1")
    serial = sweep_beta2(base, grid, zero_reps=500)
    monkeypatch.setenv("ADAMLAB_THREADS", "2")
    parallel = sweep_beta2(base, grid, zero_reps=500)
    assert serial.rows == parallel.rows
    assert serial.columns == ["beta2", "mean_abs_theta", "stderr", "theta_star", "residual"]


def test_beta2_sweep_skips_invalid_values():
    base = _cfg(n_steps=200, record_grid=[0, 200])
    with pytest.warns(UserWarning, match="beta2"):
        table = sweep_beta2(base, [0.5, 0.9], zero_reps=300)
    assert len(table.rows) == 1
    assert table.rows[0][0] == 0.9


def test_asymmetry_sweep_signs(monkeypatch):
    monkeypatch.setenv("ADAMLAB_THREADS", "1")
    base = _cfg(n_steps=2000, record_grid=[0, 2000])
    table = sweep_asymmetry(base, [0.25, 4.0], zero_reps=2000)
    assert table.columns == ["w", "p_v", "mean_theta", "stderr", "theta_star", "residual"]
    by_w = {row[0]: row for row in table.rows}
    assert by_w[0.25][1] == pytest.approx(0.2)  # p_v = w/(1+w)
    assert by_w[4.0][1] == pytest.approx(0.8)
    # small-w zero is positive, large-w zero negative; the signed ensemble
    # mean tracks the zero on both sides
    assert by_w[0.25][4] > 0 and by_w[0.25][2] > 0
    assert by_w[4.0][4] < 0 and by_w[4.0][2] < 0


def test_batch_sweep_shape(monkeypatch):
    monkeypatch.setenv("ADAMLAB_THREADS", "1")
    base = _cfg(n_steps=500, record_grid=[0, 500],
                kind=OptimizerKind.adam(AdamHyperparams(0.9, 0.99, 1e-8)))
    table = sweep_batch(base, [1, 2], zero_reps=2000)
    assert [row[0] for row in table.rows] == [1, 2]
    for row in table.rows:
        assert np.isfinite(row[2]) and np.isfinite(row[4])


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("ADAMLAB_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("ADAMLAB_THREADS", "junk")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.setenv("ADAMLAB_THREADS", "0")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.delenv("ADAMLAB_THREADS")
    assert worker_count() >= 1


# ---------------------------------------------------------------- schedules

def test_power_schedule_below_one_is_consistent():
    rep = schedule_diagnostics(LearningRateSchedule.power_law(1.0, 0.99), 10**5)
    assert rep.decay_ok and rep.summable_ok and rep.consistent
    assert "consistent" in rep.verdict


def test_boundary_power_schedule_fails_decay():
    # gamma_n = 1/n gives difference ratio n/(n+1), which never decays
    rep = schedule_diagnostics(LearningRateSchedule.power_law(1.0, 1.0), 10**5)
    assert not rep.decay_ok
    assert rep.max_tail_ratio > 0.99
    assert not rep.consistent


def test_constant_schedule_fails_summability():
    rep = schedule_diagnostics(LearningRateSchedule.constant(0.01), 10**4)
    assert rep.decay_ok  # difference term is identically zero
    assert not rep.summable_ok
    assert not rep.consistent
    # sum of gamma^2 grows linearly, so the last decade adds ~9x the rest
    assert rep.increment_ratio_p > 1.0


def test_schedule_divergence_proxy():
    rep = schedule_diagnostics(LearningRateSchedule.constant(0.5), 10**3)
    assert rep.divergence_sum == pytest.approx(0.5 * 10**3, rel=1e-12)


def test_schedule_needs_ten_steps():
    with pytest.raises(ValueError):
        schedule_diagnostics(POWER, 9)
