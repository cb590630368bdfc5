import numpy as np
import pytest
from scipy.stats import norm

from milstein_mdp import (
    builtin_model,
    clt_check,
    concentration_curve,
    drift_condition_check,
    strong_order_regression,
    tail_ratio_table,
    variance_bridge,
)
from milstein_mdp.diagnostics import wilson_interval
from milstein_mdp.errors import (
    ConstantsMissing,
    InsufficientEtaGrid,
    TooFewSamples,
)
from milstein_mdp.model import SdeModel
from milstein_mdp.montecarlo import ReplicaSampleSet


# --- clt_check --------------------------------------------------------------


def test_ks_perfect_quantiles_pass():
    n = 1000
    samples = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    report = clt_check(samples)
    assert report.ks <= 0.5 / n + 1e-12
    assert report.passed


def test_ks_shifted_fails():
    n = 4000
    samples = norm.ppf((np.arange(1, n + 1) - 0.5) / n) + 1.0
    report = clt_check(samples)
    # sup_x |Phi(x) - Phi(x-1)| = 0.3829 (attained at x = 1/2)
    assert report.ks == pytest.approx(0.3829, abs=0.01)
    assert not report.passed


def test_ks_too_few_samples():
    with pytest.raises(TooFewSamples):
        clt_check(np.zeros(50))


def test_ks_calibration():
    # false-rejection rate at alpha=0.01 over 100 synthetic N(0,1) trials
    rng = np.random.default_rng(123)
    passes = sum(clt_check(rng.standard_normal(500)).passed for _ in range(100))
    assert passes >= 98


def test_clt_target_variance_scaling():
    rng = np.random.default_rng(7)
    samples = rng.standard_normal(5000) * 2.0
    assert clt_check(samples, target_variance=4.0).passed
    assert not clt_check(samples, target_variance=1.0).passed


# --- tail ratio table -------------------------------------------------------


def _synthetic_set(w, s=None, eta=0.05, m=400):
    from milstein_mdp.estimator import ChainStats

    s = w if s is None else s
    stats = [
        ChainStats(
            eta=eta, m=m, replica=i, pi_hat=0.0, y=1.0, v=1.0, h_eta=wv,
            r_eta=0.0, w=wv, s=sv, clamped_steps=0, v_noise=1.0, b_energy=1.0,
        )
        for i, (wv, sv) in enumerate(zip(w, s))
    ]
    return ReplicaSampleSet(
        experiment="synthetic", eta=eta, m=m, master_seed=0,
        n_requested=len(stats), stats=stats,
    )


def test_tail_ratio_at_zero(tails_set):
    table = tail_ratio_table(tails_set, [0.0])
    for stat in ("W", "-W", "S", "-S"):
        (row,) = table.select(stat)
        assert row.resolved
        assert 0.98 <= row.ratio <= 1.02


def test_tail_ratio_synthetic_normal():
    rng = np.random.default_rng(31)
    sset = _synthetic_set(rng.standard_normal(100_000))
    table = tail_ratio_table(sset, [1.0, 2.0])
    for row in table.rows:
        assert row.resolved
        assert row.ci_lo <= row.p_emp <= row.ci_hi
        # the true ratio is 1; the CI on the ratio scale must cover it
        assert row.ci_lo / row.p_gauss <= 1.0 <= row.ci_hi / row.p_gauss


def test_tail_ratio_resolution_marking():
    rng = np.random.default_rng(32)
    sset = _synthetic_set(rng.standard_normal(1000))
    table = tail_ratio_table(sset, [3.5])  # (1-Phi(3.5)) * 1000 << 100
    assert all(not row.resolved for row in table.rows)
    lines = list(table.csv_lines())
    assert lines[0].startswith("statistic,")
    assert ",,," in lines[1] or lines[1].split(",")[2] == ""


def test_tail_probabilities_non_increasing(tails_set):
    table = tail_ratio_table(tails_set, [0.5, 1.0, 1.5, 2.0])
    for stat in ("W", "-W", "S", "-S"):
        probs = [r.p_emp for r in table.select(stat)]
        assert all(b <= a for a, b in zip(probs, probs[1:]))


def test_wilson_interval_basics():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    lo, hi = wilson_interval(0, 100)
    assert lo == pytest.approx(0.0, abs=1e-12) and hi < 0.06


# --- strong order -----------------------------------------------------------


def test_strong_order_constant_sigma_schemes_coincide(ou_model):
    report = strong_order_regression(
        ou_model, etas=[2**-5, 2**-6, 2**-7], horizon=1.0, n_paths=64,
        master_seed=9, eta_ref=2**-11,
    )
    assert report.errors_em == report.errors_milstein
    assert report.slope_em == pytest.approx(report.slope_milstein)


def test_strong_order_requires_fine_reference(ou_model):
    from milstein_mdp.errors import InvalidParams

    with pytest.raises(InvalidParams):
        strong_order_regression(
            ou_model, etas=[2**-5, 2**-6, 2**-7], horizon=1.0, n_paths=8,
            master_seed=0, eta_ref=2**-7,
        )


# --- drift condition --------------------------------------------------------


def test_drift_ou_closed_form(ou_model):
    # at x=0, eta=0.01: lhs = 1 + eta exactly; rhs = 0.9975 + 0.02
    probes = drift_condition_check(ou_model, 0.01, [0.0], inner=200_000, master_seed=4)
    (p,) = probes
    assert abs(p.lhs - 1.01) <= 3.0 * p.stderr
    assert p.rhs == pytest.approx(0.9975 + 0.02, abs=1e-12)
    assert p.in_small_set and p.passed


def test_drift_far_state_margin_positive():
    for model_id in ("ou", "tanh1d"):
        model = builtin_model(model_id)
        for x in (-10.0, 10.0):
            (p,) = drift_condition_check(model, 0.01, [x], inner=100_000, master_seed=8)
            assert p.passed and p.margin > 0.0


def test_drift_constants_missing(ou_model):
    stripped = SdeModel(
        name="nameless",
        dimension=1,
        drift=ou_model.drift,
        diffusion=ou_model.diffusion,
        diffusion_gradient=ou_model.diffusion_gradient,
        constants=None,
    )
    with pytest.raises(ConstantsMissing):
        drift_condition_check(stripped, 0.01, [0.0], inner=100, master_seed=0)


# --- variance bridge --------------------------------------------------------


def test_bridge_insufficient_eta_grid(ou_model, identity_h):
    with pytest.raises(InsufficientEtaGrid):
        variance_bridge(ou_model, identity_h, etas=[0.1, 0.05], chain_len=1000, master_seed=0)


def test_bridge_constant_observable_skipped(ou_model, identity_h, ou_density, ou_stein):
    # ou with h = x has ||sigma^T grad f_h||^2 == 1: nothing to resolve
    report = variance_bridge(
        ou_model, identity_h, etas=[0.2, 0.1, 0.05], chain_len=20_000,
        master_seed=1, density=ou_density, stein=ou_stein,
    )
    assert report.slope is None
    assert report.skipped_reason is not None
    assert all(g <= 1e-9 for g in report.gaps)


# --- concentration curves ---------------------------------------------------


def test_curves_monotone_on_synthetic():
    rng = np.random.default_rng(44)
    vals = np.abs(rng.standard_normal(50_000))
    report = concentration_curve(vals, "R_rem", ys=[0.5, 1.0, 1.5, 2.0])
    assert report.monotone_decreasing
    assert report.dominant in ("exponential", "gaussian")
    assert (report.gauss_rate or 0) > 0


def test_curves_degenerate_reported(tails_set):
    report = concentration_curve(tails_set, "Y_dev")
    assert report.degenerate  # y == 1 identically for ou with h = x


def test_curves_default_grid_resolves(tanh_curves_set):
    report = concentration_curve(tanh_curves_set, "Y_dev")
    assert not report.degenerate
    assert report.monotone_decreasing


def test_curves_too_few_samples():
    with pytest.raises(TooFewSamples):
        concentration_curve(np.abs(np.random.default_rng(0).standard_normal(40)), "R_rem")
