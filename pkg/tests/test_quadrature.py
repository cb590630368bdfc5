import math

import numpy as np
import pytest

from milstein_mdp import (
    builtin_model,
    builtin_test_function,
    generator_apply,
    invariant_density_1d,
    solve_stein_1d,
    stationary_expectation,
)
from milstein_mdp.errors import (
    NonFiniteEvaluation,
    NotOneDimensional,
    ResidualTooLarge,
    TruncationInsufficient,
)
from milstein_mdp.quadrature import asymptotic_variance
from milstein_mdp.scheme import ChainConfig, NoiseStream, simulate_chain


def test_ou_density_second_moment(ou_model):
    d = invariant_density_1d(ou_model, X=8.0, n_grid=2**14)
    m2 = stationary_expectation(d, lambda x: x * x)
    assert 0.4999 <= m2 <= 0.5001


def test_density_symmetry(tanh_model, ou_model):
    # odd drift and even sigma give an even density
    m = builtin_model("tanh1d", {"kappa": 1.0, "c": 0.0, "s0": 1.0, "s1": 0.0})
    d = invariant_density_1d(m, X=8.0, n_grid=2**13)
    assert np.max(np.abs(d.p - d.p[::-1])) <= 1e-12


def test_density_normalization_and_boundary(ou_density):
    total = np.trapezoid(ou_density.p, ou_density.x)
    assert abs(total - 1.0) <= 1e-10
    assert max(ou_density.p[0], ou_density.p[-1]) < 1e-12 * ou_density.p.max()


def test_truncation_insufficient_raises(ou_model):
    with pytest.raises(TruncationInsufficient):
        invariant_density_1d(ou_model, X=1.0, n_grid=2**12)


def test_density_underflow_raises(ou_model):
    from milstein_mdp.errors import DensityUnderflow

    # exp(-60^2) is below the configured density floor in float64
    with pytest.raises(DensityUnderflow):
        invariant_density_1d(ou_model, X=60.0, n_grid=2**12)


def test_auto_truncation(ou_model, tanh_model):
    for m in (ou_model, tanh_model):
        d = invariant_density_1d(m, n_grid=2**14)
        assert max(d.p[0], d.p[-1]) < 1e-12 * d.p.max()


def test_density_not_one_dimensional(tanh_nd_model):
    with pytest.raises(NotOneDimensional):
        invariant_density_1d(tanh_nd_model)


def test_tanh_density_matches_monte_carlo(tanh_model, tanh_density):
    # independent oracle: equilibrated Milstein chains at a small step size
    m2_quad = stationary_expectation(tanh_density, lambda x: x * x)
    eta = 0.005
    cfg = ChainConfig(eta=eta, steps=4000)  # ~20 relaxation times
    finals = np.array(
        [simulate_chain(tanh_model, cfg, NoiseStream(512, i))[0] for i in range(2000)]
    )
    m2_mc = float(np.mean(finals**2))
    se = float(np.std(finals**2, ddof=1) / math.sqrt(len(finals)))
    # 3 standard errors plus the O(eta) discretization bias allowance
    assert abs(m2_mc - m2_quad) <= 3.0 * se + 0.01 * eta


def test_stationary_expectation_examples(ou_density):
    assert stationary_expectation(ou_density, lambda x: x * x) == pytest.approx(0.5, abs=1e-4)
    assert abs(stationary_expectation(ou_density, lambda x: x**3)) <= 1e-10
    assert stationary_expectation(ou_density, lambda x: np.ones_like(x)) == pytest.approx(
        1.0, abs=1e-10
    )


def test_stationary_expectation_nonfinite(ou_density):
    with pytest.raises(NonFiniteEvaluation):
        stationary_expectation(ou_density, lambda x: 1.0 / x)


def test_stein_ou_identity_analytic(ou_model, ou_stein, ou_density):
    mask = np.abs(ou_stein.x) <= 8.0
    assert np.max(np.abs(ou_stein.fp[mask] + 1.0)) <= 1e-8
    assert asymptotic_variance(ou_model, ou_density, ou_stein) == pytest.approx(1.0, abs=1e-6)
    assert abs(ou_stein.pi_h) <= 1e-12


def test_stein_constant_h_is_zero(ou_model, ou_density):
    h0 = builtin_test_function("gauss_bump", {"center": 0.0, "width": 1.0})
    const = type(h0)(
        name="const",
        value=lambda x: np.ones_like(np.asarray(x)),
        deriv=lambda x: np.zeros_like(np.asarray(x)),
        second_deriv=lambda x: np.zeros_like(np.asarray(x)),
        bounded=True,
    )
    st = solve_stein_1d(ou_model, const, ou_density)
    assert np.max(np.abs(st.f)) == 0.0
    assert st.residual_sup <= 1e-15


def test_stein_residual_tanh_gauss(tanh_gauss_stein):
    assert tanh_gauss_stein.residual_sup <= 1e-6
    assert all(np.isfinite(s) for s in tanh_gauss_stein.derivative_sups)


def test_stein_residual_too_large_on_coarse_grid(tanh_model, gauss_h):
    d = invariant_density_1d(tanh_model, X=10.0, n_grid=256)
    with pytest.raises(ResidualTooLarge):
        solve_stein_1d(tanh_model, gauss_h, d, tolerance=1e-10)


def test_grid_refinement_halves_residual(tanh_model, gauss_h):
    sups = []
    for k in (12, 13, 14, 15):
        d = invariant_density_1d(tanh_model, X=10.0, n_grid=2**k)
        st = solve_stein_1d(tanh_model, gauss_h, d, tolerance=1.0)
        sups.append(st.residual_sup)
    for a, b in zip(sups, sups[1:]):
        if a > 1e-12:
            assert b <= a / 2.0


def test_generator_apply_examples(ou_model):
    quad = builtin_test_function("gauss_bump")  # only for the type; replaced below
    f_sq = type(quad)(
        name="x_sq",
        value=lambda x: np.asarray(x) ** 2,
        deriv=lambda x: 2.0 * np.asarray(x),
        second_deriv=lambda x: 2.0 * np.ones_like(np.asarray(x)),
        bounded=False,
    )
    assert generator_apply(ou_model, f_sq, 1.0) == pytest.approx(-1.0)
    f_const = type(quad)(
        name="const",
        value=lambda x: np.ones_like(np.asarray(x)),
        deriv=lambda x: np.zeros_like(np.asarray(x)),
        second_deriv=lambda x: np.zeros_like(np.asarray(x)),
        bounded=True,
    )
    assert generator_apply(ou_model, f_const, 0.3) == 0.0
    f_id = builtin_test_function("identity")
    assert generator_apply(ou_model, f_id, 3.0) == pytest.approx(-3.0)


def test_stationarity_identity(ou_model, tanh_model):
    # pi is invariant: integral of (generator f) d pi vanishes for smooth f
    rng = np.random.default_rng(17)
    for model in (ou_model, tanh_model):
        d = invariant_density_1d(model, X=10.0, n_grid=2**14)
        for _ in range(20):
            c = rng.uniform(-2, 2)
            w = rng.uniform(0.5, 2.0)
            bump = builtin_test_function("gauss_bump", {"center": c, "width": w})
            vals = generator_apply(model, bump, d.x)
            assert abs(np.trapezoid(vals * d.p, d.x)) <= 1e-6


def test_gauge_choice_irrelevant_downstream(ou_model, identity_h, ou_density):
    # shifting f by a constant leaves fp, and hence all statistics, unchanged
    st = solve_stein_1d(ou_model, identity_h, ou_density)
    i0 = len(st.x) // 2
    assert st.f[i0] == pytest.approx(0.0, abs=1e-14)


def test_stein_requires_one_dimensional(tanh_nd_model, identity_h, ou_density):
    with pytest.raises(NotOneDimensional):
        solve_stein_1d(tanh_nd_model, identity_h, ou_density)
