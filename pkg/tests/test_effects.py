import numpy as np
import pytest
from hypothesis import given, strategies as st

from longmed.covariance import CovarianceModel, VarianceFunction, weight_matrices
from longmed.effects import EffectCurves, default_grid, estimate_effects, fit_joint_model
from longmed.errors import ValidationError
from longmed.permtest import MediatorFit, fit_mediator_models
from longmed.simulation import ESTIMATION_GRID, SimulationConfig, TruthSpec, generate_dataset, integrated_bias_sd
from longmed.splines import SplineBasis, build_design

from conftest import random_dataset


@pytest.fixture
def curves():
    rng = np.random.default_rng(0)
    basis = SplineBasis(3, 2)
    return EffectCurves(
        basis,
        rng.normal(size=basis.dim),
        rng.normal(size=(3, basis.dim)),
        rng.normal(size=3),
        (0, 2, 5),
        ("a", "b", "c"),
    )


def test_empty_selection(small_ds):
    fit = fit_joint_model(small_ds, [], SplineBasis(3, 1))
    assert fit.zeta_beta.shape == (0, 5)
    eff = estimate_effects(fit, [])
    np.testing.assert_array_equal(eff.nie(default_grid()), 0.0)
    table = eff.table()
    assert list(table.columns) == ["t_normalized", "t_original", "NDE", "NIE"]


def test_additivity(curves):
    t = np.linspace(0, 1, 77)
    comps = curves.nie_components(t)
    assert np.max(np.abs(curves.nie(t) - comps.sum(axis=1))) <= 1e-12
    table = curves.table(t)
    np.testing.assert_array_equal(table[["NIE_a", "NIE_b", "NIE_c"]].to_numpy(), comps)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_contrast_linearity(x, x_star):
    rng = np.random.default_rng(1)
    basis = SplineBasis(3, 1)
    args = (basis, rng.normal(size=5), rng.normal(size=(2, 5)), rng.normal(size=2), (0, 1), ("a", "b"))
    unit = EffectCurves(*args)
    other = EffectCurves(*args, contrast=(x, x_star))
    t = np.linspace(0, 1, 31)
    np.testing.assert_allclose(other.nde(t), (x - x_star) * unit.nde(t), rtol=0, atol=1e-12 * max(1, abs(x - x_star)))
    np.testing.assert_allclose(other.nie(t), (x - x_star) * unit.nie(t), rtol=0, atol=1e-12 * max(1, abs(x - x_star)))


def test_null_contrast(curves):
    same = EffectCurves(curves.basis, curves.zeta_eta, curves.zeta_beta, curves.alpha_hat, curves.selected, curves.names, (0.7, 0.7))
    t = default_grid()
    np.testing.assert_array_equal(same.nde(t), 0.0)
    np.testing.assert_array_equal(same.nie(t), 0.0)


def test_zero_alpha(curves):
    zero = EffectCurves(curves.basis, curves.zeta_eta, curves.zeta_beta, np.zeros(3), curves.selected, curves.names)
    np.testing.assert_array_equal(zero.nie(default_grid()), 0.0)


def test_joint_fit_matches_generic_solver():
    rng = np.random.default_rng(2)
    ds = random_dataset(rng, n=40, p=4, q=2, n_obs=(2, 7))
    basis = SplineBasis(3, 1)
    cov = CovarianceModel("ar1", 0.4, VarianceFunction(basis, rng.uniform(0.5, 2, basis.dim), 1e-6))
    fit = fit_joint_model(ds, [3, 1], basis, cov=cov)
    D = build_design(ds, basis, [3, 1])
    W = weight_matrices(cov, ds)
    A = sum(d.T @ w @ d for d, w in zip(D, W))
    b = sum(d.T @ w @ y for d, w, y in zip(D, W, ds.outcomes))
    np.testing.assert_allclose(fit.zeta, np.linalg.solve(A, b), rtol=1e-8, atol=1e-10)
    L = basis.dim
    np.testing.assert_array_equal(fit.zeta_beta[0], fit.zeta[2 * L : 3 * L])
    assert fit.zeta_theta.shape == (2, L)


def test_duplicate_selection(small_ds):
    with pytest.raises(ValidationError):
        fit_joint_model(small_ds, [0, 0], SplineBasis(3, 1))


def test_missing_mediator_fit(small_ds):
    fit = fit_joint_model(small_ds, [0], SplineBasis(3, 1))
    with pytest.raises(ValidationError):
        estimate_effects(fit, [])


def test_outside_unit_interval(curves):
    with pytest.raises(ValidationError):
        curves.nde([1.5])


def test_time_map_in_table(curves):
    shifted = EffectCurves(curves.basis, curves.zeta_eta, curves.zeta_beta, curves.alpha_hat, curves.selected, curves.names, time_map=(2004.0, 12.0))
    table = shifted.table(np.array([0.0, 0.5, 1.0]))
    np.testing.assert_allclose(table["t_original"], [2004, 2010, 2016])


def test_nie_tracks_truth_on_simulated_data():
    truth = TruthSpec()
    ds = generate_dataset(SimulationConfig(n=200, p=8, scenario=2, seed=3))
    selected = (0, 1, 2, 3)
    fit = fit_joint_model(ds, selected, SplineBasis(3, 3))
    eff = estimate_effects(fit, fit_mediator_models(ds, selected))
    g = ESTIMATION_GRID
    bias_i, _ = integrated_bias_sd(eff.nie(g)[None, :], truth.indirect(g), g)
    bias_d, _ = integrated_bias_sd(eff.nde(g)[None, :], truth.eta(g), g)
    assert bias_i < 0.15
    assert bias_d < 0.15
