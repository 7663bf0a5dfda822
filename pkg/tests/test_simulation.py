from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from scipy.integrate import simpson

from longmed.errors import ValidationError
from longmed.simulation import (
    ESTIMATION_GRID,
    SimulationConfig,
    TruthSpec,
    false_selection_proportion,
    generate_dataset,
    integrated_bias_sd,
    outcome_errors,
    run_estimation_study,
    run_power_study,
    scenario_layout,
)


def test_scenario_one_dense():
    ds = generate_dataset(SimulationConfig(n=12, p=6, scenario=1))
    assert set(ds.n_obs) == {100}


def test_scenario_three_proportions():
    ds = generate_dataset(SimulationConfig(n=100, p=6, scenario=3))
    counts = pd.Series(ds.n_obs).value_counts().to_dict()
    assert counts == {7: 10, 8: 20, 9: 30, 10: 40}
    for s in ds.subjects:
        assert s.t[-1] <= {7: 0.7, 8: 0.8, 9: 0.9, 10: 1.0}[s.n_obs]


def test_scenario_layout_rounding():
    assert len(scenario_layout(3, 37)) == 37


def test_delta_zero_matches_generator_without_beta6():
    cfg = SimulationConfig(n=20, p=8, scenario=2, delta=0.0, seed=4)
    a = generate_dataset(cfg)
    b = generate_dataset(replace(cfg, delta=0.7), TruthSpec(beta6=False))
    assert a.equals(b)


def test_delta_changes_only_outcomes():
    cfg = SimulationConfig(n=20, p=8, scenario=2, seed=4)
    a = generate_dataset(replace(cfg, delta=0.0))
    b = generate_dataset(replace(cfg, delta=1.0))
    np.testing.assert_array_equal(a.M, b.M)
    assert not np.array_equal(np.concatenate(a.outcomes), np.concatenate(b.outcomes))


def test_exposure_variance():
    ds = generate_dataset(SimulationConfig(n=10_000, p=6, scenario=2, seed=1))
    assert abs(np.var(ds.x) / 2.0 - 1) < 0.05


def test_case2_lag_one_autocorrelation():
    rng = np.random.default_rng(2)
    prods, sq = [], []
    for _ in range(500):
        t = np.sort(rng.uniform(0, 1, 10))
        e = outcome_errors(2, t, rng.normal(size=10), rng.normal(size=10), rng.normal(), 0.8, 0.3)
        prods.append(e[:-1] * e[1:])
        sq.append(e**2)
    r = np.mean(np.concatenate(prods)) / np.mean(np.concatenate(sq))
    assert abs(r - 0.8) < 0.05


def test_case4_variance_profile():
    rng = np.random.default_rng(3)
    t = np.array([0.0, 0.5, 1.0])
    e = np.array([outcome_errors(4, t, rng.normal(size=3), rng.normal(size=3), rng.normal(), 0.8, 0.3) for _ in range(20000)])
    np.testing.assert_allclose(e.var(axis=0), 1.5 + 2 * t**2, rtol=0.05)


def test_mediator_correlation():
    ds = generate_dataset(SimulationConfig(n=5000, p=6, scenario=2, seed=5))
    resid = ds.M - np.outer(ds.x, TruthSpec().alpha(6)) - (ds.Z @ [0.3, 0.3])[:, None]
    C = np.corrcoef(resid.T)
    assert abs(C[0, 1] - 0.1) < 0.05
    assert abs(C[0, 2] - 0.01) < 0.05


def test_invalid_config():
    with pytest.raises(ValidationError):
        SimulationConfig(case=9)
    with pytest.raises(ValidationError):
        SimulationConfig(scenario=0)
    with pytest.raises(ValidationError):
        SimulationConfig(G=0)


def test_simpson_cubic():
    g = ESTIMATION_GRID
    f = 2 * g**3 - g**2 + 0.5 * g - 3
    assert abs(simpson(f, x=g) - (0.5 - 1 / 3 + 0.25 - 3)) < 1e-8


def test_integrated_bias_sd_exact():
    g = ESTIMATION_GRID
    truth = np.zeros_like(g)
    curves = np.array([np.full_like(g, 1.0), np.full_like(g, 3.0)])
    bias, sd = integrated_bias_sd(curves, truth, g)
    assert bias == pytest.approx(2.0, abs=1e-12)
    assert sd == pytest.approx(1.0, abs=1e-12)


def test_false_selection_proportion():
    assert false_selection_proportion(()) == 0.0
    assert false_selection_proportion((0, 1, 7)) == pytest.approx(1 / 3)


def test_zero_noise_consistency():
    # outcome noise only: with noiseless mediators the joint design is singular.
    # What remains in bias_i is the replicate mean of alpha_hat, hence G=200.
    cfg = SimulationConfig(n=100, p=6, scenario=2, G=200, delta=0.0, error_scale=1e-6, candidates=(4,))
    row = run_estimation_study(cfg).iloc[0]
    assert row.bias_i < 0.01
    assert row.bias_d < 0.01


def test_estimation_study_deterministic():
    cfg = SimulationConfig(n=40, p=6, scenario=2, G=3, candidates=(1, 2))
    a = run_estimation_study(cfg)
    b = run_estimation_study(cfg)
    pd.testing.assert_frame_equal(a, b, check_exact=True)
    assert list(a.columns[:7]) == ["case", "scenario", "method", "bias_i", "sd_i", "bias_d", "sd_d"]


def test_power_study_layout():
    cfg = SimulationConfig(n=30, p=6, scenario=3, case=2, G=2, S=20, candidates=(1,))
    df = run_power_study(cfg, (0.0, 1.0), ["diagonal", "ar1"])
    assert len(df) == 4
    assert set(df["method"]) == {"Proposed (Diagonal)", "Proposed (AR)"}
    assert df["power"].between(0, 1).all()


def test_power_study_threads_invariant():
    cfg = SimulationConfig(n=30, p=6, scenario=2, G=3, S=20, candidates=(1, 2))
    a = run_power_study(cfg, (0.0, 1.0))
    b = run_power_study(replace(cfg, threads=2), (0.0, 1.0))
    pd.testing.assert_frame_equal(a, b, check_exact=True)


def test_screening_mediator5_rarely_selected(screening_s1):
    freq = screening_s1.frequency
    f = freq[(freq.b == 0.05)].set_index("k")["frequency"]
    assert f[5] < 0.15
