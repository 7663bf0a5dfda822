"""End-to-end acceptance checks; each prints one PASS/FAIL line.

Run with ``pytest -m acceptance -s``.  The Monte Carlo studies take roughly
15 minutes on a single core.
"""
import numpy as np
import pandas as pd
import pytest
from scipy import stats
from scipy.special import comb

from longmed.cli import main
from longmed.covariance import CovarianceModel, VarianceFunction, weight_matrices
from longmed.dataset import write_long_csv
from longmed.effects import EffectCurves
from longmed.permtest import fit_marginal_wls
from longmed.screening import estimate_null_proportions, fdr_threshold
from longmed.simulation import (
    TRUE_MEDIATORS,
    SimulationConfig,
    false_selection_proportion,
    generate_dataset,
    run_estimation_study,
)
from longmed.splines import DEFAULT_CANDIDATES, SplineBasis, build_design

from conftest import random_dataset, report

pytestmark = pytest.mark.acceptance


def _frequencies(tables, b):
    counts = np.zeros(tables[0].p)
    for table in tables:
        counts[list(fdr_threshold(table, estimate_null_proportions(table), b).selected)] += 1
    return counts / len(tables)


def test_power_curve(power_desk):
    power = power_desk.set_index("delta")["power"].sort_index()
    top, null = power.iloc[-1], power.loc[0.0]
    monotone = bool(np.all(np.diff(power.to_numpy()) >= -0.1))
    curve = ", ".join(f"{d:g}:{v:.3f}" for d, v in power.items())
    ok = report(
        "1 power curve",
        top >= 0.9 and 0.02 <= null <= 0.09 and monotone,
        f"power at largest delta {top:.3f} (>= 0.9), at delta 0 {null:.3f} (in [0.02, 0.09]), monotone={monotone}; {curve}",
    )
    assert ok


def test_screening_frequencies(screening_s1):
    freq = _frequencies(screening_s1.tables[:50], 0.05)
    true_min = freq[list(TRUE_MEDIATORS)].min()
    other_max = np.delete(freq, TRUE_MEDIATORS).max()
    ok = report(
        "2 screening frequencies",
        true_min >= 0.9 and other_max <= 0.15,
        f"min over mediators 1-4 {true_min:.2f} (>= 0.9), max over others {other_max:.2f} (<= 0.15)",
    )
    assert ok


def test_sparse_regime_frequencies(screening_s3):
    freq = _frequencies(screening_s3.tables, 0.05)[list(TRUE_MEDIATORS)]
    ok = report("3 sparse-regime frequencies", bool(np.all(freq > 0.5)), "mediators 1-4: " + ", ".join(f"{f:.2f}" for f in freq))
    assert ok


ESTIMATION_TARGETS = {"bias_i": (0.06, 0.03), "sd_i": (0.10, 0.05), "bias_d": (0.01, 0.02), "sd_d": (0.12, 0.06)}


@pytest.mark.parametrize("scenario", [1, 2, 3])
def test_estimation_metrics(scenario):
    cfg = SimulationConfig.full_scale(case=1, scenario=scenario, structure="diagonal", G=100, seed=0)
    row = run_estimation_study(cfg).iloc[0]
    misses = [k for k, (c, tol) in ESTIMATION_TARGETS.items() if abs(row[k] - c) > tol]
    detail = ", ".join(f"{k} {row[k]:.3f} ({c} +- {tol})" for k, (c, tol) in ESTIMATION_TARGETS.items())
    ok = report(f"4 estimation metrics, scenario {scenario}", not misses, detail)
    assert ok, f"outside tolerance: {misses}"


def test_empirical_fdr(screening_s1):
    tables = screening_s1.tables
    lines = []
    ok = len(tables) >= 100
    for b in (0.05, 0.10):
        fsp = np.mean([false_selection_proportion(fdr_threshold(t, estimate_null_proportions(t), b).selected) for t in tables])
        ok &= fsp <= b + 0.05
        lines.append(f"b={b:g}: {fsp:.3f} (<= {b + 0.05:.2f})")
    report("5 empirical FDR", ok, f"{len(tables)} replicates; " + "; ".join(lines))
    assert ok


def _oracle_wls():
    worst = 0.0
    rng = np.random.default_rng(5)
    structures = [("diagonal", None), ("ar1", 0.5), ("uniform", 0.3), ("power", 0.6)]
    for i in range(50):
        ds = random_dataset(rng, n=25, p=2, q=1, n_obs=(1, 5))
        basis = SplineBasis(3, int(rng.integers(0, 3)))
        structure, rho = structures[i % 4]
        cov = CovarianceModel(structure, rho, VarianceFunction(basis, rng.uniform(0.5, 2.0, basis.dim), 1e-6))
        fit = fit_marginal_wls(ds, 1, basis, cov)
        D = build_design(ds, basis, [1])
        W = weight_matrices(cov, ds)
        A = sum(d.T @ w @ d for d, w in zip(D, W))
        b = sum(d.T @ w @ y for d, w, y in zip(D, W, ds.outcomes))
        xi = np.linalg.solve(A, b)
        worst = max(worst, np.max(np.abs(fit.xi_hat - xi)) / np.max(np.abs(xi)))
    return worst


def _oracle_closed_forms():
    def const_var(v):
        basis = SplineBasis(3, 2)
        return VarianceFunction(basis, np.full(basis.dim, v), 1e-6)

    (W,) = weight_matrices(CovarianceModel("uniform", 0.3, const_var(1.0)), [np.array([0.2, 0.7])])
    err = np.max(np.abs(W - np.array([[1.0, -0.3], [-0.3, 1.0]]) / (2 * 0.91)))
    for rho in (-0.5, 0.3, 0.8):
        n = 6
        (W,) = weight_matrices(CovarianceModel("ar1", rho, const_var(1.0)), [np.linspace(0, 1, n)])
        expected = np.diag(np.r_[1.0, np.full(n - 2, 1 + rho**2), 1.0]) - rho * (np.eye(n, k=1) + np.eye(n, k=-1))
        err = max(err, np.max(np.abs(W - expected / ((1 - rho**2) * n))))
    return err


def _oracle_effects():
    rng = np.random.default_rng(2)
    basis = SplineBasis(3, 2)
    args = (basis, rng.normal(size=basis.dim), rng.normal(size=(3, basis.dim)), rng.normal(size=3), (0, 2, 5), ("a", "b", "c"))
    t = np.linspace(0, 1, 101)
    unit = EffectCurves(*args)
    additive = np.max(np.abs(unit.nie(t) - unit.nie_components(t).sum(axis=1)))
    linear = 0.0
    for x, x_star in [(2.0, 0.5), (-1.0, 3.0), (0.0, 0.0)]:
        other = EffectCurves(*args, contrast=(x, x_star))
        linear = max(linear, np.max(np.abs(other.nde(t) - (x - x_star) * unit.nde(t))))
        linear = max(linear, np.max(np.abs(other.nie(t) - (x - x_star) * unit.nie(t))))
    return additive, linear


def test_oracle_equivalences():
    wls = _oracle_wls()
    t = np.linspace(0, 1, 1000)
    bern = np.column_stack([comb(3, j) * t**j * (1 - t) ** (3 - j) for j in range(4)])
    bern_err = np.max(np.abs(SplineBasis(3, 0).evaluate(t) - bern))
    pou = max(np.max(np.abs(SplineBasis(3, c).evaluate(t).sum(axis=1) - 1)) for c in DEFAULT_CANDIDATES)
    closed = _oracle_closed_forms()
    additive, linear = _oracle_effects()
    checks = {
        "WLS vs normal equations": (wls, 1e-8),
        "Bernstein": (bern_err, 1e-12),
        "partition of unity": (pou, 1e-12),
        "weight closed forms": (closed, 1e-10),
        "NIE additivity": (additive, 1e-12),
        "contrast linearity": (linear, 1e-12),
    }
    ok = all(v <= tol for v, tol in checks.values())
    report("6 oracle equivalences", ok, "; ".join(f"{k} {v:.1e} (<= {tol:g})" for k, (v, tol) in checks.items()))
    assert ok


def test_null_uniformity(null_pvalues):
    S = 200

    def cdf(x):
        x = np.asarray(x, dtype=float)
        return np.clip((np.floor(np.clip(x, -1, 1) * S + 1e-9) + 1) / (S + 1), 0.0, 1.0) * (x >= 0)

    res = stats.kstest(null_pvalues, cdf)
    ok = report(
        "7 null uniformity", res.pvalue >= 0.01, f"KS statistic {res.statistic:.3f}, p-value {res.pvalue:.3f} (>= 0.01), {len(null_pvalues)} replicates"
    )
    assert ok


def _run_all(root, threads, data):
    small = ["-G", "3", "-S", "30", "--n", "40", "--p", "8", "--candidates", "1,2", "--threads", threads, "--seed", "0"]
    assert main(["power", "--case", "2", "--scenario", "1", "--deltas", "0,1", "--outdir", str(root / "power"), *small]) == 0
    argv = ["simulate", "--scenario", "3", "--studies", "estimation,screening", "--outdir", str(root / "sim"), *small]
    assert main(argv) == 0
    argv = ["analyze", "--input", str(data), "--mediator-prefix", "M", "--covariates", "Z1,Z2", "-S", "50",
            "--threads", threads, "--seed", "0", "--outdir", str(root / "analyze")]
    assert main(argv) == 0
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def test_determinism(tmp_path):
    data = tmp_path / "data.csv"
    write_long_csv(generate_dataset(SimulationConfig(n=60, p=10, scenario=2, seed=4)), data)
    runs = [_run_all(tmp_path / f"run{i}", threads, data) for i, threads in enumerate(["1", "1", "2"])]
    same = all(run == runs[0] for run in runs[1:])
    report("8 determinism", same, f"{len(runs[0])} CSV files compared over 3 runs with 1 and 2 threads")
    assert same
