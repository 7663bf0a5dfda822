"""Synthetic data generator and Monte Carlo studies.

The generator follows the benchmark design: ``n`` subjects, ``p`` mediators,
two covariates, four outcome-error cases and three time-sampling scenarios.
``N(0, 2)`` is read as variance 2.

Every replicate draws from its own stream seeded by ``(seed, replicate)``;
the draws do not depend on ``delta``, so datasets for different effect
sizes share everything except the ``beta_6`` contribution.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.integrate import simpson

from .covariance import CorrelationStructure, estimate_covariance
from .dataset import LongitudinalDataset, Subject
from .effects import estimate_effects, fit_joint_model
from .errors import ValidationError
from .permtest import fit_mediator_models, permutation_test
from .pipeline import AnalysisConfig, choose_basis, screen_dataset
from .splines import DEFAULT_CANDIDATES

log = logging.getLogger(__name__)

__all__ = [
    "SimulationConfig",
    "TruthSpec",
    "generate_dataset",
    "scenario_layout",
    "run_power_study",
    "run_screening_study",
    "run_estimation_study",
    "integrated_bias_sd",
    "DESK_DELTAS",
]

DESK_DELTAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
TRUE_MEDIATORS = (0, 1, 2, 3)


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 100
    p: int = 50
    scenario: int = 1
    case: int = 1
    delta: float = 1.0
    G: int = 50
    S: int = 200
    seed: int = 0
    b: float = 0.05
    structure: str = "diagonal"
    candidates: tuple = DEFAULT_CANDIDATES
    rho1: float = 0.8
    rho2: float = 0.3
    error_scale: float = 1.0  # multiplies the outcome-error variance
    threads: int = 1

    def __post_init__(self):
        if self.scenario not in (1, 2, 3):
            raise ValidationError(f"scenario must be 1, 2 or 3, got {self.scenario}")
        if self.case not in (1, 2, 3, 4):
            raise ValidationError(f"case must be 1-4, got {self.case}")
        if self.G < 1 or self.S < 1:
            raise ValidationError("G and S must be positive")
        if self.n < 10:
            raise ValidationError("n must be at least 10")
        if self.p < 6:
            raise ValidationError("the benchmark design needs p >= 6")
        CorrelationStructure.parse(self.structure)

    @classmethod
    def full_scale(cls, **kw) -> "SimulationConfig":
        kw.setdefault("G", 100)
        kw.setdefault("S", 1000)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["candidates"] = list(self.candidates)
        return d


@dataclass(frozen=True)
class TruthSpec:
    alpha_nonzero: tuple = (0.35, 0.4, 0.25, 0.3, 0.15)
    gamma: tuple = (0.3, 0.3)
    exposure_var: float = 2.0
    covariate_var: float = 2.0
    mediator_corr: float = 0.1
    beta6: bool = True

    def alpha(self, p: int) -> np.ndarray:
        a = np.zeros(p)
        a[: len(self.alpha_nonzero)] = self.alpha_nonzero
        return a

    @staticmethod
    def eta(t):
        t = np.asarray(t, dtype=float)
        return 0.3 * np.exp(0.5 * t**2)

    @staticmethod
    def theta(t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.column_stack([0.5 * np.cos(3 * np.pi * t), 0.4 * np.sin(3 * np.pi * t)])

    def beta(self, t, p: int, delta: float) -> np.ndarray:
        """``(len(t), p)`` matrix of the true mediator coefficient curves."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        B = np.zeros((t.size, p))
        B[:, 0] = 0.5 * np.sin(np.pi * t)
        B[:, 1] = -0.4 * np.sin(2 * np.pi * t)
        B[:, 2] = -0.4 * np.cos(2 * np.pi * t)
        B[:, 3] = 0.5 * (1.2 - t)
        if self.beta6:
            B[:, 5] = 0.5 * delta * np.cos(np.pi * t) * (t >= 0.5)
        return B

    def indirect(self, t, mediators=TRUE_MEDIATORS) -> np.ndarray:
        mediators = list(mediators)
        p = max(max(mediators) + 1, 6)
        return self.beta(t, p, 0.0)[:, mediators] @ self.alpha(p)[mediators]

    def mediator_cov(self, p: int) -> np.ndarray:
        idx = np.arange(p)
        return self.mediator_corr ** np.abs(np.subtract.outer(idx, idx))


def scenario_layout(scenario: int, n: int) -> list:
    """Per-subject ``(n_i, upper time bound)`` for the sampling scenario."""
    if scenario == 1:
        return [(100, 1.0)] * n
    if scenario == 2:
        return [(10, 1.0)] * n
    if scenario == 3:
        sizes = [int(np.floor(f * n)) for f in (0.1, 0.2, 0.3)]
        sizes.append(n - sum(sizes))
        groups = [(7, 0.7), (8, 0.8), (9, 0.9), (10, 1.0)]
        return [g for g, size in zip(groups, sizes) for _ in range(size)]
    raise ValidationError(f"unknown scenario {scenario}")


def _ar1(u: np.ndarray, rho: float) -> np.ndarray:
    e = np.empty_like(u)
    e[0] = u[0]
    c = np.sqrt(1.0 - rho**2)
    for j in range(1, u.size):
        e[j] = rho * e[j - 1] + c * u[j]
    return e


def outcome_errors(case: int, t: np.ndarray, u, v, w, rho1: float, rho2: float) -> np.ndarray:
    """Outcome errors for one subject from standard normal draws ``u, v`` (length n_i) and ``w`` (scalar)."""
    if case == 1:
        return np.sqrt(2.0) * u
    if case == 2:
        return np.sqrt(2.0) * _ar1(u, rho1)
    uniform = np.sqrt(rho2) * w + np.sqrt(1.0 - rho2) * v
    if case == 3:
        return np.sqrt(2.0) * uniform
    mixed = np.sqrt(0.5) * _ar1(u, rho1) + np.sqrt(0.5) * uniform
    return np.sqrt(1.5 + 2.0 * t**2) * mixed


def generate_dataset(cfg: SimulationConfig, truth: TruthSpec | None = None, replicate: int = 0) -> LongitudinalDataset:
    truth = truth or TruthSpec()
    rng = np.random.default_rng([cfg.seed, replicate])
    n, p = cfg.n, cfg.p
    x = rng.normal(0.0, np.sqrt(truth.exposure_var), n)
    Z = rng.normal(0.0, np.sqrt(truth.covariate_var), (n, 2))
    eps = rng.standard_normal((n, p)) @ np.linalg.cholesky(truth.mediator_cov(p)).T
    M = np.outer(x, truth.alpha(p)) + (Z @ np.asarray(truth.gamma))[:, None] + eps

    err_sd = np.sqrt(cfg.error_scale)
    subjects = []
    for i, (n_i, upper) in enumerate(scenario_layout(cfg.scenario, n)):
        t = np.sort(rng.uniform(0.0, upper, n_i))
        u = rng.standard_normal(n_i)
        v = rng.standard_normal(n_i)
        w = rng.standard_normal()
        mean = truth.eta(t) * x[i] + truth.beta(t, p, cfg.delta) @ M[i] + truth.theta(t) @ Z[i]
        y = mean + err_sd * outcome_errors(cfg.case, t, u, v, w, cfg.rho1, cfg.rho2)
        subjects.append(Subject(str(i + 1), x[i], M[i], Z[i], t, y))
    return LongitudinalDataset(tuple(subjects), time_domain=(0.0, 1.0))


def replicate_seed(cfg: SimulationConfig, g: int) -> int:
    """Seed for the analysis-side randomness (CV folds, permutations) of replicate ``g``."""
    return int(np.random.SeedSequence([cfg.seed, g, 1]).generate_state(1)[0])


def _parallel(cfg: SimulationConfig, fn, items):
    if cfg.threads <= 1:
        return [fn(i) for i in items]
    return Parallel(n_jobs=cfg.threads)(delayed(fn)(i) for i in items)


def _analysis_cfg(cfg: SimulationConfig, g: int, structure=None) -> AnalysisConfig:
    return AnalysisConfig(
        structure=structure or cfg.structure, S=cfg.S, b=cfg.b, seed=replicate_seed(cfg, g), candidates=cfg.candidates
    )


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------


def _power_replicate(cfg, deltas, structures, g):
    out = []
    for delta in deltas:
        ds = generate_dataset(replace(cfg, delta=delta), replicate=g)
        for structure in structures:
            acfg = _analysis_cfg(cfg, g, structure)
            basis = choose_basis(ds, acfg)
            res = permutation_test(ds, 5, basis, structure, cfg.S, acfg.seed)
            out.append((delta, structure, res.p_beta))
    return out


def run_power_study(cfg: SimulationConfig, delta_grid=DESK_DELTAS, structures=None, level: float = 0.05) -> pd.DataFrame:
    """Rejection rate of the marginal permutation test on mediator 6 per delta.

    Returns one row per ``(delta, structure)``.
    """
    structures = [CorrelationStructure.parse(s).value for s in (structures or [cfg.structure])]
    rows = [r for rep in _parallel(cfg, lambda g: _power_replicate(cfg, delta_grid, structures, g), range(cfg.G)) for r in rep]
    df = pd.DataFrame(rows, columns=["delta", "structure", "p_beta"])
    df["reject"] = df["p_beta"] < level
    out = (
        df.groupby(["delta", "structure"], sort=False)
        .agg(power=("reject", "mean"), rejections=("reject", "sum"), G=("reject", "size"))
        .reset_index()
    )
    out["method"] = [f"Proposed ({CorrelationStructure.parse(s).label})" for s in out["structure"]]
    out["case"], out["scenario"] = cfg.case, cfg.scenario
    return out[["case", "scenario", "delta", "method", "structure", "power", "rejections", "G"]]


# ---------------------------------------------------------------------------
# screening
# ---------------------------------------------------------------------------


@dataclass
class ScreeningStudy:
    frequency: pd.DataFrame  # one row per (b, mediator)
    fdr: pd.DataFrame  # one row per b
    tables: list = field(default_factory=list, repr=False)


def _screening_replicate(cfg, g):
    ds = generate_dataset(cfg, replicate=g)
    res = screen_dataset(ds, _analysis_cfg(cfg, g))
    return res.table


def false_selection_proportion(selected, truth=TRUE_MEDIATORS) -> float:
    selected = set(selected)
    return len(selected - set(truth)) / max(1, len(selected))


def run_screening_study(cfg: SimulationConfig, b_levels=None) -> ScreeningStudy:
    """Per-mediator selection frequencies and empirical FDR over ``cfg.G`` replicates.

    The p-value tables are computed once; each FDR level in ``b_levels``
    (default ``[cfg.b]``) is applied to the same tables.
    """
    from .screening import estimate_null_proportions, fdr_threshold

    b_levels = list(b_levels or [cfg.b])
    tables = _parallel(cfg, lambda g: _screening_replicate(cfg, g), range(cfg.G))
    freq_rows, fdr_rows = [], []
    for b in b_levels:
        counts = np.zeros(cfg.p)
        fsp = []
        for table in tables:
            sel = fdr_threshold(table, estimate_null_proportions(table), b).selected
            counts[list(sel)] += 1
            fsp.append(false_selection_proportion(sel))
        for k in range(cfg.p):
            freq_rows.append((b, k + 1, counts[k] / cfg.G))
        fdr_rows.append((b, float(np.mean(fsp)), cfg.G))
    frequency = pd.DataFrame(freq_rows, columns=["b", "k", "frequency"])
    fdr = pd.DataFrame(fdr_rows, columns=["b", "empirical_fdr", "G"])
    for df in (frequency, fdr):
        df.insert(0, "scenario", cfg.scenario)
        df.insert(0, "case", cfg.case)
        df.insert(2, "method", f"Proposed ({CorrelationStructure.parse(cfg.structure).label})")
    return ScreeningStudy(frequency, fdr, tables)


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

ESTIMATION_GRID = np.linspace(0.0, 1.0, 201)


def integrated_bias_sd(curves: np.ndarray, truth: np.ndarray, grid=ESTIMATION_GRID) -> tuple:
    """Integrated bias and sd of replicate curves ``(G, len(grid))`` by Simpson's rule."""
    curves = np.asarray(curves, dtype=float)
    mean = curves.mean(axis=0)
    bias = np.sqrt(simpson((mean - truth) ** 2, x=grid))
    sd = np.sqrt(simpson(np.mean((curves - mean) ** 2, axis=0), x=grid))
    return float(bias), float(sd)


def _estimation_replicate(cfg, g):
    ds = generate_dataset(cfg, replicate=g)
    acfg = _analysis_cfg(cfg, g)
    basis = choose_basis(ds, acfg)
    cov = estimate_covariance(ds, basis, cfg.structure)
    joint = fit_joint_model(ds, TRUE_MEDIATORS, basis, cfg.structure, cov=cov)
    curves = estimate_effects(joint, fit_mediator_models(ds, TRUE_MEDIATORS))
    return curves.nde(ESTIMATION_GRID), curves.nie(ESTIMATION_GRID), basis.n_interior


def run_estimation_study(cfg: SimulationConfig, truth: TruthSpec | None = None) -> pd.DataFrame:
    """Integrated bias/sd of NDE and NIE with the true mediators taken as selected."""
    truth = truth or TruthSpec()
    reps = _parallel(cfg, lambda g: _estimation_replicate(cfg, g), range(cfg.G))
    nde = np.array([r[0] for r in reps])
    nie = np.array([r[1] for r in reps])
    bias_d, sd_d = integrated_bias_sd(nde, truth.eta(ESTIMATION_GRID))
    bias_i, sd_i = integrated_bias_sd(nie, truth.indirect(ESTIMATION_GRID))
    knots = np.array([r[2] for r in reps])
    return pd.DataFrame(
        [
            {
                "case": cfg.case,
                "scenario": cfg.scenario,
                "method": f"Proposed ({CorrelationStructure.parse(cfg.structure).label})",
                "bias_i": bias_i,
                "sd_i": sd_i,
                "bias_d": bias_d,
                "sd_d": sd_d,
                "G": cfg.G,
                "mean_interior_knots": float(knots.mean()),
            }
        ]
    )


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start
