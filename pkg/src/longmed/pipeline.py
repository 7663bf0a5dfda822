"""End-to-end analysis: basis selection, tests, screening, effect curves."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .covariance import CorrelationStructure, CovarianceModel, estimate_covariance
from .dataset import LongitudinalDataset
from .effects import EffectCurves, estimate_effects, fit_joint_model
from .permtest import NullModelStats, fit_mediator_models, permutation_test
from .screening import MediationTestTable, ScreeningResult, fdr_threshold, estimate_null_proportions, joint_pvalues
from .splines import DEFAULT_CANDIDATES, SplineBasis, select_basis_dimension

log = logging.getLogger(__name__)


@dataclass
class AnalysisConfig:
    structure: str = "diagonal"
    S: int = 1000
    b: float = 0.05
    seed: int = 0
    candidates: tuple = DEFAULT_CANDIDATES
    degree: int = 3
    n_folds: int = 10
    weight_mode: str = "reuse"
    pvalue_mode: str = "plain"
    floor: str = "half"
    contrast: tuple = (1.0, 0.0)


@dataclass
class AnalysisResult:
    basis: SplineBasis
    cov: CovarianceModel
    mediator_fits: list
    permutation_results: list
    table: MediationTestTable
    screening: ScreeningResult
    effects: EffectCurves | None = None
    config: AnalysisConfig = field(default_factory=AnalysisConfig)


def choose_basis(ds: LongitudinalDataset, cfg: AnalysisConfig) -> SplineBasis:
    return select_basis_dimension(ds, cfg.structure, cfg.candidates, cfg.degree, cfg.n_folds, cfg.seed)


def run_mediator_tests(ds: LongitudinalDataset, basis: SplineBasis, cfg: AnalysisConfig, cov=None, mediators=None):
    """Mediator-model fits and permutation results for the given mediators."""
    mediators = list(range(ds.p)) if mediators is None else list(mediators)
    if cov is None:
        cov = estimate_covariance(ds, basis, cfg.structure)
    mfits = fit_mediator_models(ds, mediators)
    null_stats = NullModelStats(ds, basis, cov) if cfg.weight_mode == "reuse" else None
    perms = [
        permutation_test(
            ds, k, basis, cfg.structure, cfg.S, cfg.seed, cov=cov, null_stats=null_stats,
            weight_mode=cfg.weight_mode, pvalue_mode=cfg.pvalue_mode,
        )
        for k in mediators
    ]
    return cov, mfits, perms


def screen_dataset(ds: LongitudinalDataset, cfg: AnalysisConfig, basis: SplineBasis | None = None):
    basis = basis or choose_basis(ds, cfg)
    cov, mfits, perms = run_mediator_tests(ds, basis, cfg)
    table = joint_pvalues(mfits, perms, cfg.floor, names=ds.mediator_names)
    result = fdr_threshold(table, estimate_null_proportions(table), cfg.b)
    return AnalysisResult(basis, cov, mfits, perms, table, result, None, cfg)


def analyze(ds: LongitudinalDataset, cfg: AnalysisConfig | None = None, basis: SplineBasis | None = None) -> AnalysisResult:
    """Screen all mediators, then fit effect curves on the selected set."""
    cfg = cfg or AnalysisConfig()
    res = screen_dataset(ds, cfg, basis)
    joint = fit_joint_model(ds, res.screening.selected, res.basis, cfg.structure, cov=res.cov)
    names = tuple(ds.mediator_names[k] for k in joint.selected)
    x, x_star = cfg.contrast
    res.effects = estimate_effects(joint, res.mediator_fits, x, x_star, names=names, time_map=ds.time_map)
    return res
