"""Residual variance function, within-subject correlation, and WLS weights.

The error covariance of subject ``i`` is ``C_i = V_i^{1/2} R_i(rho) V_i^{1/2}``
with ``V_i = diag(V(t_i1), ..., V(t_in_i))``; the WLS weight is
``W_i = (n_i C_i)^{-1}``.  Estimation runs on OLS residuals of the null model
(intercept, exposure and covariate curves, no candidate mediator):

* ``V(t)`` is a spline regression of squared residuals on time, floored at
  ``v_min = 1e-6 * mean squared residual``.
* ``rho`` is a moment (AR1, Uniform) or grid (Power) estimate from the
  standardised residuals ``e_ij = r_ij / sqrt(V(t_ij))``.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

from .dataset import LongitudinalDataset
from .errors import NumericalError, ValidationError
from .fitting import Whitener, wls_fit
from .splines import SplineBasis, build_design

__all__ = [
    "CorrelationStructure",
    "VarianceFunction",
    "CovarianceModel",
    "null_residuals",
    "estimate_variance_fn",
    "estimate_rho",
    "estimate_covariance",
    "weight_matrices",
]

RHO_BOUND = 0.99
POWER_GRID = np.round(np.arange(1, 99) / 100.0, 2)
COND_MAX = 1e12
POWER_BINS = 1000
JITTER = 1e-10


class CorrelationStructure(str, enum.Enum):
    DIAGONAL = "diagonal"
    AR1 = "ar1"
    UNIFORM = "uniform"
    POWER = "power"

    @classmethod
    def parse(cls, value) -> "CorrelationStructure":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"ar": "ar1", "independent": "diagonal", "exchangeable": "uniform", "cs": "uniform"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValidationError(f"unknown correlation structure {value!r}") from None

    @property
    def label(self) -> str:
        return {"diagonal": "Diagonal", "ar1": "AR", "uniform": "Uniform", "power": "Power"}[self.value]


@dataclass(frozen=True, eq=False)
class VarianceFunction:
    """``V(t) = max(v_min, psi(t)' coef)``."""

    basis: SplineBasis
    coef: np.ndarray
    v_min: float

    def __post_init__(self):
        if not self.v_min > 0:
            raise ValidationError("variance floor must be positive")

    def __call__(self, t) -> np.ndarray:
        return np.maximum(self.v_min, self.basis.evaluate(t) @ self.coef)


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    structure: CorrelationStructure
    rho: float | None
    variance: VarianceFunction

    def __post_init__(self):
        s = CorrelationStructure.parse(self.structure)
        object.__setattr__(self, "structure", s)
        if s is CorrelationStructure.DIAGONAL:
            object.__setattr__(self, "rho", None)
            return
        if self.rho is None:
            raise ValidationError(f"{s.value} structure needs a correlation parameter")
        lo = 0.0 if s is CorrelationStructure.POWER else -RHO_BOUND
        if not lo < self.rho <= RHO_BOUND:
            raise ValidationError(f"rho={self.rho} outside the admissible range for {s.value}")

    def correlation(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        n = t.size
        s = self.structure
        if s is CorrelationStructure.DIAGONAL:
            return np.eye(n)
        if s is CorrelationStructure.UNIFORM:
            R = np.full((n, n), self.rho)
        elif s is CorrelationStructure.AR1:
            lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
            R = self.rho ** lag
        else:
            R = self.rho ** np.abs(np.subtract.outer(t, t))
        np.fill_diagonal(R, 1.0)
        return R

    def covariance(self, t) -> np.ndarray:
        sd = np.sqrt(self.variance(t))
        return sd[:, None] * self.correlation(t) * sd[None, :]

    def whitener(self, t, variance=None) -> Whitener:
        t = np.asarray(t, dtype=float)
        n = t.size
        v = self.variance(t) if variance is None else variance
        if self.structure is CorrelationStructure.DIAGONAL:
            return Whitener(scale=np.sqrt(n * v))
        sd = np.sqrt(n * v)
        if self.structure is CorrelationStructure.POWER:
            return Whitener(chol=_checked_cholesky(sd[:, None] * self.correlation(t) * sd[None, :]))
        # AR1 and uniform correlations depend on (n_i, rho) only, and
        # chol(D R D) = D chol(R) for diagonal D.
        return Whitener(chol=sd[:, None] * _index_corr_factor(self.structure, n, self.rho))

    def whiteners(self, times) -> list:
        """:meth:`whitener` for each time vector, evaluating ``V`` once."""
        times = [np.asarray(t, dtype=float) for t in times]
        v = np.split(self.variance(np.concatenate(times)), np.cumsum([t.size for t in times])[:-1])
        return [self.whitener(t, vi) for t, vi in zip(times, v)]


@functools.lru_cache(maxsize=256)
def _index_corr_factor(structure: CorrelationStructure, n: int, rho: float) -> np.ndarray:
    if structure is CorrelationStructure.AR1:
        R = rho ** np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    else:
        R = np.full((n, n), rho)
        np.fill_diagonal(R, 1.0)
    F = _checked_cholesky(R)
    F.setflags(write=False)
    return F


def _checked_cholesky(C: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; one diagonal jitter if cond(C) exceeds 1e12."""
    for attempt in range(2):
        F, info = lapack.dpotrf(C, lower=1, clean=1)
        if info == 0:
            rcond, _ = lapack.dpocon(F, np.linalg.norm(C, 1), uplo="L")
            if rcond * COND_MAX >= 1.0:
                return F
        if attempt == 0:
            C = C + JITTER * np.mean(np.diag(C)) * np.eye(C.shape[0])
    raise NumericalError("covariance matrix numerically singular (condition number > 1e12 after jitter)")


def weight_matrices(cov: CovarianceModel, subjects) -> list:
    """Explicit ``W_i = n_i^{-1} C_i^{-1}``; ``subjects`` is a dataset or a list of time vectors."""
    if isinstance(subjects, LongitudinalDataset):
        subjects = subjects.times
    return [w.weight() for w in cov.whiteners(subjects)]


def null_residuals(ds: LongitudinalDataset, basis: SplineBasis, mediators: Sequence[int] = ()) -> list:
    """OLS residuals of the spline model with intercept, exposure, the given
    mediators and the covariates.  Marginal tests pass no mediators."""
    fit = wls_fit(build_design(ds, basis, mediators), ds.outcomes)
    return fit.residuals


def estimate_variance_fn(residuals, times, basis: SplineBasis, heteroscedastic: bool = True) -> VarianceFunction:
    r = np.concatenate([np.asarray(v, dtype=float) for v in residuals])
    t = np.concatenate([np.asarray(v, dtype=float) for v in times])
    if r.size <= basis.dim:
        raise ValidationError(f"{r.size} pooled residuals cannot fit a variance function of dimension {basis.dim}")
    msr = float(np.mean(r**2))
    v_min = 1e-6 * msr if msr > 0 else 1e-12
    if heteroscedastic:
        B = basis.evaluate(t)
        coef, *_ = np.linalg.lstsq(B, r**2, rcond=None)
    else:
        # partition of unity: constant coefficients give a constant curve
        coef = np.full(basis.dim, msr)
    return VarianceFunction(basis, coef, v_min)


def estimate_rho(std_residuals, times, structure) -> float:
    structure = CorrelationStructure.parse(structure)
    if structure is CorrelationStructure.DIAGONAL:
        raise ValidationError("diagonal structure has no correlation parameter")
    pairs = [(np.asarray(e, float), np.asarray(t, float)) for e, t in zip(std_residuals, times) if len(e) >= 2]
    if not pairs:
        raise ValidationError("correlation estimation needs a subject with at least 2 observations")

    if structure is CorrelationStructure.UNIFORM:
        means = []
        for e, _ in pairs:
            n = e.size
            means.append((e.sum() ** 2 - (e**2).sum()) / (n * (n - 1)))
        n_max = max(e.size for e, _ in pairs)
        lower = max(-RHO_BOUND, -1.0 / (n_max - 1) + 1e-3)
        return float(np.clip(np.mean(means), lower, RHO_BOUND))

    if structure is CorrelationStructure.AR1:
        prods = np.concatenate([e[:-1] * e[1:] for e, _ in pairs])
        return float(np.clip(prods.mean(), -RHO_BOUND, RHO_BOUND))

    prods, dists = [], []
    for e, t in pairs:
        iu = np.triu_indices(e.size, k=1)
        prods.append(np.outer(e, e)[iu])
        dists.append(np.abs(np.subtract.outer(t, t))[iu])
    prods = np.concatenate(prods)
    dists = np.concatenate(dists)
    # least squares over the grid from per-bin sums of the pair distances;
    # sum(prods**2) is constant in rho and dropped
    span = max(float(dists.max()), 1e-12)
    bins = np.minimum((dists / span * POWER_BINS).astype(int), POWER_BINS - 1)
    count = np.bincount(bins, minlength=POWER_BINS)
    keep = count > 0
    count = count[keep]
    d_bar = np.bincount(bins, dists, POWER_BINS)[keep] / count
    p_sum = np.bincount(bins, prods, POWER_BINS)[keep]
    powers = POWER_GRID[:, None] ** d_bar[None, :]
    sse = (count * powers**2 - 2.0 * p_sum * powers).sum(axis=1)
    return float(POWER_GRID[int(np.argmin(sse))])


def estimate_covariance(
    ds: LongitudinalDataset,
    basis: SplineBasis,
    structure="diagonal",
    mediators: Sequence[int] = (),
    heteroscedastic: bool = True,
    residuals=None,
) -> CovarianceModel:
    """Fit ``V(t)`` and ``rho`` from null-model OLS residuals."""
    structure = CorrelationStructure.parse(structure)
    if residuals is None:
        residuals = null_residuals(ds, basis, mediators)
    variance = estimate_variance_fn(residuals, ds.times, basis, heteroscedastic)
    rho = None
    if structure is not CorrelationStructure.DIAGONAL:
        v = variance(np.concatenate(ds.times))
        std = np.split(np.concatenate(residuals) / np.sqrt(v), np.cumsum(ds.n_obs)[:-1])
        rho = estimate_rho(std, ds.times, structure)
    return CovarianceModel(structure, rho, variance)
