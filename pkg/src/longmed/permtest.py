"""Mediator-model OLS, marginal WLS fits, and the permutation F-test.

For each candidate mediator ``k`` the marginal model regresses the outcome on
spline curves for the intercept, exposure, ``m_k`` and the covariates.  The
statistic is ``F_k = (WRSS_0 - WRSS_k) / WRSS_k``; its null distribution is
obtained by permuting ``m_k`` across subjects.

Weights come from the null model, which does not involve ``m_k``, so they
are fixed across permutations.  :class:`NullModelStats` exploits this: with
``Bt_i`` the whitened basis of subject ``i`` every design quantity is a
weighted sum of the per-subject matrices ``G_i = Bt_i' Bt_i`` and vectors
``c_i = Bt_i' r0_i`` (``r0`` the whitened null residuals).  A permutation
only changes the weights, and the WRSS reduction of adding the mediator
block is

    a(w) = g' S^{-1} g,   g = sum_i w_i c_i,
    S = sum_i w_i^2 G_i - A_m0 A_00^{-1} A_0m,   A_m0 = sum_i w_i kron(v_i', G_i),

which costs ``O(n P L^2)`` per permutation independent of ``n_i``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .covariance import CorrelationStructure, CovarianceModel, estimate_covariance
from .dataset import LongitudinalDataset
from .errors import NumericalError, ValidationError
from .fitting import RCOND_MIN, RIDGE, solve_normal, wls_fit
from .splines import SplineBasis, build_design, covariate_matrix, subject_bases

log = logging.getLogger(__name__)

__all__ = [
    "MediatorFit",
    "MarginalFit",
    "PermutationResult",
    "fit_mediator_model",
    "fit_mediator_models",
    "fit_marginal_wls",
    "NullModelStats",
    "permutation_test",
    "permutation_tests",
]


@dataclass(frozen=True)
class MediatorFit:
    k: int
    alpha_hat: float
    alpha_se: float
    p_alpha: float
    gamma_hat: np.ndarray = field(repr=False)
    kappa_hat: float = 0.0


def fit_mediator_models(ds: LongitudinalDataset, mediators=None) -> list:
    """OLS of each mediator on ``(1, x, z)`` with conventional standard errors."""
    mediators = range(ds.p) if mediators is None else list(mediators)
    n, q = ds.n, ds.q
    if n <= q + 2:
        raise ValidationError(f"mediator model needs n > q + 2 (n={n}, q={q})")
    X = np.column_stack([np.ones(n), ds.x, ds.Z])
    XtX = X.T @ X
    if np.linalg.cond(XtX) > 1e12:
        raise NumericalError("singular cross-product matrix in mediator model (constant exposure?)")
    XtX_inv = np.linalg.inv(XtX)
    Y = ds.M[:, mediators]
    coef = XtX_inv @ (X.T @ Y)
    resid = Y - X @ coef
    sigma2 = np.sum(resid**2, axis=0) / (n - q - 2)
    se = np.sqrt(sigma2 * XtX_inv[1, 1])
    out = []
    for j, k in enumerate(mediators):
        a, s = coef[1, j], se[j]
        if s > 0:
            p = 2.0 * stats.norm.sf(abs(a) / s)
        else:
            p = 0.0 if a != 0 else 1.0
        out.append(MediatorFit(int(k), float(a), float(s), float(p), coef[2:, j].copy(), float(coef[0, j])))
    return out


def fit_mediator_model(ds: LongitudinalDataset, k: int) -> MediatorFit:
    return fit_mediator_models(ds, [k])[0]


@dataclass(frozen=True)
class MarginalFit:
    k: int
    xi_hat: np.ndarray = field(repr=False)
    wrss: float
    wrss_null: float
    f_stat: float


def fit_marginal_wls(ds: LongitudinalDataset, k: int, basis: SplineBasis, cov: CovarianceModel) -> MarginalFit:
    """Direct WLS fit of the marginal model with and without mediator ``k``.

    Coefficient blocks of ``xi_hat``: intercept, exposure, mediator, covariates.
    """
    whiteners = cov.whiteners(ds.times)
    bases = subject_bases(ds, basis)
    full = wls_fit(build_design(ds, basis, [k], bases), ds.outcomes, whiteners)
    null = wls_fit(build_design(ds, basis, (), bases), ds.outcomes, whiteners)
    f = (null.wrss - full.wrss) / full.wrss
    return MarginalFit(int(k), full.coef, full.wrss, null.wrss, float(f))


class NullModelStats:
    """Sufficient statistics of the null model for fast marginal F-statistics."""

    def __init__(self, ds: LongitudinalDataset, basis: SplineBasis, cov: CovarianceModel):
        self.ds, self.basis, self.cov = ds, basis, cov
        L = basis.dim
        V = covariate_matrix(ds)  # (n, P)
        n, P = V.shape
        whiteners = cov.whiteners(ds.times)
        Bt, yt = [], []
        G = np.empty((n, L, L))
        for i, (s, w, B) in enumerate(zip(ds.subjects, whiteners, subject_bases(ds, basis))):
            Bt.append(w.apply(B))
            yt.append(w.apply(s.y))
            G[i] = Bt[i].T @ Bt[i]
        # null fit on the whitened stacked design
        A00 = np.einsum("np,nq,nab->paqb", V, V, G).reshape(P * L, P * L)
        hs = np.array([b.T @ y for b, y in zip(Bt, yt)])
        b0 = np.einsum("np,na->pa", V, hs).reshape(P * L)
        xi0 = solve_normal(A00, b0)
        curves = V @ xi0.reshape(P, L)  # per-subject fitted coefficient curve, (n, L)
        C = np.empty((n, L))
        wrss0 = 0.0
        for i, (b, y) in enumerate(zip(Bt, yt)):
            r = y - b @ curves[i]
            wrss0 += float(r @ r)
            C[i] = b.T @ r
        self.V, self.G, self.C = V, G, C
        self.xi0, self.wrss0 = xi0, wrss0
        self._A00_inv = solve_normal(A00, np.eye(P * L))
        self._VG = np.einsum("np,nab->napb", V, G).reshape(n, L * P * L)

    def reductions(self, W: np.ndarray) -> np.ndarray:
        """WRSS reduction from adding a mediator block, for each row of ``W``.

        ``W`` has shape ``(S, n)``: one candidate mediator vector per row.
        """
        W = np.atleast_2d(np.asarray(W, dtype=float))
        S, n = W.shape
        L = self.basis.dim
        Amm = (W**2 @ self.G.reshape(n, L * L)).reshape(S, L, L)
        Am0 = (W @ self._VG).reshape(S, L, -1)
        Sc = Amm - Am0 @ self._A00_inv @ Am0.transpose(0, 2, 1)
        Sc = 0.5 * (Sc + Sc.transpose(0, 2, 1))
        g = W @ self.C
        ev, U = np.linalg.eigh(Sc)
        top = ev[:, -1:]
        bad = (ev[:, :1] <= RCOND_MIN * top)[:, 0]
        lam = np.where(bad, RIDGE * np.trace(Sc, axis1=1, axis2=2) / L, 0.0)
        proj = np.einsum("sab,sa->sb", U, g)
        denom = ev + lam[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(denom > 0, proj**2 / denom, 0.0)
        return terms.sum(axis=1)

    def f_statistics(self, W: np.ndarray) -> np.ndarray:
        a = self.reductions(W)
        return a / (self.wrss0 - a)


@dataclass(frozen=True)
class PermutationResult:
    k: int
    S: int
    f_observed: float
    f_permuted: np.ndarray = field(repr=False)
    p_beta: float
    seed: int


def _pvalue(f_obs: float, f_perm: np.ndarray, mode: str) -> float:
    count = int(np.sum(f_perm > f_obs))
    if mode == "plain":
        return count / f_perm.size
    if mode == "smoothed":
        return (count + 1) / (f_perm.size + 1)
    raise ValidationError(f"unknown p-value mode {mode!r}")


def _draw_permutations(rng: np.random.Generator, n: int, S: int) -> np.ndarray:
    return rng.permuted(np.tile(np.arange(n), (S, 1)), axis=1)


def permutation_test(
    ds: LongitudinalDataset,
    k: int,
    basis: SplineBasis,
    structure="diagonal",
    S: int = 1000,
    seed: int = 0,
    *,
    cov: CovarianceModel | None = None,
    null_stats: NullModelStats | None = None,
    weight_mode: str = "reuse",
    pvalue_mode: str = "plain",
    heteroscedastic: bool = True,
) -> PermutationResult:
    """Permutation p-value for ``H0: beta_k(t) = 0`` in the marginal model.

    The permutations for mediator ``k`` come from the stream seeded by
    ``(seed, k)``, so results do not depend on evaluation order.

    ``weight_mode="reuse"`` (default) keeps the null-model weights for every
    permutation.  ``"refit"`` re-estimates the covariance from OLS residuals
    of the full model (mediator included) for the observed data and for every
    permuted dataset; it is much slower and kept for comparison.
    """
    if S < 1:
        raise ValidationError("need at least one permutation")
    m = ds.M[:, k]
    if np.unique(m).size < 2:
        raise ValidationError(f"mediator {ds.mediator_names[k]} has fewer than 2 distinct values")
    rng = np.random.default_rng([int(seed), int(k)])

    if weight_mode == "reuse":
        if null_stats is None:
            if cov is None:
                cov = estimate_covariance(ds, basis, structure, heteroscedastic=heteroscedastic)
            null_stats = NullModelStats(ds, basis, cov)
        f_of = lambda W: null_stats.f_statistics(W)  # noqa: E731
    elif weight_mode == "refit":
        def f_of(W):
            out = np.empty(W.shape[0])
            for s, w in enumerate(W):
                dsw = ds.with_mediator(k, w)
                res = full_model_residuals(dsw, basis, k)
                c = estimate_covariance(dsw, basis, structure, heteroscedastic=heteroscedastic, residuals=res)
                out[s] = fit_marginal_wls(dsw, k, basis, c).f_stat
            return out
    else:
        raise ValidationError(f"unknown weight mode {weight_mode!r}")

    f_obs = float(f_of(m[None, :])[0])
    perms = _draw_permutations(rng, ds.n, S)
    f_perm = f_of(m[perms])
    for _ in range(3):
        bad = ~np.isfinite(f_perm)
        if not bad.any():
            break
        perms[bad] = _draw_permutations(rng, ds.n, int(bad.sum()))
        f_perm[bad] = f_of(m[perms[bad]])
    if not np.all(np.isfinite(f_perm)) or not np.isfinite(f_obs):
        raise NumericalError(f"permutation fits failed for mediator {ds.mediator_names[k]}")
    return PermutationResult(int(k), int(S), f_obs, f_perm, _pvalue(f_obs, f_perm, pvalue_mode), int(seed))


def full_model_residuals(ds: LongitudinalDataset, basis: SplineBasis, k: int) -> list:
    """OLS residuals of the marginal model including mediator ``k``."""
    return wls_fit(build_design(ds, basis, [k]), ds.outcomes).residuals


def permutation_tests(
    ds: LongitudinalDataset,
    basis: SplineBasis,
    structure="diagonal",
    S: int = 1000,
    seed: int = 0,
    mediators=None,
    cov: CovarianceModel | None = None,
    **kwargs,
) -> list:
    """Run :func:`permutation_test` for every mediator sharing one null model."""
    mediators = range(ds.p) if mediators is None else mediators
    weight_mode = kwargs.get("weight_mode", "reuse")
    if cov is None:
        cov = estimate_covariance(ds, basis, structure, heteroscedastic=kwargs.get("heteroscedastic", True))
    null_stats = NullModelStats(ds, basis, cov) if weight_mode == "reuse" else None
    return [permutation_test(ds, k, basis, structure, S, seed, cov=cov, null_stats=null_stats, **kwargs) for k in mediators]
