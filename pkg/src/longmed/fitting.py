"""Weighted least squares with per-subject weight matrices.

The weight for subject ``i`` is ``W_i = (n_i C_i)^{-1}``.  Rather than forming
``W_i`` we keep a Cholesky factor ``F_i`` of ``n_i C_i`` and whiten rows by
solving with it, so ``sum_i r_i' W_i r_i`` is a plain sum of squares of
whitened residuals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NumericalError, ValidationError

RIDGE = 1e-8
RCOND_MIN = 1e-12


def solve_normal(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve the symmetric PSD system ``A x = b``.

    Falls back to a ridge of ``1e-8 * trace(A) / dim`` when ``A`` is rank
    deficient or badly conditioned.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)):
        raise NumericalError("non-finite entries in normal equations")
    evals = np.linalg.eigvalsh(A)
    top = evals[-1]
    if top <= 0:
        raise NumericalError("rank deficiency beyond ridge tolerance: normal matrix is zero")
    if evals[0] > RCOND_MIN * top:
        return linalg.cho_solve(linalg.cho_factor(A), b)
    lam = RIDGE * np.trace(A) / A.shape[0]
    try:
        return linalg.cho_solve(linalg.cho_factor(A + lam * np.eye(A.shape[0])), b)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"rank deficiency beyond ridge tolerance: {exc}") from exc


class Whitener:
    """Applies ``F^{-1}`` where ``F F' = n_i C_i`` for one subject."""

    __slots__ = ("scale", "chol")

    def __init__(self, scale=None, chol=None):
        self.scale = scale  # diagonal case: sqrt(n_i V(t_ij))
        self.chol = chol

    @classmethod
    def identity(cls, n_obs: int) -> "Whitener":
        return cls(scale=np.ones(n_obs))

    @classmethod
    def from_covariance(cls, cov, t) -> "Whitener":
        return cov.whitener(t)

    def apply(self, a: np.ndarray) -> np.ndarray:
        if self.chol is None:
            return a / (self.scale if a.ndim == 1 else self.scale[:, None])
        return linalg.solve_triangular(self.chol, a, lower=True, check_finite=False)

    def weight(self) -> np.ndarray:
        """Explicit weight matrix ``(n_i C_i)^{-1}``."""
        if self.chol is None:
            return np.diag(1.0 / self.scale**2)
        inv = linalg.solve_triangular(self.chol, np.eye(self.chol.shape[0]), lower=True)
        return inv.T @ inv


@dataclass
class WLSFit:
    coef: np.ndarray
    wrss: float
    residuals: list  # unwhitened, per subject


def wls_fit(blocks, outcomes, whiteners=None) -> WLSFit:
    """Minimise ``sum_i (y_i - D_i b)' W_i (y_i - D_i b)``.

    ``whiteners=None`` gives ordinary least squares.
    """
    if whiteners is None:
        whiteners = [Whitener.identity(len(y)) for y in outcomes]
    Dw = np.vstack([w.apply(D) for D, w in zip(blocks, whiteners)])
    yw = np.concatenate([w.apply(np.asarray(y, dtype=float)) for y, w in zip(outcomes, whiteners)])
    if Dw.shape[0] <= Dw.shape[1]:
        raise ValidationError(f"{Dw.shape[0]} observations cannot identify {Dw.shape[1]} coefficients")
    coef = solve_normal(Dw.T @ Dw, Dw.T @ yw)
    rw = yw - Dw @ coef
    residuals = [np.asarray(y, dtype=float) - D @ coef for D, y in zip(blocks, outcomes)]
    return WLSFit(coef, float(rw @ rw), residuals)
