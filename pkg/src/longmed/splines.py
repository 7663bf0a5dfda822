"""Clamped B-spline bases on [0, 1] and varying-coefficient design matrices.

Every coefficient function shares one basis.  A design row for subject ``i``
at time ``t`` is ``kron(u_i, psi(t))`` where ``u_i = (1, x_i, m_i[cols], z_i)``,
so the columns come in blocks of width ``L``:
``[intercept | exposure | mediator(s) | covariates]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .dataset import LongitudinalDataset
from .errors import LongmedError, ValidationError

log = logging.getLogger(__name__)

__all__ = [
    "SplineBasis",
    "basis_row",
    "covariate_matrix",
    "build_design",
    "select_basis_dimension",
    "DEFAULT_CANDIDATES",
]

DEFAULT_CANDIDATES = tuple(range(1, 9))


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis with equally spaced interior knots on [0, 1]."""

    degree: int = 3
    n_interior: int = 0

    def __post_init__(self):
        if self.degree < 0 or self.n_interior < 0:
            raise ValidationError("degree and interior knot count must be non-negative")

    @property
    def dim(self) -> int:
        return self.n_interior + self.degree + 1

    @cached_property
    def knots(self) -> np.ndarray:
        d = self.degree
        interior = np.linspace(0.0, 1.0, self.n_interior + 2)[1:-1]
        k = np.concatenate([np.zeros(d + 1), interior, np.ones(d + 1)])
        k.setflags(write=False)
        return k

    def evaluate(self, t) -> np.ndarray:
        """Basis matrix of shape ``(len(t), dim)`` via Cox-de Boor recursion.

        The last knot span is closed on the right so ``t = 1`` is valid.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if t.ndim != 1:
            raise ValidationError("t must be a scalar or 1-d array")
        if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
            raise ValidationError("basis evaluation requires 0 <= t <= 1")
        d, U, L = self.degree, self.knots, self.dim
        span = np.clip(np.searchsorted(U, t, side="right") - 1, d, L - 1)

        m = t.size
        N = np.zeros((m, d + 1))
        N[:, 0] = 1.0
        left = np.zeros((m, d + 1))
        right = np.zeros((m, d + 1))
        for j in range(1, d + 1):
            left[:, j] = t - U[span + 1 - j]
            right[:, j] = U[span + j] - t
            saved = np.zeros(m)
            for r in range(j):
                temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
                N[:, r] = saved + right[:, r + 1] * temp
                saved = left[:, j - r] * temp
            N[:, j] = saved

        out = np.zeros((m, L))
        cols = span[:, None] - d + np.arange(d + 1)
        np.put_along_axis(out, cols, N, axis=1)
        return out


def basis_row(basis: SplineBasis, t: float) -> np.ndarray:
    """Values of all basis functions at a single time point."""
    return basis.evaluate(np.array([t], dtype=float))[0]


def covariate_matrix(ds: LongitudinalDataset, mediator_cols: Sequence[int] = ()) -> np.ndarray:
    """Per-subject scalar regressors ``(1, x, m[cols], z)`` as an ``(n, P)`` array."""
    cols = [int(k) for k in mediator_cols]
    for k in cols:
        if not 0 <= k < ds.p:
            raise ValidationError(f"mediator index {k} out of range for p={ds.p}")
    return np.column_stack([np.ones(ds.n), ds.x, ds.M[:, cols], ds.Z])


def subject_bases(ds: LongitudinalDataset, basis: SplineBasis) -> list:
    """Basis matrix ``B_i`` (``n_i x L``) for every subject, from one evaluation."""
    B = basis.evaluate(np.concatenate(ds.times))
    return np.split(B, np.cumsum(ds.n_obs)[:-1])


def design_blocks(U: np.ndarray, bases) -> list:
    """``D_i = kron(u_i, B_i)`` row-wise for each subject."""
    return [(B[:, None, :] * u[None, :, None]).reshape(B.shape[0], -1) for u, B in zip(U, bases)]


def build_design(
    ds: LongitudinalDataset, basis: SplineBasis, mediator_cols: Sequence[int] = (), bases=None
) -> list:
    """One ``n_i x (P * L)`` design block per subject (``P = 2 + len(cols) + q``)."""
    if bases is None:
        bases = subject_bases(ds, basis)
    return design_blocks(covariate_matrix(ds, mediator_cols), bases)


def _fold_assignment(n: int, n_folds: int, seed: int) -> list:
    order = np.random.default_rng([seed, n]).permutation(n)
    return [np.sort(f) for f in np.array_split(order, n_folds)]


def select_basis_dimension(
    ds: LongitudinalDataset,
    structure="diagonal",
    candidates: Iterable[int] = DEFAULT_CANDIDATES,
    degree: int = 3,
    n_folds: int = 10,
    seed: int = 0,
) -> SplineBasis:
    """Choose the interior-knot count by subject-level K-fold cross-validation.

    Each candidate fits the no-mediator model with WLS weights estimated on
    the training folds; the score is the pooled mean squared prediction
    error on held-out subjects.  Ties go to the smaller knot count.
    """
    from .covariance import estimate_covariance
    from .fitting import wls_fit

    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise ValidationError("empty candidate set")
    if len(candidates) == 1:
        return SplineBasis(degree, candidates[0])

    folds = _fold_assignment(ds.n, min(n_folds, ds.n), seed)
    U = covariate_matrix(ds)
    best, best_err, last_exc = None, np.inf, None
    for c in candidates:
        basis = SplineBasis(degree, c)
        D = design_blocks(U, subject_bases(ds, basis))
        sse, count = 0.0, 0
        try:
            for hold in folds:
                train_idx = np.setdiff1d(np.arange(ds.n), hold)
                train = ds.subset(train_idx)
                D_train = [D[i] for i in train_idx]
                ols = wls_fit(D_train, train.outcomes)
                cov = estimate_covariance(train, basis, structure, residuals=ols.residuals)
                fit = wls_fit(D_train, train.outcomes, cov.whiteners(train.times))
                for i in hold:
                    s = ds.subjects[i]
                    sse += float(np.sum((s.y - D[i] @ fit.coef) ** 2))
                    count += s.n_obs
        except LongmedError as exc:
            log.debug("candidate %d failed: %s", c, exc)
            last_exc = exc
            continue
        err = sse / count
        log.debug("candidate %d: cv mse %.6g", c, err)
        if err < best_err:
            best, best_err = c, err
    if best is None:
        raise last_exc
    return SplineBasis(degree, best)
