"""Joint varying-coefficient model on the screened mediators and effect curves.

With the selected mediators ``k in I`` the outcome model has spline blocks
``[intercept | exposure | m_k for k in I | covariates]``.  For a contrast
``(x, x*)`` the effect curves are

    NDE(t)   = (x - x*) * psi(t)' zeta_eta
    NIE_k(t) = (x - x*) * alpha_k * psi(t)' zeta_beta_k,   NIE = sum_k NIE_k

with ``alpha_k`` the mediator-model OLS slope.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .covariance import CovarianceModel, estimate_covariance
from .dataset import LongitudinalDataset
from .errors import ValidationError
from .fitting import wls_fit
from .splines import SplineBasis, build_design

__all__ = ["JointFit", "EffectCurves", "fit_joint_model", "estimate_effects", "effect_curves", "default_grid"]


def default_grid(points: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


@dataclass(frozen=True, eq=False)
class JointFit:
    basis: SplineBasis
    selected: tuple
    zeta: np.ndarray = field(repr=False)
    q: int
    wrss: float
    cov: CovarianceModel = field(repr=False)

    def block(self, j: int) -> np.ndarray:
        L = self.basis.dim
        return self.zeta[j * L : (j + 1) * L]

    @property
    def zeta_mu(self):
        return self.block(0)

    @property
    def zeta_eta(self):
        return self.block(1)

    @property
    def zeta_beta(self) -> np.ndarray:
        L = self.basis.dim
        return self.zeta[2 * L : (2 + len(self.selected)) * L].reshape(len(self.selected), L)

    @property
    def zeta_theta(self) -> np.ndarray:
        L = self.basis.dim
        start = (2 + len(self.selected)) * L
        return self.zeta[start:].reshape(self.q, L)


def fit_joint_model(
    ds: LongitudinalDataset,
    selected: Sequence[int],
    basis: SplineBasis,
    structure="diagonal",
    cov: CovarianceModel | None = None,
) -> JointFit:
    """WLS fit of the joint model; weights come from the model with all
    selected mediators excluded."""
    selected = tuple(int(k) for k in selected)
    if len(set(selected)) != len(selected):
        raise ValidationError("duplicate mediator in selection")
    if cov is None:
        cov = estimate_covariance(ds, basis, structure)
    whiteners = cov.whiteners(ds.times)
    fit = wls_fit(build_design(ds, basis, selected), ds.outcomes, whiteners)
    return JointFit(basis, selected, fit.coef, ds.q, fit.wrss, cov)


@dataclass(frozen=True, eq=False)
class EffectCurves:
    basis: SplineBasis
    zeta_eta: np.ndarray
    zeta_beta: np.ndarray  # (p0, L)
    alpha_hat: np.ndarray  # (p0,)
    selected: tuple
    names: tuple
    contrast: tuple = (1.0, 0.0)
    time_map: tuple = (0.0, 1.0)
    zeta_mu: np.ndarray | None = field(default=None, repr=False)
    zeta_theta: np.ndarray | None = field(default=None, repr=False)

    @property
    def scale(self) -> float:
        x, x_star = self.contrast
        return float(x - x_star)

    def _basis(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0) or np.any(t > 1):
            raise ValidationError("effect curves are defined on normalized time [0, 1]")
        return self.basis.evaluate(t)

    def nde(self, t) -> np.ndarray:
        return self.scale * (self._basis(t) @ self.zeta_eta)

    def nie_components(self, t) -> np.ndarray:
        """``(len(t), p0)`` array of per-mediator indirect effects."""
        B = self._basis(t)
        if self.zeta_beta.size == 0:
            return np.zeros((B.shape[0], 0))
        return self.scale * (B @ self.zeta_beta.T) * self.alpha_hat[None, :]

    def nie(self, t) -> np.ndarray:
        return self.nie_components(t).sum(axis=1)

    def table(self, grid=None) -> pd.DataFrame:
        grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
        comps = self.nie_components(grid)
        offset, scale = self.time_map
        df = pd.DataFrame(
            {
                "t_normalized": grid,
                "t_original": offset + scale * grid,
                "NDE": self.nde(grid),
                "NIE": comps.sum(axis=1),
            }
        )
        for j, name in enumerate(self.names):
            df[f"NIE_{name}"] = comps[:, j]
        return df

    def metadata(self) -> dict:
        return {
            "contrast": {"x": self.contrast[0], "x_star": self.contrast[1]},
            "selected": [int(k) + 1 for k in self.selected],
            "selected_names": list(self.names),
            "basis": {"degree": self.basis.degree, "n_interior": self.basis.n_interior, "dim": self.basis.dim},
            "time_map": {"offset": self.time_map[0], "scale": self.time_map[1]},
        }


def estimate_effects(fit: JointFit, mediator_fits, x: float = 1.0, x_star: float = 0.0, names=None, time_map=(0.0, 1.0)) -> EffectCurves:
    by_k = {f.k: f for f in mediator_fits}
    missing = [k for k in fit.selected if k not in by_k]
    if missing:
        raise ValidationError(f"no mediator-model fit for selected mediator(s) {missing}")
    alpha = np.array([by_k[k].alpha_hat for k in fit.selected], dtype=float)
    if names is None:
        names = tuple(f"M{k + 1}" for k in fit.selected)
    return EffectCurves(
        fit.basis,
        fit.zeta_eta.copy(),
        fit.zeta_beta.copy(),
        alpha,
        fit.selected,
        tuple(names),
        (float(x), float(x_star)),
        tuple(time_map),
        fit.zeta_mu.copy(),
        fit.zeta_theta.copy(),
    )


def effect_curves(fit: JointFit, mediator_fits, x: float = 1.0, x_star: float = 0.0, grid=None, **kwargs) -> pd.DataFrame:
    """Table of ``t, NDE, NIE`` and per-mediator ``NIE_k`` on ``grid``."""
    return estimate_effects(fit, mediator_fits, x, x_star, **kwargs).table(grid)
