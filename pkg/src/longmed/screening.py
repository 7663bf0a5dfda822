"""Joint mediation p-values and FDR screening under the three-part null mixture.

The joint null for mediator ``k`` is ``alpha_k = 0 or beta_k(t) = 0``; its
p-value ``P_k = max(P_alpha, P_beta)`` follows a mixture of three null
components with proportions ``pi00, pi01, pi10``.  The FDR at threshold
``lam`` is estimated as

    FDR(lam) = (pi01 * lam + pi10 * lam + pi00 * lam**2) / (max(1, R(lam)) / p)

and the selection threshold is the largest observed p-value at which the
estimate stays at or below the target level ``b``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ValidationError

log = logging.getLogger(__name__)

__all__ = [
    "MediationTestTable",
    "NullProportions",
    "ScreeningResult",
    "joint_pvalues",
    "storey_pi0",
    "estimate_null_proportions",
    "estimate_fdr",
    "fdr_threshold",
]


@dataclass(frozen=True, eq=False)
class MediationTestTable:
    """Per-mediator p-values.  ``k`` is 0-based; ``p_joint`` includes any zero floor."""

    k: np.ndarray
    p_alpha: np.ndarray
    p_beta: np.ndarray
    p_joint: np.ndarray
    names: tuple = ()
    f_stat: np.ndarray | None = None

    @property
    def p(self) -> int:
        return int(self.k.size)

    def to_frame(self, selected=()) -> pd.DataFrame:
        chosen = set(int(j) for j in selected)
        names = self.names or tuple(f"M{int(j) + 1}" for j in self.k)
        df = pd.DataFrame(
            {
                "k": self.k + 1,
                "name": list(names),
                "p_alpha": self.p_alpha,
                "p_beta": self.p_beta,
                "p_joint": self.p_joint,
                "selected": [int(j) in chosen for j in self.k],
            }
        )
        if self.f_stat is not None:
            df.insert(5, "f_stat", self.f_stat)
        return df


def joint_pvalues(mediator_fits, permutation_results, floor: str = "half", names=()) -> MediationTestTable:
    """Row-wise ``max(P_alpha, P_beta)``.

    With ``floor="half"`` a permutation p-value of exactly 0 is replaced by
    ``1 / (2 S)`` before taking the maximum, since exact zeros make the FDR
    estimate degenerate.  ``floor="none"`` keeps raw values.
    """
    fits = sorted(mediator_fits, key=lambda f: f.k)
    perms = sorted(permutation_results, key=lambda r: r.k)
    ks = [f.k for f in fits]
    if ks != [r.k for r in perms]:
        raise ValidationError("mediator fits and permutation results cover different index sets")
    k = np.array(ks, dtype=int)
    pa = np.array([f.p_alpha for f in fits], dtype=float)
    pb = np.array([r.p_beta for r in perms], dtype=float)
    pb_used = pb.copy()
    if floor == "half":
        zero = pb_used == 0
        if zero.any():
            log.warning("%d permutation p-value(s) equal 0; using 1/(2S) in the joint p-value", int(zero.sum()))
            pb_used[zero] = [1.0 / (2 * perms[j].S) for j in np.flatnonzero(zero)]
    elif floor != "none":
        raise ValidationError(f"unknown floor mode {floor!r}")
    f = np.array([r.f_observed for r in perms], dtype=float)
    return MediationTestTable(k, pa, pb, np.maximum(pa, pb_used), tuple(names), f)


def storey_pi0(pvalues, lambda0: float = 0.5) -> float:
    pvalues = np.asarray(pvalues, dtype=float)
    return float(np.clip(np.sum(pvalues > lambda0) / ((1.0 - lambda0) * pvalues.size), 0.0, 1.0))


@dataclass(frozen=True)
class NullProportions:
    pi00: float
    pi01: float
    pi10: float


def estimate_null_proportions(table: MediationTestTable, lambda0: float = 0.5, min_p: int = 20) -> NullProportions:
    """Products of Storey marginal null proportions.

    ``pi01`` is the share with ``alpha = 0`` only, ``pi10`` with ``beta = 0``
    only.  Below ``min_p`` mediators the conservative ``(1, 0, 0)`` is used.
    """
    if table.p < min_p:
        return NullProportions(1.0, 0.0, 0.0)
    a0 = storey_pi0(table.p_alpha, lambda0)
    b0 = storey_pi0(table.p_beta, lambda0)
    return NullProportions(a0 * b0, a0 * (1.0 - b0), (1.0 - a0) * b0)


def estimate_fdr(lam, p_joint, props: NullProportions) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    p_joint = np.asarray(p_joint, dtype=float)
    R = np.searchsorted(np.sort(p_joint), lam, side="right")
    num = props.pi01 * lam + props.pi10 * lam + props.pi00 * lam**2
    return num / (np.maximum(1, R) / p_joint.size)


@dataclass(frozen=True, eq=False)
class ScreeningResult:
    pi00: float
    pi01: float
    pi10: float
    lambda_b: float
    b: float
    selected: tuple
    fdr_curve: list = field(repr=False, default_factory=list)

    def to_json(self, names=()) -> dict:
        out = {
            "b": self.b,
            "pi00": self.pi00,
            "pi01": self.pi01,
            "pi10": self.pi10,
            "lambda_b": self.lambda_b,
            "selected": [int(k) + 1 for k in self.selected],
        }
        if names:
            out["selected_names"] = [names[k] for k in self.selected]
        return out


def fdr_threshold(table: MediationTestTable, proportions: NullProportions, b: float) -> ScreeningResult:
    """Largest candidate threshold with estimated FDR <= ``b`` and its selection."""
    if not 0 < b < 1:
        raise ValidationError(f"FDR level must lie in (0, 1), got {b}")
    cand = np.unique(np.concatenate([[0.0], table.p_joint]))
    fdr = estimate_fdr(cand, table.p_joint, proportions)
    ok = np.flatnonzero(fdr <= b)
    lam_b = float(cand[ok[-1]]) if ok.size else 0.0
    selected = tuple(int(k) for k, pj in zip(table.k, table.p_joint) if pj <= lam_b)
    curve = [(float(l), float(f)) for l, f in zip(cand, fdr)]
    return ScreeningResult(
        proportions.pi00, proportions.pi01, proportions.pi10, lam_b, float(b), selected, curve
    )


def screen(table: MediationTestTable, b: float = 0.05, **kwargs) -> ScreeningResult:
    return fdr_threshold(table, estimate_null_proportions(table, **kwargs), b)
