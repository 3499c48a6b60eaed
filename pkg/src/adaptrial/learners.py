"""Per-arm polynomial least-squares learners.

Three fitted objects share one representation: outcome means, conditional
variances (squared-residual regression floored at ``var_floor``) and the
CATE fitted on doubly robust pseudo-outcomes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FittingError, PositivityError, UsageError

DEFAULT_DEGREE = 3
DEFAULT_VAR_FLOOR = 1e-3


def poly_basis(w, degree: int) -> np.ndarray:
    return np.vander(np.atleast_1d(np.asarray(w, dtype=float)), degree + 1, increasing=True)


def polyval(coef, w):
    """Evaluate ascending-power coefficients at ``w`` (Horner)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w) + coef[-1]
    for c in coef[-2::-1]:
        out = out * w + c
    return out


@dataclass(frozen=True)
class OutcomeModel:
    kind: str
    degree: int
    coef_by_arm: dict
    var_floor: float = DEFAULT_VAR_FLOOR

    def predict(self, a, w):
        """Prediction at ``(a, w)``; ``a`` is ignored for ``kind == 'cate'``."""
        if self.kind == "cate":
            out = polyval(self.coef_by_arm[1], w)
        else:
            a_arr = np.asarray(a)
            if a_arr.ndim == 0:
                out = polyval(self.coef_by_arm[int(a_arr)], w)
            else:
                out = np.where(a_arr == 1, polyval(self.coef_by_arm[1], w), polyval(self.coef_by_arm[0], w))
        if self.kind == "conditional_variance":
            out = np.maximum(out, self.var_floor)
        return float(out) if np.ndim(out) == 0 else out

    def cate(self, w):
        if self.kind == "cate":
            return self.predict(1, w)
        return self.predict(1, w) - self.predict(0, w)

    def flat_params(self) -> tuple:
        """Coefficients as one flat tuple: arm 1 then arm 0 (or the CATE alone)."""
        if self.kind == "cate":
            return tuple(map(float, self.coef_by_arm[1]))
        return tuple(map(float, self.coef_by_arm[1])) + tuple(map(float, self.coef_by_arm[0]))


def constant_model(c: float, kind: str = "outcome_mean") -> OutcomeModel:
    return OutcomeModel(kind, 0, {1: np.array([float(c)]), 0: np.array([float(c)])})


def _lstsq(w, target, degree: int, what: str) -> np.ndarray:
    if len(w) < degree + 2:
        raise FittingError(f"{what}: need at least {degree + 2} observations, have {len(w)}")
    X = poly_basis(w, degree)
    coef, _, rank, sv = np.linalg.lstsq(X, target, rcond=None)
    if rank < degree + 1:
        raise FittingError(f"{what}: rank-deficient basis (rank {rank} < {degree + 1}); "
                           f"covariate takes {len(np.unique(w))} distinct values")
    return coef


def fit_outcome_regression(traj, degree: int = DEFAULT_DEGREE) -> OutcomeModel:
    """Least squares of ``y`` on a polynomial in ``w``, separately per arm."""
    if degree < 0:
        raise UsageError("degree must be nonnegative")
    coefs = {}
    for arm in (1, 0):
        m = traj.a == arm
        coefs[arm] = _lstsq(traj.w[m], traj.y[m], degree, f"outcome regression, arm {arm}")
    return OutcomeModel("outcome_mean", degree, coefs)


def fit_conditional_variance(traj, mean_model: OutcomeModel, degree: int = DEFAULT_DEGREE,
                             var_floor: float = DEFAULT_VAR_FLOOR) -> OutcomeModel:
    if mean_model.kind != "outcome_mean":
        raise UsageError("conditional variance needs an outcome_mean model")
    if not var_floor > 0:
        raise UsageError("var_floor must be positive")
    resid2 = (traj.y - mean_model.predict(traj.a, traj.w)) ** 2
    coefs = {}
    for arm in (1, 0):
        m = traj.a == arm
        coefs[arm] = _lstsq(traj.w[m], resid2[m], degree, f"variance regression, arm {arm}")
    return OutcomeModel("conditional_variance", degree, coefs, var_floor)


def dr_pseudo_outcomes(traj, mean_model: OutcomeModel) -> np.ndarray:
    g = traj.g_prob
    if np.any(g <= 0):
        raise PositivityError(f"unit {int(np.argmax(g <= 0))} has zero probability for its own arm")
    resid = traj.y - mean_model.predict(traj.a, traj.w)
    return (2 * traj.a - 1) / g * resid + mean_model.predict(1, traj.w) - mean_model.predict(0, traj.w)


def fit_cate_dr(traj, mean_model: OutcomeModel, degree: int = DEFAULT_DEGREE) -> OutcomeModel:
    """CATE by least squares of doubly robust pseudo-outcomes on ``w``.

    Pseudo-outcomes use each unit's own known randomization probability.
    """
    phi = dr_pseudo_outcomes(traj, mean_model)
    coef = _lstsq(traj.w, phi, degree, "CATE regression")
    return OutcomeModel("cate", degree, {1: coef})
