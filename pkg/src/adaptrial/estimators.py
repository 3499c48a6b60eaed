"""TMLE and AIPW estimators of the ATE from adaptive-design data.

Two flavours of each: one weights by the average design ``gbar_n`` (the
``ADL`` variants), the other by each unit's own randomization function (the
``AD`` variants). TMLE targeting is a one-dimensional logistic fluctuation
on min-max scaled outcomes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .core import NumericalError, PositivityError, UsageError

DELTA_TRUNC = 1e-4
SCORE_TOL = 1e-8
MAX_ITER = 100

ADL_TMLE = "ADL-TMLE"
AD_TMLE = "AD-TMLE"
ADL_AIPW = "ADL-AIPW"
AD_AIPW = "AD-AIPW"
ESTIMATORS = (ADL_TMLE, AD_TMLE, ADL_AIPW, AD_AIPW)


@dataclass(frozen=True)
class EstimateReport:
    psi: float
    se: float
    ci_lo: float
    ci_hi: float
    epsilon: float | None
    score_residual: float
    estimator: str
    n: int = 0
    iterations: int = 0

    def as_row(self) -> dict:
        return {"estimator": self.estimator, "n": self.n, "psi": self.psi, "se": self.se,
                "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
                "epsilon": "" if self.epsilon is None else self.epsilon,
                "score_residual": self.score_residual}


@dataclass(frozen=True)
class FluctuationResult:
    epsilon: float
    iterations: int
    score_residual: float
    offset: np.ndarray

    def qbar_star(self, q, h):
        """Updated prediction on the unit scale for initial values ``q`` and covariate ``h``."""
        return special.expit(special.logit(q) + self.epsilon * h)


def scale_to_unit(y):
    """Min-max scale outcomes into [0, 1]; returns ``(scaled, lo, hi)``.

    Constant outcomes get a unit-width window centred on the value so that
    every scaled outcome is 0.5.
    """
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise UsageError("cannot scale an empty trajectory")
    lo, hi = float(y.min()), float(y.max())
    if hi == lo:
        lo, hi = lo - 0.5, lo + 0.5
    return (y - lo) / (hi - lo), lo, hi


def unscale(s, lo: float, hi: float):
    return lo + (hi - lo) * np.asarray(s)


def clever_covariate_adl(traj, a, w):
    """``(2a - 1) / gbar_n(a | w)``."""
    g = traj.gbar(w, a)
    if np.any(np.asarray(g) <= 0):
        raise PositivityError(f"average design puts zero mass on arm {a} at w={w}")
    return (2 * np.asarray(a) - 1) / g


def _loglik(y, eta):
    # y log p + (1 - y) log(1 - p) with p = expit(eta), written stably
    return float(np.sum(-y * np.logaddexp(0.0, -eta) - (1.0 - y) * np.logaddexp(0.0, eta)))


def tmle_fluctuate(y, q, h, score_tol: float = SCORE_TOL, max_iter: int = MAX_ITER) -> FluctuationResult:
    """Fit ``logit Q_eps = logit q + eps * h`` by Newton's method.

    ``y`` lies in [0, 1] and ``q`` in (0, 1). Converged when the mean score
    ``mean(h * (y - Q_eps))`` is within ``score_tol`` of zero.
    """
    y = np.asarray(y, dtype=float)
    q = np.asarray(q, dtype=float)
    h = np.asarray(h, dtype=float)
    n = len(y)
    if not np.all(np.isfinite(h)):
        raise NumericalError("clever covariate is not finite")
    if np.any((q <= 0) | (q >= 1)):
        raise UsageError("initial predictions must lie strictly inside (0, 1)")
    off = special.logit(q)
    score0 = float(np.dot(h, y - q))
    if abs(score0) / n <= score_tol:
        return FluctuationResult(0.0, 0, score0 / n, off)
    # the score tends to these limits as eps -> +inf / -inf; no finite root if the sign never flips
    pos, neg = h > 0, h < 0
    lim_plus = float(np.dot(h[pos], y[pos] - 1.0) + np.dot(h[neg], y[neg]))
    lim_minus = float(np.dot(h[pos], y[pos]) + np.dot(h[neg], y[neg] - 1.0))
    if (score0 > 0 and lim_plus >= 0) or (score0 < 0 and lim_minus <= 0):
        raise NumericalError("fluctuation is separated: the score has no finite root")

    eps = 0.0
    eta = off
    ll = _loglik(y, eta)
    for it in range(1, max_iter + 1):
        p = special.expit(eta)
        score = float(np.dot(h, y - p))
        info = float(np.dot(h * h, p * (1.0 - p)))
        if info <= 0 or not math.isfinite(info):
            raise NumericalError(f"degenerate information {info} at iteration {it}")
        step = score / info
        for _ in range(60):
            eta_new = off + (eps + step) * h
            ll_new = _loglik(y, eta_new)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            step *= 0.5
        eps += step
        eta = eta_new
        ll = ll_new
        resid = float(np.dot(h, y - special.expit(eta))) / n
        if abs(resid) <= score_tol:
            return FluctuationResult(eps, it, resid, off)
    raise NumericalError(f"fluctuation did not converge in {max_iter} iterations; "
                         f"last score residual {resid:.3e}")


def _wald(psi: float, sigma2: float, n: int, alpha: float):
    se = math.sqrt(sigma2 / n)
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    return se, psi - z * se, psi + z * se


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise UsageError("alpha must lie in (0, 1)")


def _design_probs(traj, use_average: bool):
    """``g(1 | w_i)`` for every unit under the requested weighting."""
    if use_average:
        p1 = np.asarray(traj.gbar(), dtype=float)
        where = "average design"
    else:
        p1 = np.asarray(traj.p1, dtype=float)
        where = "per-unit design"
    zero1, zero0 = p1 <= 0, p1 >= 1
    if np.any(zero1 | zero0):
        i = int(np.argmax(zero1 | zero0))
        arm = 1 if zero1[i] else 0
        raise PositivityError(f"{where} gives zero probability to arm {arm} at unit {i + 1} "
                              f"(w={traj.w[i]:.6g})")
    return p1


def _tmle(traj, qbar_init, alpha, delta, score_tol, use_average, label) -> EstimateReport:
    _check_alpha(alpha)
    p1 = _design_probs(traj, use_average)
    n = traj.n
    a, w, y = traj.a, traj.w, traj.y
    h1, h0 = 1.0 / p1, -1.0 / (1.0 - p1)
    h_obs = np.where(a == 1, h1, h0)

    ys, lo, hi = scale_to_unit(y)
    span = hi - lo

    def unit(v):
        return np.clip((np.asarray(v, dtype=float) - lo) / span, delta, 1.0 - delta)

    q1, q0 = unit(qbar_init.predict(1, w)), unit(qbar_init.predict(0, w))
    q_obs = np.where(a == 1, q1, q0)
    fl = tmle_fluctuate(ys, q_obs, h_obs, score_tol)
    s1, s0 = fl.qbar_star(q1, h1), fl.qbar_star(q0, h0)
    s_obs = np.where(a == 1, s1, s0)

    Q1, Q0, Q_obs = unscale(s1, lo, hi), unscale(s0, lo, hi), unscale(s_obs, lo, hi)
    psi = float(np.mean(Q1 - Q0))
    ic = h_obs * (y - Q_obs) + Q1 - Q0 - psi
    se, ci_lo, ci_hi = _wald(psi, float(np.mean(ic ** 2)), n, alpha)
    score = float(np.mean(h_obs * (ys - s_obs)))
    return EstimateReport(psi, se, ci_lo, ci_hi, fl.epsilon, score, label, n, fl.iterations)


def adl_tmle(traj, qbar_init, alpha: float = 0.05, delta: float = DELTA_TRUNC,
             score_tol: float = SCORE_TOL) -> EstimateReport:
    """TMLE whose clever covariate uses the average design."""
    return _tmle(traj, qbar_init, alpha, delta, score_tol, True, ADL_TMLE)


def ad_tmle(traj, qbar_init, alpha: float = 0.05, delta: float = DELTA_TRUNC,
            score_tol: float = SCORE_TOL) -> EstimateReport:
    """TMLE whose clever covariate uses each unit's own design; needs per-unit positivity."""
    return _tmle(traj, qbar_init, alpha, delta, score_tol, False, AD_TMLE)


def _aipw(traj, qbar_init, alpha, use_average, label) -> EstimateReport:
    _check_alpha(alpha)
    p1 = _design_probs(traj, use_average)
    a, w, y = traj.a, traj.w, traj.y
    h_obs = np.where(a == 1, 1.0 / p1, -1.0 / (1.0 - p1))
    Q1, Q0 = np.asarray(qbar_init.predict(1, w), float), np.asarray(qbar_init.predict(0, w), float)
    resid = y - np.where(a == 1, Q1, Q0)
    correction = float(np.mean(h_obs * resid))
    psi = correction + float(np.mean(Q1 - Q0))
    ic = h_obs * resid + Q1 - Q0 - psi
    se, ci_lo, ci_hi = _wald(psi, float(np.mean(ic ** 2)), traj.n, alpha)
    return EstimateReport(psi, se, ci_lo, ci_hi, None, correction, label, traj.n, 0)


def aipw_adl(traj, qbar_init, alpha: float = 0.05) -> EstimateReport:
    return _aipw(traj, qbar_init, alpha, True, ADL_AIPW)


def aipw_ad(traj, qbar_init, alpha: float = 0.05) -> EstimateReport:
    return _aipw(traj, qbar_init, alpha, False, AD_AIPW)


def estimate_all(traj, qbar_init, alpha: float = 0.05, delta: float = DELTA_TRUNC,
                 score_tol: float = SCORE_TOL) -> dict:
    """Run all four estimators; a failing estimator maps to its exception instead of a report."""
    calls = {
        ADL_TMLE: lambda: adl_tmle(traj, qbar_init, alpha, delta, score_tol),
        AD_TMLE: lambda: ad_tmle(traj, qbar_init, alpha, delta, score_tol),
        ADL_AIPW: lambda: aipw_adl(traj, qbar_init, alpha),
        AD_AIPW: lambda: aipw_ad(traj, qbar_init, alpha),
    }
    out = {}
    for name, call in calls.items():
        try:
            out[name] = call()
        except NumericalError as exc:
            out[name] = exc
    return out
