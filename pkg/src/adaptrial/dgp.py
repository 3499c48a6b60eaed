"""Data-generating scenarios and quadrature oracles for their true quantities."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from .core import DesignFunction, UsageError
from .quadrature import integrate

QUAD_TOL = 1e-10


def _expit(x):
    return special.expit(x)


@dataclass(frozen=True)
class Scenario:
    """Law of ``(W, Y | A, W)``; the treatment law is supplied by a design.

    ``var_poly`` optionally gives each arm's conditional variance as
    polynomial coefficients in ascending powers of ``w``; oracle designs need it.
    """

    name: str
    qbar0: Callable
    var0: Callable
    w_support: tuple = (0.0, 3.0)
    w_law: str = "uniform"
    noise: str = "gaussian"
    var_poly: tuple | None = None

    def __post_init__(self):
        lo, hi = self.w_support
        if not hi > lo:
            raise UsageError("w_support must be a nonempty interval")
        _parse_w_law(self.w_law)

    def sample_w(self, rng: np.random.Generator, size=None):
        lo, hi = self.w_support
        kind, args = _parse_w_law(self.w_law)
        if kind == "uniform":
            return rng.uniform(lo, hi, size)
        return lo + (hi - lo) * rng.beta(args[0], args[1], size)

    def w_density(self, w):
        lo, hi = self.w_support
        w = np.asarray(w, dtype=float)
        kind, args = _parse_w_law(self.w_law)
        if kind == "uniform":
            return np.where((w >= lo) & (w <= hi), 1.0 / (hi - lo), 0.0)
        return stats.beta.pdf((w - lo) / (hi - lo), args[0], args[1]) / (hi - lo)

    def expect_w(self, f, abs_tol: float = QUAD_TOL) -> float:
        """``E f(W)`` under the covariate law, by adaptive quadrature."""
        lo, hi = self.w_support
        return integrate(lambda w: f(w) * self.w_density(w), lo, hi, abs_tol=abs_tol)

    def cate(self, w):
        return self.qbar0(1, w) - self.qbar0(0, w)

    def sd0(self, a, w):
        return np.sqrt(self.var0(a, w))

    def in_support(self, w) -> bool:
        lo, hi = self.w_support
        w = np.asarray(w)
        return bool(np.all((w >= lo) & (w <= hi)))


def _parse_w_law(law: str):
    parts = law.split(":")
    if parts[0] == "uniform" and len(parts) == 1:
        return "uniform", ()
    if parts[0] == "beta" and len(parts) == 3:
        a, b = float(parts[1]), float(parts[2])
        if a > 0 and b > 0:
            return "beta", (a, b)
    raise UsageError(f"unsupported covariate law {law!r}; use 'uniform' or 'beta:<a>:<b>'")


def _appendix_b_mean(a, w):
    w = np.asarray(w, dtype=float)
    q1 = 25.0 + 10.0 * _expit(2.0 * w + 1.0)
    q0 = 20.0 + 17.5 * _expit(w + 0.1)
    return np.where(np.asarray(a) == 1, q1, q0)


def _appendix_b_var(a, w):
    w = np.asarray(w, dtype=float)
    return np.where(np.asarray(a) == 1, 1.0 + 3.0 * w ** 3, 1.0 + 1.5 * (3.0 - w) ** 3)


# 1 + 3 w^3 and 1 + 1.5 (3 - w)^3 expanded in ascending powers
APPENDIX_B_VAR_POLY = ((1.0, 0.0, 0.0, 3.0), (41.5, -40.5, 13.5, -1.5))


def appendix_b_scenario(w_law: str = "uniform") -> Scenario:
    """Heteroskedastic scenario with logistic-shaped arm means on ``W in [0, 3]``."""
    return Scenario("appendix_b", _appendix_b_mean, _appendix_b_var, (0.0, 3.0), w_law,
                    "gaussian", APPENDIX_B_VAR_POLY)


def null_effect_scenario(w_law: str = "uniform") -> Scenario:
    """Both arms share the control-arm mean, so the ATE is zero; variances as the default scenario."""
    def mean(a, w):
        return _appendix_b_mean(0, w) + 0.0 * np.asarray(a)
    return Scenario("null_effect", mean, _appendix_b_var, (0.0, 3.0), w_law, "gaussian",
                    APPENDIX_B_VAR_POLY)


def constant_effect_scenario(effect: float, variance: float = 1.0, w_law: str = "uniform") -> Scenario:
    """Linear control mean shifted by ``effect`` under treatment; homoskedastic noise."""
    def mean(a, w):
        return 1.0 + 2.0 * np.asarray(w, dtype=float) + effect * (np.asarray(a) == 1)

    def var(a, w):
        return np.full(np.broadcast(np.asarray(a), np.asarray(w)).shape, float(variance))
    return Scenario(f"constant_effect({effect:g})", mean, var, (0.0, 3.0), w_law, "gaussian",
                    ((float(variance),), (float(variance),)))


def sample_outcome(scenario: Scenario, a, w, rng: np.random.Generator):
    """Draw ``Y ~ N(qbar0(a, w), var0(a, w))``."""
    if not scenario.in_support(w):
        raise UsageError(f"covariate {w} outside support {scenario.w_support}")
    mean = scenario.qbar0(a, w)
    sd = np.sqrt(scenario.var0(a, w))
    z = rng.standard_normal(np.shape(mean))
    out = mean + sd * z
    return float(out) if np.ndim(out) == 0 else out


def true_ate(scenario: Scenario) -> float:
    return scenario.expect_w(scenario.cate)


def oracle_neyman(scenario: Scenario, w, a=1):
    """Variance-optimal randomization ``sigma(a, w) / (sigma(1, w) + sigma(0, w))``."""
    if not scenario.in_support(w):
        raise UsageError(f"covariate {w} outside support {scenario.w_support}")
    s1 = np.sqrt(scenario.var0(1, w))
    s0 = np.sqrt(scenario.var0(0, w))
    p1 = s1 / (s1 + s0)
    out = np.where(np.asarray(a) == 1, p1, 1.0 - p1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class MultisiteScenario:
    """Units are routed to sites that differ only in their randomization function.

    The outcome law is the base scenario's and does not depend on the site.
    """

    base: Scenario
    site_designs: tuple
    site_probs: tuple

    def __getattr__(self, name):
        # delegate the outcome/covariate law to the base scenario
        if name in ("base", "site_designs", "site_probs"):
            raise AttributeError(name)
        return getattr(self.base, name)

    @property
    def name(self):
        return f"multisite[{len(self.site_designs)}]"

    def draw_sites(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(len(self.site_designs), size=size, p=np.asarray(self.site_probs))

    def limiting_design(self, w):
        """``sum_j p_j g_j(1 | w)``, the limit of the average design."""
        return sum(p * d.eval(w) for p, d in zip(self.site_probs, self.site_designs))


def multisite_scenario(num_sites: int, site_designs: Sequence[DesignFunction],
                       site_probs: Sequence[float], base: Scenario | None = None) -> MultisiteScenario:
    if len(site_designs) != num_sites or len(site_probs) != num_sites:
        raise UsageError("num_sites, site_designs and site_probs must agree in length")
    probs = np.asarray(site_probs, dtype=float)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise UsageError("site_probs must be a probability vector")
    return MultisiteScenario(base or appendix_b_scenario(), tuple(site_designs), tuple(probs.tolist()))


SCENARIO_KINDS = ("appendix_b", "null_effect", "multisite")


def make_scenario(kind: str, w_law: str = "uniform", **kw):
    if kind == "appendix_b":
        return appendix_b_scenario(w_law)
    if kind == "null_effect":
        return null_effect_scenario(w_law)
    if kind == "multisite":
        designs = [DesignFunction.constant(p) for p in kw.get("site_designs", (0.5,))]
        probs = kw.get("site_probs", (1.0,))
        return multisite_scenario(len(designs), designs, probs, appendix_b_scenario(w_law))
    raise UsageError(f"unknown scenario kind {kind!r}")
