"""Adaptive design policies.

A policy is a stateful rule that, given the data enrolled so far, emits the
next unit's :class:`~adaptrial.core.DesignFunction`. Emitted functions are
pure parameter records and can be re-evaluated at any covariate value later.

Kinds: ``non_adaptive``, ``standard_neyman``, ``gbar_driven``,
``oracle_neyman`` and ``benefit_driven``.
"""
from __future__ import annotations

import math

import numpy as np

from .core import DesignFunction, UsageError, register_design_kind
from .learners import (DEFAULT_DEGREE, DEFAULT_VAR_FLOOR, fit_cate_dr, fit_conditional_variance,
                       fit_outcome_regression, polyval)

KINDS = ("non_adaptive", "standard_neyman", "gbar_driven", "oracle_neyman", "benefit_driven")
NU_PERIOD = 250


# ---------------------------------------------------------------------------
# design kinds

def gamma_blend(x, nu: float, b: float):
    """Smooth tilt of a CATE value into a treatment probability in ``[nu, 1 - nu]``.

    Constant ``nu`` for ``x <= -b`` and ``1 - nu`` for ``x >= b``; a cubic in
    between that meets both constants continuously and passes through 1/2 at 0.
    """
    if not 0.0 <= nu <= 0.5:
        raise UsageError(f"nu must lie in [0, 0.5], got {nu}")
    if not b > 0:
        raise UsageError(f"b must be positive, got {b}")
    x = np.asarray(x, dtype=float)
    k = 0.5 - nu
    cubic = -(k / (2.0 * b ** 3)) * x ** 3 + (k / (2.0 * b / 3.0)) * x + 0.5
    out = np.where(x <= -b, nu, np.where(x >= b, 1.0 - nu, cubic))
    return float(out) if out.ndim == 0 else out


def nu_schedule(unit: int, n0: int, period: int = NU_PERIOD) -> float:
    """``exp(-t)`` with ``t = ceil((unit - n0) / period)`` for 1-based ``unit``."""
    return math.exp(-math.ceil((unit - n0) / period))


def _split_arms(coefs):
    half = len(coefs) // 2
    return coefs[:half], coefs[half:]


def neyman_ratio(var_coefs, var_floor: float, w):
    """``sigma(1, w) / (sigma(1, w) + sigma(0, w))`` from per-arm variance polynomials."""
    c1, c0 = _split_arms(var_coefs)
    s1 = np.sqrt(np.maximum(polyval(c1, w), var_floor))
    s0 = np.sqrt(np.maximum(polyval(c0, w), var_floor))
    return s1 / (s1 + s0)


def _eval_neyman(params, w):
    clip_lo, var_floor = params[0], params[1]
    return np.clip(neyman_ratio(params[3:], var_floor, w), clip_lo, 1.0 - clip_lo)


def _eval_gamma(params, w):
    nu, b = params[0], params[1]
    return gamma_blend(polyval(params[3:], w), nu, b)


def neyman_design(var_coefs_1, var_coefs_0, clip_lo: float = 0.0,
                  var_floor: float = DEFAULT_VAR_FLOOR) -> DesignFunction:
    d = max(len(var_coefs_1), len(var_coefs_0))
    c1 = tuple(var_coefs_1) + (0.0,) * (d - len(var_coefs_1))
    c0 = tuple(var_coefs_0) + (0.0,) * (d - len(var_coefs_0))
    return DesignFunction("neyman", (clip_lo, var_floor, d - 1) + c1 + c0)


def gamma_design(cate_coefs, nu: float, b: float) -> DesignFunction:
    return DesignFunction("gamma", (nu, b, len(cate_coefs) - 1) + tuple(cate_coefs))


# gbar-driven designs: (m, n0, p0, stride, degree, var_floor, K, K blocks of 2(degree+1) coefficients)
_GB_HEADER = 7


def _gb_unpack(params):
    m, n0, p0, stride, degree, var_floor, K = params[:_GB_HEADER]
    m, n0, stride, degree, K = int(m), int(n0), int(stride), int(degree), int(K)
    size = 2 * (degree + 1)
    blocks = [params[_GB_HEADER + k * size:_GB_HEADER + (k + 1) * size] for k in range(K)]
    return m, n0, p0, stride, var_floor, blocks


def _gb_num_models(m, n0, stride):
    return max(1, math.ceil((m - n0) / stride))


def _gb_truncate(params, m_new):
    m, n0, p0, stride, var_floor, blocks = _gb_unpack(params)
    K = _gb_num_models(m_new, n0, stride)
    head = (float(m_new),) + tuple(params[1:6]) + (float(K),)
    return head + tuple(c for blk in blocks[:K] for c in blk)


def gbar_step(i: int, target, gbar_i):
    """Next design solving ``gbar_{i+1} = target``: ``(i+1) target - i gbar_i`` clipped to [0, 1]."""
    return np.clip((i + 1) * np.asarray(target) - i * np.asarray(gbar_i), 0.0, 1.0)


def _gb_replay(params, w, visit=None):
    """Rebuild ``g_{n0+1}, ..., g_m`` at ``w``; ``visit(j, g_j)`` sees every step."""
    m, n0, p0, stride, var_floor, blocks = _gb_unpack(params)
    w = np.asarray(w, dtype=float)
    pis = [neyman_ratio(blk, var_floor, w) for blk in blocks]
    running = np.full(w.shape, 0.0)
    for _ in range(n0):
        running = running + p0
    target_sum = np.zeros(w.shape)
    g = np.full(w.shape, p0)
    for j in range(n0 + 1, m + 1):
        k = min((j - n0 - 1) // stride, len(pis) - 1)
        target_sum = target_sum + pis[k]
        g = np.clip(j * target_sum / (j - n0) - running, 0.0, 1.0)
        running = running + g
        if visit is not None:
            visit(j, g)
    return g


def _eval_gbar(params, w):
    return _gb_replay(params, w)


def _gb_lineages(designs):
    """Group gbar-driven designs whose parameters are prefixes of one longest member."""
    groups: dict[tuple, list[int]] = {}
    for idx, d in enumerate(designs):
        _, n0, p0, stride, var_floor, blocks = _gb_unpack(d.params)
        key = (n0, p0, stride, var_floor, tuple(blocks[0]) if blocks else ())
        groups.setdefault(key, []).append(idx)
    out = []
    for idx in groups.values():
        longest = max(idx, key=lambda i: designs[i].params[0])
        lp = designs[longest].params
        good = [i for i in idx if _gb_truncate(lp, int(designs[i].params[0])) == designs[i].params]
        bad = [i for i in idx if i not in set(good)]
        out.append((lp, good))
        out.extend((designs[i].params, [i]) for i in bad)
    return out


def _group_gbar(designs, w):
    rows = np.empty((len(designs), len(w)))
    for params, members in _gb_lineages(designs):
        want: dict[int, list[int]] = {}
        for i in members:
            want.setdefault(int(designs[i].params[0]), []).append(i)

        def visit(j, g):
            for i in want.get(j, ()):
                rows[i] = g
        _gb_replay(params, w, visit)
    return rows


def _own_gbar(designs, w):
    out = np.empty(len(designs))
    for params, members in _gb_lineages(designs):
        by_m: dict[int, list[int]] = {}
        for i in members:
            by_m.setdefault(int(designs[i].params[0]), []).append(i)
        pts = np.array([w[i] for i in members])
        pos = {i: k for k, i in enumerate(members)}

        def visit(j, g):
            for i in by_m.get(j, ()):
                out[i] = g[pos[i]]
        _gb_replay(params, pts, visit)
    return out


register_design_kind("neyman", _eval_neyman)
register_design_kind("gamma", _eval_gamma)
register_design_kind("gbar_driven", _eval_gbar, _group_gbar, _own_gbar)


# ---------------------------------------------------------------------------
# rules

def estimate_variance_model(traj, degree: int = DEFAULT_DEGREE, var_floor: float = DEFAULT_VAR_FLOOR):
    mean = fit_outcome_regression(traj, degree)
    return fit_conditional_variance(traj, mean, degree, var_floor)


def standard_neyman_rule(traj, degree: int = DEFAULT_DEGREE, var_floor: float = DEFAULT_VAR_FLOOR,
                         clip_lo: float = 0.01) -> DesignFunction:
    """Plug-in Neyman allocation from variance regressions on the data so far, clipped."""
    vm = estimate_variance_model(traj, degree, var_floor)
    return neyman_design(tuple(vm.coef_by_arm[1]), tuple(vm.coef_by_arm[0]), clip_lo, var_floor)


def benefit_driven_rule(traj, unit: int, n0: int, b: float = 1.0, degree: int = DEFAULT_DEGREE,
                        nu_period: int = NU_PERIOD) -> DesignFunction:
    """Tilt toward the arm the doubly robust CATE fit favours; ``unit`` is the 1-based enrollee."""
    mean = fit_outcome_regression(traj, degree)
    cate = fit_cate_dr(traj, mean, degree)
    return gamma_design(tuple(cate.coef_by_arm[1]), nu_schedule(unit, n0, nu_period), b)


def _scenario_var_coefs(scenario):
    if getattr(scenario, "var_poly", None) is None:
        raise UsageError("oracle designs need a scenario with polynomial conditional variances")
    return scenario.var_poly


class DesignPolicy:
    """Base policy: baseline probability during burn-in, refits every ``refit_stride`` units."""

    kind = "non_adaptive"

    def __init__(self, n0: int = 1000, baseline_prob: float = 0.5, refit_stride: int = 250,
                 degree: int = DEFAULT_DEGREE, var_floor: float = DEFAULT_VAR_FLOOR):
        if n0 < 0 or refit_stride < 1:
            raise UsageError("n0 must be >= 0 and refit_stride >= 1")
        if not 0.0 < baseline_prob < 1.0:
            raise UsageError("baseline_prob must lie in (0, 1)")
        self.n0 = int(n0)
        self.baseline_prob = float(baseline_prob)
        self.refit_stride = int(refit_stride)
        self.degree = int(degree)
        self.var_floor = float(var_floor)
        self._baseline = DesignFunction.constant(self.baseline_prob)
        self._last = None
        self._last_vals = None

    def _due(self, i: int) -> bool:
        return (i - self.n0) % self.refit_stride == 0

    def next_design(self, traj) -> DesignFunction:
        i = traj.n
        if i < self.n0:
            return self._baseline
        return self._adapt(traj, i)

    def _adapt(self, traj, i):
        return self._baseline

    def design_values(self, design: DesignFunction, points: np.ndarray, running_sum=None) -> np.ndarray:
        """``design`` evaluated at ``points``; repeated designs reuse the last evaluation."""
        if design is not self._last:
            self._last = design
            self._last_vals = design.eval(points)
        return self._last_vals


class NonAdaptive(DesignPolicy):
    kind = "non_adaptive"

    def next_design(self, traj):
        return self._baseline


class OracleNeyman(DesignPolicy):
    """True Neyman allocation for every unit, burn-in included."""

    kind = "oracle_neyman"

    def __init__(self, scenario, **kw):
        super().__init__(**kw)
        c1, c0 = _scenario_var_coefs(scenario)
        self._design = neyman_design(c1, c0, 0.0, 1e-300)

    def next_design(self, traj):
        return self._design


class StandardNeyman(DesignPolicy):
    """Plug-in Neyman allocation, optionally with the true variances (``oracle_scenario``)."""

    kind = "standard_neyman"

    def __init__(self, clip_lo: float = 0.01, oracle_scenario=None, **kw):
        super().__init__(**kw)
        if not 0.0 <= clip_lo < 0.5:
            raise UsageError("clip_lo must lie in [0, 0.5)")
        self.clip_lo = float(clip_lo)
        self._oracle = None
        if oracle_scenario is not None:
            c1, c0 = _scenario_var_coefs(oracle_scenario)
            self._oracle = neyman_design(c1, c0, self.clip_lo, 1e-300)
        self._current = None

    def _adapt(self, traj, i):
        if self._oracle is not None:
            return self._oracle
        if self._current is None or self._due(i):
            self._current = standard_neyman_rule(traj, self.degree, self.var_floor, self.clip_lo)
        return self._current


class GbarDriven(DesignPolicy):
    """Steers the average design toward the running mean of Neyman estimates."""

    kind = "gbar_driven"

    def __init__(self, oracle_scenario=None, **kw):
        super().__init__(**kw)
        self._oracle_block = None
        if oracle_scenario is not None:
            c1, c0 = _scenario_var_coefs(oracle_scenario)
            d = max(len(c1), len(c0), self.degree + 1)
            self.degree = d - 1
            self._oracle_block = (tuple(c1) + (0.0,) * (d - len(c1)) + tuple(c0) + (0.0,) * (d - len(c0)))
            self.var_floor = 1e-300
        self._blocks: list[tuple] = []
        # fast-path state for design_values
        self._fp_points = None
        self._fp_unit = None
        self._fp_target = None
        self._fp_pis: list[np.ndarray] = []

    def _adapt(self, traj, i):
        if not self._blocks or self._due(i):
            if self._oracle_block is not None:
                blk = self._oracle_block
            else:
                vm = estimate_variance_model(traj, self.degree, self.var_floor)
                blk = tuple(vm.coef_by_arm[1]) + tuple(vm.coef_by_arm[0])
            self._blocks.append(tuple(float(c) for c in blk))
        m = i + 1
        head = (m, self.n0, self.baseline_prob, self.refit_stride, self.degree, self.var_floor,
                len(self._blocks))
        return DesignFunction("gbar_driven", head + tuple(c for blk in self._blocks for c in blk))

    def design_values(self, design, points, running_sum=None):
        """Incremental evaluation at fixed ``points`` given the running sum of earlier designs.

        Matches :func:`_gb_replay` step for step when called once per unit in order.
        """
        if design.kind != "gbar_driven" or running_sum is None:
            return super().design_values(design, points, running_sum)
        m, n0, p0, stride, var_floor, blocks = _gb_unpack(design.params)
        if self._fp_points is not points:
            if m != n0 + 1:
                return design.eval(points)
            self._fp_points, self._fp_target, self._fp_pis = points, np.zeros(points.shape), []
        elif m != self._fp_unit + 1:
            return design.eval(points)
        k = min((m - n0 - 1) // stride, len(blocks) - 1)
        while len(self._fp_pis) <= k:
            self._fp_pis.append(neyman_ratio(blocks[len(self._fp_pis)], var_floor, points))
        self._fp_target = self._fp_target + self._fp_pis[k]
        self._fp_unit = m
        return np.clip(m * self._fp_target / (m - n0) - running_sum, 0.0, 1.0)


class BenefitDriven(DesignPolicy):
    """Tilts randomization toward the estimated better arm; the floor ``nu`` decays over time."""

    kind = "benefit_driven"

    def __init__(self, b: float = 1.0, nu_period: int = NU_PERIOD, **kw):
        super().__init__(**kw)
        if not b > 0:
            raise UsageError("b must be positive")
        self.b = float(b)
        self.nu_period = int(nu_period)
        self._cate = None
        self._cache = None

    def _adapt(self, traj, i):
        if self._cate is None or self._due(i):
            mean = fit_outcome_regression(traj, self.degree)
            self._cate = tuple(fit_cate_dr(traj, mean, self.degree).coef_by_arm[1])
            self._cache = None
        nu = nu_schedule(i + 1, self.n0, self.nu_period)
        if self._cache is None or self._cache.params[0] != nu:
            self._cache = gamma_design(self._cate, nu, self.b)
        return self._cache


class SitePolicy(DesignPolicy):
    """Each unit uses the design of its (pre-drawn) site; no adaptation."""

    kind = "multisite"

    def __init__(self, site_designs, sites):
        super().__init__(n0=0)
        self.site_designs = tuple(site_designs)
        self.sites = np.asarray(sites)
        self._vals: dict[int, np.ndarray] = {}

    def next_design(self, traj):
        return self.site_designs[int(self.sites[traj.n])]

    def design_values(self, design, points, running_sum=None):
        key = id(design)
        if key not in self._vals:
            self._vals[key] = design.eval(points)
        return self._vals[key]


def make_policy(kind: str, scenario=None, *, n0: int = 1000, baseline_prob: float = 0.5,
                refit_stride: int = 250, degree: int = DEFAULT_DEGREE,
                var_floor: float = DEFAULT_VAR_FLOOR, clip_lo: float = 0.01, b: float = 1.0,
                nu_period: int = NU_PERIOD, oracle_variance: bool = False) -> DesignPolicy:
    common = dict(n0=n0, baseline_prob=baseline_prob, refit_stride=refit_stride, degree=degree,
                  var_floor=var_floor)
    needs_oracle = kind == "oracle_neyman" or (oracle_variance and kind in ("standard_neyman", "gbar_driven"))
    if needs_oracle and scenario is None:
        raise UsageError(f"design {kind!r} with oracle variances needs scenario access")
    if kind == "non_adaptive":
        return NonAdaptive(**common)
    if kind == "oracle_neyman":
        return OracleNeyman(scenario, **common)
    if kind == "standard_neyman":
        return StandardNeyman(clip_lo, scenario if oracle_variance else None, **common)
    if kind == "gbar_driven":
        return GbarDriven(scenario if oracle_variance else None, **common)
    if kind == "benefit_driven":
        return BenefitDriven(b, nu_period, **common)
    raise UsageError(f"unknown design kind {kind!r}; expected one of {KINDS}")


def next_design(policy: DesignPolicy, traj) -> DesignFunction:
    return policy.next_design(traj)
