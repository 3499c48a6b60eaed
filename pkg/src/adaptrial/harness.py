"""Sequential experiment runner, Monte Carlo replication and efficiency oracles.

Every replication draws its covariates, assignment uniforms and outcome
noise up front from its own Philox stream, so two designs run with the same
``base_seed`` share common random numbers replication by replication.
"""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .core import AdaptrialError, DesignFunction, NumericalError, PositivityError, Trajectory, UsageError, average_design
from .designs import KINDS, SitePolicy, make_policy, neyman_design
from .dgp import SCENARIO_KINDS, MultisiteScenario, Scenario, make_scenario, true_ate
from .estimators import ESTIMATORS, estimate_all
from .learners import constant_model, fit_outcome_regression
from .quadrature import integrate

log = logging.getLogger(__name__)

SEED_MULTIPLIER = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
EIC_TOL = 1e-9

METRICS_COLUMNS = ["estimator", "design", "time_point", "n", "bias", "var", "mse", "coverage",
                   "oracle_coverage", "mean_se", "reps", "failures"]


def seed_for_rep(base_seed: int, rep: int) -> int:
    """``base_seed XOR (rep * odd constant)`` reduced to 64 bits."""
    return (int(base_seed) ^ ((int(rep) * SEED_MULTIPLIER) & MASK64)) & MASK64


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & MASK64))


@dataclass(frozen=True)
class McConfig:
    scenario_kind: str = "appendix_b"
    w_law: str = "uniform"
    site_designs: tuple = (0.2, 0.8)
    site_probs: tuple = (0.5, 0.5)
    design_kind: str = "non_adaptive"
    n0: int = 1000
    baseline_prob: float = 0.5
    refit_stride: int = 250
    b: float = 1.0
    clip_lo: float = 0.01
    nu_period: int = 250
    oracle_variance: bool = False
    degree: int = 3
    var_floor: float = 1e-3
    per_period: int = 250
    num_periods: int = 10
    time_points: tuple = (2, 4, 6, 8, 10)
    reps: int = 500
    base_seed: int = 20240611
    alpha: float = 0.05
    delta_trunc: float = 1e-4
    score_tol: float = 1e-8
    qbar_init: str = "poly"
    threads: int = 1

    def __post_init__(self):
        if self.n0 < 1 or self.per_period < 1 or self.num_periods < 1:
            raise UsageError("n0, per_period and num_periods must be positive")
        if any(not 1 <= t <= self.num_periods for t in self.time_points):
            raise UsageError(f"time points must lie in 1..{self.num_periods}")
        if self.qbar_init not in ("poly", "constant"):
            raise UsageError("qbar_init must be 'poly' or 'constant'")
        if self.threads < 1:
            raise UsageError("threads must be >= 1")
        if self.design_kind not in KINDS:
            raise UsageError(f"unknown design kind {self.design_kind!r}; expected one of {KINDS}")
        if self.scenario_kind not in SCENARIO_KINDS:
            raise UsageError(f"unknown scenario kind {self.scenario_kind!r}; expected one of {SCENARIO_KINDS}")

    def n_at(self, time_point: int) -> int:
        """Sample size at a time point; period 1 is the burn-in cohort."""
        return self.n0 + (time_point - 1) * self.per_period

    @property
    def n_total(self) -> int:
        return self.n_at(self.num_periods)

    def scenario(self):
        return make_scenario(self.scenario_kind, self.w_law, site_designs=self.site_designs,
                             site_probs=self.site_probs)

    def policy(self, scenario=None):
        scenario = scenario if scenario is not None else self.scenario()
        return make_policy(self.design_kind, scenario, n0=self.n0, baseline_prob=self.baseline_prob,
                           refit_stride=self.refit_stride, degree=self.degree,
                           var_floor=self.var_floor, clip_lo=self.clip_lo, b=self.b,
                           nu_period=self.nu_period, oracle_variance=self.oracle_variance)

    @property
    def label(self) -> str:
        if self.scenario_kind == "multisite":
            return "multisite"
        return ("oracle_var_" if self.oracle_variance else "") + self.design_kind


class _Prefix:
    """Read-only view of the first ``n`` units of an experiment in progress."""

    __slots__ = ("n", "_w", "_a", "_y", "_p1")

    def __init__(self, w, a, y, p1):
        self.n = 0
        self._w, self._a, self._y, self._p1 = w, a, y, p1

    w = property(lambda self: self._w[:self.n])
    a = property(lambda self: self._a[:self.n])
    y = property(lambda self: self._y[:self.n])
    p1 = property(lambda self: self._p1[:self.n])

    @property
    def g_prob(self):
        p = self._p1[:self.n]
        return np.where(self._a[:self.n] == 1, p, 1.0 - p)


def run_experiment(scenario, policy, n: int, seed: int, logged_ns=()) -> Trajectory:
    """Enroll ``n`` units one at a time under ``policy``.

    ``policy`` may be ``None`` for a multisite scenario, in which case each
    unit uses its site's design. The running sum of designs evaluated at all
    enrolled covariates is kept, and the average design at each size in
    ``logged_ns`` (and at ``n``) is cached on the trajectory.
    """
    rng = make_rng(seed)
    w = np.asarray(scenario.sample_w(rng, n), dtype=float)
    u = rng.random(n)
    z = rng.standard_normal(n)
    if isinstance(scenario, MultisiteScenario):
        sites = scenario.draw_sites(rng, n)
        if policy is None:
            policy = SitePolicy(scenario.site_designs, sites)
    if policy is None:
        raise UsageError("a policy is required for single-site scenarios")
    mean1, mean0 = np.asarray(scenario.qbar0(1, w), float), np.asarray(scenario.qbar0(0, w), float)
    sd1, sd0 = np.sqrt(scenario.var0(1, w)), np.sqrt(scenario.var0(0, w))

    a = np.zeros(n, dtype=int)
    y = np.zeros(n)
    p1 = np.zeros(n)
    designs: list[DesignFunction] = []
    view = _Prefix(w, a, y, p1)
    running = np.zeros(n)
    logged = set(int(m) for m in logged_ns) | {n}
    cache = {}
    for i in range(n):
        view.n = i
        try:
            d = policy.next_design(view)
            vals = policy.design_values(d, w, running)
        except AdaptrialError as exc:
            raise type(exc)(f"unit {i + 1}: {exc}") from exc
        p = float(vals[i])
        p1[i] = p
        if u[i] < p:
            a[i] = 1
            y[i] = mean1[i] + sd1[i] * z[i]
        else:
            y[i] = mean0[i] + sd0[i] * z[i]
        running += vals
        designs.append(d)
        if i + 1 in logged:
            cache[i + 1] = np.clip(running[:i + 1] / (i + 1), 0.0, 1.0)
    return Trajectory(w, a, y, p1, tuple(designs), getattr(scenario, "name", ""), cache)


def initial_outcome_model(traj, cfg: McConfig):
    if cfg.qbar_init == "constant":
        return constant_model(float(np.mean(traj.y)))
    return fit_outcome_regression(traj, cfg.degree)


def _run_rep(args):
    cfg, rep = args
    scenario = cfg.scenario()
    T, E = len(cfg.time_points), len(ESTIMATORS)
    out = {k: np.full((T, E), np.nan) for k in ("psi", "se", "ci_lo", "ci_hi", "score")}
    out["error"] = ""
    ns = [cfg.n_at(t) for t in cfg.time_points]
    try:
        policy = None if cfg.scenario_kind == "multisite" else cfg.policy(scenario)
        traj = run_experiment(scenario, policy, max(ns), seed_for_rep(cfg.base_seed, rep), ns)
    except NumericalError as exc:
        out["error"] = str(exc)
        return out
    for ti, n in enumerate(ns):
        sub = traj.prefix(n)
        try:
            q = initial_outcome_model(sub, cfg)
        except NumericalError as exc:
            out["error"] = str(exc)
            continue
        reports = estimate_all(sub, q, cfg.alpha, cfg.delta_trunc, cfg.score_tol)
        for ei, name in enumerate(ESTIMATORS):
            r = reports[name]
            if isinstance(r, Exception):
                continue
            out["psi"][ti, ei], out["se"][ti, ei] = r.psi, r.se
            out["ci_lo"][ti, ei], out["ci_hi"][ti, ei] = r.ci_lo, r.ci_hi
            out["score"][ti, ei] = r.score_residual
    return out


def _map_reps(fn, cfg: McConfig, reps):
    jobs = [(cfg, r) for r in reps]
    if cfg.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * cfg.threads))))
    return [fn(j) for j in jobs]


@dataclass
class McMetrics:
    cfg: McConfig
    truth: float
    psi: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    score: np.ndarray
    errors: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    @property
    def design(self) -> str:
        return self.cfg.label

    def estimates(self, estimator: str, time_point: int) -> np.ndarray:
        return self.psi[:, self.cfg.time_points.index(time_point), ESTIMATORS.index(estimator)]

    def row(self, estimator: str, time_point: int) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["time_point"] == time_point:
                return r
        raise KeyError((estimator, time_point))


def summarize(psi, se, ci_lo, ci_hi, truth: float, alpha: float) -> dict:
    """Bias, variance, MSE and coverage over replications; NaN entries are failures."""
    ok = np.isfinite(psi)
    p, s, lo, hi = psi[ok], se[ok], ci_lo[ok], ci_hi[ok]
    k = len(p)
    if k == 0:
        nan = float("nan")
        return dict(bias=nan, var=nan, mse=nan, coverage=nan, oracle_coverage=nan, mean_se=nan,
                    reps=0, failures=int(len(psi)))
    z = stats.norm.ppf(1 - alpha / 2)
    sd = float(np.std(p, ddof=1)) if k > 1 else 0.0
    return dict(
        bias=float(np.mean(p) - truth),
        var=float(np.var(p)),
        mse=float(np.mean((p - truth) ** 2)),
        coverage=float(np.mean((lo <= truth) & (truth <= hi))),
        oracle_coverage=float(np.mean(np.abs(p - truth) <= z * sd)),
        mean_se=float(np.mean(s)),
        reps=int(k),
        failures=int(len(psi) - k),
    )


def run_monte_carlo(cfg: McConfig) -> McMetrics:
    """Replicate the experiment ``cfg.reps`` times and score all four estimators."""
    if cfg.reps < 2:
        raise UsageError("run_monte_carlo needs reps >= 2")
    scenario = cfg.scenario()
    truth = true_ate(scenario)
    results = _map_reps(_run_rep, cfg, range(cfg.reps))
    stack = {k: np.stack([r[k] for r in results]) for k in ("psi", "se", "ci_lo", "ci_hi", "score")}
    errors = [(i, r["error"]) for i, r in enumerate(results) if r["error"]]
    m = McMetrics(cfg, truth, stack["psi"], stack["se"], stack["ci_lo"], stack["ci_hi"], stack["score"], errors)
    for ei, name in enumerate(ESTIMATORS):
        for ti, t in enumerate(cfg.time_points):
            s = summarize(m.psi[:, ti, ei], m.se[:, ti, ei], m.ci_lo[:, ti, ei], m.ci_hi[:, ti, ei],
                          truth, cfg.alpha)
            m.rows.append({"estimator": name, "design": cfg.label, "time_point": t, "n": cfg.n_at(t), **s})
    return m


def write_metrics_csv(metrics_list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for m in metrics_list:
            for r in m.rows:
                writer.writerow({k: _csv_val(r[k]) for k in METRICS_COLUMNS})


def _csv_val(v):
    return format(v, ".17g") if isinstance(v, float) else v


def write_rows_csv(rows, columns, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _csv_val(r[k]) for k in columns})


# ---------------------------------------------------------------------------
# relative variances

RELVAR_COLUMNS = ["comparison", "design", "estimator", "time_point", "n", "ratio", "ci_lo", "ci_hi",
                  "var_num", "var_den"]


def variance_ratio(num: np.ndarray, den: np.ndarray, n_boot: int = 200, seed: int = 0, level: float = 0.95):
    """Ratio of replicate variances with a paired percentile bootstrap interval.

    Replicates are paired by index (common random numbers); pairs where
    either side failed are dropped.
    """
    ok = np.isfinite(num) & np.isfinite(den)
    x, y = num[ok], den[ok]
    ratio = float(np.var(x) / np.var(y))
    rng = make_rng(seed)
    idx = rng.integers(0, len(x), size=(n_boot, len(x)))
    with np.errstate(invalid="ignore", divide="ignore"):
        boot = np.var(x[idx], axis=1) / np.var(y[idx], axis=1)
    # a resample of one repeated pair gives 0/0; drop those
    lo, hi = np.nanquantile(boot, [(1 - level) / 2, (1 + level) / 2])
    return ratio, float(lo), float(hi)


def relvar_estimators(m: McMetrics, num: str = "ADL-TMLE", den: str = "AD-TMLE", n_boot: int = 200) -> list:
    rows = []
    for t in m.cfg.time_points:
        x, y = m.estimates(num, t), m.estimates(den, t)
        r, lo, hi = variance_ratio(x, y, n_boot, seed=t)
        ok = np.isfinite(x) & np.isfinite(y)
        rows.append(dict(comparison=f"{num}/{den}", design=m.design, estimator=num, time_point=t,
                         n=m.cfg.n_at(t), ratio=r, ci_lo=lo, ci_hi=hi,
                         var_num=float(np.var(x[ok])), var_den=float(np.var(y[ok]))))
    return rows


def relvar_designs(m: McMetrics, ref: McMetrics, estimator: str = "ADL-TMLE", n_boot: int = 200) -> list:
    rows = []
    for t in m.cfg.time_points:
        x, y = m.estimates(estimator, t), ref.estimates(estimator, t)
        r, lo, hi = variance_ratio(x, y, n_boot, seed=t)
        ok = np.isfinite(x) & np.isfinite(y)
        rows.append(dict(comparison=f"{m.design}/{ref.design}", design=m.design, estimator=estimator,
                         time_point=t, n=m.cfg.n_at(t), ratio=r, ci_lo=lo, ci_hi=hi,
                         var_num=float(np.var(x[ok])), var_den=float(np.var(y[ok]))))
    return rows


# ---------------------------------------------------------------------------
# efficiency oracles

def _as_p1(gbar):
    if isinstance(gbar, (int, float)):
        c = float(gbar)
        return lambda w: np.full(np.shape(w), c)
    return gbar


def population_eic_second_moment(scenario: Scenario, gbar, qbar=None, psi_ref=None,
                                 abs_tol: float = EIC_TOL) -> float:
    """``E[D(Q, gbar)^2]`` for W from the scenario, A ~ gbar and Y from the true conditional law.

    ``gbar`` maps ``w`` to ``P(A = 1 | w)``; ``qbar(a, w)`` defaults to the
    true mean, and ``psi_ref`` to the ATE implied by ``qbar``.
    """
    g1 = _as_p1(gbar)
    q = qbar if qbar is not None else scenario.qbar0
    if psi_ref is None:
        psi_ref = scenario.expect_w(lambda w: q(1, w) - q(0, w))

    def integrand(w):
        p1 = np.asarray(g1(w), dtype=float)
        if np.any(p1 <= 0) or np.any(p1 >= 1):
            raise PositivityError("design hits 0 or 1 on the covariate support")
        q1, q0 = q(1, w), q(0, w)
        e1 = scenario.var0(1, w) + (scenario.qbar0(1, w) - q1) ** 2
        e0 = scenario.var0(0, w) + (scenario.qbar0(0, w) - q0) ** 2
        return scenario.w_density(w) * (e1 / p1 + e0 / (1 - p1) + (q1 - q0 - psi_ref) ** 2)

    lo, hi = scenario.w_support
    return integrate(integrand, lo, hi, abs_tol=abs_tol)


def _weighted_unique(designs):
    counts: dict[DesignFunction, int] = {}
    for d in designs:
        counts[d] = counts.get(d, 0) + 1
    return counts


def jensen_gap(scenario: Scenario, designs, qbar=None, psi_ref=None, abs_tol: float = 1e-10):
    """``mean_i E[D(Q, g_i)^2] - E[D(Q, gbar_n)^2]``, integrated as one pointwise gap.

    Returns ``(gap, mean_of_values, value_at_average)``; the two values are
    separate quadratures and the gap is the quadrature of their integrand
    difference on shared nodes. The gap is ``inf`` when some ``g_i`` violates
    positivity while ``gbar_n`` does not.
    """
    q = qbar if qbar is not None else scenario.qbar0
    if psi_ref is None:
        psi_ref = scenario.expect_w(lambda w: q(1, w) - q(0, w))
    counts = _weighted_unique(designs)
    n = len(designs)
    value_avg = population_eic_second_moment(scenario, lambda w: average_design(designs, w, 1), q, psi_ref)
    try:
        values = [population_eic_second_moment(scenario, d, q, psi_ref) for d in counts]
    except PositivityError:
        return float("inf"), float("inf"), value_avg
    mean_value = sum(c * v for c, v in zip(counts.values(), values)) / n

    def gap(w):
        inv1 = np.zeros_like(w)
        inv0 = np.zeros_like(w)
        for d, c in counts.items():
            p = d.eval(w)
            inv1 += (c / n) / p
            inv0 += (c / n) / (1 - p)
        pbar = average_design(designs, w, 1)
        e1 = scenario.var0(1, w) + (scenario.qbar0(1, w) - q(1, w)) ** 2
        e0 = scenario.var0(0, w) + (scenario.qbar0(0, w) - q(0, w)) ** 2
        return scenario.w_density(w) * (e1 * (inv1 - 1 / pbar) + e0 * (inv0 - 1 / (1 - pbar)))

    lo, hi = scenario.w_support
    return integrate(gap, lo, hi, abs_tol=abs_tol), mean_value, value_avg


def jensen_gap_on_grid(designs, grid) -> np.ndarray:
    """Pointwise ``mean_i 1/g_i(a|w) - 1/gbar(a|w)`` for both arms on ``grid`` (shape (2, len(grid)))."""
    grid = np.asarray(grid, dtype=float)
    counts = _weighted_unique(designs)
    n = len(designs)
    with np.errstate(divide="ignore"):
        inv = np.zeros((2, len(grid)))
        for d, c in counts.items():
            p = d.eval(grid)
            inv[0] += (c / n) / p
            inv[1] += (c / n) / (1 - p)
        pbar = average_design(designs, grid, 1)
        return inv - np.vstack([1 / pbar, 1 / (1 - pbar)])


class RepAveragedDesign:
    """``w -> mean over replications of gbar_n(1 | w)`` for a fixed prefix length."""

    def __init__(self, design_lists, n: int):
        # replications with identical design sequences are evaluated once
        counts: dict[tuple, int] = {}
        for d in design_lists:
            key = tuple(d[:n])
            counts[key] = counts.get(key, 0) + 1
        self.design_lists = list(counts)
        self.weights = np.array(list(counts.values()), dtype=float) / len(design_lists)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        vals = [average_design(ds, w, 1) for ds in self.design_lists]
        if len(vals) == 1:
            return vals[0]
        return np.tensordot(self.weights, np.array(vals), axes=1)


EIC_COLUMNS = ["design", "time_point", "n", "eic_second_moment", "relative", "relative_rep0"]


def design_convergence_trajectory(cfg: McConfig, kinds=("non_adaptive", "standard_neyman", "gbar_driven"),
                                  reps: int | None = None) -> list:
    """Relative ``E[D(Q0, gbar_n)^2]`` against the oracle Neyman design at each time point.

    Neyman-type kinds run with the true conditional variances after burn-in.
    """
    scenario = cfg.scenario()
    reps = cfg.reps if reps is None else reps
    c1, c0 = scenario.var_poly
    oracle = neyman_design(c1, c0, 0.0, 1e-300)
    ref = population_eic_second_moment(scenario, oracle)
    rows = [dict(design="oracle_neyman", time_point=t, n=cfg.n_at(t), eic_second_moment=ref,
                 relative=1.0, relative_rep0=1.0) for t in cfg.time_points]
    for kind in kinds:
        kcfg = replace(cfg, design_kind=kind, oracle_variance=kind in ("standard_neyman", "gbar_driven"),
                       reps=reps, threads=1)
        ns = [cfg.n_at(t) for t in cfg.time_points]
        lists = []
        for r in range(reps):
            traj = run_experiment(scenario, kcfg.policy(scenario), max(ns), seed_for_rep(cfg.base_seed, r))
            lists.append(traj.designs)
        for t, n in zip(cfg.time_points, ns):
            v = population_eic_second_moment(scenario, RepAveragedDesign(lists, n))
            v0 = population_eic_second_moment(scenario, RepAveragedDesign(lists[:1], n))
            rows.append(dict(design=kcfg.label, time_point=t, n=n, eic_second_moment=v,
                             relative=v / ref, relative_rep0=v0 / ref))
    return rows


def config_dict(cfg: McConfig) -> dict:
    return asdict(cfg)


def default_threads() -> int:
    env = os.environ.get("ADAPTRIAL_THREADS")
    return int(env) if env else 1
