"""Domain types shared across the package and evaluation of the average design.

A design function is stored as a parameter record (``kind`` plus a tuple of
reals) so that every treatment-randomization function used during an
experiment can be re-evaluated at any covariate value after the fact.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class AdaptrialError(Exception):
    """Base class for package errors."""


class UsageError(AdaptrialError, ValueError):
    """Invalid arguments or configuration."""


class NumericalError(AdaptrialError, ArithmeticError):
    """A numerical routine failed to converge or hit a degenerate case."""


class PositivityError(NumericalError):
    """A randomization probability needed in a denominator is zero."""


class FittingError(NumericalError):
    """A regression could not be fitted (for example a rank-deficient basis)."""


@dataclass(frozen=True)
class Observation:
    w: float
    a: int
    y: float
    g_prob: float

    def __post_init__(self):
        if self.a not in (0, 1):
            raise UsageError(f"treatment must be 0 or 1, got {self.a!r}")
        if not 0.0 <= self.g_prob <= 1.0:
            raise UsageError(f"g_prob must lie in [0, 1], got {self.g_prob!r}")
        if not math.isfinite(self.y):
            raise UsageError("outcome must be finite")


# kind -> vectorized evaluator(params, w) returning P(A=1 | w)
_EVALUATORS: dict[str, Callable[[tuple, np.ndarray], np.ndarray]] = {}
# kind -> batch evaluator(list of designs of that kind, w) returning per-design rows
_GROUP_EVALUATORS: dict[str, Callable[[list, np.ndarray], np.ndarray]] = {}
# kind -> evaluator(list of designs, w) returning designs[k](w[k]) for each k
_OWN_EVALUATORS: dict[str, Callable[[list, np.ndarray], np.ndarray]] = {}


def register_design_kind(kind: str, evaluator, group_evaluator=None, own_evaluator=None):
    """Register how a design kind is evaluated.

    ``group_evaluator`` optionally evaluates many designs of the same kind at
    once, returning an array of shape (len(designs), len(w)); ``own_evaluator``
    evaluates each design at its own covariate. Both let kinds whose members
    share history avoid repeated work.
    """
    _EVALUATORS[kind] = evaluator
    if group_evaluator is not None:
        _GROUP_EVALUATORS[kind] = group_evaluator
    if own_evaluator is not None:
        _OWN_EVALUATORS[kind] = own_evaluator


def evaluate_own(designs: Sequence["DesignFunction"], w) -> np.ndarray:
    """``designs[i](w[i])`` for every i, sharing work across identical designs."""
    w = np.asarray(w, dtype=float)
    out = np.empty(len(designs))
    by_kind: dict[str, list[int]] = {}
    for i, d in enumerate(designs):
        by_kind.setdefault(d.kind, []).append(i)
    for kind, idx in by_kind.items():
        idx_arr = np.array(idx)
        if kind in _OWN_EVALUATORS:
            out[idx_arr] = _OWN_EVALUATORS[kind]([designs[i] for i in idx], w[idx_arr])
            continue
        for d, sub in _unique_design_indices([designs[i] for i in idx]).items():
            out[idx_arr[sub]] = d.eval(w[idx_arr[sub]])
    return np.clip(out, 0.0, 1.0)


def _eval_constant(params, w):
    return np.full(np.shape(w), params[0], dtype=float)


register_design_kind("constant", _eval_constant)


@dataclass(frozen=True)
class DesignFunction:
    """Treatment-randomization function ``w -> P(A = 1 | w)``."""

    kind: str
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind not in _EVALUATORS:
            raise UsageError(f"unknown design kind {self.kind!r}")

    @classmethod
    def constant(cls, p: float) -> "DesignFunction":
        if not 0.0 <= p <= 1.0:
            raise UsageError(f"constant design probability must be in [0, 1], got {p}")
        return cls("constant", (p,))

    def eval(self, w):
        """Probability of treatment 1 at ``w`` (scalar or array)."""
        arr = np.asarray(w, dtype=float)
        out = _EVALUATORS[self.kind](self.params, np.atleast_1d(arr))
        out = np.clip(out, 0.0, 1.0)
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)

    __call__ = eval

    def prob(self, a, w):
        """``g(a | w)`` for treatment ``a`` (scalar or array)."""
        p1 = self.eval(w)
        if np.ndim(a) == 0 and np.ndim(w) == 0:
            return p1 if a == 1 else 1.0 - p1
        return np.where(np.asarray(a) == 1, p1, 1.0 - p1)


def _design_rows(designs: Sequence[DesignFunction], w: np.ndarray):
    """Yield (weight, values) pairs; identical designs are evaluated once."""
    groups: dict[tuple, int] = {}
    order: list[DesignFunction] = []
    for d in designs:
        key = (d.kind, d.params)
        if key not in groups:
            groups[key] = 0
            order.append(d)
        groups[key] += 1
    by_kind: dict[str, list[DesignFunction]] = {}
    for d in order:
        by_kind.setdefault(d.kind, []).append(d)
    for kind, members in by_kind.items():
        if kind in _GROUP_EVALUATORS and len(members) > 1:
            vals = np.clip(_GROUP_EVALUATORS[kind](members, w), 0.0, 1.0)
            for d, row in zip(members, vals):
                yield groups[(d.kind, d.params)], row
        else:
            for d in members:
                yield groups[(d.kind, d.params)], d.eval(w)


def average_design(designs: Sequence[DesignFunction], w, a=1):
    """Average design ``(1/n) sum_i g_i(a | w)``; vectorized over ``w``."""
    if len(designs) == 0:
        raise UsageError("average_design needs at least one design")
    warr = np.atleast_1d(np.asarray(w, dtype=float))
    n = len(designs)
    rows = list(_design_rows(designs, warr))
    if len(rows) == 1:
        p1 = rows[0][1]
    else:
        p1 = np.zeros_like(warr)
        for count, vals in rows:
            p1 = p1 + (count / n) * vals
    p1 = np.clip(p1, 0.0, 1.0)
    out = np.where(np.asarray(a) == 1, p1, 1.0 - p1)
    return float(out[0]) if np.ndim(w) == 0 and np.ndim(a) == 0 else out


def positivity_check(designs: Sequence[DesignFunction], w_grid: Iterable[float], zeta: float) -> bool:
    """True iff the average design puts at least ``zeta`` on both arms over the grid."""
    if not 0.0 < zeta <= 0.5:
        raise UsageError("zeta must lie in (0, 0.5]")
    p1 = average_design(designs, np.asarray(list(w_grid), dtype=float), 1)
    return bool(min(p1.min(), (1.0 - p1).min()) >= zeta)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered observations of one experiment plus the design used for each unit.

    Arrays are stored column-wise. ``p1[i]`` is ``g_i(1 | w_i)``; ``g_prob`` is the
    realized ``g_i(a_i | w_i)``. ``gbar_cache`` maps a prefix length ``n`` to
    ``gbar_n(1 | w_1..w_n)`` when it has been pre-computed by the simulator.
    """

    w: np.ndarray
    a: np.ndarray
    y: np.ndarray
    p1: np.ndarray
    designs: tuple
    scenario_meta: str = ""
    gbar_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        a = np.asarray(self.a, dtype=int)
        y = np.asarray(self.y, dtype=float)
        p1 = np.asarray(self.p1, dtype=float)
        n = len(w)
        if not (len(a) == len(y) == len(p1) == len(self.designs) == n):
            raise UsageError("trajectory columns and designs must have equal length")
        if n and not np.all((a == 0) | (a == 1)):
            raise UsageError("treatments must be binary")
        if n and not np.all(np.isfinite(y)):
            raise UsageError("outcomes must be finite")
        for name, arr in (("w", w), ("a", a), ("y", y), ("p1", p1)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "designs", tuple(self.designs))

    @classmethod
    def from_observations(cls, obs: Sequence[Observation], designs: Sequence[DesignFunction],
                          scenario_meta: str = "") -> "Trajectory":
        if len(obs) != len(designs):
            raise UsageError("obs and designs must have equal length")
        w = np.array([o.w for o in obs], dtype=float)
        p1 = evaluate_own(designs, w)
        traj = cls(w, [o.a for o in obs], [o.y for o in obs], p1, tuple(designs), scenario_meta)
        bad = np.abs(traj.g_prob - np.array([o.g_prob for o in obs])) > 1e-12
        if np.any(bad):
            raise UsageError(f"g_prob inconsistent with design at unit {int(np.argmax(bad))}")
        return traj

    def __len__(self):
        return len(self.w)

    @property
    def n(self) -> int:
        return len(self.w)

    @property
    def g_prob(self) -> np.ndarray:
        return np.where(self.a == 1, self.p1, 1.0 - self.p1)

    @property
    def obs(self) -> list[Observation]:
        gp = self.g_prob
        return [Observation(float(self.w[i]), int(self.a[i]), float(self.y[i]), float(gp[i]))
                for i in range(self.n)]

    def prefix(self, n: int) -> "Trajectory":
        """The first ``n`` units, carrying over any cached average design."""
        if not 0 < n <= self.n:
            raise UsageError(f"prefix length {n} outside 1..{self.n}")
        if n == self.n:
            return self
        cache = {n: self.gbar_cache[n]} if n in self.gbar_cache else {}
        return Trajectory(self.w[:n], self.a[:n], self.y[:n], self.p1[:n], self.designs[:n],
                          self.scenario_meta, cache)

    def gbar(self, w=None, a=1):
        """Average design of this trajectory; at the observed covariates by default."""
        if w is None:
            if self.n not in self.gbar_cache:
                self.gbar_cache[self.n] = np.asarray(average_design(self.designs, self.w, 1))
            p1 = self.gbar_cache[self.n]
            return np.where(np.asarray(a) == 1, p1, 1.0 - p1)
        return average_design(self.designs, w, a)

    def check_consistency(self, tol: float = 1e-12) -> bool:
        """Recompute every ``g_i(1 | w_i)`` from the stored design functions."""
        recomputed = evaluate_own(self.designs, self.w)
        return bool(np.all(np.abs(recomputed - self.p1) <= tol))


CSV_COLUMNS = ["unit_index", "w", "a", "y", "g_prob", "design_kind", "design_params"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    gp = traj.g_prob
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i in range(traj.n):
            d = traj.designs[i]
            writer.writerow([i + 1, _fmt(traj.w[i]), int(traj.a[i]), _fmt(traj.y[i]), _fmt(gp[i]),
                             d.kind, ";".join(_fmt(p) for p in d.params)])


def read_trajectory_csv(path, scenario_meta: str = "") -> Trajectory:
    """Load a trajectory written by :func:`write_trajectory_csv`.

    ``p1`` is recomputed from the design records and checked against the
    stored ``g_prob`` to 1e-12.
    """
    w, a, y, gp, designs = [], [], [], [], []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != CSV_COLUMNS:
                raise UsageError(f"unexpected trajectory columns {reader.fieldnames}")
            for lineno, row in enumerate(reader, 2):
                try:
                    w.append(float(row["w"]))
                    a.append(int(row["a"]))
                    y.append(float(row["y"]))
                    gp.append(float(row["g_prob"]))
                    raw = row["design_params"]
                    params = tuple(float(p) for p in raw.split(";")) if raw else ()
                    designs.append(DesignFunction(row["design_kind"], params))
                except (TypeError, ValueError) as exc:
                    raise UsageError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise UsageError(f"cannot read trajectory {path}: {exc}") from exc
    w_arr = np.array(w, dtype=float)
    a_arr = np.array(a, dtype=int)
    p1 = evaluate_own(designs, w_arr) if designs else np.empty(0)
    stored = np.array(gp)
    realized = np.where(a_arr == 1, p1, 1.0 - p1)
    if len(w) and np.max(np.abs(realized - stored)) > 1e-12:
        bad = int(np.argmax(np.abs(realized - stored)))
        raise UsageError(f"g_prob in row {bad + 1} does not match its design function")
    return Trajectory(w_arr, a_arr, np.array(y), p1, tuple(designs), scenario_meta)


def _unique_design_indices(designs):
    out: dict[DesignFunction, list[int]] = {}
    for i, d in enumerate(designs):
        out.setdefault(d, []).append(i)
    return {d: np.array(idx) for d, idx in out.items()}
