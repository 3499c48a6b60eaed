"""Flat ``key = value`` configuration with dotted namespaces.

Unknown keys are rejected. A bare key such as ``reps`` is accepted when it
names exactly one namespaced key (``mc.reps``).
"""
from __future__ import annotations

from dataclasses import fields, replace

from .core import UsageError
from .harness import McConfig

# config key -> (McConfig field, parser)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())


def _ints(s: str) -> tuple:
    return tuple(int(x) for x in s.replace(";", ",").split(",") if x.strip())


def _seed(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


KEYS = {
    "scenario.kind": ("scenario_kind", str),
    "scenario.w_law": ("w_law", str),
    "scenario.seed": ("base_seed", _seed),
    "scenario.site_designs": ("site_designs", _floats),
    "scenario.site_probs": ("site_probs", _floats),
    "design.kind": ("design_kind", str),
    "design.n0": ("n0", int),
    "design.baseline_prob": ("baseline_prob", float),
    "design.b": ("b", float),
    "design.clip_lo": ("clip_lo", float),
    "design.refit_stride": ("refit_stride", int),
    "design.nu_period": ("nu_period", int),
    "design.oracle_variance": ("oracle_variance", _bool),
    "learner.degree": ("degree", int),
    "learner.var_floor": ("var_floor", float),
    "estimator.alpha": ("alpha", float),
    "estimator.delta_trunc": ("delta_trunc", float),
    "estimator.score_tol": ("score_tol", float),
    "estimator.qbar_init": ("qbar_init", str),
    "mc.reps": ("reps", int),
    "mc.per_period": ("per_period", int),
    "mc.num_periods": ("num_periods", int),
    "mc.time_points": ("time_points", _ints),
    "mc.threads": ("threads", int),
}
# keys that live outside McConfig, with defaults
EXTRA_KEYS = {"mc.eic_reps": (int, 20)}


def resolve_key(key: str) -> str:
    key = key.strip()
    if key in KEYS or key in EXTRA_KEYS:
        return key
    matches = [k for k in list(KEYS) + list(EXTRA_KEYS) if k.endswith("." + key)]
    if len(matches) == 1:
        return matches[0]
    raise UsageError(f"unknown config key {key!r}")


def parse_pairs(lines, source: str = "config") -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment) into a raw dict."""
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        k, v = line.split("=", 1)
        out[resolve_key(k)] = v.strip()
    return out


def read_config_file(path) -> dict:
    try:
        with open(path) as fh:
            return parse_pairs(fh, str(path))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def build(raw: dict, base: McConfig | None = None):
    """Apply raw string values to ``base``; returns ``(McConfig, extras)``."""
    cfg = base or McConfig()
    changes = {}
    extras = {k: default for k, (_, default) in EXTRA_KEYS.items()}
    for key, value in raw.items():
        key = resolve_key(key)
        try:
            if key in EXTRA_KEYS:
                extras[key] = EXTRA_KEYS[key][0](value)
            else:
                name, parse = KEYS[key]
                changes[name] = parse(value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}") from exc
    try:
        return replace(cfg, **changes), extras
    except TypeError as exc:
        raise UsageError(str(exc)) from exc


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_render(x) for x in v)
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def dump(cfg: McConfig, extras: dict) -> str:
    """Effective configuration as text that :func:`parse_pairs` reads back to the same values."""
    by_field = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    lines = [f"{key} = {_render(by_field[name])}" for key, (name, _) in KEYS.items()]
    lines += [f"{key} = {_render(extras[key])}" for key in EXTRA_KEYS]
    return "\n".join(lines) + "\n"
