"""Experiment configuration: JSON parsing and validation."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re

import numpy as np

from .errors import ConfigError, GaussflowError
from .feynman_kac import GrowthBound, Potential
from .kernel import GaussianMeasure, PointMixture
from .operators import power_law_spectrum, validate_operator_set
from .paths import TimeGrid, set_from_dict

DEFAULT_TOLERANCES = {
    "psd_rtol": 1e-10,
    "closed_form_rtol": 1e-8,
    "residual": 1e-7,
    "semigroup": 1e-8,
    "recovery": 1e-4,
    "sigma": 3.0,
}

_BAD_CONSTANT = re.compile(r"(?<![\w\"])(-?Infinity|NaN)(?![\w\"])")


def _reject_constant(text):
    def hook(token):
        m = _BAD_CONSTANT.search(text)
        line = text.count("\n", 0, m.start()) + 1 if m else None
        raise ConfigError(f"non-finite number {token} is not allowed", line)

    return hook


def parse_config_text(text):
    """Parse JSON, rejecting NaN/Infinity with the offending line number."""
    try:
        data = json.loads(text, parse_constant=_reject_constant(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, exc.lineno) from None
    if not isinstance(data, dict):
        raise ConfigError("top-level JSON value must be an object", 1)
    # an emitted report can be fed back as a config
    if "config" in data and "command" in data and "config_hash" in data:
        data = data["config"]
    _check_finite(data, "")
    return data


def _check_finite(obj, path):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ConfigError(f"{path or 'value'}: non-finite number")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}" if path else k)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")


def canonical(config):
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def config_hash(config):
    return hashlib.sha256(canonical(config).encode()).hexdigest()


def _get(block, key, path, default=None, required=False):
    if key in block:
        return block[key]
    if required:
        raise ConfigError(f"missing required key {path}{key}")
    return copy.deepcopy(default)


def _count(value, name):
    try:
        ivalue = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer") from None
    if ivalue != value or ivalue < 1:
        raise ConfigError(f"{name} must be a positive integer")
    return ivalue


def _positive(value, name):
    if not isinstance(value, (int, float)) or not value > 0:
        raise ConfigError(f"{name} must be a positive number")
    return float(value)


def operator_matrix(spec, n, name):
    """Dense row-major array, ``{"diag": [...]}``, ``{"power_law": {"p", "n"}}`` or ``{"scale": c}``."""
    if spec is None:
        return np.zeros((n, n))
    if isinstance(spec, dict):
        if "diag" in spec:
            vals = np.asarray(spec["diag"], dtype=float)
            if vals.shape != (n,):
                raise ConfigError(f"operators.{name}.diag must have {n} entries")
            return np.diag(vals)
        if "power_law" in spec:
            pl = spec["power_law"]
            k = int(pl.get("n", n))
            if k != n:
                raise ConfigError(f"operators.{name}.power_law.n={k} disagrees with dim={n}")
            return np.diag(power_law_spectrum(float(pl["p"]), n) * float(pl.get("scale", 1.0)))
        if "scale" in spec:
            return float(spec["scale"]) * np.eye(n)
        raise ConfigError(f"operators.{name}: unknown operator shorthand {sorted(spec)}")
    try:
        arr = np.asarray(spec, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"operators.{name} is not a numeric array") from None
    if arr.shape != (n, n):
        raise ConfigError(f"operators.{name} must be {n}x{n}, got shape {arr.shape}")
    return arr


def build_operators(config, tolerances=None):
    tol = tolerances or DEFAULT_TOLERANCES
    n = _count(_get(config, "dim", "", required=True), "dim")
    ops = _get(config, "operators", "", {})
    mats = {k: operator_matrix(ops.get(k), n, k) for k in ("B", "C", "D")}
    try:
        return validate_operator_set(mats["B"], mats["C"], mats["D"], ops.get("alpha", 0.0),
                                     psd_rtol=tol["psd_rtol"])
    except GaussflowError as exc:
        raise ConfigError(f"operators: {exc}") from None


def tolerances(config):
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in config.get("tolerances", {}).items():
        if k not in tol:
            raise ConfigError(f"unknown tolerance {k!r}")
        tol[k] = _positive(v, f"tolerances.{k}")
    return tol


def build_grid(block, path):
    g = _get(block, "grid", path, required=True)
    if "times" in g:
        try:
            return TimeGrid(g["times"])
        except ValueError as exc:
            raise ConfigError(f"{path}grid: {exc}") from None
    return TimeGrid.uniform(_positive(g.get("T"), f"{path}grid.T"), _count(g.get("steps", 1), f"{path}grid.steps"))


def build_set(spec, path):
    if spec is None:
        return None
    try:
        return set_from_dict(spec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid set ({exc})") from None


def build_potential(spec, n):
    if spec is None:
        raise ConfigError("fk.potential is required")
    kind = spec.get("kind")
    growth = None
    if "growth" in spec:
        g = spec["growth"]
        growth = GrowthBound(g.get("c1", 1.0), g.get("c2", 1.0), g.get("r", 2.0), g.get("rate", 1.0))
    if kind == "quadratic":
        C_v = spec.get("C_v")
        if C_v is None:
            C_v = float(spec.get("c", 1.0)) * np.eye(n)
        return Potential.quadratic(operator_matrix(C_v, n, "potential.C_v"), spec.get("c0", 0.0), growth)
    if kind == "bounded_cosine":
        return Potential.bounded_cosine(spec["v0"], spec["k"], growth)
    if kind == "constant":
        return Potential.constant(spec["c"])
    raise ConfigError(f"fk.potential.kind must be quadratic, bounded_cosine or constant, got {kind!r}")


def build_initial(spec, n):
    if spec is None:
        return None
    kind = spec.get("type")
    if kind == "gaussian":
        return GaussianMeasure(spec.get("mean", [0.0] * n), spec.get("cov", np.eye(n).tolist()),
                               spec.get("mass", 1.0))
    if kind == "points":
        return PointMixture(spec["points"], spec.get("weights", [1.0] * len(spec["points"])))
    if kind == "dirac":
        return PointMixture.dirac(spec.get("x", [0.0] * n))
    raise ConfigError(f"initial measure type must be gaussian, points or dirac, got {kind!r}")


def vector(value, n, name):
    if value is None:
        return np.zeros(n)
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape[0] != n:
        raise ConfigError(f"{name} must have {n} entries")
    return arr
