"""Experiment configuration: flat TOML with dotted sections and a strict schema."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ConfigError", "ExperimentConfig", "SCHEMA", "load_config", "parse_override"]

_REF_SCHEDULE = [float(2**k) for k in range(4, 13)]
_CHECKS = ("rate_fit", "rate_monotone", "hessian_uniformity", "ma_mass", "ma_concentration",
           "contact_hessian", "q_boundedness", "h_identity", "newton_health",
           "max_principle_box", "positivity")

# key -> (kind, default); kinds: int, float, str, bool, floats, strs, matrix, float_or_auto
SCHEMA: dict[str, tuple[str, object]] = {
    "geometry.n": ("int", 1),
    "geometry.N": ("int", 256),
    "geometry.metric_re": ("matrix", None),
    "geometry.metric_im": ("matrix", None),
    "obstacle.preset": ("str", "cos-a0.3"),
    "obstacle.extra": ("strs", []),
    "beta.value": ("float", 4096.0),
    "beta.schedule": ("floats", _REF_SCHEDULE),
    "solver.tol": ("float", 1e-10),
    "solver.max_iter": ("int", 100),
    "solver.dense_limit": ("int", 1024),
    "envelope.method": ("str", "psor"),
    "envelope.psor_tol": ("float", 1e-9),
    "envelope.omega": ("float", 1.8),
    "envelope.eps": ("float_or_auto", "auto"),
    "envelope.rooftop_method": ("str", "psor"),
    "envelope.contact_kappa": ("float_or_auto", "auto"),
    "verify.archive": ("str", ""),
    "verify.A": ("float", 10.0),
    "verify.hessian_reference_beta": ("float", 512.0),
    "verify.q_reference_beta": ("float", 512.0),
    "verify.collar": ("int", 2),
    "run.seed": ("int", 0),
    "run.threads": ("int", 1),
    "run.binary": ("bool", False),
    "run.figures": ("bool", True),
}
for _c in _CHECKS:
    SCHEMA[f"verify.{_c}"] = ("bool", True)


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _flatten(doc: dict, prefix: str = "") -> dict:
    out = {}
    for k, val in doc.items():
        key = f"{prefix}{k}"
        if isinstance(val, dict):
            out.update(_flatten(val, key + "."))
        else:
            out[key] = val
    return out


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _coerce(key: str, kind: str, val):
    bad = ConfigError(key, f"expected {kind}, got {val!r}")
    if kind == "int":
        if not isinstance(val, int) or isinstance(val, bool):
            raise bad
        return val
    if kind == "float":
        if not _is_num(val) or not math.isfinite(val):
            raise bad
        return float(val)
    if kind == "float_or_auto":
        if val == "auto":
            return val
        return _coerce(key, "float", val)
    if kind == "str":
        if not isinstance(val, str):
            raise bad
        return val
    if kind == "bool":
        if not isinstance(val, bool):
            raise bad
        return val
    if kind == "floats":
        if not isinstance(val, list) or not all(_is_num(x) for x in val):
            raise bad
        return [float(x) for x in val]
    if kind == "strs":
        if not isinstance(val, list) or not all(isinstance(x, str) for x in val):
            raise bad
        return list(val)
    if kind == "matrix":
        if val is None:
            return None
        if not (isinstance(val, list) and all(isinstance(r, list) and all(_is_num(x) for x in r)
                                              for r in val)):
            raise bad
        return [[float(x) for x in r] for r in val]
    raise AssertionError(kind)


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        merged = dict(self.values)
        merged.update(overrides)
        return validate(merged)

    def metric(self):
        import numpy as np

        n = self["geometry.n"]
        re_ = self["geometry.metric_re"]
        im_ = self["geometry.metric_im"]
        if re_ is None and im_ is None:
            return None
        re_ = np.eye(n) if re_ is None else np.array(re_)
        im_ = np.zeros((n, n)) if im_ is None else np.array(im_)
        return re_ + 1j * im_

    def check_enabled(self, name: str) -> bool:
        return self[f"verify.{name}"]

    def to_toml(self) -> str:
        doc: dict = {}
        for key, val in self.values.items():
            if val is None:
                continue
            section, name = key.split(".", 1)
            doc.setdefault(section, {})[name] = val
        return tomli_w.dumps(doc)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_toml())
        return path


def validate(raw: dict) -> ExperimentConfig:
    vals = {}
    for key, val in raw.items():
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        vals[key] = _coerce(key, SCHEMA[key][0], val)
    for key, (_, default) in SCHEMA.items():
        vals.setdefault(key, default)

    if vals["geometry.n"] not in (1, 2):
        raise ConfigError("geometry.n", "complex dimension must be 1 or 2")
    N = vals["geometry.N"]
    if N < 4 or N & (N - 1):
        raise ConfigError("geometry.N", "resolution must be a power of two >= 4")
    n = vals["geometry.n"]
    for k in ("geometry.metric_re", "geometry.metric_im"):
        m = vals[k]
        if m is not None and (len(m) != n or any(len(r) != n for r in m)):
            raise ConfigError(k, f"expected a {n}x{n} matrix")
    sched = vals["beta.schedule"]
    if not sched:
        raise ConfigError("beta.schedule", "empty schedule")
    if any(b <= 0 for b in sched):
        raise ConfigError("beta.schedule", "betas must be positive")
    if any(b1 <= b0 for b0, b1 in zip(sched, sched[1:])):
        raise ConfigError("beta.schedule", "schedule must be strictly increasing")
    if vals["beta.value"] <= 0:
        raise ConfigError("beta.value", "beta must be positive")
    for k in ("solver.tol", "envelope.psor_tol"):
        if vals[k] <= 0:
            raise ConfigError(k, "tolerance must be positive")
    if vals["solver.max_iter"] < 1:
        raise ConfigError("solver.max_iter", "must be at least 1")
    if vals["envelope.method"] not in ("psor", "beta-limit", "rooftop"):
        raise ConfigError("envelope.method", "expected psor, beta-limit or rooftop")
    if vals["envelope.rooftop_method"] not in ("psor", "beta-limit"):
        raise ConfigError("envelope.rooftop_method", "expected psor or beta-limit")
    if not 0 < vals["envelope.omega"] < 2:
        raise ConfigError("envelope.omega", "over-relaxation must lie in (0, 2)")
    eps = vals["envelope.eps"]
    if eps != "auto" and eps < 0:
        raise ConfigError("envelope.eps", "must be nonnegative")
    kap = vals["envelope.contact_kappa"]
    if kap != "auto" and kap <= 0:
        raise ConfigError("envelope.contact_kappa", "must be positive")
    if vals["run.threads"] < 1:
        raise ConfigError("run.threads", "must be at least 1")
    if vals["run.seed"] < 0:
        raise ConfigError("run.seed", "must be nonnegative")
    if vals["verify.collar"] < 0:
        raise ConfigError("verify.collar", "must be nonnegative")
    return ExperimentConfig(vals)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = _flatten(tomllib.load(fh))
        except FileNotFoundError as exc:
            raise ConfigError("--config", f"file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("--config", f"malformed TOML: {exc}") from exc
    raw.update(overrides or {})
    return validate(raw)


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with the value parsed as a TOML value (bare words become strings)."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, val = (s.strip() for s in text.split("=", 1))
    try:
        parsed = tomllib.loads(f"x = {val}")["x"]
    except tomllib.TOMLDecodeError:
        parsed = val
    return key, parsed
