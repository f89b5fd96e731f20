"""Experiment configuration: flat dotted keys, schema validation and presets.

A config file is TOML. Keys may be written flat (``gsa.n = 65536``) or as
tables (``[gsa]`` then ``n = 65536``); both flatten to the same dotted key.
Values resolve as CLI overrides > file > preset > defaults.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diffusion import ModelParams, TimeGrid
from ..engine import Method
from ..instruments import ConfigurationError, InstrumentSpec, Kind

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALL_KINDS = [k.value for k in Kind]
ALL_METHODS = [m.value for m in Method]

# key -> (type, default); list types hold their element type
SCHEMA: dict[str, tuple[type, object]] = {
    "model.spot": (float, 100.0),
    "model.vol": (float, 0.3),
    "model.rate": (float, 0.0),
    "model.maturity": (float, 1.0),
    "model.steps": (int, 32),
    "instrument.kinds": (list, ALL_KINDS),
    "instrument.strike": (float, 100.0),
    "instrument.lower_barrier": (float, 0.5),
    "instrument.upper_barrier": (float, 1.5),
    "instrument.barrier_style": (str, "relative"),
    "instrument.cap": (float, 0.08),
    "instrument.floor": (float, 0.16),
    "run.methods": (list, ALL_METHODS),
    "run.functions": (list, ["price", "delta", "gamma", "vega"]),
    "run.seed": (int, 0),
    "run.threads": (int, 1),
    "run.out": (str, "results"),
    "price.n": (int, 2 ** 17),
    "greeks.eps.european": (float, 1e-3),
    "greeks.eps.asian": (float, 5e-3),
    "greeks.eps.dko": (float, 5e-3),
    "greeks.eps.cliquet": (float, 5e-3),
    "convergence.log2_n_min": (int, 9),
    "convergence.log2_n_max": (int, 18),
    "convergence.runs": (int, 30),
    "convergence.bias_fraction": (float, 0.1),
    "gsa.n": (int, 2 ** 17),
    "gsa.eps": (list, [1e-4, 1e-3, 1e-2]),
    "gsa.schemes": (list, ["SD", "BBD"]),
    "gsa.sampler": (str, "QMC"),
    "gsa.truncation": (float, 0.01),
    "gsa.type_a_truncation": (float, 0.05),
    "gsa.type_a_fraction": (float, 0.25),
    "gsa.type_b_ratio": (float, 0.15),
    "gsa.type_b_trim": (float, 0.1),
    "gsa.type_b_sum": (float, 0.5),
    "speedup.targets": (list, [0.01, 0.001]),
    "stability.n_min": (int, 100),
    "stability.n_max": (int, 10000),
    "stability.points": (int, 100),
    "stability.windows": (int, 10),
    "reference.policy": (str, "auto"),
    "reference.n": (int, 2 ** 23),
    "reference.cache": (str, "reference_cache.json"),
}

PRESETS = {
    "default": {},
    "d32": {"model.steps": 32},
    "d252": {"model.steps": 252},
}


def _flatten(data: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in data.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, full + "."))
        else:
            flat[full] = value
    return flat


def _coerce(key: str, value):
    kind, default = SCHEMA[key]
    try:
        if kind is list:
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            if not isinstance(value, (list, tuple)):
                raise TypeError
            elem = type(default[0]) if default else str
            return [elem(v) for v in value]
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            if isinstance(value, bool):
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"config key {key!r}: cannot read {value!r} as {kind.__name__}") from None


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` from the command line; the value is parsed as a TOML scalar or array."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None,
             preset: str | None = None) -> "ExperimentConfig":
        file_values = {}
        if path is not None:
            try:
                with open(path, "rb") as fh:
                    file_values = _flatten(tomllib.load(fh))
            except OSError as exc:
                raise ConfigurationError(f"cannot read config {path}: {exc}") from None
            except tomllib.TOMLDecodeError as exc:
                raise ConfigurationError(f"invalid TOML in {path}: {exc}") from None
        overrides = dict(overrides or {})
        cli_preset, file_preset = overrides.pop("preset", None), file_values.pop("preset", None)
        preset = cli_preset or file_preset or preset or "default"
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged = {key: default for key, (_, default) in SCHEMA.items()}
        for layer in (PRESETS[preset], file_values, overrides):
            for key, value in layer.items():
                if key not in SCHEMA:
                    raise ConfigurationError(f"unknown config key {key!r}")
                merged[key] = _coerce(key, value)
        cfg = cls(merged)
        cfg.validate()
        return cfg

    def __getitem__(self, key: str):
        return self.values[key]

    def replace(self, **updates) -> "ExperimentConfig":
        values = dict(self.values)
        for key, value in updates.items():
            key = key.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigurationError(f"unknown config key {key!r}")
            values[key] = _coerce(key, value)
        cfg = ExperimentConfig(values)
        cfg.validate()
        return cfg

    def validate(self):
        v = self.values
        try:
            self.params
            self.grid
            for kind in self.kinds:
                self.spec(kind).check_spot(v["model.spot"])
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        for m in v["run.methods"]:
            try:
                Method.parse(m)
            except ValueError:
                raise ConfigurationError(f"unknown method {m!r}") from None
        bad = set(v["run.functions"]) - {"price", "delta", "gamma", "vega"}
        if bad:
            raise ConfigurationError(f"unknown functions {sorted(bad)}")
        if set(v["gsa.schemes"]) - {"SD", "BBD"}:
            raise ConfigurationError("gsa.schemes accepts SD and BBD")
        if v["gsa.sampler"] not in ("QMC", "MC"):
            raise ConfigurationError("gsa.sampler must be QMC or MC")
        if v["reference.policy"] not in ("auto", "analytic", "cached"):
            raise ConfigurationError("reference.policy must be auto, analytic or cached")
        if not 1 <= v["convergence.log2_n_min"] < v["convergence.log2_n_max"] <= 40:
            raise ConfigurationError("need 1 <= convergence.log2_n_min < convergence.log2_n_max <= 40")
        if v["convergence.log2_n_max"] - v["convergence.log2_n_min"] < 3:
            raise ConfigurationError("convergence schedule needs at least 4 sample sizes")
        if v["convergence.runs"] < 2:
            raise ConfigurationError("convergence.runs must be at least 2")
        if v["run.threads"] < 1:
            raise ConfigurationError("run.threads must be positive")
        if not 0 <= v["run.seed"] < 2 ** 64:
            raise ConfigurationError("run.seed must be an unsigned 64-bit integer")
        for key in ("gsa.n", "price.n", "reference.n"):
            if v[key] < 2:
                raise ConfigurationError(f"{key} must be at least 2")
        if v["gsa.n"] < 2 ** 10:
            raise ConfigurationError("gsa.n must be at least 1024")
        if any(not e > 0 for e in v["gsa.eps"]) or any(
                not v[f"greeks.eps.{k}"] > 0 for k in ALL_KINDS):
            raise ConfigurationError("shift parameters must be positive")
        if any(not 0 < a < 1 for a in v["speedup.targets"]):
            raise ConfigurationError("speed-up targets are relative accuracies in (0, 1)")
        if not 0 < v["stability.n_min"] < v["stability.n_max"]:
            raise ConfigurationError("need 0 < stability.n_min < stability.n_max")
        if v["stability.points"] < 10 * v["stability.windows"]:
            raise ConfigurationError("stability needs at least 10 points per window")

    @property
    def kinds(self) -> list[Kind]:
        try:
            return [Kind(k) for k in self.values["instrument.kinds"]]
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None

    @property
    def methods(self) -> list[Method]:
        return [Method.parse(m) for m in self.values["run.methods"]]

    @property
    def params(self) -> ModelParams:
        v = self.values
        return ModelParams(v["model.spot"], v["model.rate"], v["model.vol"])

    @property
    def grid(self) -> TimeGrid:
        v = self.values
        if v["model.steps"] < 1:
            raise ConfigurationError("model.steps must be positive")
        return TimeGrid.uniform(v["model.maturity"], v["model.steps"])

    def spec(self, kind: Kind | str) -> InstrumentSpec:
        v = self.values
        kind = Kind(kind)
        T = v["model.maturity"]
        if kind is Kind.DOUBLE_KO:
            return InstrumentSpec(kind, v["instrument.strike"], T, v["instrument.lower_barrier"],
                                  v["instrument.upper_barrier"], barrier_style=v["instrument.barrier_style"])
        if kind is Kind.CLIQUET:
            return InstrumentSpec(kind, None, T, cap=v["instrument.cap"], floor=v["instrument.floor"])
        return InstrumentSpec(kind, v["instrument.strike"], T)

    def eps(self, kind: Kind | str) -> float:
        return self.values[f"greeks.eps.{Kind(kind).value}"]

    @property
    def n_schedule(self) -> list[int]:
        v = self.values
        return [2 ** p for p in range(v["convergence.log2_n_min"], v["convergence.log2_n_max"] + 1)]

    @property
    def stability_n(self) -> list[int]:
        v = self.values
        n = np.linspace(v["stability.n_min"], v["stability.n_max"], v["stability.points"])
        # even sizes so antithetic pairs fill every run
        return [int(2 * round(x / 2)) for x in n]

    def canonical(self) -> str:
        """Deterministic JSON text used for hashing; output location and thread count excluded."""
        body = {k: v for k, v in sorted(self.values.items()) if k not in ("run.out", "run.threads")}
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()
