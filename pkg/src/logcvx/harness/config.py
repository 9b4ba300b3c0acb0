"""Flat dotted key=value configuration with typed keys and CLI overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigurationError
from ..evolution import COUPLINGS
from ..geometry import PRESETS


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _strs(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


# key -> (parser, default); None defaults defer to the experiment's own choice
SCHEMA = {
    "experiment": (str, "identity-suite"),
    "seed": (int, 0),
    "grid.dim": (int, None),
    "grid.n": (int, None),
    "grid.length": (float, None),
    "fiber.m": (int, None),
    "preset": (str, None),
    "system.order": (int, None),
    "system.C0": (float, None),
    "system.coupling": (str, None),
    "time.omega": (float, None),
    "time.dt": (float, None),
    "time.samples": (int, 1),
    "weight.Bw": (float, 1.0),
    "weight.L1": (float, None),
    "weight.V0": (float, None),
    "cutoff.R_list": (_floats, [4.0, 8.0, 16.0]),
    "sweep.epsilon_list": (_floats, None),
    "tolerances.identity": (float, None),
    "tolerances.sandwich": (float, None),
    "output.dir": (str, "runs"),
    "output.formats": (_strs, ["csv", "json", "svg"]),
}
FORMATS = ("csv", "json", "svg")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def set(self, key: str, raw) -> None:
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown config key {key!r}")
        parser = SCHEMA[key][0]
        if isinstance(raw, str):
            try:
                value = parser(raw.strip())
            except ValueError as exc:
                raise ConfigurationError(f"bad value for config key {key!r}: {raw!r} ({exc})") from None
        else:
            value = raw
        self.values[key] = value

    @property
    def Bw(self) -> float:
        L1, V0 = self.values["weight.L1"], self.values["weight.V0"]
        if L1 is not None and V0 is not None:
            return float(max(L1, V0))
        return float(self.values["weight.Bw"])

    def as_dict(self) -> dict:
        return dict(self.values)


def parse_lines(lines, cfg: ExperimentConfig | None = None, source: str = "<config>"):
    cfg = cfg or ExperimentConfig()
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        try:
            cfg.set(key, raw)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{source}:{lineno}: {exc}") from None
    return cfg


def load_config(path: str | os.PathLike | None = None, overrides=()) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file {str(p)!r} not found")
        parse_lines(p.read_text().splitlines(), cfg, str(p))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        cfg.set(key.strip(), raw)
    return cfg


def validate(cfg: ExperimentConfig, registry) -> ExperimentConfig:
    """Check names, ranges and the output directory; returns the same config."""
    v = cfg.values
    name = v["experiment"]
    if name not in registry:
        raise ConfigurationError(
            f"config key 'experiment': unknown experiment {name!r}; valid: {', '.join(registry)}"
        )
    if v["preset"] is not None and v["preset"] not in PRESETS:
        raise ConfigurationError(
            f"config key 'preset': unknown preset {v['preset']!r}; valid: {', '.join(PRESETS)}"
        )
    if v["system.coupling"] is not None and v["system.coupling"] not in COUPLINGS:
        raise ConfigurationError(f"config key 'system.coupling': must be one of {COUPLINGS}")
    checks = {
        "grid.dim": lambda x: x in (1, 2),
        "grid.n": lambda x: x >= 8 and x % 2 == 0,
        "grid.length": lambda x: x > 0,
        "fiber.m": lambda x: x >= 1,
        "system.order": lambda x: x in (2, 4, 6, 8),
        "system.C0": lambda x: 0 <= x,
        "time.omega": lambda x: x > 0,
        "time.dt": lambda x: x > 0,
        "time.samples": lambda x: x >= 1,
        "weight.Bw": lambda x: x > 0,
        "cutoff.R_list": lambda x: len(x) >= 2 and all(r >= 1 for r in x),
        "sweep.epsilon_list": lambda x: len(x) >= 1 and all(e >= 0 for e in x),
        "tolerances.identity": lambda x: x > 0,
        "tolerances.sandwich": lambda x: x > 0,
        "output.formats": lambda x: all(f in FORMATS for f in x),
    }
    for key, ok in checks.items():
        if v[key] is not None and not ok(v[key]):
            raise ConfigurationError(f"config key {key!r}: invalid value {v[key]!r}")
    out = Path(v["output.dir"])
    probe = out if out.exists() else next((p for p in out.parents if p.exists()), Path("."))
    if not os.access(probe, os.W_OK):
        raise ConfigurationError(f"config key 'output.dir': {str(out)!r} is not writable")
    registry[name].validate(cfg)
    return cfg
