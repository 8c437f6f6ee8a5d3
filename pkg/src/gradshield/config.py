"""Declarative experiment configuration and its JSON form."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .attack import AttackConfig
from .watermark import VictimTrainConfig

CONFIG_FORMAT = "gradshield-config-1"
RESULTS_FORMAT = "gradshield-results-1"

TASKS = ("derain", "style")
WATERMARK_PATTERNS = ("logo", "checker")


class ConfigError(ValueError):
    """Invalid configuration; message starts with the offending field path."""


@dataclass
class DGSSettings:
    enabled: bool = True
    lambda_min: float = 1e-5
    lambda_max: float = 1e-4
    nc_threshold: float = 0.96
    watermark_pattern: str = "logo"


@dataclass
class ExperimentConfig:
    seed: int = 7
    task: str = "derain"
    image_size: int = 32
    dataset_count: int = 256
    victim: VictimTrainConfig = field(default_factory=VictimTrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    dgs: DGSSettings = field(default_factory=DGSSettings)

    def validate(self) -> "ExperimentConfig":
        def fail(path, msg):
            raise ConfigError(f"{path}: {msg}")

        if not (0 <= self.seed < 2**64):
            fail("seed", f"{self.seed} outside u64 range")
        if self.task not in TASKS:
            fail("task", f"{self.task!r} not one of {TASKS}")
        if self.image_size < 16:
            fail("image_size", f"{self.image_size} < 16")
        if self.dataset_count < 3:
            fail("dataset_count", f"{self.dataset_count} < 3")
        try:
            self.victim.validate()
        except ValueError as err:
            fail("victim", str(err))
        try:
            self.attack.validate()
        except ValueError as err:
            fail("attack", str(err))
        d = self.dgs
        if not (0.0 < d.lambda_min <= d.lambda_max):
            fail("dgs.lambda_min", f"need 0 < min <= max, got [{d.lambda_min}, {d.lambda_max}]")
        if not (0.0 < d.nc_threshold < 1.0):
            fail("dgs.nc_threshold", f"{d.nc_threshold} outside (0,1)")
        if d.watermark_pattern not in WATERMARK_PATTERNS:
            fail("dgs.watermark_pattern", f"{d.watermark_pattern!r} not one of {WATERMARK_PATTERNS}")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["format_version"] = CONFIG_FORMAT
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _take(data: dict, path: str, cls, fields: dict):
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    for name, typ in fields.items():
        if name not in data:
            continue
        value = data[name]
        if typ is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, typ) or isinstance(value, bool) and typ is not bool:
            raise ConfigError(f"{path}.{name}: expected {typ.__name__}, got {value!r}")
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(": top level must be an object")
    data = dict(data)
    version = data.pop("format_version", CONFIG_FORMAT)
    if version != CONFIG_FORMAT:
        raise ConfigError(f"format_version: {version!r} unsupported")
    scalar_fields = {"seed": int, "task": str, "image_size": int, "dataset_count": int}
    nested = {
        "victim": (VictimTrainConfig, {
            "alpha1": float, "alpha2": float, "steps": int,
            "batch": int, "lr": float, "seed": int,
        }),
        "attack": (AttackConfig, {
            "loss_variant": str, "beta1": float, "beta2": float,
            "countermeasure": str, "steps": int, "batch": int,
            "lr": float, "seed": int,
        }),
        "dgs": (DGSSettings, {
            "enabled": bool, "lambda_min": float, "lambda_max": float,
            "nc_threshold": float, "watermark_pattern": str,
        }),
    }
    unknown = set(data) - set(scalar_fields) - set(nested)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    for name, typ in scalar_fields.items():
        if name in data:
            value = data[name]
            if not isinstance(value, typ) or isinstance(value, bool):
                raise ConfigError(f"{name}: expected {typ.__name__}, got {value!r}")
            kwargs[name] = value
    seed = kwargs.get("seed", 7)
    for name, (cls, fields) in nested.items():
        sub = data.get(name, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"{name}: expected object")
        sub = dict(sub)
        if name in ("victim", "attack"):
            sub.setdefault("seed", seed)
        kwargs[name] = _take(sub, name, cls, fields)
    cfg = ExperimentConfig(**kwargs)
    return cfg.validate()


def config_from_json(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f": invalid JSON ({err})") from err
    return config_from_dict(data)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_json(fh.read())


def default_config() -> ExperimentConfig:
    """The shipped defaults: derain at 32x32, DGS with small eigenvalues."""
    cfg = ExperimentConfig()
    cfg.victim.seed = cfg.seed
    cfg.attack.seed = cfg.seed
    return cfg.validate()
