"""Experiment configuration: nested TOML-style sections with dotted-key overrides."""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .hsic import KernelConfig
from .losses import BASE_METHODS, DualHsicConfig
from .network import MlpSpec


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "base": "er",
    "mode": "continual",
    "model": {"hidden_dims": [64, 64], "activation": "relu"},
    "train": {
        "epochs": 5,
        "batch_size": 32,
        "lr": 0.05,
        "momentum": 0.0,
        "derpp_alpha": 0.1,
        "derpp_beta": 0.5,
    },
    "buffer": {"capacity": 50, "insert_first_epoch_only": True},
    "dualhsic": {
        "lambda_x": 0.001,
        "lambda_y": 0.05,
        "lambda_ha": -0.75,
        "hbr_layers": "all",
        "hbr_target": "buffer_only",
        "sigma_x": 5.0,
        "sigma_y": 5.0,
        "sigma_z": 5.0,
        "reset_head_per_task": False,
    },
    "data": {
        "kind": "blobs",
        "num_tasks": 5,
        "classes_per_task": 2,
        "samples_per_class": 250,
        "dim": 20,
        "cluster_spread": 1.0,
        "center_scale": 1.0,
        "path": "",
        "seed": -1,
    },
    "seeds": [],
}

MODES = ("continual", "joint")
DATA_KINDS = ("blobs", "idx", "csv")


def _merge(base: dict, extra: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted!r} is a section, not a value")
            out[key] = _merge(base[key], value, dotted + ".")
        else:
            out[key] = value
    return out


def parse_value(text: str):
    """Parse an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def set_dotted(tree: dict, key: str, value) -> dict:
    out = copy.deepcopy(tree)
    node = out
    parts = key.split(".")
    ref = DEFAULTS
    for part in parts[:-1]:
        if part not in ref or not isinstance(ref[part], dict):
            raise ConfigError(f"unknown config key {key!r}")
        ref = ref[part]
        node = node.setdefault(part, {})
    if parts[-1] not in ref or isinstance(ref[parts[-1]], dict):
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value
    return out


def get_dotted(tree: dict, key: str):
    node = tree
    for part in key.split("."):
        node = node[part]
    return node


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated view over the nested config dict kept in :attr:`raw`."""

    raw: dict

    @classmethod
    def from_dict(cls, tree: dict | None = None) -> "ExperimentConfig":
        raw = _merge(DEFAULTS, tree or {})
        cfg = cls(raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides: list[str] | None = None) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            tree = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        tree = _merge(DEFAULTS, tree)
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            tree = set_dotted(tree, key.strip(), parse_value(value.strip()))
        return cls.from_dict(tree)

    def with_value(self, key: str, value) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(set_dotted(self.raw, key, value))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def validate(self):
        r = self.raw
        try:
            if r["base"] not in BASE_METHODS:
                raise ConfigError(f"base must be one of {BASE_METHODS}")
            if r["mode"] not in MODES:
                raise ConfigError(f"mode must be one of {MODES}")
            if r["data"]["kind"] not in DATA_KINDS:
                raise ConfigError(f"data.kind must be one of {DATA_KINDS}")
            t = r["train"]
            if int(t["epochs"]) < 1 or int(t["batch_size"]) < 1:
                raise ConfigError("train.epochs and train.batch_size must be >= 1")
            if not float(t["lr"]) > 0:
                raise ConfigError("train.lr must be positive")
            if not 0.0 <= float(t["momentum"]) < 1.0:
                raise ConfigError("train.momentum must lie in [0, 1)")
            if int(r["buffer"]["capacity"]) < 0:
                raise ConfigError("buffer.capacity must be >= 0")
            if int(r["data"]["num_tasks"]) < 1:
                raise ConfigError("data.num_tasks must be >= 1")
            self.dualhsic
            MlpSpec(1, tuple(self.raw["model"]["hidden_dims"]), 1, self.raw["model"]["activation"])
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    # typed accessors -----------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.raw["seeds"]] or [self.seed]

    @property
    def base(self) -> str:
        return self.raw["base"]

    @property
    def mode(self) -> str:
        return self.raw["mode"]

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return tuple(int(h) for h in self.raw["model"]["hidden_dims"])

    @property
    def activation(self) -> str:
        return self.raw["model"]["activation"]

    @property
    def train(self) -> dict:
        return self.raw["train"]

    @property
    def buffer_capacity(self) -> int:
        return int(self.raw["buffer"]["capacity"])

    @property
    def insert_first_epoch_only(self) -> bool:
        return bool(self.raw["buffer"]["insert_first_epoch_only"])

    @property
    def reset_head_per_task(self) -> bool:
        return bool(self.raw["dualhsic"]["reset_head_per_task"])

    @property
    def data(self) -> dict:
        return self.raw["data"]

    @property
    def dualhsic(self) -> DualHsicConfig:
        d = self.raw["dualhsic"]
        layers = d["hbr_layers"]
        if layers == "all":
            layers = None
        elif isinstance(layers, int):
            # an integer k selects the first k hidden layers
            layers = tuple(range(1, layers + 1))
        else:
            layers = tuple(int(j) for j in layers)
        return DualHsicConfig(
            lambda_x=float(d["lambda_x"]),
            lambda_y=float(d["lambda_y"]),
            lambda_ha=float(d["lambda_ha"]),
            hbr_layers=layers,
            hbr_target=d["hbr_target"],
            kernel_x=KernelConfig(float(d["sigma_x"])),
            kernel_y=KernelConfig(float(d["sigma_y"])),
            kernel_z=KernelConfig(float(d["sigma_z"])),
        )
