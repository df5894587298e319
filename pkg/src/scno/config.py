"""Run configuration: YAML files merged over profile defaults.

Unknown keys are rejected at every nesting level.  The resolved configuration
is written next to every artifact it produced (``config.resolved.yaml``).
"""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import yaml

from .pde import GridSpec, PdeFamily
from .trainer import STAGES, TrainConfig, stage_config

PROFILES = ("full", "desk")
RESOLVED_NAME = "config.resolved.yaml"


class ConfigError(ValueError):
    pass


def _stage_defaults(profile: str) -> dict:
    out = {}
    for stage in STAGES:
        d = stage_config(stage, profile).to_dict()
        d.pop("seed")  # runs take their seed from the top-level list
        out[stage] = d
    return out


def defaults(profile: str = "desk") -> dict:
    """Every recognised key with its default value for ``profile``."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; valid: {', '.join(PROFILES)}")
    full = profile == "full"
    return {
        "profile": profile,
        "seeds": [0, 1, 2] if full else [0],
        "strict": False,
        "jobs": 1,
        "paths": {"data": "data", "checkpoints": "checkpoints", "reports": "reports"},
        "data": {
            "n_train": 1500 if full else 400,
            "n_test": 400 if full else 100,
            "seed": 0,
            "m": 256,
            "length": 1.0,
            "dt": 0.005,
            "steps": 100,
        },
        "coefficients": {"c": 1.0, "nu": 0.01, "k_r": 1.0, "D": 1.0, "sigma_a": 0.1,
                         "nu_sigma_f": 0.12},
        "block": {
            "steps": {"conv": 30, "diff": 20, "react": 20, "mono": 20},
            "hidden": 256,
            "latent": 128,
            "beta_init": 0.85,
            "threshold": 1.0,
            "slope": 25.0,
            "skip_init": 0.5,
            "trunk_scale": 30.0,
            "trunk_hidden": [256, 256, 256],
            "branch_layers": 3,
            "affine_augment": True,
        },
        "aggregator": {"context_hidden": 256, "context_dim": 64, "hidden": 256, "layers": 3},
        "correction": {"context_hidden": 160, "context_dim": 64, "hidden": 128, "layers": 3,
                       "harmonics": 8, "alpha_init": 0.1},
        "training": _stage_defaults(profile),
    }


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}; valid here: {', '.join(base)}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a mapping")
            out[key] = _merge(base[key], value, path)
        else:
            out[key] = value
    return out


def resolve(overrides: dict | None = None, profile: str | None = None) -> dict:
    overrides = dict(overrides or {})
    profile = profile or overrides.get("profile", "desk")
    overrides.pop("profile", None)
    cfg = _merge(defaults(profile), overrides)
    # validate by constructing the typed objects once
    for stage in STAGES:
        try:
            TrainConfig(**cfg["training"][stage])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"training.{stage}: {exc}") from None
    grid(cfg)
    family(cfg, "convection")
    if not cfg["seeds"]:
        raise ConfigError("seeds must list at least one seed")
    return cfg


BUNDLED = ("desk.yaml", "full.yaml")


def load(path=None, profile: str | None = None) -> dict:
    """Read a YAML file (or nothing) and resolve it against the profile defaults.

    ``desk.yaml`` and ``full.yaml`` name the shipped configs unless a file of
    that name exists.
    """
    overrides = {}
    if path is not None:
        try:
            if str(path) in BUNDLED and not Path(path).exists():
                text = bundled(str(path))
            else:
                text = Path(path).read_text()
            overrides = yaml.safe_load(text) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        if not isinstance(overrides, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return resolve(overrides, profile)


def bundled(name: str) -> str:
    """Text of a config shipped with the package (``desk.yaml``, ``full.yaml``)."""
    return resources.files("scno.configs").joinpath(name).read_text()


def grid(cfg: dict) -> GridSpec:
    d = cfg["data"]
    try:
        return GridSpec(m=d["m"], length=d["length"], dt=d["dt"], steps=d["steps"])
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from None


def family(cfg: dict, tag: str) -> PdeFamily:
    try:
        return PdeFamily(tag, **cfg["coefficients"])
    except TypeError as exc:
        raise ConfigError(f"coefficients: {exc}") from None


def train_config(cfg: dict, stage: str, seed: int) -> TrainConfig:
    return TrainConfig(**{**cfg["training"][stage], "seed": seed})


def arch_overrides(cfg: dict, op: str) -> dict:
    b = cfg["block"]
    return {"m": cfg["data"]["m"], "steps": b["steps"][op], "hidden": b["hidden"], "latent": b["latent"],
            "beta_init": b["beta_init"], "threshold": b["threshold"], "slope": b["slope"],
            "skip_init": b["skip_init"], "trunk_scale": b["trunk_scale"],
            "trunk_hidden": tuple(b["trunk_hidden"]), "branch_layers": b["branch_layers"]}


def block_train_kwargs(cfg: dict, op: str) -> dict:
    """Keyword arguments for ``train_block``: architecture plus augmentation."""
    augment = cfg["block"]["affine_augment"]
    return {**arch_overrides(cfg, op), "augment": None if augment else False}


def ann_overrides(cfg: dict) -> dict:
    b = cfg["block"]
    return {"m": cfg["data"]["m"], "hidden": b["hidden"], "latent": b["latent"],
            "trunk_scale": b["trunk_scale"],
            "trunk_hidden": tuple(b["trunk_hidden"]), "branch_layers": b["branch_layers"]}


def fingerprint(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:12]


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)


def echo(cfg: dict, directory) -> Path:
    """Write the resolved config into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_NAME
    path.write_text(dump(cfg))
    return path
