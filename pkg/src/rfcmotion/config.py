"""Run configuration: nested defaults, YAML files, presets and ``key=value`` overrides."""

from __future__ import annotations

import copy
import logging
import os
from dataclasses import asdict
from pathlib import Path

import yaml

from .errors import ConfigError
from .kinpolicy import CvaeConfig
from .ppo import PpoConfig
from .rewards import RewardConfig

log = logging.getLogger(__name__)

OUTPUT_ENV = "RFCMOTION_OUTPUT"


def _defaults():
    reward = RewardConfig().to_dict()
    ppo = asdict(PpoConfig())
    ppo["hidden"] = list(ppo["hidden"])
    return {
        "model": "biped",
        "clip": None,  # clip file, or {kind, duration} for a generated clip
        "dataset": None,  # directory of clip files
        "test_dataset": None,
        "kinematic": None,  # CVAE checkpoint for dual-policy runs
        "controller": {"mode": "rfc_implicit", "stable_pd": True, "residual_targets": False, "phase": True},
        "reward": reward,
        "ppo": ppo,
        "cvae": asdict(CvaeConfig()),
        "dual": {"segments": 5, "samples": 10, "condition": "generated", "synth_seconds": 120.0},
        "seed": 0,
        "workers": 1,
        "parallel": False,
        "checkpoint_every": 10,
        "output": None,
    }


PRESETS = {
    "paper": {},
    "desk": {
        "ppo": {"batch": 2000, "minibatch": 256, "hidden": [64, 64], "policy_lr": 1e-3, "value_lr": 1e-3,
                "epochs": 300},
        "cvae": {"z_dim": 16, "hidden": 64, "batch": 1000, "minibatch": 100, "fixed_epochs": 20,
                 "decay_epochs": 80},
    },
}


def _merge(base, over, path=""):
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, where + ".")
        else:
            base[k] = v
    return base


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in {text!r}: {exc}") from exc
    node = {}
    cur = node
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    return node


def resolve(config_path=None, overrides=(), preset=None):
    """Defaults, then preset, then the file, then overrides (each override logged)."""
    cfg = _defaults()
    doc = {}
    if config_path is not None:
        p = Path(config_path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        doc = yaml.safe_load(p.read_text()) or {}
        if not isinstance(doc, dict):
            raise ConfigError("config file must be a mapping")
    preset = doc.pop("preset", None) if preset is None else preset
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        _merge(cfg, copy.deepcopy(PRESETS[preset]))
    _merge(cfg, doc)
    for text in overrides:
        log.info("override %s", text)
        _merge(cfg, parse_override(text))
    validate(cfg)
    return cfg


def validate(cfg):
    reward_config(cfg)
    ppo_config(cfg)
    cvae_config(cfg)
    if cfg["controller"]["mode"] not in ("plain", "rfc_explicit", "rfc_implicit"):
        raise ConfigError(f"unknown controller mode {cfg['controller']['mode']!r}")
    if int(cfg["workers"]) < 1:
        raise ConfigError("workers must be >= 1")


def reward_config(cfg):
    try:
        return RewardConfig.from_dict(cfg["reward"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"reward: {exc}") from exc


def ppo_config(cfg):
    try:
        return PpoConfig(**cfg["ppo"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ppo: {exc}") from exc


def cvae_config(cfg):
    try:
        return CvaeConfig(**cfg["cvae"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cvae: {exc}") from exc


def output_root():
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def dump(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=True))
