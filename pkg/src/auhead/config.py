"""Run configuration: one YAML file with fixed sections plus CLI overrides.

Unknown keys are rejected, every knob has a documented default below, and
the canonical dump (sorted keys) is what gets hashed into checkpoints and
manifests, so identical configs always produce identical hashes.
"""

from __future__ import annotations

import copy

import yaml

from .checkpoint import config_hash
from .errors import ConfigError

# Desk-scale defaults. The full-scale settings from the source system
# (512x512 frames, 40k motion steps at lr 1e-4, 30k video steps at lr 1e-5,
# batch 2000 clips, T=1000) are documented in the README; they are not
# runnable on a desk machine.
DEFAULT_CONFIG = {
    "seed": 0,
    "partition_file": None,
    "rig": {
        "seed": 0,
        "num_clips": 24,
        "frames_per_clip": 64,
        "fps": 25.0,
        "audio_width": 8,
        "noise_std": 0.005,
        "image_size": 64,
        "train_fraction": 0.9,
    },
    "vmg": {
        "latent_width": 16,
        "hidden": 64,
        "flow_hidden": 32,
        "num_layers": 8,
        "kernel_size": 3,
        "max_dilation": 128,
        "flow_layers": 4,
        "lr": 2e-3,
        "lr_decay": "cosine",
        "steps": 2000,
        "batch_clips": 8,
        "clip_frames": 16,
        "checkpoint_every": 500,
        "loss_weights": {"mse": 5.0, "kl": 0.5, "cont": 3.0, "sync": 0.01},
    },
    "sync_expert": {
        "window": 5,
        "embed_width": 64,
        "hidden": 64,
        "margin": 0.2,
        "min_negative_shift": 5,
        "lr": 1e-3,
        "steps": 600,
        "batch_windows": 32,
    },
    "m2v": {
        "image_size": 64,
        "latent_channels": 4,
        "ae_base_channels": 16,
        "base_channels": 32,
        "schedule": {"kind": "linear", "t_steps": 100, "beta_start": 1e-4, "beta_end": 0.02},
        "autoencoder": {"lr": 2e-3, "steps": 500, "batch": 16},
        "phase1": {
            "lr": 2e-4,
            "steps": 800,
            "batch": 4,
            "cond_dropout": 0.1,
            "checkpoint_every": 200,
        },
        "phase2": {
            "lr": 2e-4,
            "steps": 400,
            "clip_frames": 16,
            "context_frames": 2,
            "cond_dropout": 0.1,
            "checkpoint_every": 200,
        },
    },
    "inference": {
        "ddim_steps": 40,
        "chunk_frames": 16,
        "context_frames": 2,
        "fps": 25.0,
        "audio_feature_width": 8,
    },
    "metrics": {
        "ssim_window": 11,
        "frechet_embed_size": 8,
        "frechet_eps": 1e-6,
        "psnr_peak": 1.0,
    },
}


def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError(f"config section {path or '<root>'} must be a mapping")
    merged = {}
    for key, default in defaults.items():
        here = f"{path}.{key}" if path else key
        if key not in given:
            merged[key] = copy.deepcopy(default)
        elif isinstance(default, dict):
            merged[key] = _merge(default, given[key], here)
        else:
            merged[key] = _check_leaf(default, given[key], here)
    unknown = set(given) - set(defaults)
    if unknown:
        where = path or "top level"
        raise ConfigError(f"unknown config key(s) at {where}: {sorted(unknown)}")
    return merged


def _check_leaf(default, value, path):
    if default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{path}: expected a path string or null, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported config value type {type(default).__name__}")


def load_config(path=None, overrides: tuple[str, ...] = ()) -> dict:
    """Load + validate a config file, then apply ``section.key=value`` overrides."""
    given = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            given = yaml.safe_load(fh) or {}
    cfg = _merge(DEFAULT_CONFIG, given)
    for item in overrides:
        cfg = apply_override(cfg, item)
    return cfg


def apply_override(cfg: dict, item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    dotted, raw = item.split("=", 1)
    keys = dotted.strip().split(".")
    value = yaml.safe_load(raw)
    patch: dict = value
    for key in reversed(keys):
        patch = {key: patch}
    merged = copy.deepcopy(cfg)
    node = merged
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"override {item!r}: no such section {key!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"override {item!r}: no such key {keys[-1]!r}")
    node[keys[-1]] = value
    return _merge(DEFAULT_CONFIG, merged)


def dump_config(cfg: dict) -> str:
    """Canonical YAML form (sorted keys); load(dump(cfg)) == cfg."""
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


def run_config_hash(cfg: dict) -> str:
    return config_hash(cfg)
