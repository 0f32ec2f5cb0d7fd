"""Flat dotted-key JSON configs for the mem command line.

A config file is a single JSON object whose keys are dotted paths
("train.lr": 1e-3). Flat keys diff cleanly and need no schema engine;
unknown keys are rejected so typos fail fast instead of silently
falling back to defaults.
"""

from __future__ import annotations

import json

from .augment import AugmentConfig
from .data import PreprocessConfig
from .downstream import FinetuneConfig, ProbeConfig
from .dvae import DvaeConfig, DvaeTrainConfig
from .histogram import N_MAX_DEFAULT
from .vit import VIT_BASE, PretrainConfig, VitConfig


class ConfigError(ValueError):
    pass


_SCALARS = (bool, int, float, str, type(None))

# preprocessing + augmentation keys shared by every training stage
_DATA_KEYS = {
    "data.path": None,
    "data.layout": "c2",
    "data.n_max": N_MAX_DEFAULT,
    "data.hot_pixel_k": 10.0,
    "data.target_size": None,
    "data.use_randaugment": True,
    "augment.p_polarity_flip": 0.5,
    "augment.p_hflip": 0.5,
    "augment.jitter_range": 15,
    "augment.randaugment_ops": 2,
    "augment.randaugment_magnitude": 20.0,
}

_DVAE_MODEL_KEYS = {
    "model.preset": None,
    "dvae.vocab_size": 128,
    "dvae.latent_dim": 32,
    "dvae.patch": 16,
    "dvae.hidden": 256,
}

_VIT_MODEL_KEYS = {
    "model.preset": None,
    "model.layers": 4,
    "model.dim": 128,
    "model.heads": 4,
    "model.mlp_dim": 256,
}

DEFAULTS = {
    "gen-data": {
        "stage": "gen-data",
        "seed": 0,
        "out": None,
        "data.per_class": 128,
        "data.width": 64,
        "data.height": 64,
        "data.frames": 12,
        "data.num_classes": 4,
        "data.train_frac": 0.8,
        "data.seg_per_class": 0,
    },
    "train-dvae": {
        "stage": "train-dvae",
        "seed": 0,
        "out": None,
        **_DATA_KEYS,
        **_DVAE_MODEL_KEYS,
        "train.steps": 600,
        "train.batch_size": 16,
        "train.lr": 1e-3,
        "train.beta1": 0.9,
        "train.beta2": 0.999,
        "train.weight_decay": 0.0,
        "train.clip_norm": 1e-2,
        "train.kl_weight": 1e-10,
        "train.tau_start": 1.0,
        "train.tau_end": 0.0625,
        "train.anneal_frac": 0.6,
        "train.hard_frac": 0.1,
        "train.lr_decay": 0.99,
        "train.stop_step": None,
    },
    "pretrain": {
        "stage": "pretrain",
        "seed": 0,
        "out": None,
        "dvae.checkpoint": None,
        **_DATA_KEYS,
        **_VIT_MODEL_KEYS,
        "train.steps": 800,
        "train.batch_size": 16,
        "train.lr": 1e-3,
        "train.beta1": 0.9,
        "train.beta2": 0.95,
        "train.weight_decay": 0.05,
        "train.warmup_frac": 0.1,
        "train.min_lr": 1e-5,
        "train.clip_norm": 30.0,
        "train.mask_ratio": 0.5,
        "train.objective": "mem",
        "train.stop_step": None,
    },
    "finetune": {
        "stage": "finetune",
        "seed": 0,
        "out": None,
        "model.init": "checkpoint",
        "model.checkpoint": None,
        "model.patch": 16,
        **_DATA_KEYS,
        **_VIT_MODEL_KEYS,
        "data.fraction": 1.0,
        "data.split_seed": 0,
        "train.steps": 300,
        "train.batch_size": 16,
        "train.lr": 1e-3,
        "train.beta1": 0.9,
        "train.beta2": 0.999,
        "train.weight_decay": 0.05,
        "train.layer_decay": 0.65,
        "train.warmup_frac": 0.1,
        "train.min_lr": 1e-6,
        "train.clip_norm": None,
        "train.stop_step": None,
    },
    "probe": {
        "stage": "probe",
        "seed": 0,
        "out": None,
        "model.checkpoint": None,
        **_DATA_KEYS,
        "probe.steps": 400,
        "probe.batch_size": 32,
        "probe.lr": 1e-2,
        "probe.weight_decay": 0.0,
    },
    "eval": {
        "stage": "eval",
        "seed": 0,
        "out": None,
        "model.checkpoint": None,
        **_DATA_KEYS,
        "eval.split": "test",
    },
    "render": {
        "stage": "render",
        "out": None,
        "input": None,
        "data.layout": "c2",
        "data.n_max": N_MAX_DEFAULT,
        "data.hot_pixel_k": 10.0,
    },
    "repro-fewlabel": {
        "stage": "repro-fewlabel",
        "seed": 0,
        "out": None,
        "data.per_class": 128,
        "data.width": 64,
        "data.height": 64,
        "data.frames": 12,
        "data.num_classes": 4,
        "data.train_frac": 0.8,
        **{k: v for k, v in _DATA_KEYS.items() if k != "data.path"},
        **_DVAE_MODEL_KEYS,
        **_VIT_MODEL_KEYS,
        "fractions": [1.0, 0.5, 0.2, 0.1],
        "dvae_train.steps": 600,
        "dvae_train.batch_size": 16,
        "dvae_train.lr": 1e-3,
        "pretrain.steps": 800,
        "pretrain.batch_size": 16,
        "pretrain.lr": 1e-3,
        "pretrain.mask_ratio": 0.5,
        "finetune.steps": 300,
        "finetune.batch_size": 16,
        "finetune.lr": 1e-3,
        "finetune.layer_decay": 0.65,
    },
}

# full-scale settings; desk values are the stage defaults themselves
_REFERENCE_PRESET = {
    "data.target_size": [224, 224],
    "dvae.vocab_size": 8092,
    "dvae.latent_dim": 32,
    "dvae.patch": 16,
    "dvae.hidden": 256,
    "model.layers": VIT_BASE["layers"],
    "model.dim": VIT_BASE["dim"],
    "model.heads": VIT_BASE["heads"],
    "model.mlp_dim": VIT_BASE["mlp_dim"],
    "train.lr": 1.5e-4,
}


def load_config(path) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    for key, value in raw.items():
        if isinstance(value, list):
            if not all(isinstance(v, _SCALARS) for v in value):
                raise ConfigError(f"{path}: key {key!r} has a nested list value")
        elif not isinstance(value, _SCALARS):
            raise ConfigError(f"{path}: key {key!r} must be a scalar or list, got {type(value).__name__}")
    return raw


def effective_config(stage: str, file_cfg: dict, overrides: dict) -> dict:
    """defaults <- preset <- file <- flag overrides, with unknown keys
    and stage mismatches rejected."""
    defaults = DEFAULTS[stage]
    cfg = dict(defaults)
    declared = file_cfg.get("stage")
    if declared is not None and declared != stage:
        raise ConfigError(f"config declares stage {declared!r} but was passed to {stage!r}")
    preset = file_cfg.get("model.preset", cfg.get("model.preset"))
    if preset not in (None, "desk", "reference"):
        raise ConfigError(f"model.preset must be 'desk' or 'reference', got {preset!r}")
    if preset == "reference":
        cfg.update({k: v for k, v in _REFERENCE_PRESET.items() if k in defaults})
    for source in (file_cfg, overrides):
        for key, value in source.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r} for stage {stage!r}")
            cfg[key] = value
    _validate(stage, cfg)
    return cfg


def _require(cfg: dict, key: str):
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"config key {key!r} is required")
    return cfg[key]


def _validate(stage: str, cfg: dict) -> None:
    _require(cfg, "out")
    if stage == "render":
        _require(cfg, "input")
    if stage in ("train-dvae", "pretrain", "finetune", "probe", "eval"):
        _require(cfg, "data.path")
    if stage == "pretrain":
        _require(cfg, "dvae.checkpoint")
    if stage == "probe" or stage == "eval":
        _require(cfg, "model.checkpoint")
    if stage == "finetune" and cfg["model.init"] not in ("checkpoint", "scratch"):
        raise ConfigError("model.init must be 'checkpoint' or 'scratch'")
    if stage == "finetune" and cfg["model.init"] == "checkpoint":
        _require(cfg, "model.checkpoint")
    for key, value in cfg.items():
        if key.endswith((".steps", ".batch_size", ".per_class", ".width", ".height",
                         ".frames", ".num_classes")) and value is not None:
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{key} must be a positive integer, got {value!r}")
        if key.endswith((".lr", ".weight_decay", ".kl_weight")) and value is not None:
            if not isinstance(value, (int, float)) or value < 0:
                raise ConfigError(f"{key} must be a nonnegative number, got {value!r}")
    size = cfg.get("data.target_size")
    if size is not None and (len(size) != 2 or any(not isinstance(v, int) or v <= 0 for v in size)):
        raise ConfigError(f"data.target_size must be [height, width], got {size!r}")
    objective = cfg.get("train.objective")
    if objective is not None and objective not in ("mem", "emae-only-mask", "emae-entire"):
        raise ConfigError(f"train.objective must be mem, emae-only-mask, or emae-entire, got {objective!r}")
    stop = cfg.get("train.stop_step")
    if stop is not None and (not isinstance(stop, int) or not 0 < stop <= cfg["train.steps"]):
        raise ConfigError(f"train.stop_step must lie in [1, train.steps], got {stop!r}")
    fractions = cfg.get("fractions")
    if fractions is not None:
        if not fractions or any(not isinstance(f, (int, float)) or not 0 < f <= 1 for f in fractions):
            raise ConfigError("fractions must be numbers in (0, 1]")


def preprocess_from(cfg: dict) -> PreprocessConfig:
    augment = AugmentConfig(
        n_max=cfg["data.n_max"],
        p_polarity_flip=cfg["augment.p_polarity_flip"],
        p_hflip=cfg["augment.p_hflip"],
        jitter_range=cfg["augment.jitter_range"],
        randaugment_ops=cfg["augment.randaugment_ops"],
        randaugment_magnitude=cfg["augment.randaugment_magnitude"],
    )
    size = cfg["data.target_size"]
    try:
        return PreprocessConfig(
            layout=cfg["data.layout"],
            n_max=cfg["data.n_max"],
            hot_pixel_k=cfg["data.hot_pixel_k"],
            target_size=None if size is None else (size[0], size[1]),
            augment=augment,
            use_randaugment=cfg["data.use_randaugment"],
        ).validate()
    except ValueError as err:
        raise ConfigError(str(err)) from err


def dvae_config_from(cfg: dict, channels: int) -> DvaeConfig:
    return DvaeConfig(
        vocab_size=cfg["dvae.vocab_size"],
        latent_dim=cfg["dvae.latent_dim"],
        patch=cfg["dvae.patch"],
        channels=channels,
        hidden=cfg["dvae.hidden"],
    )


def dvae_train_from(cfg: dict, preprocess: PreprocessConfig, model: DvaeConfig) -> DvaeTrainConfig:
    return DvaeTrainConfig(
        steps=cfg["train.steps"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        betas=(cfg["train.beta1"], cfg["train.beta2"]),
        weight_decay=cfg["train.weight_decay"],
        clip_norm=cfg["train.clip_norm"],
        kl_weight=cfg["train.kl_weight"],
        tau_start=cfg["train.tau_start"],
        tau_end=cfg["train.tau_end"],
        anneal_frac=cfg["train.anneal_frac"],
        hard_frac=cfg["train.hard_frac"],
        lr_decay=cfg["train.lr_decay"],
        seed=cfg["seed"],
        preprocess=preprocess,
        model=model,
    )


def vit_config_from(cfg: dict, patch: int, channels: int, rows: int, cols: int,
                    vocab_size: int) -> VitConfig:
    return VitConfig(
        layers=cfg["model.layers"],
        dim=cfg["model.dim"],
        heads=cfg["model.heads"],
        mlp_dim=cfg["model.mlp_dim"],
        patch=patch,
        channels=channels,
        rows=rows,
        cols=cols,
        vocab_size=vocab_size,
    )


def pretrain_from(cfg: dict, preprocess: PreprocessConfig, model: VitConfig) -> PretrainConfig:
    return PretrainConfig(
        steps=cfg["train.steps"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        betas=(cfg["train.beta1"], cfg["train.beta2"]),
        weight_decay=cfg["train.weight_decay"],
        warmup_frac=cfg["train.warmup_frac"],
        min_lr=cfg["train.min_lr"],
        clip_norm=cfg["train.clip_norm"],
        mask_ratio=cfg["train.mask_ratio"],
        objective=cfg["train.objective"].replace("-", "_"),
        seed=cfg["seed"],
        preprocess=preprocess,
        model=model,
    )


def finetune_from(cfg: dict, preprocess: PreprocessConfig) -> FinetuneConfig:
    return FinetuneConfig(
        steps=cfg["train.steps"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        betas=(cfg["train.beta1"], cfg["train.beta2"]),
        weight_decay=cfg["train.weight_decay"],
        layer_decay=cfg["train.layer_decay"],
        warmup_frac=cfg["train.warmup_frac"],
        min_lr=cfg["train.min_lr"],
        clip_norm=cfg["train.clip_norm"],
        seed=cfg["seed"],
        preprocess=preprocess,
    )


def probe_from(cfg: dict, preprocess: PreprocessConfig) -> ProbeConfig:
    return ProbeConfig(
        steps=cfg["probe.steps"],
        batch_size=cfg["probe.batch_size"],
        lr=cfg["probe.lr"],
        weight_decay=cfg["probe.weight_decay"],
        seed=cfg["seed"],
        preprocess=preprocess,
    )
