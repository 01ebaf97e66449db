"""Flat `key = value` run configuration with per-command defaults.

The same schema serves every command; pretrain and finetune only differ
in default values (documented in the README). Unknown keys are rejected
so typos fail loudly, and the schema carries a version number.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig

CONFIG_VERSION = 1

# keys that must agree between a checkpoint and the model built to load it
MODEL_KEYS = (
    "img_h",
    "img_w",
    "patch",
    "dim",
    "dec_dim",
    "heads",
    "enc_depth",
    "dec_rgb_depth",
    "dec_depth_depth",
    "num_labels",
    "ln_eps",
)


@dataclass
class RunConfig:
    config_version: int = CONFIG_VERSION
    seed: int = 0
    data_dir: str = "data"
    out_dir: str = "out"
    # model
    img_h: int = 32
    img_w: int = 32
    patch: int = 8
    dim: int = 64
    dec_dim: int = 32
    heads: int = 4
    enc_depth: int = 4
    dec_rgb_depth: int = 2
    dec_depth_depth: int = 1
    num_labels: int = 12
    ln_eps: float = 1e-6
    # mixing and masking
    mask_ratio: float = 0.5
    remix_per_step: bool = True
    # optimizer and schedule
    epochs: int = 30
    warmup_epochs: int = 5
    batch_size: int = 8
    base_lr: float = 5e-3
    min_lr: float = 1e-6
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    layer_decay: float = 1.0
    lr_drop_at_epoch: int = 0
    lr_drop_factor: float = 0.1
    # fine-tune / eval
    modality: str = "fusion"
    threshold: float = 0.5
    invert_weights: bool = False

    def validate(self) -> None:
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(f"config_version must be {CONFIG_VERSION}, got {self.config_version}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(
                f"warmup_epochs must be in [0, epochs), got {self.warmup_epochs} of {self.epochs}"
            )
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.base_lr <= 0 or self.min_lr < 0 or self.min_lr > self.base_lr:
            raise ConfigError("need 0 <= min_lr <= base_lr and base_lr > 0")
        if not 0.0 < self.layer_decay <= 1.0:
            raise ConfigError(f"layer_decay must be in (0, 1], got {self.layer_decay}")
        if self.lr_drop_at_epoch < 0:
            raise ConfigError("lr_drop_at_epoch must be 0 (off) or a 1-based epoch number")
        if self.modality not in ("rgb", "depth", "fusion"):
            raise ConfigError(f"modality must be rgb, depth or fusion, got {self.modality!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        try:
            self.model_config()
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            img_h=self.img_h,
            img_w=self.img_w,
            patch=self.patch,
            dim=self.dim,
            dec_dim=self.dec_dim,
            heads=self.heads,
            enc_depth=self.enc_depth,
            dec_rgb_depth=self.dec_rgb_depth,
            dec_depth_depth=self.dec_depth_depth,
            num_labels=self.num_labels,
            ln_eps=self.ln_eps,
        )

    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = str(v).lower() if isinstance(v, bool) else str(v)
        return out


def finetune_defaults(cfg: RunConfig) -> RunConfig:
    """Shift schedule defaults to the fine-tune preset values."""
    cfg.epochs = 5
    cfg.warmup_epochs = 1
    cfg.base_lr = 1e-2
    cfg.beta2 = 0.99
    cfg.layer_decay = 0.75
    cfg.lr_drop_at_epoch = 2
    return cfg


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}")


def apply_overrides(cfg: RunConfig, pairs: list[str]) -> RunConfig:
    """Apply `key=value` strings (CLI --set flags) onto a config."""
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Parse a flat key = value file over the given defaults."""
    cfg = base if base is not None else RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, raw = stripped.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def config_from_dict(items: dict[str, str]) -> RunConfig:
    """Rebuild a config from a checkpoint's echo (ignores retired keys)."""
    cfg = RunConfig()
    for key, raw in items.items():
        if key in _FIELD_TYPES:
            setattr(cfg, key, _parse_value(key, raw))
    return cfg


def check_model_compat(ckpt_config: dict[str, str], cfg: RunConfig) -> None:
    """Raise with a per-key diff when model dimensions disagree."""
    mine = cfg.to_dict()
    diffs = []
    for key in MODEL_KEYS:
        theirs = ckpt_config.get(key)
        if theirs is not None and theirs != mine[key]:
            diffs.append(f"{key}: checkpoint {theirs} vs run {mine[key]}")
    if diffs:
        raise ConfigError("checkpoint/model mismatch: " + "; ".join(diffs))
