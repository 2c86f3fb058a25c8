"""Training configuration: YAML (or JSON) file merged over DEFAULT_CONFIG."""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from hypercloud.errors import ConfigError

log = logging.getLogger(__name__)

_BASE_DIR = Path(__file__).resolve().parent.parent
CONFIG_PATH = _BASE_DIR / "config.yaml"

THREADS_ENV = "HYPERCLOUD_THREADS"

REQUIRED_KEYS = ("loss", "steps", "seed")

DEFAULT_CONFIG = {
    "loss": "cd",
    "kl_weight": 0.001,
    "lr": 1e-4,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
    "steps": 2000,
    "batch_size": 8,
    "prior_samples": None,
    "seed": 0,
    "latent_dim": 64,
    "target_widths": [3, 32, 64, 128, 64, 3],
    "encoder_widths": [3, 64, 128, 256],
    "encoder_head": [256, 128],
    "decoder_hidden": [256, 512],
    "log_every": 100,
}


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "cd"
    kl_weight: float = 0.001
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 2000
    batch_size: int = 8
    prior_samples: int | None = None
    seed: int = 0
    latent_dim: int = 64
    target_widths: tuple[int, ...] = (3, 32, 64, 128, 64, 3)
    encoder_widths: tuple[int, ...] = (3, 64, 128, 256)
    encoder_head: tuple[int, ...] = (256, 128)
    decoder_hidden: tuple[int, ...] = (256, 512)
    log_every: int = 100

    def __post_init__(self):
        for name in ("target_widths", "encoder_widths", "encoder_head", "decoder_hidden"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        validate(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for name in ("target_widths", "encoder_widths", "encoder_head", "decoder_hidden"):
            d[name] = list(d[name])
        return d


def validate(cfg: TrainConfig) -> None:
    def fail(msg: str):
        raise ConfigError(f"Invalid config: {msg}")

    if cfg.loss not in {"cd", "emd"}:
        fail(f"loss must be 'cd' or 'emd', got {cfg.loss!r}")
    if not cfg.kl_weight >= 0:
        fail(f"kl_weight must be >= 0, got {cfg.kl_weight}")
    if not cfg.lr > 0:
        fail(f"lr must be > 0, got {cfg.lr}")
    for name in ("beta1", "beta2"):
        if not 0 <= getattr(cfg, name) < 1:
            fail(f"{name} must lie in [0, 1), got {getattr(cfg, name)}")
    if not cfg.eps > 0:
        fail(f"eps must be > 0, got {cfg.eps}")
    if cfg.steps < 1:
        fail(f"steps must be >= 1, got {cfg.steps}")
    if cfg.batch_size < 1:
        fail(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.prior_samples is not None and cfg.prior_samples < 1:
        fail(f"prior_samples must be >= 1 or null, got {cfg.prior_samples}")
    if cfg.latent_dim < 1:
        fail(f"latent_dim must be >= 1, got {cfg.latent_dim}")
    if len(cfg.target_widths) < 2 or cfg.target_widths[0] != 3 or cfg.target_widths[-1] != 3:
        fail(f"target_widths must start and end with 3, got {list(cfg.target_widths)}")
    if len(cfg.encoder_widths) < 2 or cfg.encoder_widths[0] != 3:
        fail(f"encoder_widths must start with 3, got {list(cfg.encoder_widths)}")
    if not cfg.encoder_head or cfg.encoder_head[0] != cfg.encoder_widths[-1]:
        fail("encoder_head must start with the last encoder width")
    if cfg.log_every < 1:
        fail(f"log_every must be >= 1, got {cfg.log_every}")
    if any(w < 1 for w in cfg.target_widths + cfg.encoder_widths + cfg.encoder_head + cfg.decoder_hidden):
        fail("layer widths must be positive")


def load_config(path=None) -> TrainConfig:
    path = Path(path) if path is not None else CONFIG_PATH
    try:
        with open(path, encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Config {path} is not valid YAML/JSON: {e}") from e

    if not isinstance(loaded, dict):
        raise ConfigError(f"Config {path} must be a mapping, got {type(loaded).__name__}")
    for key in REQUIRED_KEYS:
        if key not in loaded:
            raise ConfigError(f"Config {path} is missing required field '{key}'")
    unknown = sorted(set(loaded) - set(DEFAULT_CONFIG))
    if unknown:
        raise ConfigError(f"Config {path} has unknown field(s): {', '.join(unknown)}")

    config = {**DEFAULT_CONFIG, **loaded}
    try:
        return TrainConfig(**config)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Config {path}: {e}") from e


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        log.warning("Ignoring %s=%r; using 1 thread", THREADS_ENV, raw)
        return 1
    return n
