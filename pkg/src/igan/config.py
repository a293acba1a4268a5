"""Flat key=value run configuration.

One pair per line, full-line "#" comments, unknown keys rejected. The
effective (defaults-merged) config is echoed to the run directory before
training so every artifact set carries its exact provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .data import (
    Dataset,
    GaussianMixtureSpec,
    grid_mixture,
    load_idx_images,
    load_image_dir,
    read_attributes_csv,
    ring_mixture,
    sample_mixture,
)
from .errors import ConfigError
from .networks import ArchConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # architecture
    toy_mode: bool = True
    omit_h: bool = True
    data_shape: tuple[int, int, int] | int = 2
    latent_dim: int = 2
    secondary_latent_dim: int = 128
    base_channels: int = 64
    # training
    steps: int = 1000
    batch_size: int = 128
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 10.0
    true_weight: float = 3.0
    d_steps_per_g: int = 1
    seed: int = 0
    indicator_interval: int = 100
    checkpoint_interval: int = 1000
    probe_size: int = 256
    use_data_cycle: bool = False
    use_real_latent_rec: bool = False
    # dataset
    dataset: str = "ring"  # ring | grid | idx | image_dir
    dataset_size: int = 4096
    data_seed: int = 1
    mixture_modes: int = 8
    mixture_radius: float = 2.0
    mixture_sigma: float = 0.05
    grid_rows: int = 5
    grid_cols: int = 5
    grid_spacing: float = 1.0
    images_path: str = ""
    labels_path: str = ""
    images_dir: str = ""
    image_size: int = 0  # 0 keeps the native extent
    attributes_path: str = ""
    # outputs and evaluation
    out_dir: str = "runs/out"
    sample_grid_cols: int = 8
    knn_k: int = 10

    def arch_config(self) -> ArchConfig:
        return ArchConfig(
            data_shape=self.data_shape,
            latent_dim=self.latent_dim,
            secondary_latent_dim=self.secondary_latent_dim,
            base_channels=self.base_channels,
            omit_h=self.omit_h,
            toy_mode=self.toy_mode,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            alpha=self.alpha,
            true_weight=self.true_weight,
            d_steps_per_g=self.d_steps_per_g,
            seed=self.seed,
            indicator_interval=self.indicator_interval,
            checkpoint_interval=self.checkpoint_interval,
            probe_size=self.probe_size,
            use_data_cycle=self.use_data_cycle,
            use_real_latent_rec=self.use_real_latent_rec,
        )


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    default = getattr(RunConfig(), key)
    try:
        if key == "data_shape":
            parts = raw.split("x")
            if len(parts) == 1:
                return int(parts[0])
            if len(parts) == 3:
                return tuple(int(p) for p in parts)
            raise ConfigError(f"data_shape must be a flat dim or CxHxW, got {raw!r}")
        if isinstance(default, bool):
            if raw.lower() in ("true", "1"):
                return True
            if raw.lower() in ("false", "0"):
                return False
            raise ConfigError(f"{key} must be true/false, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _format_value(key: str, value) -> str:
    if key == "data_shape":
        if isinstance(value, int):
            return str(value)
        return "x".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply_pair(cfg: RunConfig, pair: str):
    if "=" not in pair:
        raise ConfigError(f"expected key=value, got {pair!r}")
    key, _, raw = pair.partition("=")
    key, raw = key.strip(), raw.strip()
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(cfg, key, _parse_value(key, raw))


def parse_config(text: str, overrides: list[str] = ()) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        apply_pair(cfg, line)
    for pair in overrides:
        apply_pair(cfg, pair)
    return cfg


def load_config(path, overrides: list[str] = ()) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), overrides)


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{f.name}={_format_value(f.name, getattr(cfg, f.name))}"
             for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def mixture_from_config(cfg: RunConfig) -> GaussianMixtureSpec:
    if cfg.dataset == "ring":
        return ring_mixture(cfg.mixture_modes, cfg.mixture_radius, cfg.mixture_sigma)
    if cfg.dataset == "grid":
        return grid_mixture(cfg.grid_rows, cfg.grid_cols, cfg.grid_spacing,
                            cfg.mixture_sigma)
    raise ConfigError(f"dataset {cfg.dataset!r} is not a mixture")


def build_dataset(cfg: RunConfig) -> Dataset:
    """Materialize the configured dataset (deterministic in data_seed)."""
    if cfg.dataset in ("ring", "grid"):
        ds = sample_mixture(mixture_from_config(cfg), cfg.dataset_size, cfg.data_seed)
    elif cfg.dataset == "idx":
        if not cfg.images_path:
            raise ConfigError("dataset=idx needs images_path")
        ds = load_idx_images(cfg.images_path, cfg.labels_path or None,
                             cfg.image_size or None)
    elif cfg.dataset == "image_dir":
        if not cfg.images_dir or not cfg.image_size:
            raise ConfigError("dataset=image_dir needs images_dir and image_size")
        ds = load_image_dir(cfg.images_dir, cfg.image_size)
    else:
        raise ConfigError(f"unknown dataset kind {cfg.dataset!r}")
    if cfg.attributes_path:
        ds.attributes.update(read_attributes_csv(cfg.attributes_path, len(ds)))
    if not cfg.toy_mode and ds.items.ndim != 4:
        raise ConfigError("conv mode needs image data, got flat vectors")
    if cfg.toy_mode and ds.items.ndim != 2:
        raise ConfigError("toy mode needs flat vector data, got images")
    if cfg.toy_mode and ds.items.shape[1] != cfg.data_shape:
        raise ConfigError(
            f"data_shape {cfg.data_shape} does not match dataset dim {ds.items.shape[1]}"
        )
    if not cfg.toy_mode and tuple(ds.items.shape[1:]) != tuple(cfg.data_shape):
        raise ConfigError(
            f"data_shape {cfg.data_shape} does not match dataset shape {ds.items.shape[1:]}"
        )
    return ds
