"""Entangled adversarial training of coupled generator/encoder pairs."""

from igan.config import RunConfig, load_config, parse_config, build_dataset
from igan.networks import ArchConfig, IganModel, build_model
from igan.training import (
    TrainConfig,
    MetricsRecord,
    train,
    compute_indicators,
    save_checkpoint,
    load_checkpoint,
)
from igan.latent import (
    LatentSet,
    encode_dataset,
    generate,
    reconstruct,
    attribute_vector,
    apply_attribute,
    translate,
    round_trip,
    knn_purity,
)

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "parse_config", "build_dataset",
    "ArchConfig", "IganModel", "build_model",
    "TrainConfig", "MetricsRecord", "train", "compute_indicators",
    "save_checkpoint", "load_checkpoint",
    "LatentSet", "encode_dataset", "generate", "reconstruct",
    "attribute_vector", "apply_attribute", "translate", "round_trip",
    "knn_purity",
    "__version__",
]
