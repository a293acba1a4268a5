"""Post-training latent-space applications.

Everything here runs the trained networks in eval mode without gradients:
dataset encoding, neighborhood label purity, mean-latent attribute
arithmetic, interpolation, and cross-domain translation through a shared
prior space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .networks import IganModel, forward_E, forward_G
from .tensor import Tensor


@dataclass
class LatentSet:
    """Encoded latents with their source item indices and optional tags."""

    latents: np.ndarray
    source_ids: np.ndarray
    labels: np.ndarray | None = None
    attributes: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.source_ids = np.asarray(self.source_ids)
        if self.latents.shape[0] != self.source_ids.shape[0]:
            raise ContractError(
                f"{self.latents.shape[0]} latents but {self.source_ids.shape[0]} source ids"
            )

    def __len__(self) -> int:
        return self.latents.shape[0]


@dataclass
class AttributeVector:
    name: str
    mean_latent: np.ndarray
    support_count: int


def encode_dataset(model: IganModel, dataset, batch_size: int = 256) -> LatentSet:
    """E(x) for every item, order-preserving, carrying the dataset's tags."""
    items = dataset.items
    chunks = []
    with T.no_grad():
        for lo in range(0, items.shape[0], batch_size):
            chunks.append(forward_E(model, Tensor(items[lo : lo + batch_size])).data)
    return LatentSet(
        latents=np.concatenate(chunks, axis=0),
        source_ids=np.arange(items.shape[0]),
        labels=getattr(dataset, "labels", None),
        attributes=dict(getattr(dataset, "attributes", {}) or {}),
    )


def knn_purity(latents: LatentSet, k: int = 10) -> float:
    """Fraction of items whose k nearest latents (Euclidean, self excluded)
    have the item's label as their majority label; majority ties go to the
    smaller label index."""
    if latents.labels is None:
        raise ContractError("knn_purity needs labels on the latent set")
    n = len(latents)
    if not 1 <= k < n:
        raise ContractError(f"k must be in [1, {n - 1}], got {k}")
    z = latents.latents
    labels = np.asarray(latents.labels, dtype=np.int64)
    if labels.min() < 0:
        raise ContractError("knn_purity needs nonnegative integer labels")
    sq = (z * z).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    np.fill_diagonal(d2, np.inf)
    hits = 0
    nclass = int(labels.max()) + 1
    for i in range(n):
        neigh = np.argsort(d2[i], kind="stable")[:k]
        counts = np.bincount(labels[neigh], minlength=nclass)
        if int(np.argmax(counts)) == labels[i]:
            hits += 1
    return hits / n


def attribute_vector(latents: LatentSet, attribute_name: str) -> AttributeVector:
    """Mean latent over the positive-tagged items of one attribute."""
    if attribute_name not in latents.attributes:
        raise ContractError(f"unknown attribute {attribute_name!r}")
    mask = latents.attributes[attribute_name]
    count = int(mask.sum())
    if count < 1:
        raise ContractError(f"attribute {attribute_name!r} tags no items")
    return AttributeVector(attribute_name, latents.latents[mask].mean(axis=0), count)


def apply_attribute(model: IganModel, x: np.ndarray, minus: AttributeVector,
                    plus: AttributeVector) -> np.ndarray:
    """G(E(x) - minus + plus). The shift is formed before adding so equal
    attribute vectors cancel exactly and reproduce the reconstruction."""
    delta = plus.mean_latent - minus.mean_latent
    with T.no_grad():
        z = forward_E(model, Tensor(x)).data
        return forward_G(model, Tensor(z + delta)).data


def reconstruct(model: IganModel, x: np.ndarray) -> np.ndarray:
    """Plain auto-encoding G(E(x))."""
    with T.no_grad():
        return forward_G(model, forward_E(model, Tensor(x))).data


def generate(model: IganModel, z: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return forward_G(model, Tensor(z)).data


def interpolate(model: IganModel, z0: np.ndarray, z1: np.ndarray,
                steps: int) -> np.ndarray:
    """G over the straight latent path; row t uses (1 - t)z0 + t z1 with
    t on the uniform grid 0, 1/(steps-1), ..., 1, endpoints exact."""
    if steps < 2:
        raise ConfigError(f"interpolation needs steps >= 2, got {steps}")
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    ts = np.arange(steps) / (steps - 1)
    path = (1.0 - ts[:, None]) * z0[None, :] + ts[:, None] * z1[None, :]
    path[0] = z0
    path[-1] = z1
    # one row at a time: accumulation order then matches a plain G(z) call,
    # so the endpoints reproduce G(z0) and G(z1) bit-exactly
    with T.no_grad():
        rows = [forward_G(model, Tensor(path[i : i + 1])).data for i in range(steps)]
    return np.concatenate(rows, axis=0)


def _check_shared_latent(model_a: IganModel, model_b: IganModel):
    if model_a.arch.latent_dim != model_b.arch.latent_dim:
        raise ContractError(
            f"latent dims differ: {model_a.arch.latent_dim} vs {model_b.arch.latent_dim}; "
            "domains are only compatible through a common prior"
        )


def translate(model_a: IganModel, model_b: IganModel, x_a: np.ndarray) -> np.ndarray:
    """Domain A data to domain B: G_B(E_A(x_a))."""
    _check_shared_latent(model_a, model_b)
    with T.no_grad():
        return forward_G(model_b, forward_E(model_a, Tensor(x_a))).data


def round_trip(model_a: IganModel, model_b: IganModel, x_a: np.ndarray) -> np.ndarray:
    """A -> B -> A chain G_A(E_B(G_B(E_A(x_a))))."""
    _check_shared_latent(model_a, model_b)
    with T.no_grad():
        x_b = forward_G(model_b, forward_E(model_a, Tensor(x_a)))
        return forward_G(model_a, forward_E(model_b, x_b)).data


def export_latents_csv(latents: LatentSet, path):
    """Rows "id,label,z0,...,z{d-1}" at 17 significant digits; the label
    column is empty when labels are absent."""
    d = latents.latents.shape[1]
    header = "id,label," + ",".join(f"z{i}" for i in range(d))
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in range(len(latents)):
            label = "" if latents.labels is None else str(int(latents.labels[row]))
            coords = ",".join("%.17g" % v for v in latents.latents[row])
            f.write(f"{latents.source_ids[row]},{label},{coords}\n")


def read_latents_csv(path) -> LatentSet:
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header[:2] != ["id", "label"]:
            raise ContractError(f"{path}: unexpected latent CSV header")
        ids, labels, rows = [], [], []
        any_label = False
        for line in f:
            parts = line.rstrip("\n").split(",")
            ids.append(int(parts[0]))
            if parts[1] != "":
                any_label = True
                labels.append(int(parts[1]))
            else:
                labels.append(-1)
            rows.append([float(v) for v in parts[2:]])
    return LatentSet(
        latents=np.asarray(rows, dtype=np.float64),
        source_ids=np.asarray(ids),
        labels=np.asarray(labels) if any_label else None,
    )
