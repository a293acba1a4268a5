"""Dataset ingestion and export.

Synthetic Gaussian mixtures for toy runs, IDX-format grayscale images,
PGM/PPM image directories, and tiled sample-grid export. Image pixels are
normalized to [-1, 1]; mixture samples keep their raw coordinates since
toy generators are unbounded. Labels and attribute tags ride along for
post-hoc evaluation only; training reads just the item array.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Immutable item array plus optional per-item tags.

    items: (n, dim) vectors or (n, c, h, w) images; labels: integer tags;
    attributes: named boolean masks. Tags are never consumed by training.
    """

    items: np.ndarray
    labels: np.ndarray | None = None
    attributes: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.float64)
        if self.items.shape[0] < 1:
            raise DataError("dataset must contain at least one item")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.items.shape[0],):
                raise DataError(
                    f"label count {self.labels.shape} does not match "
                    f"{self.items.shape[0]} items"
                )
        for name, mask in self.attributes.items():
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (self.items.shape[0],):
                raise DataError(f"attribute {name!r} mask does not match item count")
            self.attributes[name] = mask

    def __len__(self) -> int:
        return self.items.shape[0]


@dataclass
class GaussianMixtureSpec:
    """Isotropic Gaussian mixture: modes are (mean, sigma) pairs."""

    modes: list[tuple[np.ndarray, float]]
    weights: list[float]
    dim: int

    def __post_init__(self):
        self.modes = [(np.asarray(m, dtype=np.float64), float(s)) for m, s in self.modes]
        if not self.modes or len(self.weights) != len(self.modes):
            raise ConfigError("mixture needs one weight per mode")
        for mean, sigma in self.modes:
            if mean.shape != (self.dim,):
                raise ConfigError(f"mode mean shape {mean.shape} does not match dim {self.dim}")
            if sigma < 0:
                raise ConfigError("mode sigma must be nonnegative")
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be nonnegative and sum to 1")


def ring_mixture(n_modes: int = 8, radius: float = 2.0, sigma: float = 0.05) -> GaussianMixtureSpec:
    """Equally weighted modes on a circle, first mode at angle 0."""
    modes = []
    for i in range(n_modes):
        a = 2.0 * math.pi * i / n_modes
        modes.append((np.array([radius * math.cos(a), radius * math.sin(a)]), sigma))
    return GaussianMixtureSpec(modes, [1.0 / n_modes] * n_modes, dim=2)


def grid_mixture(rows: int = 5, cols: int = 5, spacing: float = 1.0,
                 sigma: float = 0.05) -> GaussianMixtureSpec:
    """Equally weighted modes on a centered rows x cols lattice."""
    modes = []
    for r in range(rows):
        for c in range(cols):
            modes.append((np.array([
                (c - (cols - 1) / 2.0) * spacing,
                (r - (rows - 1) / 2.0) * spacing,
            ]), sigma))
    return GaussianMixtureSpec(modes, [1.0 / (rows * cols)] * (rows * cols), dim=2)


def sample_mixture(spec: GaussianMixtureSpec, n: int, seed: int,
                   shuffle_seed: int | None = None) -> Dataset:
    """n i.i.d. draws; label = generating mode index. Shuffling, when
    requested, uses an independent stream so the sample multiset depends
    on seed alone."""
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng([seed, 0])
    comps = rng.choice(len(spec.modes), size=n, p=np.asarray(spec.weights))
    noise = rng.standard_normal((n, spec.dim))
    means = np.stack([m for m, _ in spec.modes])
    sigmas = np.array([s for _, s in spec.modes])
    items = means[comps] + noise * sigmas[comps, None]
    if shuffle_seed is not None:
        order = np.random.default_rng([shuffle_seed, 1]).permutation(n)
        items, comps = items[order], comps[order]
    return Dataset(items=items, labels=comps)


def sample_prior(latent_dim: int, n: int, seed: int) -> np.ndarray:
    """(n, latent_dim) of i.i.d. standard normal draws."""
    return np.random.default_rng(seed).standard_normal((n, latent_dim))


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------


def _read_u32s(f, count: int, path, what: str) -> tuple[int, ...]:
    raw = f.read(4 * count)
    if len(raw) != 4 * count:
        raise IdxTruncatedError(f"{path}: truncated {what}")
    return struct.unpack(f">{count}I", raw)


def normalize_pixels(x: np.ndarray) -> np.ndarray:
    """Bytes [0, 255] to floats [-1, 1]."""
    return np.asarray(x, dtype=np.float64) / 127.5 - 1.0


def denormalize_pixels(v: np.ndarray) -> np.ndarray:
    """Floats to bytes, the exact inverse of normalize_pixels on bytes."""
    return np.clip(np.rint((np.asarray(v) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def box_downscale(images: np.ndarray, target: int) -> np.ndarray:
    """Repeated 2x2 box averaging down to target x target (exact halvings)."""
    n, h, w = images.shape
    if h != w:
        raise ConfigError(f"box downscale needs square images, got {h}x{w}")
    out = np.asarray(images, dtype=np.float64)
    size = h
    while size > target:
        if size % 2 != 0:
            raise ConfigError(f"cannot halve {size} toward target {target}")
        size //= 2
        out = out.reshape(n, size, 2, size, 2).mean(axis=(2, 4))
    if size != target:
        raise ConfigError(f"target {target} is not reachable from {h} by halving")
    return out


def load_idx_images(images_path, labels_path=None, target_size: int | None = None) -> Dataset:
    """Grayscale IDX images (big-endian magic 0x00000803), optionally with
    an IDX label file (0x00000801), downscaled then mapped to [-1, 1]."""
    images_path = Path(images_path)
    if not images_path.exists():
        raise DataError(f"image file not found: {images_path}")
    with open(images_path, "rb") as f:
        magic, n, rows, cols = _read_u32s(f, 4, images_path, "image header")
        if magic != IDX_IMAGE_MAGIC:
            raise IdxMagicError(
                f"{images_path}: expected image magic 0x{IDX_IMAGE_MAGIC:08x}, got 0x{magic:08x}"
            )
        payload = f.read(n * rows * cols)
        if len(payload) != n * rows * cols:
            raise IdxTruncatedError(
                f"{images_path}: header declares {n * rows * cols} pixel bytes, "
                f"found {len(payload)}"
            )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols).astype(np.float64)

    labels = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        if not labels_path.exists():
            raise DataError(f"label file not found: {labels_path}")
        with open(labels_path, "rb") as f:
            magic, n_lab = _read_u32s(f, 2, labels_path, "label header")
            if magic != IDX_LABEL_MAGIC:
                raise IdxMagicError(
                    f"{labels_path}: expected label magic 0x{IDX_LABEL_MAGIC:08x}, "
                    f"got 0x{magic:08x}"
                )
            raw = f.read(n_lab)
            if len(raw) != n_lab:
                raise IdxTruncatedError(f"{labels_path}: truncated label payload")
        if n_lab != n:
            raise IdxCountMismatchError(
                f"label count {n_lab} does not match image count {n}"
            )
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if target_size is not None and target_size != rows:
        pixels = box_downscale(pixels, target_size)
    items = normalize_pixels(pixels)[:, None, :, :]
    return Dataset(items=items, labels=labels)


def write_idx_images(path, images: np.ndarray):
    """images: (n, rows, cols) uint8."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


# ---------------------------------------------------------------------------
# PGM / PPM
# ---------------------------------------------------------------------------


def export_grid(batch: np.ndarray, cols: int, path):
    """Tile a (b, c, h, w) batch of [-1, 1] images row-major into one
    image file: binary PGM for 1 channel, PPM for 3. Missing tiles in the
    last row are black."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[0] < 1:
        raise ContractError(f"export_grid needs a non-empty (b, c, h, w) batch, got {batch.shape}")
    b, c, h, w = batch.shape
    if c not in (1, 3):
        raise DataError(f"grid export supports 1 or 3 channels, got {c}")
    if cols < 1:
        raise ConfigError("cols must be >= 1")
    rows = (b + cols - 1) // cols
    bytes_ = denormalize_pixels(batch)
    canvas = np.zeros((c, rows * h, cols * w), dtype=np.uint8)
    for i in range(b):
        r, q = divmod(i, cols)
        canvas[:, r * h : (r + 1) * h, q * w : (q + 1) * w] = bytes_[i]
    with open(path, "wb") as f:
        if c == 1:
            f.write(b"P5\n%d %d\n255\n" % (cols * w, rows * h))
            f.write(canvas[0].tobytes())
        else:
            f.write(b"P6\n%d %d\n255\n" % (cols * w, rows * h))
            f.write(canvas.transpose(1, 2, 0).tobytes())


def _read_pnm(path) -> np.ndarray:
    """Binary PGM/PPM to (c, h, w) uint8."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"P5", b"P6"):
        raise DataError(f"{path}: not a binary PGM/PPM file")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise DataError(f"{path}: unsupported max value {parts[2]!r}")
    c = 1 if parts[0] == b"P5" else 3
    payload = parts[3][: h * w * c]
    if len(payload) != h * w * c:
        raise DataError(f"{path}: truncated pixel payload")
    flat = np.frombuffer(payload, dtype=np.uint8)
    if c == 1:
        return flat.reshape(1, h, w)
    return flat.reshape(h, w, 3).transpose(2, 0, 1)


def load_image_dir(path, size: int) -> Dataset:
    """All .pgm/.ppm files under path (sorted by name) as one dataset of
    size x size images in [-1, 1]; single-image files, not grids."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"image directory not found: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix in (".pgm", ".ppm"))
    if not files:
        raise DataError(f"no .pgm/.ppm files under {path}")
    imgs = []
    for p in files:
        img = _read_pnm(p)
        if img.shape[1:] != (size, size):
            raise DataError(f"{p}: expected {size}x{size}, got {img.shape[1]}x{img.shape[2]}")
        imgs.append(img)
    channels = {im.shape[0] for im in imgs}
    if len(channels) != 1:
        raise DataError(f"mixed channel counts under {path}")
    return Dataset(items=normalize_pixels(np.stack(imgs)))


# ---------------------------------------------------------------------------
# attribute sidecar
# ---------------------------------------------------------------------------


def write_attributes_csv(path, dataset: Dataset):
    """Sidecar rows "index,name,value" with value 0/1, sorted by name then index."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "name", "value"])
        for name in sorted(dataset.attributes):
            mask = dataset.attributes[name]
            for i in range(len(dataset)):
                writer.writerow([i, name, int(mask[i])])


def read_attributes_csv(path, n_items: int) -> dict[str, np.ndarray]:
    if not Path(path).exists():
        raise DataError(f"attribute file not found: {path}")
    attrs: dict[str, np.ndarray] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["index", "name", "value"]:
            raise DataError(f"{path}: expected header index,name,value, got {header}")
        for row in reader:
            if len(row) != 3:
                raise DataError(f"{path}: malformed row {row!r}")
            idx, name, value = int(row[0]), row[1], row[2]
            if not 0 <= idx < n_items:
                raise DataError(f"{path}: item index {idx} out of range")
            if value not in ("0", "1"):
                raise DataError(f"{path}: attribute value must be 0 or 1, got {value!r}")
            attrs.setdefault(name, np.zeros(n_items, dtype=bool))[idx] = value == "1"
    return attrs
