"""Shared fixtures that retrain the shipped reference runs.

The reference configs in reference/ pin every knob, so each fixture is a
deterministic function of the repository contents. Session scope keeps the
multi-minute trainings to one per pytest invocation even when several test
modules consume them.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from igan import networks as N
from igan import training as TR
from igan.config import load_config, build_dataset
from igan.data import write_idx_images, write_idx_labels, load_idx_images

REPO = Path(__file__).resolve().parent.parent
REFERENCE = REPO / "reference"


def _train_reference(cfg_name: str):
    cfg = load_config(REFERENCE / cfg_name)
    ds = build_dataset(cfg)
    model = N.build_model(cfg.arch_config(), seed=cfg.seed)
    t0 = time.time()
    model, metrics = TR.train(model, ds, cfg.train_config())
    return model, ds, metrics, time.time() - t0, cfg


@pytest.fixture(scope="session")
def ring_run():
    return _train_reference("ring.cfg")


@pytest.fixture(scope="session")
def grid_run():
    return _train_reference("grid.cfg")


@pytest.fixture(scope="session")
def digits_run(tmp_path_factory):
    sklearn_datasets = pytest.importorskip("sklearn.datasets")
    root = tmp_path_factory.mktemp("digits")
    bunch = sklearn_datasets.load_digits()
    images = np.clip(np.round(bunch.images / 16.0 * 255.0), 0, 255).astype(np.uint8)
    labels = bunch.target.astype(np.uint8)
    order = np.random.default_rng(7).permutation(len(images))
    images, labels = images[order], labels[order]
    write_idx_images(root / "train-images.idx", images[:1500])
    write_idx_labels(root / "train-labels.idx", labels[:1500])
    write_idx_images(root / "test-images.idx", images[1500:])
    write_idx_labels(root / "test-labels.idx", labels[1500:])

    cfg = load_config(REFERENCE / "digits.cfg",
                      overrides=(f"images_path={root / 'train-images.idx'}",))
    train_ds = build_dataset(cfg)
    assert train_ds.labels is None, "training must not see labels"
    model = N.build_model(cfg.arch_config(), seed=cfg.seed)
    t0 = time.time()
    model, _ = TR.train(model, train_ds, cfg.train_config())
    elapsed = time.time() - t0
    test_ds = load_idx_images(root / "test-images.idx", root / "test-labels.idx")
    return model, test_ds, elapsed
