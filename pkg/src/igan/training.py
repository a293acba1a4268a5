"""Alternating two-group optimization with indicator logging and
deterministic checkpoint/resume.

Every batch is a pure function of (seed, step) through independent
generator streams, so runs with one seed are bit-reproducible and a
resumed run consumes exactly the batches the uninterrupted run would
have. Checkpoint writes round live state to stored 32-bit precision, so
resuming from a checkpoint continues bit-identically to the run that
wrote it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .errors import CheckpointError, ConfigError, TrainingDivergedError
from .losses import forward_couples, loss_dfh, loss_eg
from .networks import ArchConfig, IganModel, build_model, discriminate, forward_E, forward_G
from .optim import Adam
from .tensor import Tensor

# batch streams: 0 = item indices, 1 = prior draws, 2 = probe items, 3 = probe priors
STREAM_ITEMS = 0
STREAM_PRIOR = 1
STREAM_PROBE_ITEMS = 2
STREAM_PROBE_PRIOR = 3

METRICS_FIELDS = (
    "step", "d_score_true", "d_score_k1", "prior_latent_rec", "fake_data_rec",
    "real_latent_rec", "real_data_rec", "loss_d", "loss_eg",
)


@dataclass
class TrainConfig:
    steps: int
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

    def validate(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        for name in ("batch_size", "learning_rate", "adam_beta1", "adam_beta2",
                     "adam_eps", "d_steps_per_g", "indicator_interval",
                     "checkpoint_interval", "probe_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.alpha < 0 or self.true_weight < 0:
            raise ConfigError("alpha and true_weight must be nonnegative")


@dataclass
class MetricsRecord:
    """One row of the indicator stream; reconstruction errors are RMS over
    all elements of the probe batch."""

    step: int
    d_score_true: float
    d_score_k1: float
    prior_latent_rec: float
    fake_data_rec: float
    real_latent_rec: float
    real_data_rec: float
    loss_d: float = math.nan
    loss_eg: float = math.nan

    def row(self) -> str:
        parts = [str(self.step)]
        parts += [repr(float(getattr(self, f))) for f in METRICS_FIELDS[1:]]
        return ",".join(parts)


def metrics_header() -> str:
    return ",".join(METRICS_FIELDS)


def write_metrics_csv(path, records: list[MetricsRecord]):
    with open(path, "w") as f:
        f.write(metrics_header() + "\n")
        for rec in records:
            f.write(rec.row() + "\n")


def read_metrics_csv(path) -> list[MetricsRecord]:
    out = []
    with open(path) as f:
        header = f.readline().strip()
        if header != metrics_header():
            raise ConfigError(f"{path}: unexpected metrics header {header!r}")
        for line in f:
            vals = line.strip().split(",")
            out.append(MetricsRecord(int(vals[0]), *(float(v) for v in vals[1:])))
    return out


def _rms(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def make_probe(seed: int, items: np.ndarray, probe_size: int,
               latent_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed evaluation batch drawn once per run from dedicated streams."""
    idx = np.random.default_rng([seed, STREAM_PROBE_ITEMS]).integers(
        0, items.shape[0], size=probe_size)
    probe_z = np.random.default_rng([seed, STREAM_PROBE_PRIOR]).standard_normal(
        (probe_size, latent_dim))
    return items[idx].copy(), probe_z


def compute_indicators(model: IganModel, probe_x: np.ndarray, probe_z: np.ndarray,
                       step: int = 0, loss_d: float = math.nan,
                       loss_eg_value: float = math.nan) -> MetricsRecord:
    """All four reconstruction indicators plus mean discriminator scores,
    in eval mode on the given probe batch."""
    with T.no_grad():
        x_r, z_p = Tensor(probe_x), Tensor(probe_z)
        z_r = forward_E(model, x_r)
        x_rr = forward_G(model, z_r)
        z_rr = forward_E(model, x_rr)
        x_p = forward_G(model, z_p)
        z_pr = forward_E(model, x_p)
        x_pp = forward_G(model, z_pr)
        d_true = float(discriminate(model, x_r, z_p).data.mean())
        d_k1 = float(discriminate(model, x_p, z_r).data.mean())
    return MetricsRecord(
        step=step,
        d_score_true=d_true,
        d_score_k1=d_k1,
        prior_latent_rec=_rms(z_pr.data, z_p.data),
        fake_data_rec=_rms(x_p.data, x_pp.data),
        real_latent_rec=_rms(z_rr.data, z_r.data),
        real_data_rec=_rms(probe_x, x_rr.data),
        loss_d=loss_d,
        loss_eg=loss_eg_value,
    )


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def _arch_records(arch: ArchConfig) -> dict[str, np.ndarray]:
    shape = [arch.data_shape] if arch.toy_mode else list(arch.data_shape)
    return {
        "arch/toy_mode": np.float64(arch.toy_mode),
        "arch/omit_h": np.float64(arch.omit_h),
        "arch/data_shape": np.asarray(shape, dtype=np.float64),
        "arch/latent_dim": np.float64(arch.latent_dim),
        "arch/secondary_latent_dim": np.float64(arch.secondary_latent_dim),
        "arch/base_channels": np.float64(arch.base_channels),
    }


def save_checkpoint(model: IganModel, opts: dict[str, Adam], step: int, path):
    """Persist model, optimizer moments, and step, then round the live
    buffers to the stored precision so training continues from exactly
    the persisted state."""
    records: dict[str, np.ndarray] = {"step": np.float64(step)}
    records.update(_arch_records(model.arch))
    for name, t, _ in model.named_tensors():
        records[f"model/{name}"] = t.data
    for group, opt in opts.items():
        records[f"opt/{group}/t"] = np.float64(opt.t)
        for name, _ in opt.params:
            records[f"opt/{group}/m/{name}"] = opt.m[name]
            records[f"opt/{group}/v/{name}"] = opt.v[name]
    ckpt.write_records(path, records)

    for _, t, _ in model.named_tensors():
        t.data[...] = ckpt.quantize(t.data)
    for opt in opts.values():
        for name, _ in opt.params:
            opt.m[name][...] = ckpt.quantize(opt.m[name])
            opt.v[name][...] = ckpt.quantize(opt.v[name])


def load_checkpoint(path) -> tuple[IganModel, dict, int]:
    """Rebuild (model, optimizer state, step) from a record file. The
    optimizer state is {"dfh"/"eg": {"m": ..., "v": ..., "t": ...}},
    ready for Adam.load_state once groups are constructed."""
    records = ckpt.read_records(path)
    for key in ("step", "arch/toy_mode", "arch/data_shape"):
        if key not in records:
            raise CheckpointError(f"{path}: missing record {key!r}")
    toy = bool(records["arch/toy_mode"])
    shape = records["arch/data_shape"].astype(int)
    arch = ArchConfig(
        data_shape=int(shape[0]) if toy else tuple(int(v) for v in shape),
        latent_dim=int(records["arch/latent_dim"]),
        secondary_latent_dim=int(records["arch/secondary_latent_dim"]),
        base_channels=int(records["arch/base_channels"]),
        omit_h=bool(records["arch/omit_h"]),
        toy_mode=toy,
    )
    model = build_model(arch, seed=0)
    for name, t, _ in model.named_tensors():
        key = f"model/{name}"
        if key not in records:
            raise CheckpointError(f"{path}: missing record {key!r}")
        if records[key].shape != t.data.shape:
            raise CheckpointError(
                f"{path}: {key!r} has shape {records[key].shape}, expected {t.data.shape}"
            )
        t.data[...] = records[key]

    opt_state: dict[str, dict] = {}
    for group in ("dfh", "eg"):
        t_key = f"opt/{group}/t"
        if t_key not in records:
            continue
        state = {"m": {}, "v": {}, "t": int(records[t_key])}
        for key, arr in records.items():
            for kind in ("m", "v"):
                prefix = f"opt/{group}/{kind}/"
                if key.startswith(prefix):
                    state[kind][key[len(prefix):]] = arr
        opt_state[group] = state
    return model, opt_state, int(records["step"])


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


def _check_finite(breakdown, step: int):
    for name, value in breakdown.terms():
        if not math.isfinite(value):
            raise TrainingDivergedError(name, step)


def make_optimizers(model: IganModel, cfg: TrainConfig) -> dict[str, Adam]:
    return {
        group: Adam(model.group_params(group), lr=cfg.learning_rate,
                    beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
        for group in ("dfh", "eg")
    }


def train(model: IganModel, dataset, cfg: TrainConfig, out_dir=None,
          resume_state: dict | None = None, start_step: int = 0,
          step_hook=None) -> tuple[IganModel, list[MetricsRecord]]:
    """Run cfg.steps alternating updates from start_step.

    Per step: d_steps_per_g discriminator-group updates on detached
    couples (E/G in eval mode, F batchnorm in train mode), then one
    encoder/generator update (E/G batchnorm in train mode, F frozen in
    eval mode). The same minibatch feeds every phase of the step.

    out_dir enables metrics CSV appending and periodic checkpoints;
    step_hook(model, step) fires after each checkpoint write.
    """
    cfg.validate()
    items = dataset.items if hasattr(dataset, "items") else np.asarray(dataset)
    n = items.shape[0]
    latent_dim = model.arch.latent_dim

    opts = make_optimizers(model, cfg)
    if resume_state:
        for group, opt in opts.items():
            if group in resume_state:
                opt.load_state(**resume_state[group])

    probe_x, probe_z = make_probe(cfg.seed, items, cfg.probe_size, latent_dim)
    metrics: list[MetricsRecord] = []

    csv_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "metrics.csv"
        if start_step == 0 or not csv_path.exists():
            with open(csv_path, "w") as f:
                f.write(metrics_header() + "\n")

    last_d = last_eg = math.nan
    for step in range(start_step + 1, start_step + cfg.steps + 1):
        idx = np.random.default_rng([cfg.seed, STREAM_ITEMS, step]).integers(
            0, n, size=cfg.batch_size)
        x_np = items[idx]
        z_np = np.random.default_rng([cfg.seed, STREAM_PRIOR, step]).standard_normal(
            (cfg.batch_size, latent_dim))
        x_r, z_p = Tensor(x_np), Tensor(z_np)

        for _ in range(cfg.d_steps_per_g):
            model.zero_grad()
            with T.no_grad():
                cb = forward_couples(model, x_r, z_p, mode="eval")
            br = loss_dfh(model, cb, mode="train", true_weight=cfg.true_weight)
            _check_finite(br, step)
            T.backward(br.total_d)
            opts["dfh"].step()
            last_d = br.total_d.item()

        model.zero_grad()
        cb = forward_couples(model, x_r, z_p, mode="train")
        br = loss_eg(model, cb, cfg.alpha, cfg.use_data_cycle, cfg.use_real_latent_rec)
        _check_finite(br, step)
        T.backward(br.total_eg)
        opts["eg"].step()
        last_eg = br.total_eg.item()

        if step % cfg.indicator_interval == 0:
            rec = compute_indicators(model, probe_x, probe_z, step, last_d, last_eg)
            metrics.append(rec)
            if csv_path is not None:
                with open(csv_path, "a") as f:
                    f.write(rec.row() + "\n")

        if out_dir is not None and step % cfg.checkpoint_interval == 0:
            save_checkpoint(model, opts, step, out_dir / f"checkpoint_{step:07d}.ckpt")
            if step_hook is not None:
                step_hook(model, step)

    final_step = start_step + cfg.steps
    if out_dir is not None and cfg.steps > 0 and final_step % cfg.checkpoint_interval != 0:
        save_checkpoint(model, opts, final_step, out_dir / f"checkpoint_{final_step:07d}.ckpt")
    return model, metrics
