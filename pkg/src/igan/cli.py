"""Command line entry points.

Subcommands: train, eval, reconstruct, generate, arith, translate,
export-latents. Every command takes --config PATH plus trailing key=value
overrides where a dataset is involved. Exit codes: 0 success, 2 config
error, 3 data or checkpoint error, 4 training diverged.

Artifact names embed the producing step or seed. Re-running a command
never silently replaces an artifact with different bytes: existing files
are compared against the new content and a conflict aborts the run.
Figures (PNG) are exempt views of the delimited data and are re-rendered.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, build_dataset, load_config, serialize_config
from .data import export_grid, sample_prior
from .errors import (
    ArtifactConflictError,
    CheckpointError,
    ConfigError,
    DataError,
    TrainingDivergedError,
)
from .latent import (
    apply_attribute,
    attribute_vector,
    encode_dataset,
    export_latents_csv,
    generate,
    knn_purity,
    reconstruct,
    round_trip,
    translate,
)
from .losses import minimax_value
from .networks import IganModel, build_model
from .plots import render_metrics_figure, render_scatter_figure
from .tensor import Tensor
from .training import (
    compute_indicators,
    load_checkpoint,
    make_probe,
    read_metrics_csv,
    train,
)


# ---------------------------------------------------------------------------
# artifact plumbing
# ---------------------------------------------------------------------------


def _write_artifact(path: Path, data: bytes):
    """Create path with data; identical rerun is a no-op, a differing
    existing file is a conflict rather than a silent overwrite."""
    path = Path(path)
    if path.exists():
        if path.read_bytes() == data:
            return
        raise ArtifactConflictError(
            f"{path} already exists with different content; "
            "refusing to overwrite (use a fresh out_dir)")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _capture(write_fn) -> bytes:
    """Run a path-writing function against a temp file, return the bytes."""
    fd, tmp = tempfile.mkstemp(suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        return Path(tmp).read_bytes()
    finally:
        os.unlink(tmp)


def _points_csv(points: np.ndarray) -> bytes:
    header = ",".join(f"x{i}" for i in range(points.shape[1]))
    lines = [header]
    lines += [",".join("%.17g" % v for v in row) for row in points]
    return ("\n".join(lines) + "\n").encode("ascii")


def _emit_batch(out: Path, stem: str, batch: np.ndarray, cols: int,
                scatter_groups=None):
    """One artifact per batch: delimited CSV for 2-d toy points (plus a
    scatter figure), a tiled PGM/PPM grid for image batches."""
    if batch.ndim == 2:
        _write_artifact(out / f"{stem}.csv", _points_csv(batch))
        if batch.shape[1] == 2:
            groups = scatter_groups or [(batch, stem)]
            render_scatter_figure(groups, out / f"{stem}.png", title=stem)
    else:
        ext = ".pgm" if batch.shape[1] == 1 else ".ppm"
        data = _capture(lambda p: export_grid(batch, cols, p))
        _write_artifact(out / f"{stem}{ext}", data)


def _emit_samples(model: IganModel, cfg: RunConfig, out: Path, step: int,
                  z_vis: np.ndarray, x_vis: np.ndarray):
    """Periodic training report: generated samples and reconstructions."""
    samples = generate(model, z_vis)
    recon = reconstruct(model, x_vis)
    _emit_batch(out, f"samples_step{step:07d}", samples, cfg.sample_grid_cols,
                scatter_groups=[(x_vis, "data"), (samples, "generated")])
    _emit_batch(out, f"recon_step{step:07d}", recon, cfg.sample_grid_cols,
                scatter_groups=[(x_vis, "data"), (recon, "reconstructed")])


def _load_model(path) -> tuple[IganModel, dict, int]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _prepare(args, need_dataset: bool = True):
    cfg = load_config(args.config, list(args.overrides))
    dataset = build_dataset(cfg) if need_dataset else None
    return cfg, dataset


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg, dataset = _prepare(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = serialize_config(cfg).encode("ascii")
    if args.resume:
        # resuming raises steps past the previous resolved value on purpose
        (out / "config.resolved").write_bytes(resolved)
    else:
        _write_artifact(out / "config.resolved", resolved)

    arch = cfg.arch_config()
    start_step = 0
    resume_state = None
    if args.resume:
        model, resume_state, start_step = _load_model(args.resume)
        if model.arch != arch:
            raise ConfigError("checkpoint architecture does not match config")
    else:
        model = build_model(arch, cfg.seed)

    remaining = cfg.steps - start_step
    if remaining < 0:
        raise ConfigError(
            f"checkpoint is at step {start_step}, beyond steps={cfg.steps}")
    tcfg = replace(cfg.train_config(), steps=remaining)

    n_vis = cfg.sample_grid_cols * cfg.sample_grid_cols
    z_vis = sample_prior(arch.latent_dim, n_vis, cfg.seed)
    x_vis = dataset.items[:n_vis].copy()

    def hook(m, step):
        _emit_samples(m, cfg, out, step, z_vis, x_vis)

    model, _ = train(model, dataset, tcfg, out_dir=str(out),
                     resume_state=resume_state, start_step=start_step,
                     step_hook=hook)

    final_step = cfg.steps
    if remaining > 0:
        _emit_samples(model, cfg, out, final_step, z_vis, x_vis)
    records = read_metrics_csv(out / "metrics.csv")
    if records:
        render_metrics_figure(records, out / "metrics.png")
    print(f"trained to step {final_step}; metrics in {out / 'metrics.csv'}")
    return 0


def cmd_eval(args) -> int:
    cfg, dataset = _prepare(args)
    model, _, step = _load_model(args.checkpoint)
    out = Path(cfg.out_dir)

    probe_x, probe_z = make_probe(cfg.seed, dataset.items, cfg.probe_size,
                                  model.arch.latent_dim)
    rec = compute_indicators(model, probe_x, probe_z, step=step)
    mm = minimax_value(model, Tensor(probe_x), Tensor(probe_z))

    latents = encode_dataset(model, dataset)
    purity = ""
    if latents.labels is not None:
        purity = repr(knn_purity(latents, k=cfg.knn_k))

    header = ("step,d_score_true,d_score_k1,prior_latent_rec,fake_data_rec,"
              "real_latent_rec,real_data_rec,minimax_value,knn_purity")
    row = ",".join([
        str(step), repr(rec.d_score_true), repr(rec.d_score_k1),
        repr(rec.prior_latent_rec), repr(rec.fake_data_rec),
        repr(rec.real_latent_rec), repr(rec.real_data_rec), repr(mm), purity,
    ])
    _write_artifact(out / f"eval_step{step:07d}.csv",
                    (header + "\n" + row + "\n").encode("ascii"))
    print(header)
    print(row)
    return 0


def cmd_reconstruct(args) -> int:
    cfg, dataset = _prepare(args)
    model, _, step = _load_model(args.checkpoint)
    out = Path(cfg.out_dir)
    x = dataset.items[: args.n]
    recon = reconstruct(model, x)
    _emit_batch(out, f"recon_step{step:07d}", recon, cfg.sample_grid_cols,
                scatter_groups=[(x, "data"), (recon, "reconstructed")])
    print(f"reconstructed {x.shape[0]} items at step {step} into {out}")
    return 0


def cmd_generate(args) -> int:
    model, _, step = _load_model(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    z = sample_prior(model.arch.latent_dim, args.n, args.seed)
    samples = generate(model, z)
    _emit_batch(out, f"samples_step{step:07d}_seed{args.seed}", samples,
                args.cols)
    print(f"generated {args.n} samples at step {step} into {out}")
    return 0


def cmd_arith(args) -> int:
    cfg, dataset = _prepare(args)
    model, _, step = _load_model(args.checkpoint)
    out = Path(cfg.out_dir)

    latents = encode_dataset(model, dataset)
    minus = attribute_vector(latents, args.minus)
    plus = attribute_vector(latents, args.plus)
    x = dataset.items[: args.n]
    moved = apply_attribute(model, x, minus, plus)
    stem = f"arith_step{step:07d}_{args.minus}_to_{args.plus}"
    _emit_batch(out, stem, moved, cfg.sample_grid_cols,
                scatter_groups=[(x, "data"), (moved, "shifted")])
    print(f"applied -{args.minus} +{args.plus} to {x.shape[0]} items at "
          f"step {step} into {out}")
    return 0


def cmd_translate(args) -> int:
    cfg, dataset = _prepare(args)
    model_a, _, step_a = _load_model(args.checkpoint_a)
    model_b, _, step_b = _load_model(args.checkpoint_b)
    out = Path(cfg.out_dir)

    x = dataset.items[: args.n]
    moved = translate(model_a, model_b, x)
    back = round_trip(model_a, model_b, x)
    tag = f"step{step_a:07d}_to_step{step_b:07d}"
    _emit_batch(out, f"translated_{tag}", moved, cfg.sample_grid_cols,
                scatter_groups=[(x, "source"), (moved, "translated")])
    _emit_batch(out, f"roundtrip_{tag}", back, cfg.sample_grid_cols,
                scatter_groups=[(x, "source"), (back, "round trip")])
    print(f"translated {x.shape[0]} items ({tag}) into {out}")
    return 0


def cmd_export_latents(args) -> int:
    cfg, dataset = _prepare(args)
    model, _, step = _load_model(args.checkpoint)
    out = Path(cfg.out_dir)

    latents = encode_dataset(model, dataset)
    data = _capture(lambda p: export_latents_csv(latents, p))
    _write_artifact(out / f"latents_step{step:07d}.csv", data)
    if latents.latents.shape[1] == 2:
        if latents.labels is not None:
            groups = [(latents.latents[latents.labels == lab], str(lab))
                      for lab in np.unique(latents.labels)]
        else:
            groups = [(latents.latents, "latents")]
        render_scatter_figure(groups, out / f"latents_step{step:07d}.png",
                              title="encoded latents")
    print(f"exported {len(latents.latents)} latents at step {step} into {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_config_args(sp):
    sp.add_argument("--config", required=True, help="key=value config file")
    sp.add_argument("overrides", nargs="*", metavar="key=value",
                    help="override config entries")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="igan",
        description="entangled adversarial training of coupled "
                    "encoder/generator pairs")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train a model from a config")
    _add_config_args(sp)
    sp.add_argument("--resume", default=None,
                    help="checkpoint to continue from")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="indicators and kNN purity summary")
    sp.add_argument("--checkpoint", required=True)
    _add_config_args(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("reconstruct", help="G(E(x)) on dataset items")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--n", type=int, default=64)
    _add_config_args(sp)
    sp.set_defaults(fn=cmd_reconstruct)

    sp = sub.add_parser("generate", help="G(z) on fresh prior samples")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--cols", type=int, default=4)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("arith", help="attribute vector arithmetic")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--minus", required=True)
    sp.add_argument("--plus", required=True)
    sp.add_argument("--n", type=int, default=64)
    _add_config_args(sp)
    sp.set_defaults(fn=cmd_arith)

    sp = sub.add_parser("translate",
                        help="map dataset items through two models")
    sp.add_argument("--checkpoint-a", required=True)
    sp.add_argument("--checkpoint-b", required=True)
    sp.add_argument("--n", type=int, default=256)
    _add_config_args(sp)
    sp.set_defaults(fn=cmd_translate)

    sp = sub.add_parser("export-latents", help="encode dataset to CSV")
    sp.add_argument("--checkpoint", required=True)
    _add_config_args(sp)
    sp.set_defaults(fn=cmd_export_latents)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, ArtifactConflictError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
