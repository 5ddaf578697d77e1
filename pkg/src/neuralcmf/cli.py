"""Command line entry point.

Subcommands: phantom, train, track, warp, strain, metrics, sweep. Exit codes:
0 success, 1 usage error, 2 data error, 3 numerical failure. Every run writes
a run_manifest.json into --out with enough information to repeat the command;
timestamps live only there, so checkpoints and reports stay byte-reproducible.
Set NEURALCMF_LOG (debug/info/warning/error) to control verbosity.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import as_points, require
from .errors import (EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE,
                     DataError, NumericalError, UsageError)
from .geometry import write_trajectories_csv
from .metrics import (MetricsReport, hausdorff, motion_cosine, mte,
                      normalized_to_voxel, overlap_metrics)
from .strain import (aha_assign, local_directions, peak_global_strains,
                     strain_curves, write_strain_csv)
from .tracking import (cycle_residuals, phantom_step_motion_pairs,
                       track_points, warp_mask, warp_volume)
from .trainer import TrainConfig, load_checkpoint, train
from .volume_io import (MultiViewSequence, PhantomSpec, VolumeSequence,
                        load_manifest, phantom_endocardial_points,
                        phantom_shell_points, read_mask_blob, write_mask_blob,
                        write_phantom_dataset, write_volume_blob)

logger = logging.getLogger("neuralcmf.cli")


# ---------------------------------------------------------------------------
# Plumbing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse maps every parse problem to exit code 2; route through
    UsageError so the tool exits 1 on usage errors as documented."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}".rstrip())


@dataclass
class RunManifest:
    """Provenance record written next to every run's outputs."""

    subcommand: str
    argv: list
    config: dict
    inputs: dict
    outputs: list
    seed: object
    version: str
    started_at: str
    finished_at: str


def _utc_now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def emit_report(out_dir, name, payload):
    """Write a JSON report plus a flat human-readable summary.txt entry set.

    Returns the JSON path. NaN/Inf never appear: callers pass cleaned dicts
    (MetricsReport.to_dict maps them to None) so a strict parser accepts the
    file.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    _write_json(path, payload)
    lines = []

    def flatten(prefix, value):
        if isinstance(value, dict):
            for k in sorted(value):
                flatten(f"{prefix}{k}.", value[k])
        else:
            lines.append(f"{prefix[:-1]}: {value}")

    for key in sorted(payload):
        flatten(f"{key}.", payload[key])
    with open(out_dir / (path.stem + "_summary.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return path


def _finish_manifest(out_dir, subcommand, argv, config, inputs, outputs,
                     seed, started_at):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(subcommand=subcommand, argv=list(argv),
                           config=config, inputs=inputs, outputs=sorted(outputs),
                           seed=seed, version=__version__,
                           started_at=started_at, finished_at=_utc_now())
    _write_json(out_dir / "run_manifest.json", asdict(manifest))


def _parse_dims(text):
    parts = [int(p) for p in str(text).split(",")]
    if len(parts) == 1:
        parts = parts * 3
    require(len(parts) == 3, "--dims takes one integer or three comma-separated")
    return tuple(parts)


def _parse_triple(text, what="value"):
    parts = [float(p) for p in str(text).split(",")]
    if len(parts) == 1:
        parts = parts * 3
    require(len(parts) == 3, f"{what} takes one value or three comma-separated")
    return tuple(parts)


def _read_vectors(path):
    """(N, 3) vectors from a .npy file or a CSV (header row optional)."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    if p.suffix == ".npy":
        arr = np.load(p)
    else:
        with open(p, "r", encoding="utf-8") as f:
            first = f.readline()
        try:
            float(first.split(",")[0])
            skip = 0
        except ValueError:
            skip = 1
        arr = np.loadtxt(p, delimiter=",", skiprows=skip, ndmin=2)
    return as_points(arr, str(p))


def _dataset_dims(dataset):
    if isinstance(dataset, MultiViewSequence):
        return dataset.grid_dims
    return dataset.dims


def _load_net(ckpt_path):
    ckpt = load_checkpoint(ckpt_path)
    return ckpt, ckpt.network


def _require_phantom(dataset, why):
    if dataset.phantom is None:
        raise DataError(f"{why} needs a dataset with an embedded phantom spec")
    return dataset.phantom


# ---------------------------------------------------------------------------
# Shared training flags
# ---------------------------------------------------------------------------

_ALPHA_DEFAULTS = {"alpha1": 1.0, "alpha2": 0.1, "alpha3": 0.01}


def _add_train_flags(p):
    p.add_argument("--config", help="JSON file of TrainConfig fields; CLI flags win")
    p.add_argument("--iters", type=int, default=None, help="optimization iterations")
    p.add_argument("--batch", type=int, default=None, help="points per batch")
    p.add_argument("--lr0", type=float, default=None, help="initial learning rate")
    p.add_argument("--alpha1", type=float, default=None, help="intensity term weight")
    p.add_argument("--alpha2", type=float, default=None, help="round-trip distance weight")
    p.add_argument("--alpha3", type=float, default=None, help="L1 regularization weight")
    p.add_argument("--seed", type=int, default=None, help="RNG seed")
    p.add_argument("--threads", type=int, default=None, help="torch thread count")
    p.add_argument("--precision", choices=("f32", "f64"), default=None)
    p.add_argument("--cycle-fraction", type=float, default=None,
                   help="fraction of the batch given the full-cycle loss")
    p.add_argument("--frame-stride", type=int, default=None,
                   help="subsample frames during batch drawing")
    p.add_argument("--grad-clip", type=float, default=None,
                   help="global gradient-norm clip (0 disables)")
    p.add_argument("--ckpt-every", type=int, default=None,
                   help="also write a checkpoint every N iterations")
    p.add_argument("--no-motion-loss", action="store_true",
                   help="disable the one-step motion consistency loss")
    p.add_argument("--no-cycle-loss", action="store_true",
                   help="disable the full-cycle consistency loss")
    p.add_argument("--no-reg-loss", action="store_true",
                   help="disable the L1 motion regularization")


_FLAG_TO_FIELD = {
    "iters": "iterations", "batch": "batch_points", "lr0": "lr0",
    "alpha1": "alpha1", "alpha2": "alpha2", "alpha3": "alpha3",
    "seed": "seed", "threads": "threads", "precision": "precision",
    "cycle_fraction": "cycle_fraction", "frame_stride": "frame_stride",
    "grad_clip": "grad_clip", "ckpt_every": "ckpt_every",
}


def _resolve_train_config(args):
    """Defaults < config file < explicit flags."""
    base = TrainConfig().to_dict()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        require(isinstance(doc, dict), "config file must hold a JSON object")
        unknown = set(doc) - set(base)
        require(not unknown, f"unknown config keys: {sorted(unknown)}")
        base.update(doc)
    for attr, field_name in _FLAG_TO_FIELD.items():
        value = getattr(args, attr)
        if value is not None:
            base[field_name] = value
    for flag, field_name in (("no_motion_loss", "use_motion_loss"),
                             ("no_cycle_loss", "use_cycle_loss"),
                             ("no_reg_loss", "use_reg_loss")):
        if getattr(args, flag):
            base[field_name] = False
    return TrainConfig.from_dict(base)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_phantom(args, argv):
    started = _utc_now()
    spec = PhantomSpec(grid_dims=_parse_dims(args.dims), period_T=args.frames,
                       inner_radius=args.inner, outer_radius=args.outer,
                       amplitude=args.amp, texture_seed=args.texture_seed,
                       n_blobs=args.blobs)
    out = Path(args.out)
    write_phantom_dataset(spec, out, spacing_mm=_parse_triple(args.spacing_mm, "--spacing-mm"),
                          mode=args.mode, n_views=args.views,
                          image_hw=(args.image_hw, args.image_hw),
                          pose_jitter_deg=args.pose_jitter_deg,
                          jitter_seed=args.jitter_seed)
    _finish_manifest(out, "phantom", argv,
                     config={"spec": {k: list(v) if isinstance(v, tuple) else v
                                      for k, v in asdict(spec).items()},
                             "mode": args.mode},
                     inputs={}, outputs=["manifest.json"],
                     seed=args.texture_seed, started_at=started)
    return EXIT_OK


def _cmd_train(args, argv):
    started = _utc_now()
    dataset = load_manifest(args.data)
    if args.mode is not None:
        is_2d = isinstance(dataset, MultiViewSequence)
        want_2d = args.mode == "multiview2d"
        require(is_2d == want_2d,
                f"--mode {args.mode} does not match the dataset at {args.data}")
    config = _resolve_train_config(args)
    out = Path(args.out)
    train(config, dataset, out_dir=out, resume=args.resume)
    _finish_manifest(out, "train", argv, config=config.to_dict(),
                     inputs={"data": str(args.data),
                             "resume": str(args.resume) if args.resume else None},
                     outputs=["checkpoint.bin", "loss_log.csv"],
                     seed=config.seed, started_at=started)
    return EXIT_OK


def _cmd_track(args, argv):
    started = _utc_now()
    _, net = _load_net(args.ckpt)
    dataset = load_manifest(args.data)
    T = dataset.period_T
    if args.seeds:
        seeds = _read_vectors(args.seeds)
    else:
        spec = _require_phantom(dataset, "seedless tracking")
        seeds = phantom_shell_points(spec, args.n_seeds, t=args.t0, seed=args.seed)
    n_frames = args.frames if args.frames is not None else T
    trajectories = track_points(net, seeds, args.t0, n_frames, T, args.direction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories_csv(out / "trajectories.csv", trajectories,
                           _dataset_dims(dataset), dataset.spacing_mm)
    n_div = sum(1 for tr in trajectories if tr.divergent)
    emit_report(out, "track_report.json",
                {"n_seeds": int(seeds.shape[0]), "n_frames": int(n_frames),
                 "t0": int(args.t0), "direction": args.direction,
                 "n_divergent_points": n_div})
    _finish_manifest(out, "track", argv,
                     config={"t0": args.t0, "frames": n_frames,
                             "direction": args.direction},
                     inputs={"ckpt": str(args.ckpt), "data": str(args.data),
                             "seeds": args.seeds},
                     outputs=["trajectories.csv", "track_report.json"],
                     seed=args.seed, started_at=started)
    return EXIT_OK


def _cmd_warp(args, argv):
    started = _utc_now()
    _, net = _load_net(args.ckpt)
    dataset = load_manifest(args.data)
    require(isinstance(dataset, VolumeSequence),
            "warp needs a volume3d dataset (source frames to resample)")
    T = dataset.period_T
    t_src, t_dst = args.t_src, args.t_dst
    require(0 <= t_src < dataset.n_frames and 0 <= t_dst < dataset.n_frames,
            f"frames must lie in [0, {dataset.n_frames - 1}]")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = warp_volume(net, dataset.frames[t_src], t_src, t_dst, T)
    vol_name = f"warped_{t_src:04d}_to_{t_dst:04d}.f32raw"
    write_volume_blob(out / vol_name, result.grid)
    outputs = [vol_name]
    summary = {"t_src": t_src, "t_dst": t_dst,
               "mean_displacement_norm": float(result.displacement_magnitude.mean()),
               "max_displacement_norm": float(result.displacement_magnitude.max()),
               "masks": {}}
    targets = {m.region_tag: m for m in dataset.masks if m.frame_index == t_dst}
    for mask in dataset.masks:
        if mask.frame_index != t_src:
            continue
        warped = warp_mask(net, mask.grid, t_src, t_dst, T, mask.region_tag)
        name = f"mask_{mask.region_tag or 'region'}_{t_src:04d}_to_{t_dst:04d}.u8raw"
        write_mask_blob(out / name, warped.grid)
        outputs.append(name)
        entry = {"file": name}
        target = targets.get(mask.region_tag)
        if target is not None:
            overlap = overlap_metrics(warped.grid, target.grid)
            entry["dice"] = overlap.dice
            entry["jaccard"] = overlap.jaccard
        summary["masks"][mask.region_tag or "region"] = entry
    emit_report(out, "warp_summary.json", summary)
    outputs.append("warp_summary.json")
    _finish_manifest(out, "warp", argv, config={"t_src": t_src, "t_dst": t_dst},
                     inputs={"ckpt": str(args.ckpt), "data": str(args.data)},
                     outputs=outputs, seed=None, started_at=started)
    return EXIT_OK


def _cmd_strain(args, argv):
    started = _utc_now()
    _, net = _load_net(args.ckpt)
    dataset = load_manifest(args.data)
    T = dataset.period_T
    if args.points:
        points = _read_vectors(args.points)
        require(args.apex is not None and args.base_z is not None,
                "--points needs --apex and --base-z")
        apex = np.array(_parse_triple(args.apex, "--apex"))
        base_z = args.base_z
        # the long axis runs through the apex along +z
        axis_origin = apex
    else:
        spec = _require_phantom(dataset, "endocardial sampling")
        points, apex, base_z = phantom_endocardial_points(spec, args.n_points)
        axis_origin = spec.center
    assignment = aha_assign(points, apex, base_z)
    directions = local_directions(points, axis_origin=axis_origin)
    curves = strain_curves(net, assignment, directions, T)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_strain_csv(out / "strain_curves.csv", curves)
    emit_report(out, "strain_summary.json",
                {"peaks": peak_global_strains(curves),
                 "missing_segments": curves.missing_segments,
                 "segment_counts": [int(c) for c in curves.counts],
                 "period_T": T})
    _finish_manifest(out, "strain", argv, config={"n_points": args.n_points},
                     inputs={"ckpt": str(args.ckpt), "data": str(args.data),
                             "points": args.points},
                     outputs=["strain_curves.csv", "strain_summary.json"],
                     seed=None, started_at=started)
    return EXIT_OK


def _cmd_metrics(args, argv):
    started = _utc_now()
    have_motion = args.pred_motion or args.gt_motion
    have_masks = args.pred_mask or args.gt_mask
    if not have_motion and not have_masks:
        raise UsageError("metrics needs --pred-motion/--gt-motion and/or "
                         "--pred-mask/--gt-mask")
    spacing = _parse_triple(args.spacing_mm, "--spacing-mm")
    report = MetricsReport(hausdorff_is_hd95=bool(args.hd95),
                           config={"spacing_mm": list(spacing)})
    if have_motion:
        require(args.pred_motion and args.gt_motion,
                "motion metrics need both --pred-motion and --gt-motion",
                exc=UsageError)
        pred = _read_vectors(args.pred_motion)
        gt = _read_vectors(args.gt_motion)
        report.mte_mm = mte(pred, gt, spacing)
        cos = motion_cosine(pred, gt)
        report.cosine_similarity = cos.mean
        report.cosine_points_used = cos.n_used
        report.cosine_points_skipped = cos.n_skipped
        report.n_points = int(pred.shape[0])
    if have_masks:
        require(args.pred_mask and args.gt_mask and args.mask_dims,
                "mask metrics need --pred-mask, --gt-mask and --mask-dims",
                exc=UsageError)
        dims = _parse_dims(args.mask_dims)
        a = read_mask_blob(args.pred_mask, dims)
        b = read_mask_blob(args.gt_mask, dims)
        overlap = overlap_metrics(a, b)
        report.dice = overlap.dice
        report.jaccard = overlap.jaccard
        report.hausdorff_mm = hausdorff(a, b, spacing, hd95=args.hd95)
        report.n_voxels_a = int(a.sum())
        report.n_voxels_b = int(b.sum())
    out = Path(args.out)
    emit_report(out, "metrics.json", report.to_dict())
    _finish_manifest(out, "metrics", argv, config=report.config,
                     inputs={"pred_motion": args.pred_motion,
                             "gt_motion": args.gt_motion,
                             "pred_mask": args.pred_mask,
                             "gt_mask": args.gt_mask},
                     outputs=["metrics.json"], seed=None, started_at=started)
    return EXIT_OK


_LOSS_CELLS = {
    "full": {},
    "no-motion": {"use_motion_loss": False},
    "no-cycle": {"use_cycle_loss": False},
    "no-reg": {"use_reg_loss": False},
    "image-only": {"use_motion_loss": False, "use_cycle_loss": False,
                   "use_reg_loss": False},
}

_SWEEP_DEFAULT = {"alpha1": "1", "alpha2": "0.1", "alpha3": "0.01",
                  "losses": "full"}


def _cmd_sweep(args, argv):
    started = _utc_now()
    dataset = load_manifest(args.data)
    spec = _require_phantom(dataset, "sweep evaluation")
    base = _resolve_train_config(args).to_dict()
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    require(values, "--values must list at least one cell")
    out = Path(args.out)
    dims = np.asarray(_dataset_dims(dataset), dtype=np.float64)
    cells = []
    for value in values:
        doc = dict(base)
        if args.param == "losses":
            require(value in _LOSS_CELLS,
                    f"unknown loss cell {value!r}; choose from {sorted(_LOSS_CELLS)}")
            doc.update(_LOSS_CELLS[value])
        else:
            doc[args.param] = float(value)
        config = TrainConfig.from_dict(doc)
        label = f"{args.param}_{value}"
        cell_dir = out / label
        cell_started = _utc_now()
        ckpt = train(config, dataset, out_dir=cell_dir)
        pred, gt = phantom_step_motion_pairs(ckpt.network, spec,
                                             args.eval_points, seed=args.eval_seed)
        pred_vox = normalized_to_voxel(pred, dims)
        gt_vox = normalized_to_voxel(gt, dims)
        cos = motion_cosine(pred_vox, gt_vox)
        residual = float(np.mean(cycle_residuals(ckpt.network, spec,
                                                 args.eval_points, seed=args.eval_seed)))
        report = MetricsReport(mte_mm=mte(pred_vox, gt_vox, dataset.spacing_mm),
                               cosine_similarity=cos.mean,
                               cosine_points_used=cos.n_used,
                               cosine_points_skipped=cos.n_skipped,
                               n_points=pred.shape[0],
                               config=config.to_dict())
        payload = report.to_dict()
        payload["cycle_residual_norm"] = residual
        emit_report(cell_dir, "metrics.json", payload)
        _finish_manifest(cell_dir, "sweep-cell", argv, config=config.to_dict(),
                         inputs={"data": str(args.data)},
                         outputs=["checkpoint.bin", "loss_log.csv", "metrics.json"],
                         seed=config.seed, started_at=cell_started)
        cells.append({"label": label, "value": value, "mte_mm": payload["mte_mm"],
                      "cosine_similarity": payload["cosine_similarity"],
                      "cycle_residual_norm": residual})
    ranked = sorted(cells, key=lambda c: c["mte_mm"])
    default_value = _SWEEP_DEFAULT[args.param]
    default_rank = next((i + 1 for i, c in enumerate(ranked)
                         if c["value"] == default_value), None)
    emit_report(out, "sweep_summary.json",
                {"param": args.param, "cells": cells,
                 "ranking_by_mte": [c["label"] for c in ranked],
                 "default_value": default_value,
                 "default_rank": default_rank})
    _finish_manifest(out, "sweep", argv,
                     config={"param": args.param, "values": values,
                             "base": base},
                     inputs={"data": str(args.data)},
                     outputs=[f"{c['label']}/metrics.json" for c in cells]
                     + ["sweep_summary.json"],
                     seed=base["seed"], started_at=started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="neuralcmf",
                     description="Self-supervised neural cardiac motion field")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="subcommand",
                                required=True)

    p = sub.add_parser("phantom", help="generate a synthetic beating phantom")
    p.add_argument("--out", required=True)
    p.add_argument("--dims", default="32", help="grid size, e.g. 32 or 32,32,24")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--amp", type=float, default=0.2, help="contraction amplitude")
    p.add_argument("--inner", type=float, default=0.25)
    p.add_argument("--outer", type=float, default=0.35)
    p.add_argument("--blobs", type=int, default=40, help="texture blob count")
    p.add_argument("--texture-seed", type=int, default=0)
    p.add_argument("--spacing-mm", default="1.0")
    p.add_argument("--mode", choices=("volume3d", "multiview2d"),
                   default="volume3d")
    p.add_argument("--views", type=int, default=8, help="views in multiview2d mode")
    p.add_argument("--image-hw", type=int, default=64, help="view image side length")
    p.add_argument("--pose-jitter-deg", type=float, default=0.0,
                   help="rotation error injected into stored initial poses")
    p.add_argument("--jitter-seed", type=int, default=1)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("train", help="fit the field to a sequence")
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("volume3d", "multiview2d"), default=None,
                   help="assert the dataset kind instead of inferring it")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("track", help="track points through the cycle")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default=None,
                   help="CSV/.npy of normalized seed points; default phantom shell")
    p.add_argument("--n-seeds", type=int, default=1000)
    p.add_argument("--t0", type=int, default=0)
    p.add_argument("--frames", type=int, default=None,
                   help="trajectory length (default one full cycle)")
    p.add_argument("--direction", choices=("fwd", "bwd"), default="fwd")
    p.add_argument("--seed", type=int, default=0, help="shell sampling seed")
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser("warp", help="warp a frame (and its masks) to another frame")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t-src", type=int, required=True)
    p.add_argument("--t-dst", type=int, required=True)
    p.set_defaults(func=_cmd_warp)

    p = sub.add_parser("strain", help="AHA segment strain curves")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points", default=None,
                   help="CSV/.npy endocardial points (default: phantom surface)")
    p.add_argument("--apex", default=None, help="apex point x,y,z for --points")
    p.add_argument("--base-z", type=float, default=None,
                   help="basal plane coordinate for --points")
    p.add_argument("--n-points", type=int, default=2000)
    p.set_defaults(func=_cmd_strain)

    p = sub.add_parser("metrics", help="compare prediction files to ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--pred-motion", default=None)
    p.add_argument("--gt-motion", default=None)
    p.add_argument("--pred-mask", default=None)
    p.add_argument("--gt-mask", default=None)
    p.add_argument("--mask-dims", default=None, help="mask grid size, e.g. 32,32,32")
    p.add_argument("--spacing-mm", default="1.0")
    p.add_argument("--hd95", action="store_true",
                   help="95th percentile Hausdorff instead of the maximum")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("sweep", help="grid of training runs with one report per cell")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", required=True,
                   choices=("alpha1", "alpha2", "alpha3", "losses"))
    p.add_argument("--values", required=True,
                   help="comma list, e.g. 0.01,0.1,1,2 or full,no-motion,no-cycle")
    p.add_argument("--eval-points", type=int, default=2000)
    p.add_argument("--eval-seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_sweep)

    return parser


def _configure_logging():
    level_name = os.environ.get("NEURALCMF_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def cli_dispatch(argv):
    """Parse argv (without the program name) and run the subcommand.

    Returns the exit code on success; error conditions raise UsageError,
    DataError or NumericalError, which main() maps to exit codes 1/2/3.
    """
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(list(argv))
    return args.func(args, list(argv))


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        return cli_dispatch(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SystemExit as exc:  # argparse --help/--version
        return exc.code if isinstance(exc.code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
