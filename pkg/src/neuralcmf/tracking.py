"""Post-training queries: point trajectories, volume and mask warping, and
phantom-oracle motion evaluation."""

from dataclasses import dataclass

import numpy as np
import torch

from ._validation import as_points, check_period, require
from .geometry import Trajectory, advect_chain, normalize_time
from .volume_io import (LabeledMask, phantom_shell_points, phantom_true_motion,
                        trilinear_sample)

_CHUNK = 100_000


@dataclass
class WarpResult:
    grid: np.ndarray
    t_src: int
    t_dst: int
    displacement_magnitude: np.ndarray   # per-voxel pull distance, diagnostic


def predict_motion(net, X, t, T, direction="fwd"):
    """Field motion vectors at points X and frame t, as float64 numpy."""
    require(direction in ("fwd", "bwd"), f"direction must be 'fwd' or 'bwd', got {direction!r}")
    pts = as_points(X, "query points")
    with torch.no_grad():
        sample = net(torch.as_tensor(pts, dtype=net.dtype), normalize_time(int(t), T))
    m = sample.m_fwd if direction == "fwd" else sample.m_bwd
    return m.double().numpy()


def track_points(net, seeds, t0, n_frames, T, direction="fwd"):
    """Trajectories of arbitrary seed points (not restricted to grid nodes).

    Args:
        net: trained FieldNetwork.
        seeds: (N, 3) points in [0, 1]^3 at frame t0.
        t0: start frame.
        n_frames: number of single-frame moves per trajectory.
        T: cycle period.
        direction: "fwd" or "bwd".

    Returns:
        list of N Trajectory objects; divergence is flagged per trajectory.
    """
    pts = as_points(seeds, "seeds")
    require(float(pts.min()) >= 0.0 and float(pts.max()) <= 1.0,
            "seeds must lie inside [0, 1]^3")
    points, frames, div_step = advect_chain(net, pts, t0, n_frames, direction, T)
    out = []
    for i in range(pts.shape[0]):
        d = int(div_step[i])
        out.append(Trajectory(start=pts[i], direction=direction, frames=frames,
                              points=points[:, i, :], divergent=d >= 0,
                              divergence_step=(d if d >= 0 else None)))
    return out


def _pull_positions(net, dims, t_src, t_dst, T):
    """Pre-image at t_src of every voxel center at t_dst, chunked."""
    axes = [np.arange(d, dtype=np.float64) / (d - 1.0) for d in dims]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    start = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    steps = abs(int(t_dst) - int(t_src))
    if steps == 0:
        return start, start
    direction = "bwd" if t_src < t_dst else "fwd"
    ends = np.empty_like(start)
    for lo in range(0, start.shape[0], _CHUNK):
        chunk = start[lo:lo + _CHUNK]
        points, _, _ = advect_chain(net, chunk, t_dst, steps, direction, T)
        ends[lo:lo + _CHUNK] = points[-1]
    return start, ends


def warp_volume(net, source_grid, t_src, t_dst, T):
    """Warp a source-frame grid onto the target frame by backward pull.

    Each output voxel at t_dst is tracked to its pre-image at t_src through
    the field's own motion chain and filled by trilinear sampling of the
    source (pull warping avoids scatter holes). t_src == t_dst copies.
    """
    grid = np.asarray(source_grid)
    require(grid.ndim == 3, f"source grid must be 3D, got shape {grid.shape}")
    check_period(T)
    if int(t_src) == int(t_dst):
        return WarpResult(grid=grid.copy(), t_src=int(t_src), t_dst=int(t_dst),
                          displacement_magnitude=np.zeros(grid.shape))
    start, ends = _pull_positions(net, grid.shape, t_src, t_dst, T)
    values = trilinear_sample(grid, ends).reshape(grid.shape).astype(grid.dtype, copy=False)
    disp = np.linalg.norm(ends - start, axis=1).reshape(grid.shape)
    return WarpResult(grid=values, t_src=int(t_src), t_dst=int(t_dst),
                      displacement_magnitude=disp)


def warp_mask(net, mask, t_src, t_dst, T, region_tag=""):
    """Warp a binary mask like warp_volume, then re-binarize at 0.5."""
    arr = np.asarray(mask)
    require(np.all((arr == 0) | (arr == 1)), "mask values must be 0 or 1")
    if int(t_src) == int(t_dst):
        warped = arr.astype(np.uint8).copy()
    else:
        pulled = warp_volume(net, arr.astype(np.float64), t_src, t_dst, T).grid
        warped = (pulled >= 0.5).astype(np.uint8)
    return LabeledMask(grid=warped, frame_index=int(t_dst), region_tag=region_tag)


# ---------------------------------------------------------------------------
# Phantom-oracle evaluation
# ---------------------------------------------------------------------------

def phantom_step_motion_pairs(net, spec, n_points, seed=0):
    """Predicted vs true per-step forward motion over the full cycle.

    For every frame t, n_points are drawn uniformly from the advected shell
    at t and the field's forward motion there is paired with the closed-form
    truth. Returns (pred, gt), each (T * n_points, 3) in normalized units.
    """
    preds, gts = [], []
    for t in range(spec.period_T):
        pts = phantom_shell_points(spec, n_points, t=t, seed=seed + t)
        preds.append(predict_motion(net, pts, t, spec.period_T, "fwd"))
        gts.append(phantom_true_motion(spec, pts, t, "fwd"))
    return np.concatenate(preds), np.concatenate(gts)


def cycle_residuals(net, spec, n_points, seed=0):
    """Norm of (full-cycle composed endpoint - start) for shell seed points."""
    pts = phantom_shell_points(spec, n_points, t=0, seed=seed)
    points, _, _ = advect_chain(net, pts, 0, spec.period_T, "fwd", spec.period_T)
    return np.linalg.norm(points[-1] - points[0], axis=1)
