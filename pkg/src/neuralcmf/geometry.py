"""Time normalization, point advection, cycle composition, and the virtual
slicing operator with learnable rigid view poses."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ._validation import as_points, as_vec3, check_period, require
from .volume_io import VolumeSequence, sample_intensity

# Trajectories wandering outside this box are flagged divergent; the margin is
# generous so the guard never triggers on plausible cardiac motion.
DIVERGE_LO = -0.5
DIVERGE_HI = 1.5

# The pixel plane is centered on the cube center before the pose is applied,
# so the identity pose slices the axial plane z = 0.5.
PLANE_CENTER = (0.5, 0.5, 0.5)


@dataclass
class ViewPose:
    """Rigid pose of one imaging plane: axis-angle rotation plus translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation_trainable: bool = True
    translation_trainable: bool = True

    def __post_init__(self):
        self.rotation = as_vec3(self.rotation, "rotation")
        self.translation = as_vec3(self.translation, "translation")


@dataclass
class Trajectory:
    """Path of one tracked point, one entry per frame."""

    start: np.ndarray
    direction: str
    frames: np.ndarray       # (n + 1,) integer frame labels, consecutive
    points: np.ndarray       # (n + 1, 3) normalized positions
    divergent: bool = False
    divergence_step: "int | None" = None


def normalize_time(t, T):
    """Map an integer frame to (t mod T) / T in [0, 1).

    Periodic: t + k T maps with t for any integer k. Accepts scalars, numpy
    arrays, or torch tensors (pass a float tensor to keep the dtype).
    """
    T = check_period(T)
    if torch.is_tensor(t):
        return torch.remainder(t, T) / T
    out = np.mod(t, T) / T
    return float(out) if np.ndim(t) == 0 else out


def advect(X, m):
    """Move points by their displacement: X + m, no clamping."""
    return X + m


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------

def rotation_matrix(rotvec):
    """Rotation matrix from an axis-angle vector, differentiable (torch).

    Accepts (3,) or (K, 3); returns (3, 3) or (K, 3, 3). The small-angle
    branch switches to series coefficients so the map stays smooth at zero.
    """
    single = rotvec.dim() == 1
    w = rotvec.reshape(-1, 3)
    theta2 = (w * w).sum(dim=-1)
    small = theta2 < 1e-8
    theta2_safe = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(theta2_safe)
    A = torch.where(small, 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
                    torch.sin(theta) / theta)
    B = torch.where(small, 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
                    (1.0 - torch.cos(theta)) / theta2_safe)
    zeros = torch.zeros_like(theta2)
    wx, wy, wz = w[:, 0], w[:, 1], w[:, 2]
    K = torch.stack([
        torch.stack([zeros, -wz, wy], dim=-1),
        torch.stack([wz, zeros, -wx], dim=-1),
        torch.stack([-wy, wx, zeros], dim=-1),
    ], dim=-2)
    eye = torch.eye(3, dtype=rotvec.dtype, device=rotvec.device).expand(w.shape[0], 3, 3)
    R = eye + A[:, None, None] * K + B[:, None, None] * (K @ K)
    return R[0] if single else R


def rotation_matrix_numpy(rotvec):
    """Rotation matrix from an axis-angle vector as a float64 numpy array."""
    rv = torch.as_tensor(as_vec3(rotvec, "rotation"), dtype=torch.float64)
    return rotation_matrix(rv).numpy()


def default_view_rotations(n_views):
    """Axis-angle poses of n planes that contain the long axis, rotated
    uniformly over a full turn about it (the rotational acquisition layout)."""
    from scipy.spatial.transform import Rotation
    require(n_views >= 1, f"need at least one view, got {n_views}")
    out = np.zeros((n_views, 3))
    tilt = Rotation.from_euler("x", math.pi / 2.0)
    for k in range(n_views):
        phi = 2.0 * math.pi * k / n_views
        out[k] = (Rotation.from_euler("z", phi) * tilt).as_rotvec()
    return out


def perturb_rotation(rotvec, angle_rad, rng):
    """Compose a rotation about a random axis by exactly angle_rad onto rotvec."""
    from scipy.spatial.transform import Rotation
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return (Rotation.from_rotvec(axis * angle_rad)
            * Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64))).as_rotvec()


def rotation_angle_between(rotvec_a, rotvec_b):
    """Geodesic angle in radians between two axis-angle rotations."""
    from scipy.spatial.transform import Rotation
    ra = Rotation.from_rotvec(np.asarray(rotvec_a, dtype=np.float64))
    rb = Rotation.from_rotvec(np.asarray(rotvec_b, dtype=np.float64))
    return float((ra.inv() * rb).magnitude())


# ---------------------------------------------------------------------------
# Virtual slicing
# ---------------------------------------------------------------------------

def plane_grid(h, w, dtype=np.float64):
    """Centered plane coordinates of an h x w pixel grid, shape (h * w, 3).

    Pixel (row, col) maps to (u - 1/2, v - 1/2, 0) with u = col / (w - 1) and
    v = row / (h - 1); rows are laid out in image (C) order.
    """
    require(h >= 2 and w >= 2, f"plane grid must be at least 2 x 2, got ({h}, {w})")
    u = np.arange(w, dtype=dtype) / (w - 1.0) - 0.5
    v = np.arange(h, dtype=dtype) / (h - 1.0) - 0.5
    vv, uu = np.meshgrid(v, u, indexing="ij")
    return np.stack([uu.ravel(), vv.ravel(), np.zeros(h * w, dtype=dtype)], axis=1)


def apply_poses(rotations, translations, plane, view_idx):
    """World coordinates of plane points under per-view rigid poses (torch).

    rotations/translations: (K, 3) tensors; plane: (N, 3); view_idx: (N,).
    Differentiable in the pose tensors, which is what makes the poses
    optimizable jointly with the field.
    """
    R = rotation_matrix(rotations)
    Rp = torch.einsum("nij,nj->ni", R[view_idx], plane)
    center = torch.tensor(PLANE_CENTER, dtype=plane.dtype, device=plane.device)
    return Rp + center + translations[view_idx]


def pose_world_points(pose, h, w):
    """Numpy world coordinates of every pixel of a posed h x w plane."""
    R = rotation_matrix_numpy(pose.rotation)
    return plane_grid(h, w) @ R.T + np.asarray(PLANE_CENTER) + pose.translation


def slice_image(source, pose, hw, t, period_T=None):
    """Synthesize the 2D image a posed plane sees at frame t.

    Args:
        source: VolumeSequence (sampled trilinearly, outside voxels are 0) or
            a field network (evaluated directly; defined everywhere).
        pose: ViewPose.
        hw: (rows, cols) of the pixel grid.
        t: integer frame index.
        period_T: cycle length, required for a network source.

    Returns:
        float64 image of shape hw.
    """
    h, w = (int(v) for v in hw)
    world = pose_world_points(pose, h, w)
    if isinstance(source, VolumeSequence):
        vals = sample_intensity(source, world, t)
    else:
        require(period_T is not None, "period_T is required for a network source")
        with torch.no_grad():
            sample = source(torch.as_tensor(world, dtype=source.dtype),
                            normalize_time(int(t), period_T))
        vals = sample.intensity.double().numpy()
    return vals.reshape(h, w)


# ---------------------------------------------------------------------------
# Cycle composition
# ---------------------------------------------------------------------------

def advect_chain(net, X, t0, steps, direction, T):
    """Chain advection of a batch of points through the field's own motion.

    Args:
        net: FieldNetwork.
        X: (N, 3) start points at frame t0 (numpy).
        t0: integer start frame.
        steps: number of single-frame moves, >= 1.
        direction: "fwd" or "bwd".
        T: cycle period for time wrapping.

    Returns:
        (points, frames, div_step): float64 positions (steps + 1, N, 3),
        integer frame labels (steps + 1,), and per-point index of the first
        step whose result left the divergence box (-1 when none did).
    """
    require(steps >= 1, f"steps must be >= 1, got {steps}")
    require(direction in ("fwd", "bwd"), f"direction must be 'fwd' or 'bwd', got {direction!r}")
    T = check_period(T)
    sign = 1 if direction == "fwd" else -1
    pts = as_points(X, "start points")
    n = pts.shape[0]
    out = np.empty((steps + 1, n, 3), dtype=np.float64)
    out[0] = pts
    frames = t0 + sign * np.arange(steps + 1)
    div_step = np.full(n, -1, dtype=np.int64)
    cur = torch.as_tensor(pts, dtype=net.dtype)
    with torch.no_grad():
        for k in range(steps):
            sample = net(cur, normalize_time(int(frames[k]), T))
            m = sample.m_fwd if direction == "fwd" else sample.m_bwd
            cur = cur + m
            stepped = cur.double().numpy()
            out[k + 1] = stepped
            outside = np.any((stepped < DIVERGE_LO) | (stepped > DIVERGE_HI), axis=1)
            div_step[(div_step < 0) & outside] = k + 1
    return out, frames, div_step


def compose_cycle(net, X0, t0, steps, direction="fwd", T=None):
    """Trajectory of one point under repeated advection by the field.

    trajectory[k + 1] = trajectory[k] + m(trajectory[k], t0 +- k); a point
    leaving the divergence box is returned flagged, not raised.
    """
    require(T is not None, "compose_cycle requires the cycle period T")
    x0 = as_vec3(X0, "start point")
    points, frames, div_step = advect_chain(net, x0[None, :], t0, steps, direction, T)
    d = int(div_step[0])
    return Trajectory(start=x0, direction=direction, frames=frames,
                      points=points[:, 0, :], divergent=d >= 0,
                      divergence_step=(d if d >= 0 else None))


def write_trajectories_csv(path, trajectories, dims, spacing_mm):
    """Write trajectories as CSV in normalized and millimeter units.

    Millimeters are (normalized coordinate) * (dim - 1) * spacing per axis.
    """
    dims = np.asarray(dims, dtype=np.float64)
    spacing = np.asarray(spacing_mm, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["point_id", "frame", "x", "y", "z", "x_mm", "y_mm", "z_mm"])
        for pid, traj in enumerate(trajectories):
            for frame, pt in zip(traj.frames, traj.points):
                mm = pt * (dims - 1.0) * spacing
                writer.writerow([pid, int(frame),
                                 f"{pt[0]:.9g}", f"{pt[1]:.9g}", f"{pt[2]:.9g}",
                                 f"{mm[0]:.9g}", f"{mm[1]:.9g}", f"{mm[2]:.9g}"])
