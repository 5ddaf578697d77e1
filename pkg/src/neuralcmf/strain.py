"""Lagrangian strain analysis: deformation gradients from the motion field,
anatomical direction triples, AHA 17-segment assignment on the normalized
disk, and per-segment strain-time curves."""

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import as_points, as_vec3, check_period, check_unit, require
from .errors import DataError
from .field_network import coord_jacobian
from .geometry import advect_chain, normalize_time

DIRECTION_NAMES = ("longitudinal", "radial", "circumferential")

# Ring thresholds of the normalized AHA disk: apex cap, apical, mid, basal.
AHA_APEX_CAP_RADIUS = 1.0 / 6.0
AHA_APICAL_RADIUS = 1.0 / 3.0
AHA_MID_RADIUS = 2.0 / 3.0


# ---------------------------------------------------------------------------
# Strain tensors
# ---------------------------------------------------------------------------

def deformation_gradient(J):
    """Deformation gradient F = I + J from a motion Jacobian.

    Args:
        J: (3, 3) or (..., 3, 3) spatial Jacobian of the displacement.

    Returns:
        F with the same shape.
    """
    J = np.asarray(J, dtype=np.float64)
    require(J.shape[-2:] == (3, 3), f"J must end in (3, 3), got {J.shape}")
    return J + np.eye(3)


def lagrangian_strain(F):
    """Lagrangian strain E = (F^T F - I) / 2; symmetric by construction."""
    F = np.asarray(F, dtype=np.float64)
    require(F.shape[-2:] == (3, 3), f"F must end in (3, 3), got {F.shape}")
    Ft = np.swapaxes(F, -1, -2)
    return 0.5 * (Ft @ F - np.eye(3))


def directional_strain(E, d):
    """Project a strain tensor onto a unit direction: E_d = d^T E d."""
    E = np.asarray(E, dtype=np.float64)
    d = check_unit(d)
    if E.ndim == 2:
        return float(d @ E @ d)
    return np.einsum("i,...ij,j->...", d, E, d)


@dataclass
class StrainTensor:
    """Strain state at one space-time location."""

    F: np.ndarray
    E: np.ndarray
    location: np.ndarray
    frame: int

    def project(self, d):
        return directional_strain(self.E, d)


def strain_at(net, X, t, T):
    """Single-step strain tensor at (X, t) from the field's forward motion."""
    F = deformation_gradient(coord_jacobian(net, X, normalize_time(int(t), T)))
    return StrainTensor(F=F, E=lagrangian_strain(F), location=as_vec3(X), frame=int(t))


# ---------------------------------------------------------------------------
# Anatomical directions
# ---------------------------------------------------------------------------

class DirectionTriple(NamedTuple):
    d_l: np.ndarray
    d_r: np.ndarray
    d_c: np.ndarray


def direction_triple(d_e, d_l=(0.0, 0.0, 1.0)):
    """Orthonormal triple from a center direction d_e and long axis d_l.

    d_r is d_e with its longitudinal component removed and normalized;
    d_c = d_l x d_r. Raises DataError when d_e is (numerically) parallel to
    the long axis, which leaves the radial direction undefined.
    """
    d_l = as_vec3(d_l, "d_l")
    d_l = d_l / np.linalg.norm(d_l)
    d_e = as_vec3(d_e, "d_e")
    n = np.linalg.norm(d_e)
    require(n > 0, "d_e must be nonzero")
    d_e = d_e / n
    v = d_e - np.dot(d_e, d_l) * d_l
    vn = np.linalg.norm(v)
    if vn < 1e-6:
        raise DataError("axis-degenerate point: center direction is parallel to the long axis")
    d_r = v / vn
    d_c = np.cross(d_l, d_r)
    return DirectionTriple(d_l=d_l, d_r=d_r, d_c=d_c)


def local_directions(X, axis_origin=(0.5, 0.5, 0.5), axis_direction=(0.0, 0.0, 1.0)):
    """Direction triples at one or many points around the long axis.

    The center direction d_e at X points from X toward the closest point of
    the axis line; the triple then follows direction_triple.

    Args:
        X: (3,) or (N, 3) points.
        axis_origin: any point on the long axis.
        axis_direction: axis direction (defaults to +z).

    Returns:
        DirectionTriple of (3,) vectors for a single point, else of (N, 3)
        arrays.

    Raises:
        DataError: some point lies on the axis (radial direction undefined).
    """
    single = np.ndim(X) == 1
    pts = as_points(X, "points")
    origin = as_vec3(axis_origin, "axis_origin")
    d_l = as_vec3(axis_direction, "axis_direction")
    d_l = d_l / np.linalg.norm(d_l)
    rel = origin - pts
    v = rel - (rel @ d_l)[:, None] * d_l[None, :]
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms < 1e-6):
        raise DataError("axis-degenerate point(s): on the long axis the radial "
                        "direction is undefined")
    d_r = v / norms[:, None]
    d_c = np.cross(np.broadcast_to(d_l, d_r.shape), d_r)
    d_l_b = np.broadcast_to(d_l, d_r.shape).copy()
    if single:
        return DirectionTriple(d_l=d_l_b[0], d_r=d_r[0], d_c=d_c[0])
    return DirectionTriple(d_l=d_l_b, d_r=d_r, d_c=d_c)


# ---------------------------------------------------------------------------
# AHA 17-segment assignment
# ---------------------------------------------------------------------------

@dataclass
class AhaAssignment:
    """Disk coordinates and segment ids of a projected endocardial point set."""

    points: np.ndarray          # (N, 3) original points
    segment_ids: np.ndarray     # (N,) in 1..17
    disk_radius: np.ndarray     # (N,) in [0, 1]
    disk_angle_deg: np.ndarray  # (N,) in [0, 360)
    apex: np.ndarray
    base_z: float
    scale: float


def _sector(angle_deg, start_deg, width_deg):
    return np.floor(np.mod(angle_deg - start_deg, 360.0) / width_deg).astype(np.int64)


def aha_segment_of(disk_radius, angle_deg):
    """Segment id on the normalized AHA disk.

    Rings: apex cap (r < 1/6) is segment 17; apical band (r < 1/3) splits into
    four 90 degree sectors 13..16 starting at 45 degrees; mid (r < 2/3) and
    basal bands split into six 60 degree sectors 7..12 / 1..6 starting at
    60 degrees. Angle 90 degrees (the +y half-axis) is the anterior sector.
    """
    r = np.asarray(disk_radius, dtype=np.float64)
    a = np.asarray(angle_deg, dtype=np.float64)
    seg = np.empty(r.shape, dtype=np.int64)
    cap = r < AHA_APEX_CAP_RADIUS
    apical = (~cap) & (r < AHA_APICAL_RADIUS)
    mid = (~cap) & (~apical) & (r < AHA_MID_RADIUS)
    basal = (~cap) & (~apical) & (~mid)
    seg[cap] = 17
    seg[apical] = 13 + _sector(a[apical], 45.0, 90.0)
    seg[mid] = 7 + _sector(a[mid], 60.0, 60.0)
    seg[basal] = 1 + _sector(a[basal], 60.0, 60.0)
    return seg


def aha_assign(points, apex, base_z):
    """Assign endocardial points to the 17 AHA segments.

    The points are projected onto the short-axis plane (the long axis is
    assumed to be z; rotate beforehand otherwise), recentered so the apex
    lands at the origin, and scaled so the outermost (basal) ring maps to
    radius 1.

    Args:
        points: (N, 3) endocardial surface points.
        apex: the apical point.
        base_z: long-axis coordinate of the basal plane (kept for provenance
            and to check that apex and base are distinct).

    Returns:
        AhaAssignment.

    Raises:
        DataError: empty input, apex on the base plane, or all points
            projecting onto the apex.
    """
    pts = as_points(points, "points")
    require(pts.shape[0] >= 1, "points must be non-empty")
    apex = as_vec3(apex, "apex")
    require(abs(float(apex[2]) - float(base_z)) > 1e-12,
            "apex must be distinct from the base plane")
    planar = pts[:, :2] - apex[None, :2]
    radii = np.hypot(planar[:, 0], planar[:, 1])
    scale = float(radii.max())
    require(scale > 0.0, "all points collapse onto the apex; cannot scale the disk")
    disk_r = radii / scale
    angle = np.degrees(np.arctan2(planar[:, 1], planar[:, 0])) % 360.0
    return AhaAssignment(points=pts, segment_ids=aha_segment_of(disk_r, angle),
                         disk_radius=disk_r, disk_angle_deg=angle,
                         apex=apex, base_z=float(base_z), scale=scale)


# ---------------------------------------------------------------------------
# Strain-time curves
# ---------------------------------------------------------------------------

@dataclass
class StrainCurves:
    """Per-segment, per-direction Lagrangian strain over the cycle.

    values[s - 1, t, d] is the mean strain of segment s at frame t projected
    on DIRECTION_NAMES[d]; NaN where the segment has no member points.
    """

    values: np.ndarray   # (17, T, 3)
    counts: np.ndarray   # (17,)
    period_T: int

    @property
    def missing_segments(self):
        return [s for s in range(1, 18) if self.counts[s - 1] == 0]


def strain_curves(net, assignment, directions, T):
    """Cumulative Lagrangian strain curves for every AHA segment.

    Material points start at their ED (frame 0) positions and are tracked
    forward; the per-frame deformation gradient is the product of single-step
    gradients along each trajectory, so F(0) = I and every curve starts at 0.
    Directions are the ED-frame triples of the points (Lagrangian reference).

    Args:
        net: trained FieldNetwork.
        assignment: AhaAssignment of the ED points.
        directions: DirectionTriple of (N, 3) arrays for the same points.
        T: cycle period; curves cover frames 0 .. T - 1.

    Returns:
        StrainCurves; empty segments are reported as missing, not as zero.
    """
    T = check_period(T)
    pts = assignment.points
    n = pts.shape[0]
    require(directions.d_l.shape == (n, 3), "directions must match the point count")
    positions, _, _ = advect_chain(net, pts, 0, T - 1, "fwd", T)
    e_proj = np.zeros((T, n, 3))
    F_cum = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    d_stack = np.stack([directions.d_l, directions.d_r, directions.d_c], axis=2)  # (n,3,3)
    for t in range(1, T):
        J = coord_jacobian(net, positions[t - 1], normalize_time(t - 1, T))
        F_cum = deformation_gradient(J) @ F_cum
        E = lagrangian_strain(F_cum)
        # d^T E d for all three directions at once
        e_proj[t] = np.einsum("nid,nij,njd->nd", d_stack, E, d_stack)
    values = np.full((17, T, 3), np.nan)
    counts = np.zeros(17, dtype=np.int64)
    for s in range(1, 18):
        members = assignment.segment_ids == s
        counts[s - 1] = int(members.sum())
        if counts[s - 1]:
            values[s - 1] = e_proj[:, members, :].mean(axis=1)
    return StrainCurves(values=values, counts=counts, period_T=T)


def peak_global_strains(curves):
    """Largest-magnitude value of each direction's global mean curve.

    The global curve is the member-count weighted mean over non-empty
    segments, which equals the mean over all points.
    """
    weights = curves.counts.astype(np.float64)
    total = weights.sum()
    require(total > 0, "no segment has member points")
    filled = np.nan_to_num(curves.values, nan=0.0)
    global_curve = np.einsum("s,std->td", weights, filled) / total
    out = {}
    for d, name in enumerate(DIRECTION_NAMES):
        idx = int(np.argmax(np.abs(global_curve[:, d])))
        out[name] = {"value": float(global_curve[idx, d]), "frame": idx}
    return out


def write_strain_csv(path, curves):
    """Write curves as CSV with columns (segment, frame, direction, value);
    one row per segment x frame x direction, NaN for empty segments."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["segment", "frame", "direction", "value"])
        for s in range(1, 18):
            for t in range(curves.period_T):
                for d, name in enumerate(DIRECTION_NAMES):
                    v = curves.values[s - 1, t, d]
                    writer.writerow([s, t, name, "nan" if np.isnan(v) else repr(float(v))])
