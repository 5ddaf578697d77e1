"""Tracking and segmentation metrics (median tracking error, cosine
similarity, DICE/Jaccard, Hausdorff distance) and PCA projection of motion
features. Pure numpy/scipy; all functions are deterministic."""

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from ._validation import as_points, require
from .errors import DataError
from .geometry import normalize_time


def normalized_to_voxel(X, dims):
    """Map [0, 1]-normalized coordinates to voxel units (node i sits at
    i/(N-1), so the scale per axis is N - 1)."""
    X = np.asarray(X, dtype=np.float64)
    dims = np.asarray(dims, dtype=np.float64)
    require(dims.shape == (3,), "dims must have 3 entries")
    return X * (dims - 1.0)


def _as_spacing(spacing_mm):
    s = np.asarray(spacing_mm, dtype=np.float64)
    if s.ndim == 0:
        s = np.full(3, float(s))
    require(s.shape == (3,), "spacing_mm must be a scalar or 3 values")
    require(np.all(s > 0), "spacing_mm must be positive")
    return s


def mte(pred, gt, spacing_mm=1.0):
    """Median tracking error in millimeters.

    Args:
        pred: (N, 3) predicted motion vectors in voxel units.
        gt: (N, 3) ground-truth motion vectors in voxel units.
        spacing_mm: scalar or per-axis voxel spacing.

    Returns:
        Median of the per-point L2 errors after scaling each axis to mm.
        For an even count this is the mean of the two middle values.
    """
    pred = as_points(pred, "pred")
    gt = as_points(gt, "gt")
    require(pred.shape == gt.shape, "pred and gt must have the same shape")
    require(pred.shape[0] > 0, "mte needs at least one point")
    err = (pred - gt) * _as_spacing(spacing_mm)[None, :]
    return float(np.median(np.linalg.norm(err, axis=1)))


class CosineResult(NamedTuple):
    mean: float           # NaN when every pair is degenerate
    n_used: int
    n_skipped: int


DEGENERATE_NORM = 1e-9


def motion_cosine(pred, gt):
    """Mean per-point cosine similarity between motion vectors.

    Pairs where either vector has norm <= 1e-9 carry no direction and are
    skipped; the skip count is returned so the omission is visible. If every
    pair is skipped the mean is undefined and reported as NaN.
    """
    pred = as_points(pred, "pred")
    gt = as_points(gt, "gt")
    require(pred.shape == gt.shape, "pred and gt must have the same shape")
    np_norm = np.linalg.norm(pred, axis=1)
    ng_norm = np.linalg.norm(gt, axis=1)
    ok = (np_norm > DEGENERATE_NORM) & (ng_norm > DEGENERATE_NORM)
    n_used = int(ok.sum())
    if n_used == 0:
        return CosineResult(mean=float("nan"), n_used=0, n_skipped=pred.shape[0])
    dots = np.sum(pred[ok] * gt[ok], axis=1) / (np_norm[ok] * ng_norm[ok])
    # guard rounding just past the ends of the valid range
    mean = float(np.clip(dots, -1.0, 1.0).mean())
    return CosineResult(mean=mean, n_used=n_used, n_skipped=pred.shape[0] - n_used)


class OverlapResult(NamedTuple):
    dice: float
    jaccard: float


def _as_mask(mask, name):
    m = np.asarray(mask)
    require(m.ndim == 3, f"{name} must be a 3D mask, got shape {m.shape}")
    vals = np.unique(m)
    require(np.all(np.isin(vals, (0, 1))), f"{name} must contain only 0/1 values")
    return m.astype(bool)


def overlap_metrics(mask_a, mask_b):
    """DICE coefficient and Jaccard index of two binary masks.

    jaccard is derived as dice/(2 - dice), which is algebraically identical
    to |A∩B|/|A∪B| and keeps the pair exactly consistent. Two empty masks
    are identical, so the result is (1, 1).
    """
    a = _as_mask(mask_a, "mask_a")
    b = _as_mask(mask_b, "mask_b")
    require(a.shape == b.shape, "masks must have the same dimensions")
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return OverlapResult(dice=1.0, jaccard=1.0)
    inter = int(np.logical_and(a, b).sum())
    dice = 2.0 * inter / (na + nb)
    return OverlapResult(dice=dice, jaccard=dice / (2.0 - dice))


def boundary_voxels(mask):
    """Integer coordinates of set voxels with at least one unset 6-neighbor.

    Voxels outside the array count as unset, so set voxels on the array edge
    are boundary voxels.
    """
    m = _as_mask(mask, "mask")
    padded = np.pad(m, 1, constant_values=False)
    interior = np.ones_like(m)
    for axis in range(3):
        for step in (-1, 1):
            neighbor = np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
            interior &= neighbor
    return np.argwhere(m & ~interior)


def hausdorff(mask_a, mask_b, spacing_mm=1.0, hd95=False):
    """Symmetric Hausdorff distance between mask surfaces, in millimeters.

    Surfaces are the boundary voxels of each mask; coordinates are scaled by
    the per-axis spacing before distances are taken. The default is the exact
    maximum of the two directed max-min distances; with hd95 the directed
    maxima are replaced by 95th percentiles (linear interpolation) before the
    outer max, which discounts isolated outlier voxels.

    Raises:
        DataError: either mask is empty.
    """
    a = boundary_voxels(mask_a)
    b = boundary_voxels(mask_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DataError("hausdorff distance needs two non-empty masks")
    s = _as_spacing(spacing_mm)
    pa = a.astype(np.float64) * s[None, :]
    pb = b.astype(np.float64) * s[None, :]
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    if hd95:
        return float(max(np.percentile(d_ab, 95.0), np.percentile(d_ba, 95.0)))
    return float(max(d_ab.max(), d_ba.max()))


class PcaResult(NamedTuple):
    scores: np.ndarray              # (N, k_eff)
    components: np.ndarray          # (k_eff, D) rows are unit eigenvectors
    explained_variance: np.ndarray  # (k_eff,) descending eigenvalues
    mean: np.ndarray                # (D,) feature mean removed before projection


def pca_project(features, k):
    """Project feature vectors onto the top-k principal components.

    Eigenvectors of the sample covariance (denominator N - 1), eigenvalues
    descending. Sign convention: the largest-magnitude entry of each
    component is made positive, so results are deterministic. If the
    covariance has rank < k, only the components with positive eigenvalues
    are returned, with a warning.

    Args:
        features: (N, D) matrix, one feature vector per row.
        k: number of components, k <= min(N - 1, D).

    Returns:
        PcaResult with scores = (features - mean) @ components.T.
    """
    X = np.asarray(features, dtype=np.float64)
    require(X.ndim == 2, f"features must be 2D, got shape {X.shape}")
    n, d = X.shape
    require(n >= 2, "PCA needs at least two feature vectors")
    k = int(k)
    require(1 <= k <= min(n - 1, d),
            f"k must be in [1, min(N-1, D)] = [1, {min(n - 1, d)}], got {k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = evals[order]
    comps = evecs[:, order].T
    tol = 1e-12 * max(float(evals[0]), 1.0)
    rank = int(np.sum(evals > tol))
    if rank < k:
        warnings.warn(f"covariance rank {rank} < k={k}; returning {rank} components",
                      stacklevel=2)
        evals = evals[:rank]
        comps = comps[:rank]
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaResult(scores=Xc @ comps.T, components=comps,
                     explained_variance=evals, mean=mean)


def motion_feature_matrix(net, points, T):
    """Motion features for PCA: one row per frame, columns the concatenated
    (m_x, m_y, m_z) of the forward motion at a fixed lattice of points.

    A per-subject vector is the flattened matrix; stacking those rows across
    subjects or beats gives the input of pca_project.
    """
    import torch

    pts = as_points(points, "points")
    rows = []
    with torch.no_grad():
        Xt = torch.as_tensor(pts, dtype=net.dtype)
        for t in range(int(T)):
            sample = net(Xt, normalize_time(t, T))
            rows.append(sample.m_fwd.numpy().astype(np.float64).ravel())
    return np.stack(rows, axis=0)


@dataclass
class MetricsReport:
    """Bundle of evaluation results with the context needed to read them.

    Fields left as None were not computed for the run; NaN marks values that
    were requested but undefined (e.g. cosine with all pairs degenerate).
    """

    mte_mm: Optional[float] = None
    cosine_similarity: Optional[float] = None
    cosine_points_used: Optional[int] = None
    cosine_points_skipped: Optional[int] = None
    dice: Optional[float] = None
    jaccard: Optional[float] = None
    hausdorff_mm: Optional[float] = None
    hausdorff_is_hd95: bool = False
    n_points: Optional[int] = None
    n_voxels_a: Optional[int] = None
    n_voxels_b: Optional[int] = None
    config: dict = field(default_factory=dict)

    def to_dict(self):
        """Plain dict with NaN mapped to None so the JSON stays strict."""
        out = {}
        for key, value in self.__dict__.items():
            if isinstance(value, float) and not np.isfinite(value):
                value = None
            out[key] = value
        return out
