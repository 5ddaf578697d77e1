"""Dataset manifests, raw volume/image/mask I/O, intensity sampling, and the
analytic deforming phantom that serves as a ground-truth oracle.

File formats
------------
A dataset is a JSON manifest plus raw binary blobs living next to it.

* Manifest: ``mode`` is ``"volume3d"`` or ``"multiview2d"``; see
  :func:`load_manifest` for the accepted keys.
* Volume blobs (``.f32raw``): little-endian float32, x varying fastest
  (Fortran order for a grid indexed ``[x, y, z]``), one frame per file.
* Image blobs (``.f32raw``): little-endian float32, column (u) varying
  fastest for an image indexed ``[row, col]``.
* Mask blobs (``.u8raw``): one byte per voxel, values in {0, 1}, same
  ordering as volume blobs.

Intensities are rescaled to [0, 1] at load time using the manifest's declared
``value_range`` and clipped to that interval; the network's intensity head is
a sigmoid, so the supervision signal must live in its range.

Phantom
-------
The phantom is a thick spherical shell around center ``c`` that breathes with
a periodic scale factor

    s(t) = 1 - (A / 2) * (1 - cos(2 pi t / T)),

so a material point at rest position ``p`` sits at ``x(t) = c + s(t) (p - c)``
and the true inter-frame motion has the closed form

    m_fwd(x, t) = (s(t + 1) / s(t) - 1) (x - c),

with the backward motion obtained by substituting ``t - 1``. The texture is a
fixed-seed set of Gaussian blobs laid out in material coordinates, so the
intensity of every material point is constant over the cycle by construction.
"""

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_points, check_finite, check_frame_index, check_period, require
from .errors import DataError

# Base intensity of the shell before blob speckle is added. High enough to
# give the shell edge strong contrast against the zero background (warp
# overlap depends on it), low enough that base + blob peaks stay below the
# clip ceiling so the speckle texture survives intact.
PHANTOM_BASE_INTENSITY = 0.45


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class LabeledMask:
    """Binary occupancy grid tied to one frame of a volume sequence."""

    grid: np.ndarray
    frame_index: int
    region_tag: str


@dataclass
class VolumeSequence:
    """T frames of scalar intensity on a regular 3D grid.

    Attributes:
        frames: float32 array of shape (T, nx, ny, nz), values in [0, 1],
            indexed ``frames[t][x, y, z]``.
        spacing_mm: physical voxel size per axis, shape (3,).
        period_T: frame count of one cardiac cycle.
        masks: optional list of LabeledMask.
        phantom: the generating PhantomSpec when this sequence is synthetic,
            which makes closed-form ground truth available downstream.
    """

    frames: np.ndarray
    spacing_mm: np.ndarray
    period_T: int
    masks: list = field(default_factory=list)
    phantom: "PhantomSpec | None" = None

    @property
    def dims(self):
        return tuple(self.frames.shape[1:])

    @property
    def n_frames(self):
        return int(self.frames.shape[0])


@dataclass
class MultiViewSequence:
    """K single-plane image sequences of one beating volume.

    Attributes:
        views: float32 array of shape (K, T, H, W), values in [0, 1]. Pixel
            (row, col) has in-plane coordinates u = col / (W - 1),
            v = row / (H - 1).
        initial_rotations / initial_translations: (K, 3) axis-angle and
            offset guesses used to initialize pose optimization.
        true_rotations / true_translations: optional (K, 3) oracle poses for
            synthetic data.
        grid_dims: dimensions of the world grid the views slice, used to
            convert normalized units to voxels.
        spacing_mm: physical voxel size of that world grid.
        period_T: frame count of one cardiac cycle.
    """

    views: np.ndarray
    initial_rotations: np.ndarray
    initial_translations: np.ndarray
    spacing_mm: np.ndarray
    grid_dims: tuple
    period_T: int
    true_rotations: "np.ndarray | None" = None
    true_translations: "np.ndarray | None" = None
    phantom: "PhantomSpec | None" = None

    @property
    def n_views(self):
        return int(self.views.shape[0])

    @property
    def n_frames(self):
        return int(self.views.shape[1])

    @property
    def image_hw(self):
        return tuple(self.views.shape[2:])


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of the analytic breathing-shell phantom.

    Invariants: 0 < inner_radius < outer_radius < 0.5, 0 < amplitude < 1,
    period_T >= 4. Radii and center are in normalized [0, 1] coordinates.
    """

    grid_dims: tuple = (32, 32, 32)
    period_T: int = 8
    center: tuple = (0.5, 0.5, 0.5)
    inner_radius: float = 0.26
    outer_radius: float = 0.40
    amplitude: float = 0.2
    texture_seed: int = 0
    n_blobs: int = 40

    def __post_init__(self):
        require(len(self.grid_dims) == 3 and all(int(d) >= 2 for d in self.grid_dims),
                f"grid_dims must be three sizes >= 2, got {self.grid_dims}")
        require(self.period_T >= 4, f"period_T must be >= 4, got {self.period_T}")
        require(0.0 < self.inner_radius < self.outer_radius < 0.5,
                "radii must satisfy 0 < inner < outer < 0.5, got "
                f"({self.inner_radius}, {self.outer_radius})")
        require(0.0 < self.amplitude < 1.0,
                f"amplitude must lie in (0, 1), got {self.amplitude}")
        c = np.asarray(self.center, dtype=np.float64)
        require(c.shape == (3,) and np.all(c - self.outer_radius >= 0.0)
                and np.all(c + self.outer_radius <= 1.0),
                "shell must fit inside the unit cube at rest")


# ---------------------------------------------------------------------------
# Raw blob I/O
# ---------------------------------------------------------------------------

def write_volume_blob(path, grid):
    """Write a [x, y, z]-indexed grid as little-endian f32, x fastest."""
    arr = np.asarray(grid, dtype="<f4")
    require(arr.ndim == 3, f"volume grid must be 3D, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(arr.ravel(order="F").tobytes())


def read_volume_blob(path, dims):
    dims = tuple(int(d) for d in dims)
    expected = dims[0] * dims[1] * dims[2] * 4
    data = _read_exact(path, expected)
    return np.frombuffer(data, dtype="<f4").reshape(dims, order="F")


def write_image_blob(path, img):
    """Write an [row, col]-indexed image as little-endian f32, column fastest."""
    arr = np.asarray(img, dtype="<f4")
    require(arr.ndim == 2, f"image must be 2D, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(arr.ravel(order="C").tobytes())


def read_image_blob(path, hw):
    h, w = (int(v) for v in hw)
    data = _read_exact(path, h * w * 4)
    return np.frombuffer(data, dtype="<f4").reshape((h, w), order="C")


def write_mask_blob(path, mask):
    arr = np.asarray(mask)
    require(arr.ndim == 3, f"mask must be 3D, got shape {arr.shape}")
    arr = arr.astype(np.uint8)
    require(np.all((arr == 0) | (arr == 1)), "mask values must be 0 or 1")
    with open(path, "wb") as f:
        f.write(arr.ravel(order="F").tobytes())


def read_mask_blob(path, dims):
    dims = tuple(int(d) for d in dims)
    expected = dims[0] * dims[1] * dims[2]
    data = _read_exact(path, expected)
    arr = np.frombuffer(data, dtype=np.uint8).reshape(dims, order="F")
    require(np.all((arr == 0) | (arr == 1)), f"mask blob {path} has values outside {{0, 1}}")
    return arr


def _read_exact(path, expected_bytes):
    require(os.path.isfile(path), f"missing blob file: {path}")
    size = os.path.getsize(path)
    require(size == expected_bytes,
            f"blob {path} holds {size} bytes, expected {expected_bytes}")
    with open(path, "rb") as f:
        return f.read()


# ---------------------------------------------------------------------------
# Manifest load / save
# ---------------------------------------------------------------------------

def load_manifest(path):
    """Load and validate a dataset manifest.

    Args:
        path: path to the manifest JSON.

    Returns:
        A VolumeSequence (mode "volume3d") or MultiViewSequence
        (mode "multiview2d"), fully validated, intensities in [0, 1].

    Raises:
        DataError: missing files, dimension or size mismatches, fewer than 2
            frames, non-finite values, or malformed JSON.
    """
    require(os.path.isfile(path), f"missing manifest file: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"manifest {path} is not valid JSON: {e}") from e
    base = os.path.dirname(os.path.abspath(path))
    mode = doc.get("mode")
    if mode == "volume3d":
        return _load_volume3d(doc, base)
    if mode == "multiview2d":
        return _load_multiview2d(doc, base)
    raise DataError(f"manifest mode must be 'volume3d' or 'multiview2d', got {mode!r}")


def _get(doc, key, kind=None):
    require(key in doc, f"manifest is missing required key {key!r}")
    value = doc[key]
    if kind is not None:
        require(isinstance(value, kind), f"manifest key {key!r} has wrong type")
    return value


def _rescale(arr, value_range, what):
    lo, hi = (float(v) for v in value_range)
    require(hi > lo, f"value_range must be increasing, got ({lo}, {hi})")
    check_finite(what, arr)
    if (lo, hi) != (0.0, 1.0):
        arr = (arr - np.float32(lo)) / np.float32(hi - lo)
    return np.clip(arr, 0.0, 1.0)


def _load_volume3d(doc, base):
    dims = tuple(int(d) for d in _get(doc, "dims", list))
    require(len(dims) == 3 and all(d >= 2 for d in dims),
            f"dims must be three sizes >= 2, got {dims}")
    frame_paths = _get(doc, "frames", list)
    require(len(frame_paths) >= 2, f"need at least 2 frames, got {len(frame_paths)}")
    value_range = doc.get("value_range", [0.0, 1.0])
    frames = np.stack([
        _rescale(read_volume_blob(os.path.join(base, p), dims).astype(np.float32),
                 value_range, f"frame blob {p}")
        for p in frame_paths
    ])
    period_T = check_period(doc.get("period_T", len(frame_paths)))
    spacing = np.asarray(doc.get("spacing_mm", [1.0, 1.0, 1.0]), dtype=np.float64)
    require(spacing.shape == (3,) and np.all(spacing > 0), "spacing_mm must be 3 positive values")
    masks = []
    for entry in doc.get("masks", []):
        grid = read_mask_blob(os.path.join(base, _get(entry, "path", str)), dims)
        idx = check_frame_index(_get(entry, "frame_index"), len(frame_paths), "mask frame_index")
        masks.append(LabeledMask(grid=grid, frame_index=idx,
                                 region_tag=entry.get("region_tag", "")))
    phantom = _phantom_from_doc(doc.get("phantom"))
    return VolumeSequence(frames=frames, spacing_mm=spacing, period_T=period_T,
                          masks=masks, phantom=phantom)


def _load_multiview2d(doc, base):
    h, w = (int(v) for v in _get(doc, "image_dims", list))
    require(h >= 2 and w >= 2, f"image_dims must be >= 2, got ({h}, {w})")
    grid_dims = tuple(int(d) for d in _get(doc, "grid_dims", list))
    value_range = doc.get("value_range", [0.0, 1.0])
    view_docs = _get(doc, "views", list)
    require(len(view_docs) >= 1, "need at least one view")
    stacks, init_r, init_t, true_r, true_t = [], [], [], [], []
    n_frames = None
    for k, vdoc in enumerate(view_docs):
        frame_paths = _get(vdoc, "frames", list)
        require(len(frame_paths) >= 2, f"view {k} needs at least 2 frames")
        if n_frames is None:
            n_frames = len(frame_paths)
        require(len(frame_paths) == n_frames,
                f"view {k} has {len(frame_paths)} frames, expected {n_frames}")
        stacks.append(np.stack([
            _rescale(read_image_blob(os.path.join(base, p), (h, w)).astype(np.float32),
                     value_range, f"view {k} frame blob {p}")
            for p in frame_paths
        ]))
        pose = _get(vdoc, "initial_pose", dict)
        init_r.append(np.asarray(_get(pose, "rotation", list), dtype=np.float64))
        init_t.append(np.asarray(_get(pose, "translation", list), dtype=np.float64))
        tp = vdoc.get("true_pose")
        if tp is not None:
            true_r.append(np.asarray(tp["rotation"], dtype=np.float64))
            true_t.append(np.asarray(tp["translation"], dtype=np.float64))
    period_T = check_period(doc.get("period_T", n_frames))
    spacing = np.asarray(doc.get("spacing_mm", [1.0, 1.0, 1.0]), dtype=np.float64)
    has_truth = len(true_r) == len(view_docs)
    return MultiViewSequence(
        views=np.stack(stacks),
        initial_rotations=check_finite("initial rotations", np.stack(init_r)),
        initial_translations=check_finite("initial translations", np.stack(init_t)),
        spacing_mm=spacing, grid_dims=grid_dims, period_T=period_T,
        true_rotations=np.stack(true_r) if has_truth else None,
        true_translations=np.stack(true_t) if has_truth else None,
        phantom=_phantom_from_doc(doc.get("phantom")))


def _phantom_from_doc(doc):
    if doc is None:
        return None
    kwargs = dict(doc)
    for key in ("grid_dims", "center"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return PhantomSpec(**kwargs)
    except TypeError as e:
        raise DataError(f"bad phantom spec in manifest: {e}") from e


def phantom_spec_to_doc(spec):
    doc = dataclasses.asdict(spec)
    doc["grid_dims"] = list(spec.grid_dims)
    doc["center"] = list(spec.center)
    return doc


def save_volume_sequence(seq, out_dir, stem="frame"):
    """Write a VolumeSequence as manifest + blobs; returns the manifest path.

    Values are stored as float32 with a declared value_range of [0, 1], so a
    save/load round trip reproduces the sequence bit-exactly.
    """
    _validate_volume_sequence(seq)
    os.makedirs(out_dir, exist_ok=True)
    frame_names = []
    for t in range(seq.n_frames):
        name = f"{stem}_{t:04d}.f32raw"
        write_volume_blob(os.path.join(out_dir, name), seq.frames[t])
        frame_names.append(name)
    mask_docs = []
    for i, mask in enumerate(seq.masks):
        name = f"mask_{i:02d}_{mask.region_tag or 'mask'}_{mask.frame_index:04d}.u8raw"
        write_mask_blob(os.path.join(out_dir, name), mask.grid)
        mask_docs.append({"path": name, "frame_index": mask.frame_index,
                          "region_tag": mask.region_tag})
    doc = {
        "mode": "volume3d",
        "dims": list(seq.dims),
        "spacing_mm": [float(s) for s in seq.spacing_mm],
        "period_T": int(seq.period_T),
        "value_range": [0.0, 1.0],
        "frames": frame_names,
    }
    if mask_docs:
        doc["masks"] = mask_docs
    if seq.phantom is not None:
        doc["phantom"] = phantom_spec_to_doc(seq.phantom)
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path


def _validate_volume_sequence(seq):
    require(seq.frames.ndim == 4, "frames must have shape (T, nx, ny, nz)")
    require(seq.n_frames >= 2, f"need at least 2 frames, got {seq.n_frames}")
    check_finite("frames", seq.frames)
    require(float(seq.frames.min()) >= 0.0 and float(seq.frames.max()) <= 1.0,
            "frame values must lie in [0, 1]")
    check_period(seq.period_T)
    for mask in seq.masks:
        require(tuple(mask.grid.shape) == seq.dims,
                f"mask dims {mask.grid.shape} do not match volume dims {seq.dims}")


# ---------------------------------------------------------------------------
# Intensity sampling
# ---------------------------------------------------------------------------

def trilinear_sample(grid, X):
    """Trilinearly interpolate a [x, y, z]-indexed grid at normalized points.

    Node i along an axis of size N sits at coordinate i / (N - 1), matching
    the coordinate normalization used for training batches. Points outside
    [0, 1]^3 return 0 (dark background rule), so no query is an error.

    Args:
        grid: 3D array.
        X: point of shape (3,) or batch of shape (N, 3).

    Returns:
        float for a single point, float64 array of shape (N,) for a batch.
    """
    g = np.asarray(grid, dtype=np.float64)
    single = np.ndim(X) == 1
    pts = as_points(X, "query points")
    out = np.zeros(len(pts), dtype=np.float64)
    inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
    if np.any(inside):
        dims = np.asarray(g.shape)
        p = pts[inside] * (dims - 1.0)
        i0 = np.minimum(np.floor(p).astype(np.int64), dims - 2)
        i0 = np.maximum(i0, 0)
        f = p - i0
        x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        out[inside] = (
            g[x0, y0, z0] * gx * gy * gz
            + g[x0 + 1, y0, z0] * fx * gy * gz
            + g[x0, y0 + 1, z0] * gx * fy * gz
            + g[x0, y0, z0 + 1] * gx * gy * fz
            + g[x0 + 1, y0 + 1, z0] * fx * fy * gz
            + g[x0 + 1, y0, z0 + 1] * fx * gy * fz
            + g[x0, y0 + 1, z0 + 1] * gx * fy * fz
            + g[x0 + 1, y0 + 1, z0 + 1] * fx * fy * fz
        )
    return float(out[0]) if single else out


def sample_intensity(seq, X, t):
    """Sample frame t of a VolumeSequence at normalized points X.

    Args:
        seq: VolumeSequence.
        X: (3,) point or (N, 3) batch in [0, 1]^3 (outside values return 0).
        t: integer frame index in [0, T - 1].
    """
    t = check_frame_index(t, seq.n_frames)
    return trilinear_sample(seq.frames[t], X)


# ---------------------------------------------------------------------------
# Phantom oracle
# ---------------------------------------------------------------------------

def phantom_scale(spec, t):
    """Shell scale factor s(t), periodic with period_T; s(0) = 1 exactly."""
    tm = np.mod(np.asarray(t, dtype=np.float64), spec.period_T)
    s = 1.0 - 0.5 * spec.amplitude * (1.0 - np.cos(2.0 * np.pi * tm / spec.period_T))
    return float(s) if np.ndim(t) == 0 else s


def _phantom_blobs(spec):
    """Fixed blob table (centers, amplitudes, sigmas) in material coordinates."""
    rng = np.random.default_rng(spec.texture_seed)
    dirs = rng.normal(size=(spec.n_blobs, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(spec.inner_radius, spec.outer_radius, size=spec.n_blobs)
    centers = np.asarray(spec.center, dtype=np.float64) + dirs * radii[:, None]
    # Amplitude and width ranges tuned on phantom recovery runs: wide, mildly
    # modulated blobs give the best tracking accuracy; high-contrast narrow
    # speckle looks more realistic but costs motion precision.
    amps = rng.uniform(0.20, 0.50, size=spec.n_blobs)
    sigmas = rng.uniform(0.050, 0.090, size=spec.n_blobs)
    return centers, amps, sigmas


def phantom_texture(spec, P):
    """Material-coordinate texture: base level plus Gaussian blob speckle.

    Defined everywhere; the shell indicator is applied by phantom_intensity.
    Clipped to [0, 1] to match the sigmoid intensity range.
    """
    P = np.asarray(P, dtype=np.float64)
    single = P.ndim == 1
    pts = as_points(P, "material points")
    centers, amps, sigmas = _phantom_blobs(spec)
    d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    vals = PHANTOM_BASE_INTENSITY + np.sum(amps * np.exp(-0.5 * d2 / sigmas ** 2), axis=1)
    vals = np.clip(vals, 0.0, 1.0)
    return float(vals[0]) if single else vals


def phantom_intensity(spec, X, t):
    """Closed-form image intensity I(X, t) of the phantom.

    The material pre-image of X is p = (X - c) / s(t) + c; the intensity is
    the texture at p when p lies inside the rest shell and 0 outside.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    pts = as_points(X, "query points")
    c = np.asarray(spec.center, dtype=np.float64)
    s = phantom_scale(spec, t)
    material = (pts - c) / s + c
    r = np.linalg.norm(material - c, axis=1)
    inside = (r >= spec.inner_radius) & (r <= spec.outer_radius)
    vals = np.where(inside, phantom_texture(spec, material), 0.0)
    return float(vals[0]) if single else vals


def phantom_true_motion(spec, X, t, direction="fwd"):
    """Exact displacement of the material point currently at X.

    Args:
        spec: PhantomSpec.
        X: (3,) or (N, 3) positions at frame t, normalized coordinates.
        t: integer frame index (any integer; kinematics are periodic).
        direction: "fwd" for the move to t + 1, "bwd" for the move to t - 1.

    Returns:
        Displacement(s) with the same leading shape as X.
    """
    require(direction in ("fwd", "bwd"), f"direction must be 'fwd' or 'bwd', got {direction!r}")
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    pts = as_points(X, "query points")
    c = np.asarray(spec.center, dtype=np.float64)
    other = t + 1 if direction == "fwd" else t - 1
    ratio = phantom_scale(spec, other) / phantom_scale(spec, t)
    m = (ratio - 1.0) * (pts - c)
    return m[0] if single else m


def phantom_shell_mask(spec, t, dims=None):
    """Binary occupancy of the advected shell at frame t on the voxel grid."""
    dims = tuple(spec.grid_dims if dims is None else dims)
    X = _grid_coords(dims)
    c = np.asarray(spec.center, dtype=np.float64)
    s = phantom_scale(spec, t)
    r = np.linalg.norm((X - c) / s, axis=-1)
    mask = (r >= spec.inner_radius) & (r <= spec.outer_radius)
    return mask.astype(np.uint8)


def phantom_shell_points(spec, n, t=0, seed=0):
    """Draw n points uniformly from the advected shell at frame t."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(int(n), 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    s = phantom_scale(spec, t)
    a3 = (s * spec.inner_radius) ** 3
    b3 = (s * spec.outer_radius) ** 3
    radii = np.cbrt(rng.uniform(a3, b3, size=int(n)))
    return np.asarray(spec.center, dtype=np.float64) + dirs * radii[:, None]


def phantom_endocardial_points(spec, n):
    """Deterministic quasi-uniform points on the lower inner-shell surface.

    The lower hemisphere of the inner surface stands in for the endocardium,
    with the apex at the bottom of the shell and the base plane through the
    center. Returns (points, apex, base_z) at the rest state (frame 0).
    """
    require(n >= 17, f"need at least 17 surface points, got {n}")
    c = np.asarray(spec.center, dtype=np.float64)
    total = 2 * int(n)
    k = np.arange(total, dtype=np.float64)
    z = 1.0 - 2.0 * (k + 0.5) / total          # descending in (-1, 1)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden * k
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    unit = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    lower = unit[unit[:, 2] <= 0.0][:int(n)]
    points = c + spec.inner_radius * lower
    apex = c + spec.inner_radius * np.array([0.0, 0.0, -1.0])
    return points, apex, float(c[2])


def _grid_coords(dims):
    """Normalized voxel-center coordinates, shape dims + (3,)."""
    axes = [np.arange(d, dtype=np.float64) / (d - 1.0) for d in dims]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def generate_phantom(spec, spacing_mm=(1.0, 1.0, 1.0)):
    """Render the phantom to a VolumeSequence with shell masks at ED and ES.

    Frame 0 equals the rest-state texture inside the shell because s(0) = 1,
    and frame T would equal frame 0 (cycle closure).
    """
    dims = tuple(spec.grid_dims)
    X = _grid_coords(dims).reshape(-1, 3)
    frames = np.empty((spec.period_T,) + dims, dtype=np.float32)
    for t in range(spec.period_T):
        frames[t] = phantom_intensity(spec, X, t).reshape(dims).astype(np.float32)
    # the shell never leaves the cube given the radius invariant; assert anyway
    assert float(frames.min()) >= 0.0 and float(frames.max()) <= 1.0
    ed, es = 0, spec.period_T // 2
    masks = [LabeledMask(phantom_shell_mask(spec, t), t, "shell") for t in (ed, es)]
    return VolumeSequence(frames=frames,
                          spacing_mm=np.asarray(spacing_mm, dtype=np.float64),
                          period_T=spec.period_T, masks=masks, phantom=spec)


def write_phantom_dataset(spec, out_dir, spacing_mm=(1.0, 1.0, 1.0), mode="volume3d",
                          n_views=8, image_hw=(64, 64), pose_jitter_deg=0.0,
                          jitter_seed=1):
    """Write a complete phantom dataset (manifest + blobs); returns manifest path.

    In "multiview2d" mode the phantom is sliced analytically into n_views
    planes that contain the long axis, evenly rotated about it. The manifest
    records the exact poses as ``true_pose`` and, when pose_jitter_deg > 0,
    rotation guesses perturbed by that angle as ``initial_pose`` for every
    view except the first, which stays exact and serves as the gauge anchor.
    """
    if mode == "volume3d":
        seq = generate_phantom(spec, spacing_mm)
        path = save_volume_sequence(seq, out_dir)
        # save_volume_sequence writes phantom metadata, nothing else to do
        return path
    require(mode == "multiview2d", f"mode must be 'volume3d' or 'multiview2d', got {mode!r}")

    from . import geometry  # imported here: geometry depends on this module

    os.makedirs(out_dir, exist_ok=True)
    h, w = (int(v) for v in image_hw)
    rotations = geometry.default_view_rotations(n_views)
    translations = np.zeros((n_views, 3), dtype=np.float64)
    rng = np.random.default_rng(jitter_seed)
    init_rotations = rotations.copy()
    for k in range(1, n_views):
        if pose_jitter_deg > 0.0:
            init_rotations[k] = geometry.perturb_rotation(
                rotations[k], math.radians(pose_jitter_deg), rng)
    view_docs = []
    for k in range(n_views):
        R = geometry.rotation_matrix_numpy(rotations[k])
        plane = geometry.plane_grid(h, w)
        world = plane @ R.T + np.array([0.5, 0.5, 0.5]) + translations[k]
        frame_names = []
        for t in range(spec.period_T):
            img = phantom_intensity(spec, world.reshape(-1, 3), t).reshape(h, w)
            name = f"view{k:02d}_t{t:04d}.f32raw"
            write_image_blob(os.path.join(out_dir, name), img)
            frame_names.append(name)
        view_docs.append({
            "frames": frame_names,
            "initial_pose": {"rotation": [float(v) for v in init_rotations[k]],
                             "translation": [0.0, 0.0, 0.0]},
            "true_pose": {"rotation": [float(v) for v in rotations[k]],
                          "translation": [0.0, 0.0, 0.0]},
        })
    doc = {
        "mode": "multiview2d",
        "image_dims": [h, w],
        "grid_dims": list(spec.grid_dims),
        "spacing_mm": [float(s) for s in spacing_mm],
        "period_T": int(spec.period_T),
        "value_range": [0.0, 1.0],
        "views": view_docs,
        "phantom": phantom_spec_to_doc(spec),
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path
