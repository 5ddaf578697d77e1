"""Shared input validation helpers."""

import numpy as np

from .errors import DataError


def require(condition, message, exc=DataError):
    if not condition:
        raise exc(message)


def check_finite(name, value, exc=DataError):
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise exc(f"{name} contains non-finite values")
    return value


def as_points(points, name="points"):
    """Coerce input to a float64 array of shape (N, 3)."""
    arr = np.atleast_2d(np.asarray(points, dtype=np.float64))
    require(arr.ndim == 2 and arr.shape[1] == 3,
            f"{name} must have shape (N, 3), got {arr.shape}")
    check_finite(name, arr)
    return arr


def as_vec3(value, name="vector"):
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    require(arr.shape == (3,), f"{name} must have 3 components, got shape {arr.shape}")
    check_finite(name, arr)
    return arr


def check_unit(d, tol=1e-8, name="direction"):
    arr = as_vec3(d, name)
    n = float(np.linalg.norm(arr))
    require(abs(n - 1.0) <= tol, f"{name} must be unit length, got |d| = {n:.6g}")
    return arr


def check_period(T):
    require(float(T) == int(T) and int(T) >= 2,
            f"period T must be an integer >= 2, got {T!r}")
    return int(T)


def check_frame_index(t, n_frames, name="frame index"):
    require(float(t) == int(t) and 0 <= int(t) < n_frames,
            f"{name} {t!r} outside [0, {n_frames - 1}]")
    return int(t)
