"""Input validation helpers used at public API boundaries."""

import numpy as np

from .errors import NonFiniteError, ShapeError

AXIS_NAMES = ("channel", "depth", "height", "width")


def as_f32(x, name="tensor"):
    """Coerce to a C-contiguous float32 array without silently copying ints."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.size == 0:
        raise ShapeError(f"{name} is empty")
    return arr


def check_rank(x, rank, name="tensor"):
    if x.ndim != rank:
        raise ShapeError(f"{name} must have rank {rank}, got rank {x.ndim} with shape {x.shape}")


def check_finite(x, name="tensor"):
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")


def check_same_shape(a, b, name_a="a", name_b="b"):
    if a.shape != b.shape:
        raise ShapeError(f"{name_a} shape {a.shape} does not match {name_b} shape {b.shape}")


def check_binary(x, name="mask"):
    vals = np.unique(np.asarray(x))
    if not np.isin(vals, (0, 1)).all():
        raise ShapeError(f"{name} must contain only 0/1 values")


def axis_name(i, ndim):
    """Human-readable axis name for a (C,D,H,W)-style tensor."""
    names = AXIS_NAMES[-ndim:] if ndim <= 4 else tuple(f"axis{j}" for j in range(ndim))
    return names[i]
