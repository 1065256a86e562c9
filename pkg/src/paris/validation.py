"""Input validation helpers shared by the numerical modules.

All public entry points convert their inputs through these helpers so the
kernels can assume contiguous float64 arrays with finite entries.
"""

import numpy as np


def as_vector(x, name="x", allow_empty=False):
    """Coerce to a 1-D float64 array and verify all entries are finite."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {v.shape}")
    if not allow_empty and v.size == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains NaN or Inf")
    return v


def as_matrix(x, name="x"):
    """Coerce to a 2-D float64 array and verify all entries are finite."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def as_square_matrix(x, name="x"):
    m = as_matrix(x, name=name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def check_lengths(a, b, name_a="a", name_b="b"):
    """Raise LengthMismatch unless the two arrays have equal length."""
    from .exceptions import LengthMismatch

    if len(a) != len(b):
        raise LengthMismatch(
            f"{name_a} has length {len(a)} but {name_b} has length {len(b)}"
        )


def readonly(arr):
    """Return `arr` with its write flag cleared (shared, not copied)."""
    arr.setflags(write=False)
    return arr
