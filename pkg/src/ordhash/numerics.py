"""Small dense-linear-algebra kernel shared by every other module.

Array conventions, used package-wide:

* vectors are 1-D float64 arrays
* matrices are 2-D float64 arrays, row-major
* spatial feature maps are 3-D float64 arrays shaped (channels, rows, cols)
"""
from __future__ import annotations

import numpy as np


def as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def require_finite(a: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def matvec(mat, vec) -> np.ndarray:
    """Project ``vec`` (length M) through ``mat`` (M x K): out_k = sum_m mat[m,k]*vec[m]."""
    mat = as_f64(mat)
    vec = as_f64(vec)
    if mat.ndim != 2:
        raise ValueError(f"matvec expects a 2-D matrix, got ndim={mat.ndim}")
    if vec.ndim != 1:
        raise ValueError(f"matvec expects a 1-D vector, got ndim={vec.ndim}")
    if mat.shape[0] != vec.shape[0]:
        raise ValueError(
            f"matvec dimension mismatch: matrix is {mat.shape[0]}x{mat.shape[1]}, "
            f"vector has length {vec.shape[0]}"
        )
    return mat.T @ vec


def softmax_stable(a) -> np.ndarray:
    """Max-shifted softmax over the last axis.

    Subtracting the per-slice maximum before exponentiating keeps arbitrarily
    large finite inputs from overflowing; the result is strictly positive and
    each last-axis slice sums to 1 (within 1e-12).
    """
    a = as_f64(a)
    if a.size == 0:
        raise ValueError("softmax of an empty array")
    require_finite(a, "softmax input")
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def hadamard(a, b) -> np.ndarray:
    """Element-wise product of two equal-shape arrays."""
    a = as_f64(a)
    b = as_f64(b)
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def argmax_first(a) -> int:
    """Index of the maximum entry; ties resolve to the lowest index."""
    a = as_f64(a)
    if a.size == 0:
        raise ValueError("argmax of an empty array")
    require_finite(a, "argmax input")
    return int(np.argmax(a))
