"""Dense 2-D float64 kernel used by the attention and toy-model code.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and ndim 2,
row-major. There is no broadcasting here: every shape disagreement is an
error, because silent broadcasting is how attention code usually goes wrong.
"""

from __future__ import annotations

import numpy as np

from .errors import PreconditionError, ShapeError

Matrix2D = np.ndarray


def as_matrix(x, name: str = "matrix") -> Matrix2D:
    """Coerce ``x`` to a C-contiguous float64 2-D array, rejecting NaN/Inf."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise PreconditionError(f"{name} contains non-finite entries")
    return m


def zeros(rows: int, cols: int) -> Matrix2D:
    return np.zeros((rows, cols), dtype=np.float64)


def identity(n: int) -> Matrix2D:
    return np.eye(n, dtype=np.float64)


def matmul(a: Matrix2D, b: Matrix2D) -> Matrix2D:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ArithmeticError(f"matmul of {a.shape} x {b.shape} overflowed")
    return out


def softmax_rows(m: Matrix2D) -> Matrix2D:
    """Row-wise softmax with per-row max subtraction."""
    m = as_matrix(m, "m")
    if m.size == 0:
        raise PreconditionError(f"softmax_rows needs a nonempty matrix, got {m.shape}")
    z = m - m.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(m: Matrix2D) -> Matrix2D:
    m = as_matrix(m, "m")
    if m.size == 0:
        raise PreconditionError(f"log_softmax_rows needs a nonempty matrix, got {m.shape}")
    z = m - m.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def concat_rows(a: Matrix2D, b: Matrix2D) -> Matrix2D:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows column mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=0)
