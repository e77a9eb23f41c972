"""Small dense linear algebra with a fixed summation order.

Vectors and matrices are plain numpy arrays. Every reduction accumulates in
ascending index order so that a fused and an unfused datapath differ only by
reassociation of the same products, never by a BLAS kernel's blocking choice.

Functions accept an optional leading batch axis on vector arguments: a
``(B, n)`` array is treated as ``B`` independent row vectors.
"""

from __future__ import annotations

import numpy as np

Tensor1 = np.ndarray
Tensor2 = np.ndarray

DTYPES = {"f64": np.float64, "f32": np.float32}


class ShapeError(ValueError):
    """Raised when operand shapes do not line up. No broadcasting is attempted."""


def as_tensor1(data, dtype=np.float64) -> Tensor1:
    arr = np.array(data, dtype=dtype)
    if arr.ndim != 1 or arr.size == 0:
        raise ShapeError(f"expected a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains non-finite values")
    return arr


def as_tensor2(data, dtype=np.float64) -> Tensor2:
    arr = np.array(data, dtype=dtype)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeError(f"expected a non-empty matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains non-finite values")
    return arr


def identity(n: int, dtype=np.float64) -> Tensor2:
    return np.eye(n, dtype=dtype)


def _check_same(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"{op}: length mismatch {a.shape} vs {b.shape}")


def sum_last(a: np.ndarray) -> np.ndarray:
    """Sum over the last axis, strictly left to right."""
    a = np.asarray(a)
    acc = np.zeros(a.shape[:-1], dtype=a.dtype)
    for i in range(a.shape[-1]):
        acc = acc + a[..., i]
    return acc


def vec_mat(a: Tensor1, W: Tensor2) -> Tensor1:
    """Row vector times matrix: ``out_j = sum_i a_i * W[i, j]`` (ascending i)."""
    a = np.asarray(a)
    W = np.asarray(W)
    if W.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != W.shape[0]:
        raise ShapeError(f"vec_mat: vector {a.shape} incompatible with matrix {W.shape}")
    out = np.zeros(a.shape[:-1] + (W.shape[1],), dtype=np.result_type(a, W))
    for i in range(W.shape[0]):
        out += a[..., i, None] * W[i]
    return out


def row_sums(V: Tensor2) -> Tensor1:
    V = np.asarray(V)
    if V.ndim != 2:
        raise ShapeError(f"row_sums: expected a matrix, got shape {V.shape}")
    return sum_last(V)


def scale(a: Tensor1, s) -> Tensor1:
    """Multiply by a scalar, or by one scalar per row when ``s`` is an array."""
    a = np.asarray(a)
    s = np.asarray(s, dtype=a.dtype)
    if s.ndim == 0:
        return a * s
    if s.shape != a.shape[:-1]:
        raise ShapeError(f"scale: per-row factors {s.shape} do not match {a.shape}")
    return a * s[..., None]


def hadamard(a: Tensor1, b: Tensor1) -> Tensor1:
    a, b = np.asarray(a), np.asarray(b)
    _check_same(a, b, "hadamard")
    return a * b


def add(a: Tensor1, b: Tensor1) -> Tensor1:
    a, b = np.asarray(a), np.asarray(b)
    _check_same(a, b, "add")
    return a + b


def dot(a: Tensor1, b: Tensor1):
    a, b = np.asarray(a), np.asarray(b)
    _check_same(a, b, "dot")
    out = sum_last(a * b)
    return float(out) if out.ndim == 0 else out
