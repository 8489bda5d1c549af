"""Dense tensor primitives.

Tensors are plain ``numpy.ndarray`` objects in float32 (training, benchmark)
or float64 (gradient checks). The helpers here add the shape discipline the
layers rely on: no implicit broadcasting, explicit dimension errors, and a
matmul call counter used to assert that recurrent scans stay matmul-free.
"""

from __future__ import annotations

import numpy as np

from wavecrn.errors import DimensionError, NumericError

FLOAT32 = np.float32
FLOAT64 = np.float64
MAX_RANK = 4

_matmul_calls = 0


def matmul_calls() -> int:
    """Number of :func:`matmul` invocations since import."""
    return _matmul_calls


def as_tensor(data, dtype=FLOAT32) -> np.ndarray:
    if dtype not in (FLOAT32, FLOAT64, np.dtype(FLOAT32), np.dtype(FLOAT64)):
        raise TypeError(f"unsupported dtype {dtype}; use float32 or float64")
    arr = np.ascontiguousarray(np.asarray(data, dtype=dtype))
    if arr.ndim == 0 or arr.ndim > MAX_RANK:
        raise DimensionError(f"tensor rank must be in 1..{MAX_RANK}, got shape {arr.shape}")
    if 0 in arr.shape:
        raise DimensionError(f"tensor extents must be >= 1, got shape {arr.shape}")
    return arr


def zeros(shape, dtype=FLOAT32) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    global _matmul_calls
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    _matmul_calls += 1
    return a @ b


def _same_shape(op, args):
    first = args[0].shape
    for other in args[1:]:
        if other.shape != first:
            raise DimensionError(f"{op}: shape mismatch {first} vs {other.shape}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # 0.5 * (1 + tanh(x / 2)) is the logistic function exactly and cannot overflow
    out = np.multiply(x, 0.5)
    return sigmoid_(out)


def sigmoid_(a: np.ndarray) -> np.ndarray:
    """In-place logistic function of a float array already scaled by 1/2."""
    np.tanh(a, out=a)
    a *= 0.5
    a += 0.5
    return a


def ew(op: str, *args):
    """Elementwise primitive: ``add``, ``sub``, ``mul``, ``sigmoid``, ``tanh``, ``scale``.

    ``scale`` takes ``(tensor, scalar)``; every other binary op requires
    identical shapes.
    """
    if op in ("add", "sub", "mul"):
        if len(args) != 2:
            raise TypeError(f"{op} takes two tensors")
        a, b = (np.asarray(x) for x in args)
        _same_shape(op, (a, b))
        return {"add": np.add, "sub": np.subtract, "mul": np.multiply}[op](a, b)
    if op == "sigmoid":
        return sigmoid(np.asarray(args[0]))
    if op == "tanh":
        return np.tanh(np.asarray(args[0]))
    if op == "scale":
        a, s = args
        if np.ndim(s) != 0:
            raise DimensionError("scale takes a scalar factor")
        a = np.asarray(a)
        return a * a.dtype.type(s)
    raise ValueError(f"unknown elementwise op {op!r}")


def reduce_l1(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference over all elements."""
    a = np.asarray(a)
    b = np.asarray(b)
    _same_shape("reduce_l1", (a, b))
    return float(np.abs(a - b).mean(dtype=np.float64))


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {where}")
    return x
