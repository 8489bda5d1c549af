"""Feed-forward layers with handwritten backward passes.

Every forward returns ``(output, cache)``; the matching backward takes the
upstream gradient and that cache and returns :class:`LayerGrads`. Caches hold
the forward inputs by value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from wavecrn.errors import DimensionError, StateError
from wavecrn.tensor import matmul


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int

    def __post_init__(self):
        if self.kernel < 2 or self.stride < 1 or self.padding < 0:
            raise DimensionError(f"invalid conv geometry {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise DimensionError(f"invalid channel counts {self}")

    @classmethod
    def half_overlap(cls, in_channels: int, out_channels: int, kernel: int) -> "ConvSpec":
        """Stride and padding both K/2, the geometry used by the model."""
        if kernel % 2:
            raise DimensionError(f"kernel must be even for half-overlap framing, got {kernel}")
        return cls(in_channels, out_channels, kernel, kernel // 2, kernel // 2)


@dataclass
class LayerGrads:
    grad_input: np.ndarray
    grad_params: dict[str, np.ndarray] = field(default_factory=dict)


def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    span = length + 2 * padding - kernel
    if span < 0:
        raise DimensionError(f"input length {length} + 2*{padding} shorter than kernel {kernel}")
    if span % stride:
        raise DimensionError(
            f"(L + 2P - K) = {span} is not a multiple of stride {stride}; pad the input first"
        )
    return span // stride + 1


def transposed_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    out = (length - 1) * stride - 2 * padding + (kernel - 1) + 1
    if length < 1 or out < 1:
        raise DimensionError(
            f"transposed conv of length {length} with K={kernel}, S={stride}, P={padding} is empty"
        )
    return out


def init_conv_weight(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _frames(xp: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # (N, C, Lp) -> (N*T, C*K) rows of strided windows
    win = sliding_window_view(xp, kernel, axis=2)[:, :, ::stride, :]
    n, c, t, k = win.shape
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n * t, c * k), t


def _overlap_add(cols: np.ndarray, n: int, t: int, c: int, kernel: int, stride: int) -> np.ndarray:
    # inverse of _frames: (N*T, C*K) summed back into (N, C, (T-1)*S + K)
    cols = cols.reshape(n, t, c, kernel).transpose(0, 2, 1, 3)
    out = np.zeros((n, c, (t - 1) * stride + kernel), dtype=cols.dtype)
    stop = stride * (t - 1) + 1
    for k in range(kernel):
        out[:, :, k : k + stop : stride] += cols[:, :, :, k]
    return out


def _check_conv_inputs(x, w, b, spec: ConvSpec, weight_shape):
    if x.ndim != 3 or x.shape[1] != spec.in_channels:
        raise DimensionError(f"expected input N x {spec.in_channels} x L, got {x.shape}")
    if w.shape != weight_shape:
        raise DimensionError(f"weight shape {w.shape} != {weight_shape}")
    if b.shape != (spec.out_channels,):
        raise DimensionError(f"bias shape {b.shape} != ({spec.out_channels},)")


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec):
    """Strided 1D convolution with symmetric zero padding.

    ``x`` is N x Cin x L, ``w`` is Cout x Cin x K. Output length is
    ``(L + 2P - K) / S + 1``.
    """
    k, s, p = spec.kernel, spec.stride, spec.padding
    _check_conv_inputs(x, w, b, spec, (spec.out_channels, spec.in_channels, k))
    n, _, length = x.shape
    t = conv_output_length(length, k, s, p)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    cols, t2 = _frames(xp, k, s)
    assert t2 == t
    y = matmul(cols, w.reshape(spec.out_channels, -1).T) + b
    y = np.ascontiguousarray(y.reshape(n, t, spec.out_channels).transpose(0, 2, 1))
    return y, {"cols": cols, "w": w, "spec": spec, "n": n, "t": t, "length": length}


def conv1d_backward(grad_out: np.ndarray, cache) -> LayerGrads:
    if cache is None:
        raise StateError("conv1d_backward called without a forward cache")
    spec, n, t = cache["spec"], cache["n"], cache["t"]
    if grad_out.shape != (n, spec.out_channels, t):
        raise DimensionError(f"grad shape {grad_out.shape} != {(n, spec.out_channels, t)}")
    g = np.ascontiguousarray(grad_out.transpose(0, 2, 1)).reshape(n * t, spec.out_channels)
    w = cache["w"]
    dw = matmul(g.T, cache["cols"]).reshape(w.shape)
    db = g.sum(axis=0)
    dcols = matmul(g, w.reshape(spec.out_channels, -1))
    dxp = _overlap_add(dcols, n, t, spec.in_channels, spec.kernel, spec.stride)
    p, length = spec.padding, cache["length"]
    dx = np.ascontiguousarray(dxp[:, :, p : p + length])
    return LayerGrads(dx, {"w": dw, "b": db})


def conv_transpose1d_forward(f: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec):
    """Transposed 1D convolution; ``w`` is Cin x Cout x K.

    Output length is ``(T - 1) * S - 2P + (K - 1) + 1``; with S = P = K/2 it
    inverts the length reduction of :func:`conv1d_forward`.
    """
    k, s, p = spec.kernel, spec.stride, spec.padding
    _check_conv_inputs(f, w, b, spec, (spec.in_channels, spec.out_channels, k))
    n, _, t = f.shape
    lout = transposed_output_length(t, k, s, p)
    rows = np.ascontiguousarray(f.transpose(0, 2, 1)).reshape(n * t, spec.in_channels)
    cols = matmul(rows, w.reshape(spec.in_channels, -1))
    full = _overlap_add(cols, n, t, spec.out_channels, k, s)
    y = full[:, :, p : p + lout] + b[None, :, None]
    return np.ascontiguousarray(y), {"rows": rows, "w": w, "spec": spec, "n": n, "t": t, "lout": lout}


def conv_transpose1d_backward(grad_out: np.ndarray, cache) -> LayerGrads:
    if cache is None:
        raise StateError("conv_transpose1d_backward called without a forward cache")
    spec, n, t, lout = cache["spec"], cache["n"], cache["t"], cache["lout"]
    if grad_out.shape != (n, spec.out_channels, lout):
        raise DimensionError(f"grad shape {grad_out.shape} != {(n, spec.out_channels, lout)}")
    k, s, p = spec.kernel, spec.stride, spec.padding
    full_len = (t - 1) * s + k
    gp = np.zeros((n, spec.out_channels, full_len), dtype=grad_out.dtype)
    gp[:, :, p : p + lout] = grad_out
    gcols, _ = _frames(gp, k, s)
    w = cache["w"]
    wmat = w.reshape(spec.in_channels, -1)
    df = matmul(gcols, wmat.T).reshape(n, t, spec.in_channels).transpose(0, 2, 1)
    dw = matmul(cache["rows"].T, gcols).reshape(w.shape)
    db = grad_out.sum(axis=(0, 2))
    return LayerGrads(np.ascontiguousarray(df), {"w": dw, "b": db})


def linear_forward(h: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Affine map over the last axis of an N x T x Din tensor."""
    if h.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"linear: input {h.shape}, weight {w.shape}, bias {b.shape}")
    lead = h.shape[:-1]
    flat = h.reshape(-1, w.shape[0])
    y = matmul(flat, w) + b
    return y.reshape(*lead, w.shape[1]), {"flat": flat, "w": w, "lead": lead}


def linear_backward(grad_out: np.ndarray, cache) -> LayerGrads:
    if cache is None:
        raise StateError("linear_backward called without a forward cache")
    w, lead = cache["w"], cache["lead"]
    if grad_out.shape != (*lead, w.shape[1]):
        raise DimensionError(f"grad shape {grad_out.shape} != {(*lead, w.shape[1])}")
    g = grad_out.reshape(-1, w.shape[1])
    dw = matmul(cache["flat"].T, g)
    db = g.sum(axis=0)
    dh = matmul(g, w.T).reshape(*lead, w.shape[0])
    return LayerGrads(dh, {"w": dw, "b": db})
