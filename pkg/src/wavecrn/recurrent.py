"""Simple recurrent unit, its bidirectional stack, and a plain LSTM baseline.

SRU step for hidden width D (all products elementwise)::

    xc, zf, zr = split(x_t @ W)               # one matmul for the whole sequence
    f_t = sigmoid(zf + v_f * c_{t-1} + b_f)
    c_t = f_t * c_{t-1} + (1 - f_t) * xc
    r_t = sigmoid(zr + v_r * c_{t-1} + b_r)
    h_t = r_t * c_t + (1 - r_t) * highway_t

``highway_t`` is ``x_t`` when the input width equals D. Otherwise it is the
candidate ``xc`` (``highway="candidate"``, parameter-free, the default) or a
learned projection ``x_t @ W_hw`` (``highway="project"``).

All matrix products happen before the scan; :func:`sru_scan` is elementwise
only, which is what makes the cell cheap to run over long sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wavecrn.errors import DimensionError, NumericError, StateError
from wavecrn.nn import LayerGrads
from wavecrn.tensor import matmul, sigmoid_

HIGHWAY_MODES = ("candidate", "project")


@dataclass
class SruParams:
    w: np.ndarray  # Din x 3D, columns [candidate | forget | reset]
    v_f: np.ndarray
    v_r: np.ndarray
    b_f: np.ndarray
    b_r: np.ndarray
    w_hw: np.ndarray | None = None  # Din x D, only for highway="project" when Din != D

    @property
    def input_size(self) -> int:
        return self.w.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.v_f.shape[0]

    @property
    def highway(self) -> str:
        if self.input_size == self.hidden_size:
            return "identity"
        return "project" if self.w_hw is not None else "candidate"

    def named(self) -> dict[str, np.ndarray]:
        out = {"w": self.w, "v_f": self.v_f, "v_r": self.v_r, "b_f": self.b_f, "b_r": self.b_r}
        if self.w_hw is not None:
            out["w_hw"] = self.w_hw
        return out

    @classmethod
    def init(cls, rng, input_size, hidden_size, highway="candidate", dtype=np.float32):
        if highway not in HIGHWAY_MODES:
            raise ValueError(f"highway must be one of {HIGHWAY_MODES}, got {highway!r}")
        bw = np.sqrt(1.0 / input_size)
        bv = np.sqrt(1.0 / hidden_size)
        w_hw = None
        if highway == "project" and input_size != hidden_size:
            w_hw = rng.uniform(-bw, bw, (input_size, hidden_size)).astype(dtype)
        return cls(
            w=rng.uniform(-bw, bw, (input_size, 3 * hidden_size)).astype(dtype),
            v_f=rng.uniform(-bv, bv, hidden_size).astype(dtype),
            v_r=rng.uniform(-bv, bv, hidden_size).astype(dtype),
            b_f=np.zeros(hidden_size, dtype=dtype),
            b_r=np.zeros(hidden_size, dtype=dtype),
            w_hw=w_hw,
        )


@dataclass
class LstmParams:
    w: np.ndarray  # (Din + D) x 4D, gate columns [input | forget | candidate | output]
    b: np.ndarray  # 4D

    @property
    def hidden_size(self) -> int:
        return self.b.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.w.shape[0] - self.hidden_size

    def named(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}

    @classmethod
    def init(cls, rng, input_size, hidden_size, dtype=np.float32):
        bound = np.sqrt(1.0 / hidden_size)
        return cls(
            w=rng.uniform(-bound, bound, (input_size + hidden_size, 4 * hidden_size)).astype(dtype),
            b=np.zeros(4 * hidden_size, dtype=dtype),
        )


def _first_bad_step(*seqs) -> int | None:
    for seq in seqs:
        bad = ~np.isfinite(seq.reshape(seq.shape[0], -1)).all(axis=1)
        if bad.any():
            return int(np.argmax(bad))
    return None


def sru_scan(xc, zf, zr, hw, v_f, v_r, b_f, b_r, c0):
    """Elementwise SRU recurrence over time-major T x N x D inputs.

    Returns ``(h, c, f, r)`` where ``c`` has T + 1 entries (``c[0] == c0``).
    """
    t_len, n, d = xc.shape
    z_half = np.empty((t_len, 2, n, d), dtype=xc.dtype)
    np.add(zf, b_f, out=z_half[:, 0])
    np.add(zr, b_r, out=z_half[:, 1])
    z_half *= 0.5
    return _gate_scan(xc, z_half, hw, _half_coupling(v_f, v_r, xc.dtype), c0)


def _half_coupling(v_f, v_r, dtype):
    return (0.5 * np.stack((v_f, v_r))[:, None, :]).astype(dtype)


def _gate_scan(xc, z_half, hw, v_half, c0):
    """The scan proper. ``z_half`` is T x 2 x N x D holding (z + b) / 2 for
    the forget and reset gates and is overwritten with the gate values;
    ``v_half`` is the 2 x 1 x D coupling halved, so each gate is
    ``0.5 * tanh(.) + 0.5`` of one contiguous block."""
    t_len = xc.shape[0]
    c = np.empty((t_len + 1,) + xc.shape[1:], dtype=xc.dtype)
    c[0] = c0
    fr = z_half
    coupled = np.empty_like(fr[0])
    for t in range(t_len):
        cp, g, cn = c[t], fr[t], c[t + 1]
        np.multiply(v_half, cp, out=coupled)
        g += coupled
        np.tanh(g, out=g)
        f = g[0]
        f *= 0.5
        f += 0.5
        np.subtract(cp, xc[t], out=cn)
        cn *= f
        cn += xc[t]
    f, r = fr[:, 0], fr[:, 1]
    r *= 0.5  # the reset gate is not needed inside the loop
    r += 0.5
    h = c[1:] - hw
    h *= r
    h += hw
    return h, c, f, r


def sru_forward(xseq: np.ndarray, p: SruParams, c0: np.ndarray | None = None):
    """Run one SRU direction over ``xseq`` (N x T x Din).

    Returns ``(hseq, c_last, cache)`` with ``hseq`` shaped N x T x D.
    """
    if xseq.ndim != 3 or xseq.shape[2] != p.input_size:
        raise DimensionError(f"sru input {xseq.shape} does not match Din={p.input_size}")
    n, t_len, din = xseq.shape
    d = p.hidden_size
    if c0 is None:
        c0 = np.zeros((n, d), dtype=xseq.dtype)
    elif c0.shape != (n, d):
        raise DimensionError(f"c0 shape {c0.shape} != {(n, d)}")
    x_tm = np.ascontiguousarray(xseq.transpose(1, 0, 2)).reshape(t_len * n, din)
    # gate columns pre-halved so the scan can use sigmoid(z) = 0.5 * tanh(z / 2) + 0.5
    w = p.w.copy()
    w[:, d:] *= 0.5
    u = matmul(x_tm, w).reshape(t_len, n, 3 * d)
    xc = u[..., :d]
    z_half = np.empty((t_len, 2, n, d), dtype=u.dtype)
    b_half = (0.5 * np.stack((p.b_f, p.b_r))[:, None, :]).astype(u.dtype)
    np.add(u[..., d:].reshape(t_len, n, 2, d).transpose(0, 2, 1, 3), b_half, out=z_half)
    mode = p.highway
    if mode == "identity":
        hw = x_tm.reshape(t_len, n, d)
    elif mode == "project":
        hw = matmul(x_tm, p.w_hw).reshape(t_len, n, d)
    else:
        hw = xc
    h, c, f, r = _gate_scan(xc, z_half, hw, _half_coupling(p.v_f, p.v_r, u.dtype), c0)
    # a non-finite state persists to the last step, so c needs only one check
    if not (np.isfinite(c[-1]).all() and np.isfinite(h).all()):
        bad = _first_bad_step(h, c[1:])
        raise NumericError(f"SRU state became non-finite at time step {bad}")
    cache = {"x_tm": x_tm, "xc": xc, "hw": hw, "c": c, "f": f, "r": r, "p": p, "shape": xseq.shape}
    return np.ascontiguousarray(h.transpose(1, 0, 2)), c[-1], cache


def sru_backward(grad_hseq: np.ndarray, cache) -> LayerGrads:
    """Exact reverse-time gradients of :func:`sru_forward`."""
    if cache is None:
        raise StateError("sru_backward called without a forward cache")
    p: SruParams = cache["p"]
    n, t_len, din = cache["shape"]
    d = p.hidden_size
    if grad_hseq.shape != (n, t_len, d):
        raise DimensionError(f"grad shape {grad_hseq.shape} != {(n, t_len, d)}")
    gh = grad_hseq.transpose(1, 0, 2)
    xc, hw, c, f, r = cache["xc"], cache["hw"], cache["c"], cache["f"], cache["r"]
    du = np.empty((t_len, n, 3 * d), dtype=grad_hseq.dtype)
    dhw = np.empty((t_len, n, d), dtype=grad_hseq.dtype)
    dv_f = np.zeros(d, dtype=grad_hseq.dtype)
    dv_r = np.zeros_like(dv_f)
    db_f = np.zeros_like(dv_f)
    db_r = np.zeros_like(dv_f)
    dc = np.zeros((n, d), dtype=grad_hseq.dtype)
    for t in range(t_len - 1, -1, -1):
        cp, ct, ft, rt = c[t], c[t + 1], f[t], r[t]
        dh = gh[t]
        gzr = dh * (ct - hw[t]) * rt * (1 - rt)
        dc = dc + dh * rt
        gzf = dc * (cp - xc[t]) * ft * (1 - ft)
        du[t, :, :d] = dc * (1 - ft)
        du[t, :, d : 2 * d] = gzf
        du[t, :, 2 * d :] = gzr
        dhw[t] = dh * (1 - rt)
        dv_f += (gzf * cp).sum(axis=0)
        dv_r += (gzr * cp).sum(axis=0)
        db_f += gzf.sum(axis=0)
        db_r += gzr.sum(axis=0)
        dc = dc * ft + gzf * p.v_f + gzr * p.v_r
    mode = p.highway
    if mode == "candidate":
        du[..., :d] += dhw
    du_flat = du.reshape(t_len * n, 3 * d)
    x_tm = cache["x_tm"]
    grads = {"w": matmul(x_tm.T, du_flat), "v_f": dv_f, "v_r": dv_r, "b_f": db_f, "b_r": db_r}
    dx = matmul(du_flat, p.w.T)
    if mode == "identity":
        dx = dx + dhw.reshape(t_len * n, d)
    elif mode == "project":
        dhw_flat = dhw.reshape(t_len * n, d)
        grads["w_hw"] = matmul(x_tm.T, dhw_flat)
        dx = dx + matmul(dhw_flat, p.w_hw.T)
    dx = np.ascontiguousarray(dx.reshape(t_len, n, din).transpose(1, 0, 2))
    return LayerGrads(dx, grads)


def lstm_forward(xseq: np.ndarray, p: LstmParams, state=None):
    """Plain LSTM (no peepholes, no projection) over N x T x Din.

    The input half of the gate pre-activation is one batched matmul; the
    recurrent half ``h_{t-1} @ W_h`` is a matmul per step. The cached gate
    activations are stored in ``[i | f | o | g]`` column order.
    """
    if xseq.ndim != 3 or xseq.shape[2] != p.input_size:
        raise DimensionError(f"lstm input {xseq.shape} does not match Din={p.input_size}")
    n, t_len, din = xseq.shape
    d = p.hidden_size
    if state is None:
        h_prev = np.zeros((n, d), dtype=xseq.dtype)
        c_prev = np.zeros((n, d), dtype=xseq.dtype)
    else:
        h_prev, c_prev = state
    # work in gate order [i | f | o | g] with the three sigmoid columns
    # pre-scaled by 1/2, so one tanh per step covers all four gates
    order = np.r_[0 : 2 * d, 3 * d : 4 * d, 2 * d : 3 * d]
    scale = np.r_[np.full(3 * d, 0.5), np.ones(d)].astype(p.w.dtype)
    w_x, w_h = p.w[:din, order] * scale, p.w[din:, order] * scale
    x_tm = np.ascontiguousarray(xseq.transpose(1, 0, 2)).reshape(t_len * n, din)
    ux = matmul(x_tm, w_x)
    ux += p.b[order] * scale
    ux = ux.reshape(t_len, n, 4 * d)
    shift = (0.5 * (scale < 1)).astype(p.w.dtype)
    act = np.empty_like(ux)
    hs = np.empty((t_len + 1, n, d), dtype=xseq.dtype)
    cs = np.empty_like(hs)
    hs[0], cs[0] = h_prev, c_prev
    for t in range(t_len):
        a = act[t]
        np.add(ux[t], matmul(hs[t], w_h), out=a)
        np.tanh(a, out=a)
        a *= scale  # sigmoid columns: 0.5 * tanh + 0.5
        a += shift
        np.multiply(a[:, d : 2 * d], cs[t], out=cs[t + 1])
        cs[t + 1] += a[:, :d] * a[:, 3 * d :]
        np.tanh(cs[t + 1], out=hs[t + 1])
        hs[t + 1] *= a[:, 2 * d : 3 * d]
    # a non-finite value at any step reaches the final state, so only then search
    if not (np.isfinite(hs[-1]).all() and np.isfinite(cs[-1]).all()):
        bad = _first_bad_step(hs[1:], cs[1:])
        raise NumericError(f"LSTM state became non-finite at time step {bad}")
    cache = {"x_tm": x_tm, "gates": act, "hs": hs, "cs": cs, "p": p, "shape": xseq.shape}
    return np.ascontiguousarray(hs[1:].transpose(1, 0, 2)), (hs[-1], cs[-1]), cache


def lstm_backward(grad_hseq: np.ndarray, cache) -> LayerGrads:
    if cache is None:
        raise StateError("lstm_backward called without a forward cache")
    p: LstmParams = cache["p"]
    n, t_len, din = cache["shape"]
    d = p.hidden_size
    if grad_hseq.shape != (n, t_len, d):
        raise DimensionError(f"grad shape {grad_hseq.shape} != {(n, t_len, d)}")
    gh = grad_hseq.transpose(1, 0, 2)
    gates, hs, cs = cache["gates"], cache["hs"], cache["cs"]
    w_h = p.w[din:]
    dz = np.empty_like(gates)
    dw_h = np.zeros_like(w_h)
    dh = np.zeros((n, d), dtype=grad_hseq.dtype)
    dc = np.zeros_like(dh)
    for t in range(t_len - 1, -1, -1):
        g = gates[t]
        i, fg, o, cand = g[:, :d], g[:, d : 2 * d], g[:, 2 * d : 3 * d], g[:, 3 * d :]
        dh = dh + gh[t]
        tc = np.tanh(cs[t + 1])
        dc = dc + dh * o * (1 - tc * tc)
        z = dz[t]
        z[:, :d] = dc * cand * i * (1 - i)
        z[:, d : 2 * d] = dc * cs[t] * fg * (1 - fg)
        z[:, 2 * d : 3 * d] = dc * i * (1 - cand * cand)
        z[:, 3 * d :] = dh * tc * o * (1 - o)
        dw_h += matmul(hs[t].T, z)
        dh = matmul(z, w_h.T)
        dc = dc * fg
    dz_flat = dz.reshape(t_len * n, 4 * d)
    dw_x = matmul(cache["x_tm"].T, dz_flat)
    dx = matmul(dz_flat, p.w[:din].T).reshape(t_len, n, din).transpose(1, 0, 2)
    grads = {"w": np.concatenate([dw_x, dw_h], axis=0), "b": dz_flat.sum(axis=0)}
    return LayerGrads(np.ascontiguousarray(dx), grads)


_CELLS = {
    "sru": (sru_forward, sru_backward),
    "lstm": (lstm_forward, lstm_backward),
}


def birnn_forward(xseq: np.ndarray, layers, cell: str = "sru"):
    """Stacked bidirectional recurrence.

    ``layers`` is a list of ``(forward_params, backward_params)`` pairs. Each
    layer runs one cell over the sequence and one over its time reversal,
    re-reverses the second stream and concatenates both on the feature axis.
    Returns ``(N x T x 2D output, cache)``.
    """
    fwd, _ = _CELLS[cell]
    caches = []
    out = xseq
    for pf, pb in layers:
        hf, _, cf = fwd(out, pf)
        hb, _, cb = fwd(out[:, ::-1], pb)
        caches.append((cf, cb))
        out = np.concatenate([hf, hb[:, ::-1]], axis=2)
    return out, {"caches": caches, "cell": cell}


def birnn_backward(grad_out: np.ndarray, cache):
    """Returns ``(grad_input, [(grads_forward, grads_backward), ...])``."""
    if cache is None:
        raise StateError("birnn_backward called without a forward cache")
    _, bwd = _CELLS[cache["cell"]]
    per_layer = []
    g = grad_out
    for cf, cb in reversed(cache["caches"]):
        d = g.shape[2] // 2
        gf = bwd(np.ascontiguousarray(g[..., :d]), cf)
        gb = bwd(np.ascontiguousarray(g[:, ::-1, d:]), cb)
        g = gf.grad_input + gb.grad_input[:, ::-1]
        per_layer.append((gf.grad_params, gb.grad_params))
    per_layer.reverse()
    return g, per_layer


def bisru_forward(xseq, layers):
    return birnn_forward(xseq, layers, "sru")


def swap_directions(hseq: np.ndarray) -> np.ndarray:
    d = hseq.shape[-1] // 2
    return np.concatenate([hseq[..., d:], hseq[..., :d]], axis=-1)


def init_stack(rng, cell, input_size, hidden_size, depth, highway="candidate", dtype=np.float32):
    layers = []
    din = input_size
    for _ in range(depth):
        if cell == "sru":
            pair = tuple(SruParams.init(rng, din, hidden_size, highway, dtype) for _ in range(2))
        elif cell == "lstm":
            pair = tuple(LstmParams.init(rng, din, hidden_size, dtype) for _ in range(2))
        else:
            raise ValueError(f"unknown cell kind {cell!r}")
        layers.append(pair)
        din = 2 * hidden_size
    return layers


def param_count(cell_kind, input_size, hidden_size, depth=1, bidirectional=False, highway="candidate"):
    """Closed-form parameter count of a (bi)directional recurrent stack."""
    d = hidden_size
    dirs = 2 if bidirectional else 1
    total = 0
    din = input_size
    for _ in range(depth):
        if cell_kind == "sru":
            per = 3 * din * d + 4 * d
            if highway == "project" and din != d:
                per += din * d
        elif cell_kind == "lstm":
            per = 4 * (din + d) * d + 4 * d
        else:
            raise ValueError(f"unknown cell kind {cell_kind!r}")
        total += dirs * per
        din = dirs * d
    return total
