"""The end-to-end model: conv encoder -> Bi-SRU -> mask head -> masked
features -> transposed-conv decoder -> tanh."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from wavecrn import nn, recurrent
from wavecrn.errors import CheckpointError, ConfigError, DimensionError, NumericError, StateError
from wavecrn.recurrent import LstmParams, SruParams


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 256
    kernel: int = 96  # 0.006 s at 16 kHz
    sru_depth: int = 6
    sample_rate: int = 16000
    cell: str = "sru"
    highway: str = "candidate"

    def __post_init__(self):
        for name in ("channels", "kernel", "sru_depth", "sample_rate"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.kernel % 2:
            raise ConfigError(f"kernel must be even, got {self.kernel}")
        if self.cell not in ("sru", "lstm"):
            raise ConfigError(f"cell must be 'sru' or 'lstm', got {self.cell!r}")
        if self.highway not in recurrent.HIGHWAY_MODES:
            raise ConfigError(f"highway must be one of {recurrent.HIGHWAY_MODES}")

    @property
    def stride(self) -> int:
        return self.kernel // 2

    @property
    def padding(self) -> int:
        return self.kernel // 2

    @property
    def hidden(self) -> int:
        return self.channels

    def time_steps(self, length: int) -> int:
        return nn.conv_output_length(length, self.kernel, self.stride, self.padding)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def model_param_count(cfg: ModelConfig) -> int:
    c, k = cfg.channels, cfg.kernel
    encoder = c * 1 * k + c
    decoder = c * 1 * k + 1
    mask = 2 * cfg.hidden * c + c
    rnn = recurrent.param_count(cfg.cell, c, cfg.hidden, cfg.sru_depth, True, cfg.highway)
    return encoder + rnn + mask + decoder


class WaveCRN:
    """Parameters live in ``self.params``, an insertion-ordered name -> array map."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c, k = cfg.channels, cfg.kernel
        self.enc_spec = nn.ConvSpec.half_overlap(1, c, k)
        self.dec_spec = nn.ConvSpec.half_overlap(c, 1, k)
        p = {}
        p["encoder.w"] = nn.init_conv_weight(rng, (c, 1, k), 1 * k, dtype)
        p["encoder.b"] = np.zeros(c, dtype=dtype)
        layers = recurrent.init_stack(rng, cfg.cell, c, cfg.hidden, cfg.sru_depth, cfg.highway, dtype)
        for i, pair in enumerate(layers):
            for direction, lp in zip(("fwd", "bwd"), pair):
                for name, arr in lp.named().items():
                    p[f"rnn.{i}.{direction}.{name}"] = arr
        bound = np.sqrt(1.0 / (2 * cfg.hidden))
        p["mask.w"] = rng.uniform(-bound, bound, (2 * cfg.hidden, c)).astype(dtype)
        p["mask.b"] = np.zeros(c, dtype=dtype)
        p["decoder.w"] = nn.init_conv_weight(rng, (c, 1, k), c * k, dtype)
        p["decoder.b"] = np.zeros(1, dtype=dtype)
        self.params = p

    def num_parameters(self) -> int:
        return sum(a.size for a in self.params.values())

    def astype(self, dtype) -> "WaveCRN":
        other = object.__new__(WaveCRN)
        other.cfg, other.enc_spec, other.dec_spec = self.cfg, self.enc_spec, self.dec_spec
        other.dtype = np.dtype(dtype)
        other.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return other

    def _layers(self):
        p = self.params
        out = []
        for i in range(self.cfg.sru_depth):
            pair = []
            for direction in ("fwd", "bwd"):
                pre = f"rnn.{i}.{direction}."
                if self.cfg.cell == "sru":
                    pair.append(
                        SruParams(
                            p[pre + "w"], p[pre + "v_f"], p[pre + "v_r"], p[pre + "b_f"],
                            p[pre + "b_r"], p.get(pre + "w_hw"),
                        )
                    )
                else:
                    pair.append(LstmParams(p[pre + "w"], p[pre + "b"]))
            out.append(tuple(pair))
        return out

    def forward(self, x: np.ndarray, keep_cache: bool = True):
        """Enhance a batch ``x`` of shape N x 1 x Lp (Lp a multiple of the stride).

        Returns ``(yhat, mask, cache)``; ``cache`` is None when
        ``keep_cache`` is False.
        """
        if x.ndim != 3 or x.shape[1] != 1:
            raise DimensionError(f"model input must be N x 1 x L, got {x.shape}")
        if x.shape[2] % self.cfg.stride:
            raise DimensionError(
                f"input length {x.shape[2]} is not a multiple of stride {self.cfg.stride}"
            )
        x = x.astype(self.dtype, copy=False)
        p = self.params
        feat, c_enc = nn.conv1d_forward(x, p["encoder.w"], p["encoder.b"], self.enc_spec)
        _finite(feat, "encoder")
        h, c_rnn = recurrent.birnn_forward(feat.transpose(0, 2, 1), self._layers(), self.cfg.cell)
        _finite(h, "bi-rnn")
        z, c_mask = nn.linear_forward(h, p["mask.w"], p["mask.b"])
        mask = np.ascontiguousarray(np.tanh(z).transpose(0, 2, 1))
        masked = mask * feat
        y, c_dec = nn.conv_transpose1d_forward(masked, p["decoder.w"], p["decoder.b"], self.dec_spec)
        yhat = np.tanh(y)
        _finite(yhat, "decoder")
        if yhat.shape != x.shape:
            raise DimensionError(f"output shape {yhat.shape} != input shape {x.shape}")
        cache = None
        if keep_cache:
            cache = {
                "enc": c_enc, "rnn": c_rnn, "mask_lin": c_mask, "dec": c_dec,
                "feat": feat, "mask": mask, "yhat": yhat,
            }
        return yhat, mask, cache

    __call__ = forward

    def backward(self, grad_yhat: np.ndarray, cache) -> dict[str, np.ndarray]:
        """Gradients of a scalar objective with respect to every parameter."""
        if cache is None:
            raise StateError("model backward called without a forward cache")
        yhat, feat, mask = cache["yhat"], cache["feat"], cache["mask"]
        if grad_yhat.shape != yhat.shape:
            raise DimensionError(f"grad shape {grad_yhat.shape} != output shape {yhat.shape}")
        grads = {}
        g_dec = nn.conv_transpose1d_backward(grad_yhat * (1 - yhat * yhat), cache["dec"])
        grads["decoder.w"], grads["decoder.b"] = g_dec.grad_params["w"], g_dec.grad_params["b"]
        g_masked = g_dec.grad_input
        # product rule over both factors of mask * feat
        g_feat = g_masked * mask
        g_z = (g_masked * feat * (1 - mask * mask)).transpose(0, 2, 1)
        g_lin = nn.linear_backward(np.ascontiguousarray(g_z), cache["mask_lin"])
        grads["mask.w"], grads["mask.b"] = g_lin.grad_params["w"], g_lin.grad_params["b"]
        g_h, per_layer = recurrent.birnn_backward(g_lin.grad_input, cache["rnn"])
        for i, pair in enumerate(per_layer):
            for direction, lg in zip(("fwd", "bwd"), pair):
                for name, arr in lg.items():
                    grads[f"rnn.{i}.{direction}.{name}"] = arr
        g_feat = g_feat + g_h.transpose(0, 2, 1)
        g_enc = nn.conv1d_backward(np.ascontiguousarray(g_feat), cache["enc"])
        grads["encoder.w"], grads["encoder.b"] = g_enc.grad_params["w"], g_enc.grad_params["b"]
        return {k: grads[k] for k in self.params}

    def enhance(self, samples: np.ndarray) -> np.ndarray:
        """Pad one waveform to the stride, run inference, trim back."""
        samples = np.asarray(samples, dtype=self.dtype)
        n = samples.shape[0]
        lp = -(-n // self.cfg.stride) * self.cfg.stride
        x = np.zeros((1, 1, lp), dtype=self.dtype)
        x[0, 0, :n] = samples
        y, _, _ = self.forward(x, keep_cache=False)
        return y[0, 0, :n]


def _finite(x, layer):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite activations after {layer}")


# checkpoint container -------------------------------------------------------

MAGIC = b"WCRN"
FORMAT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(model: WaveCRN, path) -> None:
    """Layout (little-endian): magic, u32 version, u32 config length, config
    JSON, u32 entry count, then per entry u16 name length, name, u8 dtype code,
    u8 rank, u32 extents, raw data; trailing u32 CRC32 of everything before."""
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    cfg_blob = json.dumps(asdict(model.cfg), sort_keys=True).encode()
    parts += [struct.pack("<I", len(cfg_blob)), cfg_blob, struct.pack("<I", len(model.params))]
    for name, arr in model.params.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        raw_name = name.encode()
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", _DTYPE_CODES[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(dt, copy=False).tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected: ModelConfig | None = None) -> WaveCRN:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise CheckpointError("not a WCRN checkpoint (bad magic)")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint integrity check failed (truncated or corrupted)")
    (cfg_len,) = r.unpack("<I")
    cfg = ModelConfig.from_dict(json.loads(r.take(cfg_len)))
    if expected is not None:
        for f in fields(ModelConfig):
            if getattr(cfg, f.name) != getattr(expected, f.name):
                raise ConfigError(
                    f"checkpoint config mismatch on '{f.name}': "
                    f"file has {getattr(cfg, f.name)}, expected {getattr(expected, f.name)}"
                )
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        code, rank = r.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for {name}")
        shape = r.unpack(f"<{rank}I")
        dt = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape)) * dt.itemsize
        params[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).copy()
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint entries")
    dtype = next(iter(params.values())).dtype
    model = WaveCRN(cfg, dtype=dtype)
    if set(params) != set(model.params):
        raise CheckpointError(
            f"parameter names differ from config: {sorted(set(params) ^ set(model.params))}"
        )
    for name, arr in params.items():
        if arr.shape != model.params[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {model.params[name].shape}")
    model.params = {k: params[k] for k in model.params}
    return model
