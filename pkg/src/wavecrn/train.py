"""Adam, the l1 training loop for denoising and 2-bit restoration, and the
finite-difference gradient audit."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from wavecrn import nn, recurrent
from wavecrn.audio import (
    AudioClip,
    compress_2bit,
    length_mask,
    list_wavs,
    make_batch,
    mix_at_snr,
    read_wav,
)
from wavecrn.errors import ConfigError, NumericError
from wavecrn.model import ModelConfig, WaveCRN, save_checkpoint

log = logging.getLogger(__name__)

TASKS = ("denoise", "restore")


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 16
    crop_seconds: float = 1.0
    epochs: int = 10
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    task: str = "denoise"
    clean_dir: str = ""
    noisy_dir: str = ""  # denoise: paired noisy files; empty -> mix noise_dir at snr_db
    noise_dir: str = ""
    snr_db: float = 5.0
    checkpoint: str = "model.wcrn"
    loss_log: str = "loss.csv"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        for name in ("batch_size", "crop_seconds", "epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0 or self.clip_norm <= 0:
            raise ConfigError("lr must be >= 0 and clip_norm > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# optimiser --------------------------------------------------------------------


def adam_init(params: dict) -> dict:
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
        "t": 0,
    }


def adam_step(params, grads, state, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    state["t"] += 1
    t = state["t"]
    b1, b2 = cfg.beta1, cfg.beta2
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        m, v = state["m"][k], state["v"][k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        # eps is applied to the bias-corrected second moment
        p -= (cfg.lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + cfg.eps)).astype(p.dtype)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# objective --------------------------------------------------------------------


def masked_l1(yhat: np.ndarray, target: np.ndarray, lengths):
    """Mean |yhat - target| over each item's original samples only.

    Returns ``(loss, grad_yhat)``.
    """
    mask = length_mask(lengths, yhat.shape[2], yhat.dtype)
    count = float(mask.sum())
    diff = (yhat - target) * mask
    loss = float(np.abs(diff).sum(dtype=np.float64) / count)
    grad = (np.sign(diff) * mask / count).astype(yhat.dtype)
    return loss, grad


# data -------------------------------------------------------------------------


def _load_dir(d):
    paths = list_wavs(d)
    if not paths:
        raise ConfigError(f"no WAV files in {d!r}")
    return [read_wav(p) for p in paths]


def load_training_pairs(cfg: TrainConfig, rng) -> list[tuple[AudioClip, AudioClip]]:
    """(input, target) clips for the configured task, ordered by filename."""
    clean = _load_dir(cfg.clean_dir)
    if cfg.task == "restore":
        return [(AudioClip(compress_2bit(c), name=c.name), c) for c in clean]
    if cfg.noisy_dir:
        noisy = {c.name: c for c in _load_dir(cfg.noisy_dir)}
        missing = [c.name for c in clean if c.name not in noisy]
        if missing:
            raise ConfigError(f"noisy files missing for {missing}")
        return [(noisy[c.name], c) for c in clean]
    if not cfg.noise_dir:
        raise ConfigError("denoise training needs noisy_dir or noise_dir")
    noises = _load_dir(cfg.noise_dir)
    return [(mix_at_snr(c, noises[i % len(noises)], cfg.snr_db, rng), c) for i, c in enumerate(clean)]


def draw_crops(pairs, crop_len: int, rng):
    out = []
    for x, y in pairs:
        n = len(y.samples)
        if n <= crop_len:
            out.append((x, y))
            continue
        s = int(rng.integers(0, n - crop_len + 1))
        out.append(
            (AudioClip(x.samples[s : s + crop_len]), AudioClip(y.samples[s : s + crop_len]))
        )
    return out


# training loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    model: WaveCRN
    losses: list[float]
    best_loss: float


def train_pairs(pairs, model: WaveCRN, cfg: TrainConfig, save: bool = True, on_epoch=None) -> TrainResult:
    """Fit ``model`` on (input, target) clip pairs with the l1 objective.

    ``on_epoch(epoch, mean_l1, model)`` is called after every epoch.
    """
    if not pairs:
        raise ConfigError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    crop_len = int(round(cfg.crop_seconds * model.cfg.sample_rate))
    state = adam_init(model.params)
    losses = []
    best = math.inf
    log_path = Path(cfg.loss_log) if save else None
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, "w", newline="") as fh:
            fh.write("epoch,mean_l1\n")
    for epoch in range(1, cfg.epochs + 1):
        crops = draw_crops(pairs, crop_len, rng)
        order = rng.permutation(len(crops))
        total, weight = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            xb, lengths = make_batch([crops[i][0] for i in idx], model.cfg.stride, model.dtype)
            yb, _ = make_batch([crops[i][1] for i in idx], model.cfg.stride, model.dtype)
            try:
                yhat, _, cache = model.forward(xb)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            loss, grad = masked_l1(yhat, yb, lengths)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss in epoch {epoch}, batch {b}")
            grads = model.backward(grad, cache)
            clip_global_norm(grads, cfg.clip_norm)
            adam_step(model.params, grads, state, cfg)
            n_valid = int(np.sum(lengths))
            total += loss * n_valid
            weight += n_valid
        epoch_loss = total / weight
        losses.append(epoch_loss)
        log.info("epoch %d mean_l1 %.6f", epoch, epoch_loss)
        if log_path is not None:
            with open(log_path, "a", newline="") as fh:
                fh.write(f"{epoch},{epoch_loss:.6f}\n")
        if epoch_loss < best:
            best = epoch_loss
            if save:
                save_checkpoint(model, cfg.checkpoint)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss, model)
    return TrainResult(model, losses, best)


def train(cfg: TrainConfig, model_cfg: ModelConfig) -> TrainResult:
    rng = np.random.default_rng(cfg.seed)
    pairs = load_training_pairs(cfg, rng)
    model = WaveCRN(model_cfg, seed=cfg.seed)
    Path(cfg.checkpoint).parent.mkdir(parents=True, exist_ok=True)
    with open(Path(cfg.checkpoint).with_suffix(".config.json"), "w") as fh:
        json.dump({"model": asdict(model_cfg), "train": asdict(cfg)}, fh, indent=2, sort_keys=True)
    return train_pairs(pairs, model, cfg)


# gradient audit ---------------------------------------------------------------

GRADCHECK_SCOPES = ("linear", "conv1d", "conv_transpose1d", "sru", "sru-project", "lstm", "full-model-tiny")


def _l1_against(target):
    def f(y):
        return float(np.abs(y - target).mean())

    def g(y):
        return np.sign(y - target) / y.size

    return f, g


def _numeric_grad(loss_fn, arr, eps):
    num = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + eps
        hi = loss_fn()
        arr[idx] = orig - eps
        lo = loss_fn()
        arr[idx] = orig
        num[idx] = (hi - lo) / (2 * eps)
    return num


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def _check(tensors: dict, analytic: dict, loss_fn, eps):
    return {name: relative_error(_numeric_grad(loss_fn, arr, eps), analytic[name]) for name, arr in tensors.items()}


def gradcheck(scope: str, eps: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Compare analytic gradients of an l1 objective with central differences
    in float64. Returns relative error per checked tensor (input included)."""
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-1, 1, shape)  # noqa: E731

    if scope == "linear":
        h, w, b = u(2, 3, 4), u(4, 5), u(5)
        f, g = _l1_against(u(2, 3, 5))
        y, cache = nn.linear_forward(h, w, b)
        lg = nn.linear_backward(g(y), cache)
        run = lambda: f(nn.linear_forward(h, w, b)[0])  # noqa: E731
        return _check({"input": h, "w": w, "b": b}, {"input": lg.grad_input, **lg.grad_params}, run, eps)

    if scope in ("conv1d", "conv_transpose1d"):
        spec = nn.ConvSpec.half_overlap(2, 3, 4)
        if scope == "conv1d":
            fwd, bwd = nn.conv1d_forward, nn.conv1d_backward
            x, w = u(2, 2, 12), u(3, 2, 4)
        else:
            fwd, bwd = nn.conv_transpose1d_forward, nn.conv_transpose1d_backward
            x, w = u(2, 2, 7), u(2, 3, 4)
        b = u(3)
        y, cache = fwd(x, w, b, spec)
        f, g = _l1_against(u(*y.shape))
        lg = bwd(g(y), cache)
        run = lambda: f(fwd(x, w, b, spec)[0])  # noqa: E731
        return _check({"input": x, "w": w, "b": b}, {"input": lg.grad_input, **lg.grad_params}, run, eps)

    if scope in ("sru", "sru-project", "lstm"):
        n, t, d = 2, 5, 3
        if scope == "lstm":
            x = u(n, t, 4)
            p = recurrent.LstmParams(u(4 + d, 4 * d), u(4 * d))
            fwd, bwd = recurrent.lstm_forward, recurrent.lstm_backward
        else:
            din = 4 if scope == "sru-project" else d
            x = u(n, t, din)
            p = recurrent.SruParams(u(din, 3 * d), u(d), u(d), u(d), u(d),
                                    u(din, d) if scope == "sru-project" else None)
            fwd, bwd = recurrent.sru_forward, recurrent.sru_backward
        y, _, cache = fwd(x, p)
        f, g = _l1_against(u(*y.shape))
        lg = bwd(g(y), cache)
        run = lambda: f(fwd(x, p)[0])  # noqa: E731
        return _check({"input": x, **p.named()}, {"input": lg.grad_input, **lg.grad_params}, run, eps)

    if scope == "full-model-tiny":
        model = WaveCRN(ModelConfig(channels=8, kernel=4, sru_depth=2), seed=seed, dtype=np.float64)
        for k, v in model.params.items():
            if v.ndim == 1:  # non-zero biases so every term is exercised
                v[:] = 0.1 * rng.standard_normal(v.shape)
        x = u(1, 1, 32)
        target = 0.5 * u(1, 1, 32)
        f, g = _l1_against(target)
        y, _, cache = model.forward(x)
        grads = model.backward(g(y), cache)
        run = lambda: f(model.forward(x, keep_cache=False)[0])  # noqa: E731
        return _check(model.params, grads, run, eps)

    raise ValueError(f"unknown gradcheck scope {scope!r}; choose from {GRADCHECK_SCOPES}")
