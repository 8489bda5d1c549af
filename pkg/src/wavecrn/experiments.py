"""Desk-scale overfit protocol shared by the acceptance tests and scripts."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from wavecrn.audio import AudioClip, compress_2bit, mix_at_snr, synth_noise, synth_speech
from wavecrn.metrics import ssnr, stoi
from wavecrn.model import ModelConfig, WaveCRN
from wavecrn.train import TrainConfig, train_pairs

log = logging.getLogger(__name__)


@dataclass
class OverfitSetup:
    task: str = "denoise"
    n_clips: int = 8
    seconds: float = 1.5
    snr_db: float = 5.0
    epochs: int = 500
    channels: int = 64
    kernel: int = 96
    depth: int = 6
    lr: float = 1e-3
    seed: int = 0


def synth_pairs(setup: OverfitSetup):
    rng = np.random.default_rng(setup.seed)
    pairs = []
    for i in range(setup.n_clips):
        clean = AudioClip(synth_speech(rng, setup.seconds), name=f"utt{i:03d}")
        if setup.task == "restore":
            inp = AudioClip(compress_2bit(clean), name=clean.name)
        else:
            inp = mix_at_snr(clean, AudioClip(synth_noise(rng, setup.seconds)), setup.snr_db, rng)
        pairs.append((inp, clean))
    return pairs


def _scores(pairs, outputs):
    return {
        "ssnr_in": float(np.mean([ssnr(y.samples, x.samples) for x, y in pairs])),
        "ssnr_out": float(np.mean([ssnr(y.samples, o) for (_, y), o in zip(pairs, outputs)])),
        "stoi_in": float(np.mean([stoi(y.samples, x.samples) for x, y in pairs])),
        "stoi_out": float(np.mean([stoi(y.samples, o) for (_, y), o in zip(pairs, outputs)])),
    }


def run_overfit(setup: OverfitSetup, progress_every: int = 0) -> dict:
    """Train on the synthetic pairs and score the training items."""
    pairs = synth_pairs(setup)
    model = WaveCRN(
        ModelConfig(channels=setup.channels, kernel=setup.kernel, sru_depth=setup.depth),
        seed=setup.seed,
    )
    cfg = TrainConfig(
        seed=setup.seed, epochs=setup.epochs, lr=setup.lr, task=setup.task,
        crop_seconds=setup.seconds,
    )
    def report(epoch, loss, m):
        if progress_every and epoch % progress_every == 0:
            outs = [m.enhance(x.samples) for x, _ in pairs]
            log.warning("epoch %d: l1 %.5f %s", epoch, loss, _scores(pairs, outs))

    losses = train_pairs(pairs, model, cfg, save=False, on_epoch=report).losses
    outputs = [model.enhance(x.samples) for x, _ in pairs]
    return {"losses": losses, **_scores(pairs, outputs)}
