"""Segmental SNR, STOI and the per-directory evaluation report."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from wavecrn.audio import AudioClip, list_wavs, read_wav
from wavecrn.errors import DegenerateInputError, DimensionError

SSNR_FRAME = 512
SSNR_HOP = 256
SSNR_FLOOR_DB = -10.0
SSNR_CEIL_DB = 35.0
SSNR_GATE_DBFS = -60.0


def _samples(x):
    return np.asarray(x.samples if isinstance(x, AudioClip) else x, dtype=np.float64)


def ssnr(clean, test) -> float:
    """Mean frame SNR over 512-sample frames (50% overlap), each clamped to
    [-10, 35] dB; frames whose clean power is below -60 dBFS are skipped."""
    c, t = _samples(clean), _samples(test)
    if c.shape != t.shape:
        raise DimensionError(f"ssnr: length mismatch {len(c)} vs {len(t)}")
    if len(c) < SSNR_FRAME:
        cf, ef = c[None, :], (c - t)[None, :]
    else:
        cf = sliding_window_view(c, SSNR_FRAME)[::SSNR_HOP]
        ef = sliding_window_view(c - t, SSNR_FRAME)[::SSNR_HOP]
    sig = np.sum(cf * cf, axis=1)
    err = np.sum(ef * ef, axis=1)
    with np.errstate(divide="ignore"):
        active = 10 * np.log10(sig / cf.shape[1]) > SSNR_GATE_DBFS
    if not active.any():
        raise DegenerateInputError("ssnr: clean signal is silent in every frame")
    sig, err = sig[active], err[active]
    with np.errstate(divide="ignore"):
        snr = np.where(err > 0, 10 * np.log10(sig / np.where(err > 0, err, 1.0)), np.inf)
    return float(np.mean(np.clip(snr, SSNR_FLOOR_DB, SSNR_CEIL_DB)))


# STOI -------------------------------------------------------------------------

STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30  # frames, 384 ms
STOI_BETA_DB = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps

RESAMPLE_TAPS = 64
_KAISER_BETA = 8.0


def _polyphase_table(up: int, down: int, taps: int = RESAMPLE_TAPS) -> np.ndarray:
    """Windowed-sinc taps, one row per output phase; row p serves output
    positions whose input-time fraction is p / up."""
    cutoff = 0.5 * min(1.0, up / down) * 0.95  # cycles per input sample, just under Nyquist
    half = taps // 2
    table = np.empty((up, taps))
    offs = np.arange(-half + 1, half + 1)  # input index relative to floor(tau)
    for p in range(up):
        d = offs - p / up
        win = np.i0(_KAISER_BETA * np.sqrt(1 - (d / (half + 1)) ** 2)) / np.i0(_KAISER_BETA)
        h = 2 * cutoff * np.sinc(2 * cutoff * d) * win
        table[p] = h / h.sum()
    return table


def resample(x: np.ndarray, fs_in: int, fs_out: int = STOI_FS) -> np.ndarray:
    """Rational-rate polyphase resampler (64 taps per phase)."""
    x = np.asarray(x, dtype=np.float64)
    if fs_in == fs_out:
        return x.copy()
    g = math.gcd(fs_in, fs_out)
    up, down = fs_out // g, fs_in // g
    table = _polyphase_table(up, down)
    half = RESAMPLE_TAPS // 2
    m = np.arange(-(-len(x) * up // down))
    base = (m * down) // up
    phase = (m * down) % up
    xp = np.pad(x, (half, half + 1))
    idx = base[:, None] + np.arange(RESAMPLE_TAPS)[None, :] + 1  # xp offset cancels -half+1
    return np.sum(xp[idx] * table[phase], axis=1)


def _hann(n):
    return np.hanning(n + 2)[1:-1]


def remove_silent_frames(x, y, dyn_range=STOI_DYN_RANGE, frame=STOI_FRAME, hop=STOI_FRAME // 2):
    """Drop frames of both signals where the clean frame is more than
    ``dyn_range`` dB below the loudest clean frame, then overlap-add."""
    w = _hann(frame)
    starts = np.arange(0, len(x) - frame + 1, hop)
    xf = np.stack([w * x[s : s + frame] for s in starts])
    yf = np.stack([w * y[s : s + frame] for s in starts])
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - dyn_range
    xf, yf = xf[keep], yf[keep]
    n = len(xf)
    out_len = (n - 1) * hop + frame if n else 0
    xs, ys = np.zeros(out_len), np.zeros(out_len)
    for i in range(n):
        xs[i * hop : i * hop + frame] += xf[i]
        ys[i * hop : i * hop + frame] += yf[i]
    return xs, ys


def third_octave_matrix(fs=STOI_FS, nfft=STOI_NFFT, bands=STOI_BANDS, min_freq=STOI_MIN_FREQ):
    freqs = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(bands)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((bands, len(freqs)))
    for i in range(bands):
        a = int(np.argmin((freqs - lo[i]) ** 2))
        b = int(np.argmin((freqs - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def _spectrogram(x):
    w = _hann(STOI_FRAME)
    hop = STOI_FRAME // 2
    starts = np.arange(0, len(x) - STOI_FRAME, hop)
    frames = np.stack([w * x[s : s + STOI_FRAME] for s in starts])
    return np.fft.rfft(frames, n=STOI_NFFT, axis=1)  # frames x bins


def stoi(clean, test, fs: int = 16000) -> float:
    """Short-time objective intelligibility of ``test`` against ``clean``."""
    x, y = _samples(clean), _samples(test)
    if x.shape != y.shape:
        raise DimensionError(f"stoi: length mismatch {len(x)} vs {len(y)}")
    if fs != STOI_FS:
        x, y = resample(x, fs), resample(y, fs)
    if len(x) < STOI_FRAME:
        raise DegenerateInputError("stoi: input shorter than one analysis frame")
    x, y = remove_silent_frames(x, y)
    if len(x) <= STOI_FRAME:
        raise DegenerateInputError("stoi: no non-silent frames")
    obm = third_octave_matrix()
    xb = np.sqrt(obm @ (np.abs(_spectrogram(x)) ** 2).T)  # bands x frames
    yb = np.sqrt(obm @ (np.abs(_spectrogram(y)) ** 2).T)
    if xb.shape[1] < STOI_SEGMENT:
        raise DegenerateInputError(
            f"stoi: need {STOI_SEGMENT} frames (384 ms) of retained speech, got {xb.shape[1]}"
        )
    xs = sliding_window_view(xb, STOI_SEGMENT, axis=1)  # bands x segments x 30
    ys = sliding_window_view(yb, STOI_SEGMENT, axis=1)
    alpha = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    bound = 1 + 10 ** (-STOI_BETA_DB / 20)
    yp = np.minimum(alpha * ys, xs * bound)
    xc = xs - xs.mean(axis=2, keepdims=True)
    yc = yp - yp.mean(axis=2, keepdims=True)
    corr = np.sum(xc * yc, axis=2) / (
        np.linalg.norm(xc, axis=2) * np.linalg.norm(yc, axis=2) + _EPS
    )
    return float(np.clip(corr.mean(), 0.0, 1.0))


# report -----------------------------------------------------------------------

CSV_HEADER = ("id", "ssnr_db", "stoi", "l1")


@dataclass
class EvalRow:
    id: str
    ssnr_db: float
    stoi: float
    l1: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)

    def means(self) -> EvalRow:
        if not self.rows:
            return EvalRow("mean", math.nan, math.nan, math.nan)
        return EvalRow(
            "mean",
            float(np.mean([r.ssnr_db for r in self.rows])),
            float(np.mean([r.stoi for r in self.rows])),
            float(np.mean([r.l1 for r in self.rows])),
        )

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in [*self.rows, self.means()]:
                w.writerow([r.id, f"{r.ssnr_db:.6f}", f"{r.stoi:.6f}", f"{r.l1:.6f}"])
            for name, msg in self.errors:
                w.writerow([f"error:{name}", "", "", msg])


def score_pair(name: str, clean: AudioClip, test: AudioClip) -> EvalRow:
    c, t = clean.samples, test.samples
    if len(c) != len(t):
        raise DimensionError(f"length mismatch {len(c)} vs {len(t)}")
    l1 = float(np.mean(np.abs(c.astype(np.float64) - t)))
    return EvalRow(name, ssnr(c, t), stoi(c, t), l1)


def report(clean_dir, test_dir) -> EvalReport:
    """Score every WAV in ``test_dir`` against the same-named clean file.

    Missing partners and unscorable pairs land in ``errors``; scoring
    continues with the rest.
    """
    rep = EvalReport()
    clean = {p.name: p for p in list_wavs(clean_dir)}
    test = {p.name: p for p in list_wavs(test_dir)}
    for name in sorted(set(clean) | set(test)):
        stem = Path(name).stem
        if name not in test:
            rep.errors.append((stem, "missing in test directory"))
            continue
        if name not in clean:
            rep.errors.append((stem, "missing in clean directory"))
            continue
        try:
            rep.rows.append(score_pair(stem, read_wav(clean[name]), read_wav(test[name])))
        except (ValueError, ArithmeticError) as exc:
            rep.errors.append((stem, str(exc)))
    return rep
