"""Audio I/O, padding, SNR mixing, the 2-bit sign codec and batch assembly."""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from wavecrn.errors import DegenerateInputError, DimensionError, FormatError

SAMPLE_RATE = 16000


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    origin_length: int | None = None
    scale: float = 1.0  # gain applied by peak normalisation, if any
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise DimensionError(f"audio must be mono 1-D, got shape {self.samples.shape}")
        if self.origin_length is None:
            self.origin_length = len(self.samples)

    def __len__(self):
        return len(self.samples)

    def trimmed(self) -> "AudioClip":
        return AudioClip(self.samples[: self.origin_length], self.sample_rate, name=self.name)


# WAV ------------------------------------------------------------------------


def int16_to_float(pcm: np.ndarray) -> np.ndarray:
    return pcm.astype(np.float32) / np.float32(32768.0)


def float_to_int16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")


def read_wav(path) -> AudioClip:
    """Read a PCM16 mono 16 kHz WAV; anything else raises :class:`FormatError`."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, frames = (
                w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes(),
            )
            if channels != 1:
                raise FormatError(f"{path}: expected mono, got {channels} channels")
            if width != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
            if rate != SAMPLE_RATE:
                raise FormatError(f"{path}: expected {SAMPLE_RATE} Hz, got sample rate {rate} Hz")
            raw = w.readframes(frames)
    except (wave.Error, EOFError, struct.error) as exc:
        raise FormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    if len(raw) != 2 * frames:
        raise FormatError(f"{path}: data chunk truncated")
    return AudioClip(int16_to_float(np.frombuffer(raw, dtype="<i2")), name=path.stem)


def write_wav(clip: AudioClip | np.ndarray, path) -> None:
    """Write PCM16 mono with the canonical 44-byte header."""
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(float_to_int16(samples).tobytes())


def list_wavs(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.wav"))


# padding and batching -------------------------------------------------------


def padded_length(length: int, stride: int) -> int:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return -(-length // stride) * stride


def pad_to_stride(clip: AudioClip, stride: int) -> AudioClip:
    n = len(clip.samples)
    lp = padded_length(n, stride)
    out = np.zeros(lp, dtype=np.float32)
    out[:n] = clip.samples
    return AudioClip(out, clip.sample_rate, origin_length=clip.origin_length, name=clip.name)


def make_batch(clips, stride: int, dtype=np.float32):
    """Stack clips into an N x 1 x Lp tensor, zero-padding to a common
    stride-aligned length. Returns ``(batch, origin_lengths)``."""
    clips = list(clips)
    if not clips:
        raise ValueError("cannot build a batch from zero clips")
    lp = padded_length(max(len(c.samples) for c in clips), stride)
    batch = np.zeros((len(clips), 1, lp), dtype=dtype)
    lengths = np.empty(len(clips), dtype=np.int64)
    for i, c in enumerate(clips):
        batch[i, 0, : len(c.samples)] = c.samples
        lengths[i] = min(c.origin_length, len(c.samples))
    return batch, lengths


def length_mask(lengths, lp: int, dtype=np.float32) -> np.ndarray:
    """N x 1 x Lp mask that is 1 inside each item's original length."""
    return (np.arange(lp)[None, None, :] < np.asarray(lengths)[:, None, None]).astype(dtype)


# mixing ---------------------------------------------------------------------


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    c = np.asarray(clean, dtype=np.float64)
    n = np.asarray(noise, dtype=np.float64)
    return 10.0 * math.log10(np.sum(c * c) / np.sum(n * n))


def fit_noise(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Tile a short noise to ``length`` or crop a long one at a random offset."""
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) < length:
        noise = np.tile(noise, -(-length // len(noise)))[:length]
        return noise
    start = int(rng.integers(0, len(noise) - length + 1))
    return noise[start : start + length]


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr: float, rng=None) -> AudioClip:
    """Add scaled noise so the utterance-level SNR equals ``snr`` dB.

    ``snr = math.inf`` returns the clean signal unchanged. If the mixture
    clips it is peak-normalised and the gain is kept in ``AudioClip.scale``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    c = np.asarray(clean.samples, dtype=np.float64)
    if math.isinf(snr) and snr > 0:
        return AudioClip(c.copy(), name=clean.name)
    n = fit_noise(noise.samples, len(c), rng)
    pc, pn = np.sum(c * c), np.sum(n * n)
    if pc == 0:
        raise DegenerateInputError("clean signal is silent; SNR undefined")
    if pn == 0:
        raise DegenerateInputError("noise signal is silent; cannot reach a finite SNR")
    alpha = math.sqrt(pc / (pn * 10.0 ** (snr / 10.0)))
    noisy = c + alpha * n
    peak = np.max(np.abs(noisy))
    scale = 1.0
    if peak > 1.0:
        scale = 1.0 / peak
        noisy = noisy * scale
    return AudioClip(noisy, scale=scale, name=clean.name)


# 2-bit sign codec -----------------------------------------------------------

PACK_MAGIC = b"WC2B"
PACK_VERSION = 1
_PACK_HEADER = struct.Struct("<4sII")  # magic, version, sample count
_CODE_OF = {0: 0b00, 1: 0b01, -1: 0b10}


def compress_2bit(samples) -> np.ndarray:
    """Sign quantisation to {-1.0, 0.0, +1.0}."""
    x = samples.samples if isinstance(samples, AudioClip) else np.asarray(samples)
    return np.sign(x).astype(np.float32)


def pack(signs) -> bytes:
    """Pack a {-1, 0, +1} sequence at 2 bits/sample, 4 samples per byte,
    sample i in bits 2*(i % 4) .. 2*(i % 4) + 1 of byte i // 4."""
    s = np.asarray(signs)
    if not np.all((s == 0) | (s == 1) | (s == -1)):
        raise ValueError("pack expects values in {-1, 0, +1}; run compress_2bit first")
    codes = np.where(s < 0, 2, s).astype(np.uint8)
    n = len(codes)
    codes = np.pad(codes, (0, -n % 4)).reshape(-1, 4)
    payload = codes[:, 0] | codes[:, 1] << 2 | codes[:, 2] << 4 | codes[:, 3] << 6
    return _PACK_HEADER.pack(PACK_MAGIC, PACK_VERSION, n) + payload.astype(np.uint8).tobytes()


def unpack(blob: bytes) -> np.ndarray:
    if len(blob) < _PACK_HEADER.size:
        raise FormatError("packed stream shorter than its header")
    magic, version, n = _PACK_HEADER.unpack_from(blob)
    if magic != PACK_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PACK_MAGIC!r}")
    if version != PACK_VERSION:
        raise FormatError(f"unsupported packed-bits version {version}")
    payload = np.frombuffer(blob, dtype=np.uint8, offset=_PACK_HEADER.size)
    if len(payload) != -(-n // 4):
        raise FormatError(f"payload has {len(payload)} bytes, expected {-(-n // 4)} for {n} samples")
    codes = np.stack([(payload >> sh) & 0b11 for sh in (0, 2, 4, 6)], axis=1).reshape(-1)[:n]
    if np.any(codes == 0b11):
        raise FormatError(f"reserved code 11 at sample {int(np.argmax(codes == 0b11))}")
    return np.array([0.0, 1.0, -1.0], dtype=np.float32)[codes]


def packed_size(n: int) -> int:
    return _PACK_HEADER.size + -(-n // 4)


# synthetic corpus -----------------------------------------------------------


def synth_speech(rng: np.random.Generator, seconds: float = 1.0) -> np.ndarray:
    """Speech-like signal: harmonic voiced segments with a gliding pitch,
    syllable-rate envelopes and short pauses."""
    n = int(round(seconds * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(100, 220) * (1 + 0.15 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * t))
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    formants = rng.uniform([400, 1100, 2300], [900, 1900, 3200])
    sig = np.zeros(n)
    for k in range(1, 30):
        fk = k * f0.mean()
        if fk > 4000:
            break
        gain = sum(np.exp(-((fk - f) / 180.0) ** 2) for f in formants) + 0.05
        sig += gain / k**0.5 * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(3, 6)
    env = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0, None) ** 1.5
    # pauses so silent-frame removal has something to remove
    gap = rng.integers(0, max(1, n // 2))
    env[gap : gap + n // 8] *= 0.0
    sig *= env
    return (0.5 * sig / (np.max(np.abs(sig)) + 1e-12)).astype(np.float32)


def synth_noise(rng: np.random.Generator, seconds: float = 1.0) -> np.ndarray:
    """Low-pass shaped white noise with a slow amplitude wobble."""
    n = int(round(seconds * SAMPLE_RATE))
    white = rng.standard_normal(n + 64)
    taps = np.hanning(rng.integers(3, 12))
    shaped = np.convolve(white, taps / taps.sum(), mode="same")[:n]
    wobble = 1 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.2, 1.0) * np.arange(n) / SAMPLE_RATE)
    out = shaped * wobble
    return (0.3 * out / np.max(np.abs(out))).astype(np.float32)


def synth_corpus(out_dir, count: int = 8, seconds: float = 1.0, snr: float = 5.0, seed: int = 0):
    """Write ``clean/``, ``noise/`` and ``noisy/`` directories of matching WAVs."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    for sub in ("clean", "noise", "noisy"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i in range(count):
        name = f"utt{i:03d}.wav"
        clean = AudioClip(synth_speech(rng, seconds))
        noise = AudioClip(synth_noise(rng, seconds))
        noisy = mix_at_snr(clean, noise, snr, rng)
        write_wav(clean, out / "clean" / name)
        write_wav(noise, out / "noise" / name)
        write_wav(noisy, out / "noisy" / name)
    return out
