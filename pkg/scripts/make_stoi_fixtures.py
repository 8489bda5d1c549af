"""Freeze reference STOI scores for the metric tests.

Needs the third-party ``pystoi`` package (offline only; the test suite does
not import it). Signals are regenerated in the tests from the seeds stored
here; the sha256 of their PCM16 rendering guards against generator drift.

    python scripts/make_stoi_fixtures.py > tests/fixtures/stoi_reference.json
"""

import hashlib
import json

import numpy as np
from pystoi import stoi as reference_stoi

from wavecrn.audio import float_to_int16, synth_noise, synth_speech

SEEDS = (11, 12, 13, 14, 15)
SNRS = (-5.0, 0.0, 5.0, 10.0, 20.0)
SECONDS = 2.0


def make_pair(seed, snr):
    rng = np.random.default_rng(seed)
    clean = synth_speech(rng, SECONDS).astype(np.float64)
    noise = synth_noise(rng, SECONDS).astype(np.float64)
    alpha = np.sqrt(np.sum(clean**2) / (np.sum(noise**2) * 10 ** (snr / 10)))
    return clean, clean + alpha * noise


def digest(clean, noisy):
    h = hashlib.sha256()
    h.update(float_to_int16(clean).tobytes())
    h.update(float_to_int16(np.clip(noisy, -1, 1)).tobytes())
    return h.hexdigest()


def main():
    cases = []
    for seed, snr in zip(SEEDS, SNRS):
        clean, noisy = make_pair(seed, snr)
        cases.append({
            "seed": seed, "snr_db": snr, "seconds": SECONDS,
            "sha256": digest(clean, noisy),
            "reference_stoi": float(reference_stoi(clean, noisy, 16000)),
        })
    print(json.dumps({"source": "pystoi 0.4.1", "cases": cases}, indent=2))


if __name__ == "__main__":
    main()
