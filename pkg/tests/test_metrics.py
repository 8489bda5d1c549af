import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavecrn import audio, metrics
from wavecrn.errors import DegenerateInputError, DimensionError

FIXTURES = Path(__file__).parent / "fixtures"


def loop_ssnr(c, t):
    vals = []
    for s in range(0, len(c) - 512 + 1, 256):
        sig = sum(float(v) ** 2 for v in c[s : s + 512])
        err = sum((float(a) - float(b)) ** 2 for a, b in zip(c[s : s + 512], t[s : s + 512]))
        if sig == 0 or 10 * math.log10(sig / 512) <= -60:
            continue
        snr = 35.0 if err == 0 else 10 * math.log10(sig / err)
        vals.append(min(35.0, max(-10.0, snr)))
    return sum(vals) / len(vals)


@pytest.fixture(scope="module")
def speech():
    return audio.synth_speech(np.random.default_rng(21), 2.0).astype(np.float64)


def test_ssnr_identity_and_negation(speech):
    assert metrics.ssnr(speech, speech) == 35.0
    assert abs(metrics.ssnr(speech, -speech) - 10 * math.log10(0.25)) < 1e-9


def test_ssnr_matches_loop(speech, rng):
    test = speech + 0.05 * rng.standard_normal(len(speech))
    assert abs(metrics.ssnr(speech, test) - loop_ssnr(speech, test)) < 1e-6


def test_ssnr_monotone_in_noise_power(speech, rng):
    noise = rng.standard_normal(len(speech))
    vals = [metrics.ssnr(speech, speech + a * noise) for a in (0.001, 0.01, 0.05, 0.2, 1.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_ssnr_errors():
    with pytest.raises(DimensionError):
        metrics.ssnr(np.ones(600), np.ones(601))
    with pytest.raises(DegenerateInputError):
        metrics.ssnr(np.zeros(2048), np.ones(2048))


def test_resampler_passes_band_and_rejects_alias():
    t = np.arange(16000) / 16000
    low = metrics.resample(np.sin(2 * np.pi * 1000 * t), 16000)
    ref = np.sin(2 * np.pi * 1000 * np.arange(10000) / 10000)
    assert len(low) == 10000
    assert np.max(np.abs(low[200:-200] - ref[200:-200])) < 1e-3
    high = metrics.resample(np.sin(2 * np.pi * 6500 * t), 16000)  # above 5 kHz Nyquist
    assert np.sqrt(np.mean(high[200:-200] ** 2)) < 1e-3


def test_third_octave_bands():
    obm = metrics.third_octave_matrix()
    assert obm.shape == (15, 257)
    assert np.all(obm.sum(axis=1) >= 1)
    assert np.all(obm.sum(axis=0) <= 1)  # bands do not overlap


def test_stoi_identity_and_gain(speech):
    base = metrics.stoi(speech, speech)
    assert base >= 0.999
    for c in (0.1, 3.0):
        assert abs(metrics.stoi(speech, c * speech) - base) < 1e-9


@settings(max_examples=10)
@given(st.floats(0.05, 20))
def test_stoi_gain_invariance_noisy(gain):
    r = np.random.default_rng(0)
    x = audio.synth_speech(r, 1.0).astype(np.float64)
    y = x + 0.1 * r.standard_normal(len(x))
    assert abs(metrics.stoi(x, gain * y) - metrics.stoi(x, y)) < 1e-9


def test_stoi_drops_with_noise(speech, rng):
    noise = rng.standard_normal(len(speech))
    vals = [metrics.stoi(speech, speech + a * noise) for a in (0.01, 0.1, 0.5)]
    assert vals[0] > vals[1] > vals[2]
    assert all(0 <= v <= 1 for v in vals)


def _fixture_pair(case):
    import hashlib

    rng = np.random.default_rng(case["seed"])
    clean = audio.synth_speech(rng, case["seconds"]).astype(np.float64)
    noise = audio.synth_noise(rng, case["seconds"]).astype(np.float64)
    alpha = np.sqrt(np.sum(clean**2) / (np.sum(noise**2) * 10 ** (case["snr_db"] / 10)))
    noisy = clean + alpha * noise
    h = hashlib.sha256()
    h.update(audio.float_to_int16(clean).tobytes())
    h.update(audio.float_to_int16(np.clip(noisy, -1, 1)).tobytes())
    assert h.hexdigest() == case["sha256"], "synthetic generator drifted; regenerate fixtures"
    return clean, noisy


def stoi_reference_cases():
    return json.loads((FIXTURES / "stoi_reference.json").read_text())["cases"]


@pytest.mark.parametrize("case", stoi_reference_cases(), ids=lambda c: f"seed{c['seed']}")
def test_stoi_matches_reference_implementation(case):
    clean, noisy = _fixture_pair(case)
    assert abs(metrics.stoi(clean, noisy) - case["reference_stoi"]) < 0.02


def test_stoi_errors():
    with pytest.raises(DimensionError):
        metrics.stoi(np.ones(9000), np.ones(9001))
    with pytest.raises(DegenerateInputError):
        metrics.stoi(np.ones(3000), np.ones(3000))


def _write_pairs(tmp_path, n=3, seed=0):
    rng = np.random.default_rng(seed)
    clean_dir, test_dir = tmp_path / "clean", tmp_path / "test"
    clean_dir.mkdir()
    test_dir.mkdir()
    for i in range(n):
        c = audio.synth_speech(rng, 1.0)
        audio.write_wav(c, clean_dir / f"u{i}.wav")
        audio.write_wav(c + 0.02 * rng.standard_normal(len(c)).astype(np.float32), test_dir / f"u{i}.wav")
    return clean_dir, test_dir


def test_report_identical_dirs(tmp_path):
    clean_dir, _ = _write_pairs(tmp_path)
    rep = metrics.report(clean_dir, clean_dir)
    m = rep.means()
    assert len(rep.rows) == 3 and not rep.errors
    assert m.ssnr_db == 35.0 and m.stoi >= 0.999 and m.l1 == 0


def test_report_missing_file_and_means(tmp_path):
    clean_dir, test_dir = _write_pairs(tmp_path)
    rep = metrics.report(clean_dir, test_dir)
    m = rep.means()
    assert m.ssnr_db == pytest.approx(sum(r.ssnr_db for r in rep.rows) / 3)
    assert m.stoi == pytest.approx(sum(r.stoi for r in rep.rows) / 3)
    (test_dir / "u1.wav").unlink()
    rep = metrics.report(clean_dir, test_dir)
    assert [r.id for r in rep.rows] == ["u0", "u2"]
    assert len(rep.errors) == 1 and rep.errors[0][0] == "u1"


def test_report_csv_format(tmp_path):
    clean_dir, test_dir = _write_pairs(tmp_path)
    rep = metrics.report(clean_dir, test_dir)
    out = tmp_path / "r.csv"
    rep.write_csv(out)
    raw = out.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert lines[0] == "id,ssnr_db,stoi,l1"
    assert lines[1].startswith("u0,") and lines[-1].startswith("mean,")
    assert all(len(f.split(".")[1]) == 6 for f in lines[1].split(",")[1:])
    rep2 = metrics.report(clean_dir, test_dir)
    rep2.write_csv(tmp_path / "r2.csv")
    assert (tmp_path / "r2.csv").read_bytes() == raw
