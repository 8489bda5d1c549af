"""Exit criteria. Each test records one PASS/FAIL line, printed in the
pytest terminal summary under "acceptance criteria"."""

import math
import random
import tempfile
import time
from pathlib import Path

import numpy as np
from conftest import record_acceptance

from wavecrn import audio, metrics, nn
from wavecrn.bench import bench
from wavecrn.experiments import OverfitSetup, run_overfit
from wavecrn.model import ModelConfig, WaveCRN, load_checkpoint, model_param_count, save_checkpoint
from wavecrn.train import GRADCHECK_SCOPES, gradcheck

from test_metrics import _fixture_pair, stoi_reference_cases

PAPER_SRU_PARAMS = 4_655_000
PAPER_LSTM_PARAMS = 9_093_000
PAPER_PARAM_RATIO = 0.51


def test_1_gradient_audit():
    t0 = time.perf_counter()
    worst = {scope: max(gradcheck(scope, eps=1e-5).values()) for scope in GRADCHECK_SCOPES}
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 300
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.0f}s"
    assert record_acceptance(1, "gradient audit < 1e-4", ok, detail)


def test_2_adjoint_and_length_identities():
    rng = np.random.default_rng(2)
    gaps = []
    for k in (4, 16, 96):
        cin, cout, frames = 3, 5, 11
        length = frames * k // 2
        x = rng.standard_normal((2, cin, length))
        w = rng.standard_normal((cout, cin, k))
        fx, _ = nn.conv1d_forward(x, w, np.zeros(cout), nn.ConvSpec.half_overlap(cin, cout, k))
        y = rng.standard_normal(fx.shape)
        ty, _ = nn.conv_transpose1d_forward(y, w, np.zeros(cin), nn.ConvSpec.half_overlap(cout, cin, k))
        lhs, rhs = np.sum(fx * y), np.sum(x * ty)
        gaps.append(abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    py = random.Random(7)
    models = {k: WaveCRN(ModelConfig(channels=4, kernel=k, sru_depth=1), seed=k) for k in (4, 16, 96)}
    mismatches = 0
    for _ in range(100):
        k = py.choice((4, 16, 96))
        raw_len = py.randint(1, 4000)
        clip = audio.pad_to_stride(audio.AudioClip(np.zeros(raw_len)), k // 2)
        x = rng.uniform(-1, 1, (1, 1, len(clip))).astype(np.float32)
        y, _, _ = models[k].forward(x, keep_cache=False)
        mismatches += y.shape != x.shape
        mismatches += len(models[k].enhance(x[0, 0, :raw_len])) != raw_len
    ok = max(gaps) <= 1e-10 and mismatches == 0
    detail = f"adjoint gap {max(gaps):.1e}; length mismatches {mismatches}/100"
    assert record_acceptance(2, "adjoint and length identities", ok, detail)


def test_3_parameter_study():
    sru = model_param_count(ModelConfig())
    lstm = model_param_count(ModelConfig(cell="lstm"))
    assert WaveCRN(ModelConfig(channels=256, kernel=96, sru_depth=6)).num_parameters() == sru
    ratio = sru / lstm
    ok = (
        abs(sru / PAPER_SRU_PARAMS - 1) <= 0.10
        and abs(lstm / PAPER_LSTM_PARAMS - 1) <= 0.10
        and abs(ratio - PAPER_PARAM_RATIO) <= 0.10
    )
    detail = (
        f"SRU {sru / 1e3:.0f}K ({sru / PAPER_SRU_PARAMS - 1:+.1%}), "
        f"LSTM {lstm / 1e3:.0f}K ({lstm / PAPER_LSTM_PARAMS - 1:+.1%}), ratio {ratio:.3f}"
    )
    assert record_acceptance(3, "parameter counts vs published totals", ok, detail)


def test_4_speed_study():
    t0 = time.perf_counter()
    res = bench(channels=(64, 128, 256, 512), n=16, t=335, depth=6, passes=("forward",), threads=1)
    elapsed = time.perf_counter() - t0
    speedup = res.median("lstm", "forward", 256) / res.median("sru", "forward", 256)
    e_sru, e_lstm = res.exponents["sru_scan"], res.exponents["lstm_recurrence"]
    ok = speedup >= 3 and e_sru < 1.5 and e_lstm > 1.6 and elapsed < 600
    detail = (
        f"forward speedup at C=256 {speedup:.1f}x; exponents SRU scan {e_sru:.2f}, "
        f"LSTM {e_lstm:.2f}; {elapsed:.0f}s"
    )
    assert record_acceptance(4, "SRU vs LSTM speed and scaling", ok, detail)


def test_5_denoising_overfit():
    t0 = time.perf_counter()
    res = run_overfit(OverfitSetup(task="denoise"))
    elapsed = time.perf_counter() - t0
    first, final = res["losses"][0], res["losses"][-1]
    gain = res["ssnr_out"] - res["ssnr_in"]
    ok = final < 0.5 * first and gain >= 2.0 and elapsed < 1800
    detail = f"l1 {first:.4f} -> {final:.4f}; SSNR {res['ssnr_in']:.2f} -> {res['ssnr_out']:.2f} dB; {elapsed:.0f}s"
    assert record_acceptance(5, "denoising overfit", ok, detail)


def test_6_restoration_overfit():
    t0 = time.perf_counter()
    res = run_overfit(OverfitSetup(task="restore"))
    elapsed = time.perf_counter() - t0
    gain = res["stoi_out"] - res["stoi_in"]
    ok = gain >= 0.05 and elapsed < 1800
    detail = f"STOI {res['stoi_in']:.3f} -> {res['stoi_out']:.3f} ({gain:+.3f}); {elapsed:.0f}s"
    assert record_acceptance(6, "2-bit restoration overfit", ok, detail)


def test_7_metric_sanity():
    x = audio.synth_speech(np.random.default_rng(70), 2.0).astype(np.float64)
    s_id, q_id = metrics.stoi(x, x), metrics.ssnr(x, x)
    diffs = []
    for case in stoi_reference_cases():
        clean, noisy = _fixture_pair(case)
        diffs.append(abs(metrics.stoi(clean, noisy) - case["reference_stoi"]))
    ok = s_id >= 0.999 and q_id == 35.0 and len(diffs) == 5 and max(diffs) < 0.02
    detail = f"stoi(x,x) {s_id:.4f}, ssnr(x,x) {q_id}, max |stoi - reference| {max(diffs):.4f} over {len(diffs)} pairs"
    assert record_acceptance(7, "metric sanity", ok, detail)


def test_8_codec_and_checkpoint():
    n = 1_000_000
    y = np.random.default_rng(8).integers(-1, 2, n).astype(np.float32)
    blob = audio.pack(y)
    bijective = np.array_equal(audio.unpack(blob), y)
    header = len(blob) - math.ceil(n / 4)
    size_ok = header == 12 and len(blob) == audio.packed_size(n)
    reduction = 1 - (8 * (len(blob) - header)) / (16 * n)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "m.wcrn"
        model = WaveCRN(ModelConfig(channels=16, kernel=8, sru_depth=2), seed=8)
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        exact = all(back.params[k].tobytes() == v.tobytes() for k, v in model.params.items())
    ok = bijective and size_ok and reduction == 0.875 and exact
    detail = f"bijection {bijective}, {len(blob)} bytes = ceil(n/4) + {header}, reduction {reduction:.1%}, checkpoint exact {exact}"
    assert record_acceptance(8, "codec and checkpoint", ok, detail)
