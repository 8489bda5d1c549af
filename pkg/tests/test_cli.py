import json

import numpy as np
import pytest

from wavecrn import audio, metrics
from wavecrn.cli import main
from wavecrn.model import ModelConfig, WaveCRN, save_checkpoint

TINY = ModelConfig(channels=8, kernel=8, sru_depth=1)


@pytest.fixture
def corpus(tmp_path):
    return audio.synth_corpus(tmp_path / "data", count=2, seconds=1.5, seed=5)


@pytest.fixture
def ckpt(tmp_path):
    path = tmp_path / "m.wcrn"
    save_checkpoint(WaveCRN(TINY, seed=2), path)
    return path


def test_synth_data_idempotent(tmp_path, capsys):
    assert main(["synth-data", "--out", str(tmp_path / "a"), "--count", "2", "--seconds", "0.3"]) == 0
    assert main(["synth-data", "--out", str(tmp_path / "b"), "--count", "2", "--seconds", "0.3"]) == 0
    for f in (tmp_path / "a" / "noisy").glob("*.wav"):
        assert f.read_bytes() == (tmp_path / "b" / "noisy" / f.name).read_bytes()


def test_enhance_directory(tmp_path, corpus, ckpt):
    out = tmp_path / "enh"
    before = {p.name: p.read_bytes() for p in (corpus / "noisy").glob("*.wav")}
    assert main(["enhance", "--ckpt", str(ckpt), "--in", str(corpus / "noisy"), "--out", str(out)]) == 0
    for name, raw in before.items():
        assert len(audio.read_wav(out / name)) == len(audio.read_wav(corpus / "noisy" / name))
        assert (corpus / "noisy" / name).read_bytes() == raw  # inputs untouched
    first = {p.name: p.read_bytes() for p in out.glob("*.wav")}
    main(["enhance", "--ckpt", str(ckpt), "--in", str(corpus / "noisy"), "--out", str(out)])
    assert first == {p.name: p.read_bytes() for p in out.glob("*.wav")}


def test_compress_then_restore(tmp_path, corpus, ckpt):
    src = corpus / "clean" / "utt000.wav"
    packed = tmp_path / "a.wc2b"
    assert main(["compress", "--in", str(src), "--out", str(packed), "--wav", str(tmp_path / "a_sign.wav")]) == 0
    n = len(audio.read_wav(src))
    assert packed.stat().st_size == audio.packed_size(n)
    signs = audio.read_wav(tmp_path / "a_sign.wav").samples
    assert set(np.unique(signs)) <= {-1.0, 0.0, 32767 / 32768}
    out = tmp_path / "restored.wav"
    assert main(["restore", "--ckpt", str(ckpt), "--in", str(packed), "--out", str(out)]) == 0
    restored = audio.read_wav(out)
    assert len(restored) == n
    assert 0.0 <= metrics.stoi(audio.read_wav(src).samples, restored.samples) <= 1.0


def test_eval_writes_csv(tmp_path, corpus, capsys):
    out = tmp_path / "rep.csv"
    assert main(["eval", "--clean", str(corpus / "clean"), "--test", str(corpus / "noisy"), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "id,ssnr_db,stoi,l1"


def test_train_cli_with_config(tmp_path, corpus):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": {"channels": 8, "kernel": 8, "sru_depth": 1},
                               "train": {"epochs": 1, "lr": 1e-3}}))
    out = tmp_path / "run"
    rc = main(["train", "--config", str(cfg), "--out", str(out), "--clean", str(corpus / "clean"),
               "--noisy", str(corpus / "noisy"), "--epochs", "2"])
    assert rc == 0
    resolved = json.loads((out / "run_config.json").read_text())
    assert resolved["train"]["epochs"] == 2 and resolved["model"]["channels"] == 8
    assert (out / "model.wcrn").exists() and (out / "loss.csv").exists()


def test_train_config_unknown_key(tmp_path, corpus, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": {"channelz": 8}}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "channelz" in capsys.readouterr().err
    cfg.write_text(json.dumps({"extra": {}}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_gradcheck_cli(capsys):
    assert main(["gradcheck", "--scope", "full-model-tiny"]) == 0
    assert "ok" in capsys.readouterr().out


def test_bench_cli(tmp_path):
    rc = main(["bench", "--out", str(tmp_path), "--channels", "8,16", "--n", "2", "--t", "5",
               "--depth", "1", "--reps", "20"])
    assert rc == 0
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert lines[0] == "cell,pass,N,T,C,median_ms,min_ms,params"
    assert len(lines) == 1 + 2 * 2 * 2
    assert "speedup" in (tmp_path / "bench.md").read_text()


def test_exit_codes(tmp_path, capsys, ckpt):
    with pytest.raises(SystemExit) as exc:
        main(["enhance", "--bogus"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err
    assert main(["enhance", "--ckpt", str(tmp_path / "none.wcrn"), "--in", str(tmp_path), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.wc2b"
    bad.write_bytes(b"WC2B" + bytes(3))
    assert main(["restore", "--ckpt", str(ckpt), "--in", str(bad), "--out", str(tmp_path / "r.wav")]) == 2


def test_numeric_failure_exit_code(tmp_path, corpus):
    m = WaveCRN(TINY)
    m.params["decoder.w"][:] = np.nan
    path = tmp_path / "nan.wcrn"
    save_checkpoint(m, path)
    rc = main(["enhance", "--ckpt", str(path), "--in", str(corpus / "noisy"), "--out", str(tmp_path / "o")])
    assert rc == 3
