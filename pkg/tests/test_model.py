import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavecrn.errors import CheckpointError, ConfigError, DimensionError, StateError
from wavecrn.model import ModelConfig, WaveCRN, load_checkpoint, model_param_count, save_checkpoint
from wavecrn.train import gradcheck, relative_error

TINY = ModelConfig(channels=8, kernel=4, sru_depth=2)


@pytest.fixture
def tiny64():
    m = WaveCRN(TINY, seed=3, dtype=np.float64)
    r = np.random.default_rng(9)
    for v in m.params.values():
        if v.ndim == 1:
            v[:] = 0.1 * r.standard_normal(v.shape)
    return m


def test_config_defaults_follow_paper_hyperparameters():
    cfg = ModelConfig()
    assert cfg.channels == 256
    assert cfg.kernel == round(0.006 * 16000) and cfg.stride == round(0.003 * 16000)
    assert cfg.padding == cfg.kernel // 2 and cfg.hidden == cfg.channels and cfg.sru_depth == 6
    assert cfg.time_steps(16032) == 335


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(kernel=95)
    with pytest.raises(ConfigError):
        ModelConfig(cell="gru")
    with pytest.raises(ConfigError, match="bogus"):
        ModelConfig.from_dict({"bogus": 1})


@settings(max_examples=20)
@given(st.sampled_from([4, 16, 96]), st.integers(1, 40), st.integers(1, 2))
def test_output_shape_equals_input_shape(k, frames, n):
    m = WaveCRN(ModelConfig(channels=4, kernel=k, sru_depth=1), seed=0)
    x = np.random.default_rng(frames).uniform(-1, 1, (n, 1, frames * k // 2)).astype(np.float32)
    y, mask, _ = m.forward(x, keep_cache=False)
    assert y.shape == x.shape
    assert mask.shape == (n, 4, 2 * x.shape[2] // k + 1)


def test_zero_maps_to_zero():
    m = WaveCRN(ModelConfig(channels=16, kernel=8, sru_depth=2), seed=1)
    y, _, _ = m.forward(np.zeros((2, 1, 64), np.float32))
    assert not y.any()


def test_mask_and_output_ranges(rng):
    m = WaveCRN(ModelConfig(channels=16, kernel=8, sru_depth=2), seed=1)
    x = rng.uniform(-1, 1, (2, 1, 128)).astype(np.float32)
    y, mask, cache = m.forward(x)
    assert mask.min() >= -1 and mask.max() <= 1
    assert np.all(np.abs(mask * cache["feat"]) <= np.abs(cache["feat"]))
    assert np.all(np.abs(y) <= 1)


def test_input_length_must_be_stride_aligned():
    m = WaveCRN(TINY)
    with pytest.raises(DimensionError):
        m.forward(np.zeros((1, 1, 33), np.float32))
    with pytest.raises(DimensionError):
        m.forward(np.zeros((1, 2, 32), np.float32))


def test_backward_zero_and_missing_cache(tiny64, rng):
    y, _, cache = tiny64.forward(rng.uniform(-1, 1, (1, 1, 32)))
    grads = tiny64.backward(np.zeros_like(y), cache)
    assert set(grads) == set(tiny64.params)
    assert all(not g.any() for g in grads.values())
    with pytest.raises(StateError):
        tiny64.backward(y, None)


def test_full_model_gradcheck():
    errs = gradcheck("full-model-tiny")
    assert max(errs.values()) < 1e-4


def test_masking_product_rule_with_frozen_mask(tiny64, rng):
    # with the mask held fixed, d(M * F)/dF = M; compare against finite differences on F
    x = rng.uniform(-1, 1, (1, 1, 32))
    _, mask, cache = tiny64.forward(x)
    feat = cache["feat"]
    p = tiny64.params
    from wavecrn import nn

    target = rng.uniform(-0.5, 0.5, (1, 1, 32))

    def loss_of(f):
        y, _ = nn.conv_transpose1d_forward(mask * f, p["decoder.w"], p["decoder.b"], tiny64.dec_spec)
        return np.abs(np.tanh(y) - target).mean()

    y, c_dec = nn.conv_transpose1d_forward(mask * feat, p["decoder.w"], p["decoder.b"], tiny64.dec_spec)
    yh = np.tanh(y)
    g_masked = nn.conv_transpose1d_backward(np.sign(yh - target) / yh.size * (1 - yh * yh), c_dec).grad_input
    analytic = g_masked * mask
    num = np.zeros_like(feat)
    f = feat.copy()
    for idx in np.ndindex(f.shape):
        o = f[idx]
        f[idx] = o + 1e-5
        hi = loss_of(f)
        f[idx] = o - 1e-5
        lo = loss_of(f)
        f[idx] = o
        num[idx] = (hi - lo) / 2e-5
    assert relative_error(num, analytic) < 1e-4


def test_param_count_closed_form_matches_allocation():
    for cfg in (TINY, ModelConfig(channels=12, kernel=6, sru_depth=3, cell="lstm"),
                ModelConfig(channels=10, kernel=4, sru_depth=2, highway="project")):
        assert WaveCRN(cfg).num_parameters() == model_param_count(cfg)


def test_paper_scale_counts():
    sru = model_param_count(ModelConfig())
    lstm = model_param_count(ModelConfig(cell="lstm"))
    assert sru == 4_518_401 and lstm == 9_105_921


def test_checkpoint_round_trip_bit_exact(tmp_path):
    m = WaveCRN(TINY, seed=7)
    path = tmp_path / "m.wcrn"
    save_checkpoint(m, path)
    back = load_checkpoint(path, expected=TINY)
    assert back.cfg == TINY
    assert list(back.params) == list(m.params)
    for k in m.params:
        assert back.params[k].dtype == m.params[k].dtype
        assert back.params[k].tobytes() == m.params[k].tobytes()
    assert path.read_bytes()[:4] == b"WCRN"


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.wcrn"
    save_checkpoint(WaveCRN(TINY), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_corrupt_and_bad_version(tmp_path):
    path = tmp_path / "m.wcrn"
    save_checkpoint(WaveCRN(TINY), path)
    data = bytearray(path.read_bytes())
    data[-40] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="integrity"):
        load_checkpoint(path)
    data = bytearray(path.read_bytes())
    data[4] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_checkpoint_config_mismatch_names_field(tmp_path):
    path = tmp_path / "m.wcrn"
    save_checkpoint(WaveCRN(TINY), path)
    with pytest.raises(ConfigError, match="channels"):
        load_checkpoint(path, expected=ModelConfig(channels=16, kernel=4, sru_depth=2))


def test_enhance_trims_to_origin_length(rng):
    m = WaveCRN(TINY)
    y = m.enhance(rng.uniform(-1, 1, 37).astype(np.float32))
    assert y.shape == (37,)
