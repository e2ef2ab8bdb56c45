"""Chunked engine vs offline batch inference."""

import numpy as np
import pytest

from sca_aec.dsp import StftConfig
from sca_aec.errors import ConfigError, DataError
from sca_aec.network import ModelConfig, ScaCrnModel
from sca_aec.streaming import StreamingAec, enhance_offline, enhance_streaming

from conftest import TOY_STFT, rel_l2


def make_model(**kw):
    base = dict(d=16, n_heads=2, lookahead=0, stft=StftConfig(**TOY_STFT))
    base.update(kw)
    return ScaCrnModel(ModelConfig(**base), seed=0)


def signals(rng, n=400):
    return rng.standard_normal(n), rng.standard_normal(n)


@pytest.mark.parametrize("chunk", [1, 3, 8, 57, 480])
def test_streaming_output_is_chunking_invariant(chunk):
    model = make_model()
    rng = np.random.default_rng(0)
    mic, far = signals(rng)
    ref = enhance_streaming(model, mic, far, chunk=4)
    got = enhance_streaming(model, mic, far, chunk=chunk)
    assert np.array_equal(ref, got)


@pytest.mark.parametrize("lookahead", [0, 2])
def test_streaming_matches_offline(lookahead):
    model = make_model(lookahead=lookahead)
    rng = np.random.default_rng(1)
    mic, far = signals(rng)
    off = enhance_offline(model, mic, far)
    stream = enhance_streaming(model, mic, far, chunk=7)
    assert stream.shape == off.shape
    assert rel_l2(stream, off) < 1e-6


def test_streaming_matches_offline_without_attention():
    model = make_model(attention="none")
    rng = np.random.default_rng(2)
    mic, far = signals(rng)
    off = enhance_offline(model, mic, far)
    stream = enhance_streaming(model, mic, far, chunk=5)
    assert rel_l2(stream, off) < 1e-6


def test_lookahead_delays_emission():
    cfg = StftConfig(**TOY_STFT)
    model = make_model(lookahead=2)
    eng = StreamingAec(model)
    # one full window yields one analysis frame, held back by lookahead 2
    out = eng.push(np.zeros(cfg.window_len), np.zeros(cfg.window_len))
    assert out.size == 0
    out2 = eng.push(np.zeros(2 * cfg.hop), np.zeros(2 * cfg.hop))
    assert out2.size > 0


def test_flush_emits_total_analysis_span():
    cfg = StftConfig(**TOY_STFT)
    model = make_model()
    rng = np.random.default_rng(3)
    n = 100
    mic, far = signals(rng, n)
    out = enhance_streaming(model, mic, far, chunk=9)
    t = cfg.n_frames(n)
    assert out.shape[0] == cfg.n_samples(t)


def test_push_after_flush_rejected():
    model = make_model()
    eng = StreamingAec(model)
    eng.flush()
    with pytest.raises(DataError):
        eng.push(np.zeros(4), np.zeros(4))


def test_mismatched_chunk_lengths_rejected():
    eng = StreamingAec(make_model())
    with pytest.raises(DataError):
        eng.push(np.zeros(5), np.zeros(4))


def test_unlimited_lookahead_cannot_stream():
    model = make_model(lookahead=None)
    with pytest.raises(ConfigError):
        StreamingAec(model)
    # offline path still works
    rng = np.random.default_rng(4)
    mic, far = signals(rng, 120)
    out = enhance_offline(model, mic, far)
    assert np.all(np.isfinite(out))


def test_zero_mask_silences_output():
    model = make_model()
    rng = np.random.default_rng(5)
    mic, far = signals(rng, 200)
    out = enhance_streaming(model, mic, far, chunk=30, zero_mask=True)
    assert np.all(out == 0.0)
    assert out.shape == enhance_streaming(model, mic, far, chunk=30).shape


def test_causality_future_samples_cannot_move_emitted_output():
    # with L=0 the samples already emitted must not change when later
    # input changes; run the engine twice with diverging tails
    model = make_model()
    cfg = model.config.stft
    rng = np.random.default_rng(6)
    n = 60 * cfg.hop
    mic, far = signals(rng, n)
    cut = 30 * cfg.hop

    def run(mic_s, far_s):
        eng = StreamingAec(model)
        return eng.push(mic_s, far_s)

    a = run(mic[:cut], far[:cut])
    mic2 = mic.copy()
    far2 = far.copy()
    mic2[cut:] = rng.standard_normal(n - cut) * 5
    far2[cut:] = rng.standard_normal(n - cut) * 5
    eng = StreamingAec(model)
    b1 = eng.push(mic2[:cut], far2[:cut])
    b2 = eng.push(mic2[cut:], far2[cut:])
    assert np.array_equal(a, b1)
    joined = np.concatenate([b1, b2])
    assert np.array_equal(joined[:a.shape[0]], a)


def test_full_model_causality_against_offline_truncation():
    # offline forward over a prefix equals the prefix of the streamed
    # full-clip output within 1e-10 (frozen batch stats, L=0)
    model = make_model()
    cfg = model.config.stft
    rng = np.random.default_rng(7)
    n = 40 * cfg.hop
    mic, far = signals(rng, n)
    whole = enhance_streaming(model, mic, far, chunk=cfg.hop)
    cut = 20 * cfg.hop
    prefix = enhance_streaming(model, mic[:cut], far[:cut], chunk=cfg.hop)
    assert rel_l2(whole[:prefix.shape[0] - cfg.window_len],
                  prefix[:-cfg.window_len]) < 1e-10


def test_history_window_bounds_memory():
    model = make_model(history=8)
    rng = np.random.default_rng(8)
    cfg = model.config.stft
    n = 600 * cfg.hop
    mic, far = signals(rng, n)
    eng = StreamingAec(model)
    eng.push(mic, far)
    rows = len(eng._dirs[0].q_ln[0])
    assert rows < 600   # pruned well below the frame count
    eng.flush()
