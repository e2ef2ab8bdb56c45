"""Delay estimation tests against a brute-force time-domain oracle.

Broadband (speech-shaped) noise is the probe signal: PHAT weighting is
phase-only, so strongly harmonic material with near-empty inter-harmonic
bins is genuinely ambiguous for it, while any wideband signal pins the
peak at the true lag.
"""

import numpy as np
import pytest

from sca_aec.errors import ConfigError, DataError
from sca_aec.gcc import (DelayEstimate, GccConfig, StreamingGcc,
                         align_by_shift, global_gcc_delay,
                         streaming_gcc_delay)
from sca_aec.synth import noise_like, speech_like


def brute_force_delay(mic, far, max_delay):
    """Argmax of the direct time-domain cross-correlation over integer lags.

    Independent of any FFT or weighting choice: for each candidate lag tau,
    correlate mic against far shifted by tau with zero fill outside.
    """
    n = len(mic)
    best_tau, best_val = 0, -np.inf
    for tau in range(-max_delay, max_delay + 1):
        if tau >= 0:
            val = float(np.dot(mic[tau:], far[:n - tau]))
        else:
            val = float(np.dot(mic[:n + tau], far[-tau:]))
        if val > best_val:
            best_tau, best_val = tau, val
    return best_tau


def shifted(x, delay):
    out = np.zeros_like(x)
    n = len(x)
    if delay >= 0:
        out[delay:] = x[:n - delay]
    else:
        out[:n + delay] = x[-delay:]
    return out


def small_cfg(max_delay=1200, block_len=1024, weighting="phat"):
    return GccConfig(weighting=weighting, block_len=block_len,
                     max_delay=max_delay)


def test_identical_signals_give_zero_delay_max_confidence():
    rng = np.random.default_rng(0)
    x = speech_like(rng, 0.5)
    est = global_gcc_delay(x, x, small_cfg())
    assert est.delay_samples == 0
    # whitened autospectrum is an exact delta: secondary peak at noise floor
    assert est.confidence > 1e6


def test_shift_4800_with_noise_recovered_exactly():
    cfg = GccConfig()
    rng = np.random.default_rng(1)
    far = noise_like(rng, 2.0)
    mic = shifted(far, 4800)
    # additive noise at SNR 20 dB against the shifted signal
    noise = rng.standard_normal(mic.shape[0])
    noise *= np.sqrt(np.sum(mic ** 2) / np.sum(noise ** 2) * 10 ** (-20 / 10))
    mic = mic + noise
    oracle = brute_force_delay(mic[:20000], far[:20000], 5000)
    assert oracle == 4800
    est = global_gcc_delay(mic, far, cfg)
    assert est.delay_samples == 4800
    assert abs(est.delay_ms - 100.0) < 1e-9
    assert est.confidence > 1.0


def test_negative_shift_recovered():
    cfg = small_cfg()
    rng = np.random.default_rng(2)
    far = noise_like(rng, 0.8)
    mic = shifted(far, -960)
    oracle = brute_force_delay(mic, far, cfg.max_delay)
    assert oracle == -960
    est = global_gcc_delay(mic, far, cfg)
    assert est.delay_samples == -960


@pytest.mark.parametrize("delay", [0, 480, -480, 4800, 9600, 19200, 28800])
def test_pure_shift_matches_injected_delay(delay):
    rng = np.random.default_rng(100 + abs(delay))
    far = noise_like(rng, 1.5)
    mic = shifted(far, delay)
    cfg = GccConfig()
    est = global_gcc_delay(mic, far, cfg)
    assert est.delay_samples == delay
    assert abs(est.delay_samples) <= cfg.max_delay


@pytest.mark.parametrize("weighting", ["phat", "none"])
def test_both_weightings_agree_on_clean_shift(weighting):
    rng = np.random.default_rng(5)
    far = noise_like(rng, 0.5)
    mic = shifted(far, 333)
    est = global_gcc_delay(mic, far, small_cfg(weighting=weighting))
    assert est.delay_samples == 333


def test_silent_input_rejected():
    rng = np.random.default_rng(6)
    x = speech_like(rng, 0.5)
    z = np.zeros_like(x)
    with pytest.raises(DataError):
        global_gcc_delay(z, x, small_cfg())
    with pytest.raises(DataError):
        global_gcc_delay(x, z, small_cfg())


def test_short_clip_rejected():
    cfg = small_cfg(max_delay=1200)
    with pytest.raises(DataError):
        global_gcc_delay(np.ones(100), np.ones(100), cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        GccConfig(weighting="hann")
    with pytest.raises(ConfigError):
        GccConfig(smoothing=1.0)
    with pytest.raises(ConfigError):
        GccConfig(block_len=0)
    with pytest.raises(ConfigError):
        GccConfig(max_delay=0)
    with pytest.raises(ConfigError):
        GccConfig(exclusion_radius=-1)


def test_streaming_constant_delay_converges_within_10_blocks():
    cfg = GccConfig()
    rng = np.random.default_rng(7)
    far = noise_like(rng, 6.0)
    mic = shifted(far, 4800)  # 100 ms
    state = StreamingGcc(cfg)
    blk = cfg.block_len
    converged_at = None
    for b in range(len(far) // blk):
        est = streaming_gcc_delay(state, mic[b * blk:(b + 1) * blk],
                                  far[b * blk:(b + 1) * blk])
        if est.delay_samples == 4800 and converged_at is None:
            converged_at = b + 1
    assert converged_at is not None and converged_at <= 10
    assert state.estimate.delay_samples == 4800


def test_streaming_tracks_step_change_within_30_blocks():
    cfg = GccConfig()
    rng = np.random.default_rng(8)
    far = noise_like(rng, 16.0)
    n = len(far)
    mic = np.concatenate([shifted(far, 2400)[:n // 2],
                          shifted(far, 9600)[n // 2:]])
    state = StreamingGcc(cfg)
    blk = cfg.block_len
    half_block = (n // 2) // blk
    caught_in = None
    for b in range(n // blk):
        est = state.push(mic[b * blk:(b + 1) * blk], far[b * blk:(b + 1) * blk])
        if b + 1 > half_block and est.delay_samples == 9600 and caught_in is None:
            caught_in = (b + 1) - half_block
    assert caught_in is not None and caught_in <= 30


def test_streaming_zero_chunks_leave_estimate_unchanged():
    cfg = small_cfg()
    rng = np.random.default_rng(9)
    far = noise_like(rng, 1.0)
    mic = shifted(far, 600)
    state = StreamingGcc(cfg)
    state.push(mic, far)
    before = state.estimate
    after = state.push(np.empty(0), np.empty(0))
    assert after is before
    assert state.estimate.delay_samples == 600
    # silence-only blocks also keep the previous estimate
    n = cfg.block_len * 2
    state.push(np.zeros(n), np.zeros(n))
    assert state.estimate.delay_samples == 600


def test_streaming_partial_block_buffers_without_update():
    cfg = small_cfg(block_len=1024)
    state = StreamingGcc(cfg)
    rng = np.random.default_rng(10)
    x = noise_like(rng, 0.02)  # 960 samples < one block
    est = state.push(shifted(x, 3), x)
    assert state.blocks_seen == 0
    assert est.delay_samples == 0 and est.confidence == 0.0


def test_streaming_mismatched_chunks_rejected():
    state = StreamingGcc(small_cfg())
    with pytest.raises(DataError):
        state.push(np.zeros(8), np.zeros(9))


def test_align_by_shift_identity_and_inverse():
    rng = np.random.default_rng(11)
    x = rng.standard_normal(2000)
    assert np.array_equal(align_by_shift(x, DelayEstimate(0, 1.0)), x)
    fwd = align_by_shift(x, 37)
    back = align_by_shift(fwd, -37)
    assert len(fwd) == len(x)
    # inverse on the overlap region; the zero-filled tail is lost
    assert np.array_equal(back[:2000 - 37], x[:2000 - 37])


def test_align_by_shift_rejects_overlong_shift():
    with pytest.raises(DataError):
        align_by_shift(np.zeros(10), 11)


def test_pipeline_gcc_plus_shift_zeroes_residual_delay():
    cfg = small_cfg(max_delay=2000)
    rng = np.random.default_rng(12)
    far = noise_like(rng, 1.0)
    mic = shifted(far, 777)
    est = global_gcc_delay(mic, far, cfg)
    aligned = align_by_shift(far, est)
    residual = global_gcc_delay(mic, aligned, cfg)
    assert residual.delay_samples == 0


def test_window_len_spans_block_plus_search_range():
    cfg = GccConfig(block_len=4096, max_delay=28800)
    assert cfg.window_len == 4096 + 2 * 28800
