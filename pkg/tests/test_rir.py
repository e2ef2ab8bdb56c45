"""Image-method RIR tests: free-field law, Schroeder decay, time variance."""

import math

import numpy as np
import pytest

from sca_aec.augment.rir import (SPEED_OF_SOUND, RoomSpec, convolve_steady,
                                 convolve_time_variant, image_method_rir,
                                 measure_rt60, rt60_to_beta, time_variant_rir)
from sca_aec.errors import ConfigError, DataError

FS = 48000


def free_field_room(n_samples_delay):
    """Anechoic setup with the source an exact integer-sample flight away."""
    d = SPEED_OF_SOUND * n_samples_delay / FS
    return RoomSpec(dimensions=(50.0, 50.0, 50.0),
                    source_pos=(25.0 + d, 25.0, 25.0),
                    mic_pos=(25.0, 25.0, 25.0),
                    beta=0.0, max_order=(0, 0, 0), rt60_s=0.05)


@pytest.fixture(scope="module")
def small_room():
    return RoomSpec.from_rt60((4.0, 3.2, 2.6), (1.0, 1.2, 1.3),
                              (2.8, 2.0, 1.5), 0.15)


def test_free_field_single_pulse_at_distance_over_c():
    k = 100
    room = free_field_room(k)
    h = image_method_rir(room)
    d = SPEED_OF_SOUND * k / FS
    peak = int(np.argmax(np.abs(h)))
    assert peak == k
    expected = 1.0 / (4.0 * math.pi * d)
    # the 100 Hz highpass shaves a sliver off the pulse peak
    assert abs(h[peak] - expected) / expected < 0.02
    residue = h.copy()
    residue[peak - 45:peak + 45] = 0.0
    assert np.sum(residue ** 2) < 0.01 * np.sum(h ** 2)


def test_doubling_distance_halves_direct_amplitude():
    h1 = image_method_rir(free_field_room(100))
    h2 = image_method_rir(free_field_room(200))
    a1 = h1[np.argmax(np.abs(h1))]
    a2 = h2[np.argmax(np.abs(h2))]
    assert abs(a2 / a1 - 0.5) < 1e-9


def test_measure_rt60_on_exact_exponential_decay():
    for target in (0.2, 0.4):
        n = int(2 * target * FS)
        t = np.arange(n) / FS
        h = 10.0 ** (-3.0 * t / target)  # -60 dB power at t = target
        got = measure_rt60(h, FS)
        assert abs(got - target) / target < 1e-6


def test_measure_rt60_rejects_silent_and_short():
    with pytest.raises(DataError):
        measure_rt60(np.zeros(1000), FS)
    with pytest.raises(DataError):
        measure_rt60(np.ones(100), FS)  # no decay span


@pytest.mark.parametrize("target", [0.15, 0.3, 0.5])
def test_generated_rir_hits_rt60_within_20_percent(target):
    room = RoomSpec.from_rt60((4.0, 3.2, 2.6), (1.0, 1.2, 1.3),
                              (2.8, 2.0, 1.5), target)
    got = measure_rt60(image_method_rir(room), room.sample_rate)
    assert abs(got - target) / target < 0.20


def test_rt60_to_beta_monotone_and_bounded():
    dims = (4.0, 3.2, 2.6)
    betas = [rt60_to_beta(dims, t) for t in (0.1, 0.3, 0.6, 1.0)]
    assert all(0.0 < b < 1.0 for b in betas)
    assert betas == sorted(betas)


def test_room_validation():
    dims = (4.0, 3.0, 2.5)
    with pytest.raises(ConfigError):
        RoomSpec(dims, (5.0, 1.0, 1.0), (2.0, 1.0, 1.0), 0.5, (1, 1, 1), 0.3)
    with pytest.raises(ConfigError):
        RoomSpec(dims, (1.0, 1.0, 1.0), (2.0, 1.0, 1.0), 1.0, (1, 1, 1), 0.3)
    with pytest.raises(ConfigError):
        RoomSpec(dims, (1.0, 1.0, 1.0), (2.0, 1.0, 1.0), 0.5, (1, 1, 1), 3.0)
    with pytest.raises(ConfigError):
        RoomSpec((4.0, 3.0), (1.0, 1.0, 1.0), (2.0, 1.0, 1.0), 0.5, (1, 1, 1), 0.3)


def test_source_too_close_to_mic_rejected():
    room = RoomSpec((4.0, 3.0, 2.5), (1.0, 1.0, 1.0), (1.0, 1.0, 1.02),
                    0.5, (1, 1, 1), 0.3)
    with pytest.raises(DataError):
        image_method_rir(room)


def test_zero_motion_equals_steady_convolution(small_room):
    rirs = time_variant_rir(small_room, small_room.source_pos.copy(), 0.5)
    assert len(rirs) == 1
    rng = np.random.default_rng(0)
    x = rng.standard_normal(24000)
    a = convolve_time_variant(x, rirs)
    b = convolve_steady(x, image_method_rir(small_room))
    assert np.max(np.abs(a - b)) < 1e-12


def test_two_block_crossfade_matches_hand_composed_oracle():
    rng = np.random.default_rng(1)
    n = 4800 + 2000
    x = rng.standard_normal(n)
    h1 = np.array([1.0, 0.3, -0.1])
    h2 = np.array([0.5, 0.0, 0.2, 0.1])
    got = convolve_time_variant(x, [h1, h2])
    fade = 480
    y1 = np.convolve(x, h1)[:n]
    y2 = np.convolve(x, h2)[:n]
    theta = 0.5 * np.pi * (np.arange(fade) + 0.5) / fade
    w1 = np.zeros(n)
    w1[:4800] = 1.0
    w1[4800:4800 + fade] = np.cos(theta)
    w2 = np.zeros(n)
    w2[4800:] = 1.0
    w2[4800:4800 + fade] = np.sin(theta)
    assert np.max(np.abs(w1 ** 2 + w2 ** 2 - 1.0)) < 1e-12  # equal power
    oracle = w1 * y1 + w2 * y2
    assert np.max(np.abs(got - oracle)) < 1e-10


def test_boundary_energy_continuity_on_smooth_input(small_room):
    rirs = time_variant_rir(small_room, np.array([1.5, 1.4, 1.3]), 0.5)
    assert len(rirs) == 5
    t = np.arange(24000) / FS
    smooth = np.sin(2.0 * np.pi * 200.0 * t)
    y = convolve_time_variant(smooth, rirs)
    block = 4800
    win = 240  # two full probe periods so the RMS is phase independent
    for b in range(1, len(rirs)):
        edge = b * block
        if edge + win > len(y):
            continue
        left = np.sqrt(np.mean(y[edge - win:edge] ** 2))
        right = np.sqrt(np.mean(y[edge:edge + win] ** 2))
        assert abs(20.0 * np.log10(right / left)) < 6.0


def test_motion_validation(small_room):
    with pytest.raises(DataError):
        time_variant_rir(small_room, np.array([9.0, 1.0, 1.0]), 0.5)
    with pytest.raises(DataError):
        time_variant_rir(small_room, np.array([1.5, 1.4, 1.3]), 0.0)
    # a path through the mic position is rejected too
    with pytest.raises(DataError):
        time_variant_rir(small_room, small_room.mic_pos + 1e-4, 0.5)


def test_convolve_steady_is_trimmed_full_convolution():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(500)
    h = rng.standard_normal(64)
    assert np.allclose(convolve_steady(x, h), np.convolve(x, h)[:500],
                       rtol=0, atol=1e-12)
