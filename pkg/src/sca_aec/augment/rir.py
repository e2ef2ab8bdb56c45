"""Image-method room impulse responses, steady and time-variant.

Pulses are fractional-delay windowed sincs (81 taps, Hann window, cutoff
at 90% of Nyquist) accumulated by the shared kernel; amplitudes follow the
mirror-source law beta^(reflection count) / (4 pi distance).  A 100 Hz
highpass strips the DC pile-up the all-positive image amplitudes create
(dense late arrivals sum coherently at low frequency and would otherwise
stretch the measured decay well past the target).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, fftconvolve, sosfilt

from ..dsp import SAMPLE_RATE
from ..errors import ConfigError, DataError
from ..kernels import rir_accumulate

SPEED_OF_SOUND = 343.0
_MIN_SOURCE_MIC_DIST = 0.05
_MIN_IMAGE_DIST = 0.01
_TAIL_S = 0.1                  # RIR length beyond the RT60 target
_BLOCK_S = 0.1                 # time-variant block length
_XFADE_S = 0.01                # equal-power crossfade length
_AMP_FLOOR_REL = 1e-7          # prune images below this fraction of the direct path
_HIGHPASS_HZ = 100.0

_hp_cache = {}


def _highpass(h, sample_rate):
    """Causal 2nd-order highpass; keeps the direct-path arrival in place
    (group delay at speech frequencies is far below one sample)."""
    key = int(sample_rate)
    if key not in _hp_cache:
        _hp_cache[key] = butter(2, _HIGHPASS_HZ, btype="highpass",
                                fs=sample_rate, output="sos")
    return sosfilt(_hp_cache[key], h)


def rt60_to_beta(dimensions, rt60_s):
    """Eyring estimate of a uniform wall reflection coefficient.

    Diffuse-field theory; a specular rectangular room decays slower than
    this predicts (late energy rides low-bounce near-axial paths), so the
    room constructor refines the value against the image cloud itself.
    """
    lx, ly, lz = dimensions
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = 1.0 - math.exp(-0.161 * volume / (surface * rt60_s))
    return math.sqrt(1.0 - alpha)


@dataclass
class RoomSpec:
    dimensions: np.ndarray        # meters, 3-vector
    source_pos: np.ndarray
    mic_pos: np.ndarray
    beta: float                   # shared by all six walls
    max_order: tuple              # images per axis
    rt60_s: float                 # target decay, also sets the RIR length
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.dimensions = np.asarray(self.dimensions, dtype=np.float64)
        self.source_pos = np.asarray(self.source_pos, dtype=np.float64)
        self.mic_pos = np.asarray(self.mic_pos, dtype=np.float64)
        for name, v in (("dimensions", self.dimensions),
                        ("source_pos", self.source_pos),
                        ("mic_pos", self.mic_pos)):
            if v.shape != (3,):
                raise ConfigError(f"{name} must be a 3-vector")
        if np.any(self.dimensions <= 0):
            raise ConfigError("room dimensions must be positive")
        for name, p in (("source", self.source_pos), ("mic", self.mic_pos)):
            if np.any(p <= 0) or np.any(p >= self.dimensions):
                raise ConfigError(f"{name} position must lie strictly inside the room")
        if not 0.05 <= self.rt60_s <= 1.5:
            raise ConfigError(f"rt60 {self.rt60_s} outside the supported [0.05, 1.5] s")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta must lie in [0, 1)")
        self.max_order = tuple(int(o) for o in self.max_order)
        if len(self.max_order) != 3 or any(o < 0 for o in self.max_order):
            raise ConfigError("max_order must be three counts >= 0")

    @staticmethod
    def from_rt60(dimensions, source_pos, mic_pos, rt60_s):
        """Room whose measured Schroeder decay hits the target RT60.

        Image orders cover the full decay length per axis; beta starts at
        the Eyring estimate and is then bisected so the image cloud's own
        backward-integrated decay matches the target.
        """
        dimensions = np.asarray(dimensions, dtype=np.float64)
        reach = SPEED_OF_SOUND * (rt60_s + _TAIL_S)
        order = tuple(int(math.ceil(reach / (2.0 * dim))) + 1 for dim in dimensions)
        room = RoomSpec(dimensions, source_pos, mic_pos,
                        rt60_to_beta(dimensions, rt60_s), order, rt60_s)
        room.beta = _calibrate_beta(room)
        return room


def _image_components(room, source_pos):
    """Per-axis mirror coordinates relative to the mic, with bounce counts."""
    deltas = []
    expos = []
    for a in range(3):
        o = room.max_order[a]
        n = np.arange(-o, o + 1)
        p = np.array([0, 1])
        coord = (1 - 2 * p)[None, :] * source_pos[a] + 2 * n[:, None] * room.dimensions[a]
        expo = np.abs(n[:, None] - p[None, :]) + np.abs(n[:, None])
        deltas.append((coord - room.mic_pos[a]).ravel())
        expos.append(expo.ravel().astype(np.float64))
    return deltas, expos


def _image_cloud(room, source_pos):
    """Flattened (distance, total bounce count) over the full image lattice."""
    (dx, dy, dz), expos = _image_components(room, source_pos)
    dist = np.sqrt(dx[:, None, None] ** 2 + dy[None, :, None] ** 2
                   + dz[None, None, :] ** 2).ravel()
    expo = (expos[0][:, None, None] + expos[1][None, :, None]
            + expos[2][None, None, :]).ravel()
    return np.maximum(dist, _MIN_IMAGE_DIST), expo


_CAL_BIN_S = 1e-3              # calibration EDC resolution


def _cloud_rt60(bin_idx, expo, weight, n_bins, beta):
    """Schroeder RT60 of the image cloud binned onto a uniform time grid.

    Mirrors ``measure_rt60`` on the synthesized RIR: same truncation
    horizon, uniform sampling of the decay curve, same -5..-25 dB fit.
    Decays too slow to span the fit range inside the horizon come back as
    inf, instant collapses as 0.
    """
    amp2 = np.power(beta, 2.0 * expo) * weight
    e = np.bincount(bin_idx, weights=amp2, minlength=n_bins)
    edc = np.cumsum(e[::-1])[::-1]
    db = 10.0 * np.log10(np.maximum(edc / edc[0], 1e-300))
    start = int(np.argmax(db <= -5.0))
    stop = int(np.argmax(db <= -25.0))
    if db[stop] > -25.0:
        return math.inf
    if stop <= start:
        return 0.0
    times = np.arange(start, stop + 1) * _CAL_BIN_S
    slope, _ = np.polyfit(times, db[start:stop + 1], 1)
    if slope >= 0:
        return math.inf
    return -60.0 / slope


def _calibrate_beta(room):
    """Bisect beta so the cloud's measured decay hits room.rt60_s.

    Monotone: more reflective walls always decay slower.  The Eyring
    estimate overshoots in a specular room, so it normally brackets the
    answer from above already; the bracket widens if it does not.
    """
    dist, expo = _image_cloud(room, room.source_pos)
    horizon = room.rt60_s + _TAIL_S
    inside = dist < SPEED_OF_SOUND * horizon
    dist, expo = dist[inside], expo[inside]
    weight = 1.0 / (4.0 * math.pi * dist) ** 2
    n_bins = int(math.ceil(horizon / _CAL_BIN_S))
    bin_idx = np.minimum((dist / (SPEED_OF_SOUND * _CAL_BIN_S)).astype(np.int64),
                         n_bins - 1)
    target = room.rt60_s
    lo, hi = 1e-3, max(room.beta, 0.5)
    while _cloud_rt60(bin_idx, expo, weight, n_bins, hi) < target and hi < 0.9999:
        hi = 0.5 * (hi + 1.0)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _cloud_rt60(bin_idx, expo, weight, n_bins, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def _rir_for_position(room, source_pos, n_samples):
    dist, expo = _image_cloud(room, source_pos)
    amp = np.power(room.beta, expo) / (4.0 * math.pi * dist)
    direct = np.linalg.norm(source_pos - room.mic_pos)
    keep = np.abs(amp) >= _AMP_FLOOR_REL / (4.0 * math.pi * direct)
    centers = dist[keep] * room.sample_rate / SPEED_OF_SOUND
    amp = amp[keep]
    inside = centers < n_samples + 41
    centers, amp = centers[inside], amp[inside]
    h = np.zeros(n_samples)
    # chunked so the vectorized backend never materializes a huge tap matrix
    step = 65536
    for lo in range(0, centers.shape[0], step):
        rir_accumulate(h, centers[lo:lo + step], amp[lo:lo + step],
                       float(room.sample_rate), 0.9 * room.sample_rate / 2.0)
    return _highpass(h, room.sample_rate)


def _rir_length(room):
    direct = np.linalg.norm(room.source_pos - room.mic_pos)
    base = int(round((room.rt60_s + _TAIL_S) * room.sample_rate))
    floor = int(math.ceil(direct / SPEED_OF_SOUND * room.sample_rate)) + 82
    return max(base, floor)


def image_method_rir(room):
    """Impulse response of the (static) room, rt60 + 100 ms long."""
    if np.linalg.norm(room.source_pos - room.mic_pos) < _MIN_SOURCE_MIC_DIST:
        raise DataError(
            f"source sits closer than {_MIN_SOURCE_MIC_DIST} m to the mic")
    return _rir_for_position(room, room.source_pos, _rir_length(room))


def measure_rt60(h, sample_rate=SAMPLE_RATE):
    """RT60 from the Schroeder backward-integrated decay curve.

    Fits the -5..-25 dB span of the curve and extrapolates the slope to
    60 dB; needs the curve to actually reach -25 dB.
    """
    h = np.asarray(h, dtype=np.float64)
    energy = np.cumsum((h * h)[::-1])[::-1]
    if energy[0] <= 0:
        raise DataError("impulse response is silent")
    db = 10.0 * np.log10(np.maximum(energy / energy[0], 1e-300))
    start = np.argmax(db <= -5.0)
    stop = np.argmax(db <= -25.0)
    if db[start] > -5.0 or db[stop] > -25.0 or stop <= start:
        raise DataError("decay curve never spans -5..-25 dB; RIR too short")
    times = np.arange(start, stop + 1) / sample_rate
    slope, _ = np.polyfit(times, db[start:stop + 1], 1)
    if slope >= 0:
        raise DataError("non-decaying energy curve")
    return -60.0 / slope


def time_variant_rir(room, end_pos, duration_s):
    """Per-block RIRs for a source moving linearly to ``end_pos``.

    Blocks are 100 ms; the source position is interpolated across them.
    Zero motion collapses to the single static RIR so the render path can
    short-circuit to one plain convolution.
    """
    end_pos = np.asarray(end_pos, dtype=np.float64)
    if np.any(end_pos <= 0) or np.any(end_pos >= room.dimensions):
        raise DataError("motion path exits the room")
    if duration_s <= 0:
        raise DataError("duration must be positive")
    if np.array_equal(end_pos, room.source_pos):
        return [image_method_rir(room)]
    n_blocks = max(1, int(math.ceil(duration_s / _BLOCK_S)))
    n_rir = _rir_length(room)
    rirs = []
    for i in range(n_blocks):
        frac = i / (n_blocks - 1) if n_blocks > 1 else 0.0
        pos = room.source_pos + frac * (end_pos - room.source_pos)
        if np.linalg.norm(pos - room.mic_pos) < _MIN_SOURCE_MIC_DIST:
            raise DataError("motion path passes too close to the mic")
        rirs.append(_rir_for_position(room, pos, n_rir))
    return rirs


def convolve_steady(x, h):
    """Causal convolution trimmed to the input length."""
    x = np.asarray(x, dtype=np.float64)
    return fftconvolve(x, h)[:x.shape[0]]


def convolve_time_variant(x, rirs, sample_rate=SAMPLE_RATE):
    """Render through per-block RIRs with 10 ms equal-power crossfades.

    Each block's RIR filters the whole signal; block outputs are blended
    with cos/sin ramps starting at the block boundaries, so the summed
    squared weights stay 1 everywhere.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(rirs) == 1:
        return convolve_steady(x, rirs[0])
    n = x.shape[0]
    block = int(round(_BLOCK_S * sample_rate))
    fade = int(round(_XFADE_S * sample_rate))
    out = np.zeros(n)
    theta = 0.5 * np.pi * (np.arange(fade) + 0.5) / fade
    rise, fall = np.sin(theta), np.cos(theta)
    for i, h in enumerate(rirs):
        w = np.zeros(n)
        start = i * block
        end = n if i == len(rirs) - 1 else min((i + 1) * block, n)
        if start >= n:
            break
        w[start:end] = 1.0
        if i > 0:
            seg = min(fade, n - start)
            w[start:start + seg] = rise[:seg]
        if i + 1 < len(rirs) and end < n:
            seg = min(fade, n - end)
            w[end:end + seg] = fall[:seg]
        out += w * convolve_steady(x, h)
    return out
