"""Generalized cross-correlation delay estimation.

The classical alignment baseline: a whole-clip estimator and a streaming
block estimator with exponentially smoothed cross-spectra.  Positive delay
means the microphone lags the far-end reference.
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from .dsp import SAMPLE_RATE, AudioClip
from .errors import ConfigError, DataError

_PHAT_GUARD = 1e-12


@dataclass
class GccConfig:
    weighting: str = "phat"
    block_len: int = 4096          # streaming block, samples
    max_delay: int = 28800         # search range +-, samples (600 ms)
    smoothing: float = 0.9         # streaming cross-spectrum memory
    exclusion_radius: int = 48     # lag neighborhood ignored for the secondary peak

    def __post_init__(self):
        if self.weighting not in ("phat", "none"):
            raise ConfigError(f"unknown GCC weighting {self.weighting!r}")
        if self.block_len < 1:
            raise ConfigError("block_len must be positive")
        if self.max_delay < 1:
            raise ConfigError("max_delay must be positive")
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError("smoothing must lie in [0, 1)")
        if self.exclusion_radius < 0:
            raise ConfigError("exclusion_radius must be >= 0")

    @property
    def window_len(self):
        """Streaming analysis span: one block plus the search range on both
        sides, so a full search window always out-spans the searched lags."""
        return self.block_len + 2 * self.max_delay


@dataclass
class DelayEstimate:
    delay_samples: int
    confidence: float

    @property
    def delay_ms(self):
        return 1000.0 * self.delay_samples / SAMPLE_RATE


def _as_samples(x):
    if isinstance(x, AudioClip):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def _weighted(cross, weighting):
    if weighting == "phat":
        return cross / np.maximum(np.abs(cross), _PHAT_GUARD)
    return cross


def _peak_search(cc, max_delay, exclusion):
    """Argmax over lags in [-max_delay, max_delay] plus a confidence ratio.

    Confidence is peak value over the best value outside an exclusion zone
    around the peak; an empty remainder gives infinite confidence.
    """
    lags = np.concatenate([np.arange(max_delay + 1),
                           np.arange(-max_delay, 0)])
    vals = np.concatenate([cc[:max_delay + 1], cc[-max_delay:]])
    best = int(np.argmax(vals))
    delay = int(lags[best])
    others = np.abs(lags - delay) > exclusion
    if not others.any():
        return delay, float("inf")
    secondary = float(vals[others].max())
    confidence = float(vals[best]) / max(secondary, _PHAT_GUARD)
    return delay, confidence


def global_gcc_delay(mic, far, cfg=None):
    """Whole-clip delay estimate at integer-sample resolution."""
    cfg = cfg if cfg is not None else GccConfig()
    mic = _as_samples(mic)
    far = _as_samples(far)
    if mic.shape[0] < 2 * cfg.max_delay or far.shape[0] < 2 * cfg.max_delay:
        raise DataError(
            f"clips must span at least twice the search range "
            f"({2 * cfg.max_delay} samples)")
    if not mic.any():
        raise DataError("silent input: microphone signal is all zero")
    if not far.any():
        raise DataError("silent input: far-end signal is all zero")
    nfft = next_fast_len(mic.shape[0] + far.shape[0])
    cross = np.fft.rfft(mic, nfft) * np.conj(np.fft.rfft(far, nfft))
    cc = np.fft.irfft(_weighted(cross, cfg.weighting), nfft)
    delay, confidence = _peak_search(cc, cfg.max_delay, cfg.exclusion_radius)
    return DelayEstimate(delay, confidence)


class StreamingGcc:
    """Block-wise delay tracker with exponentially smoothed cross-spectra.

    Keeps the last ``window_len`` samples per side; every completed block
    refreshes the smoothed cross-spectrum and the estimate.  Pushing
    nothing (or less than a block) leaves the estimate untouched.
    """

    def __init__(self, cfg=None):
        self.cfg = cfg if cfg is not None else GccConfig()
        self._nfft = next_fast_len(2 * self.cfg.window_len)
        self._mic_hist = np.empty(0)
        self._far_hist = np.empty(0)
        self._pending_mic = np.empty(0)
        self._pending_far = np.empty(0)
        self._avg = np.zeros(self._nfft // 2 + 1, dtype=np.complex128)
        self.blocks_seen = 0
        self.estimate = DelayEstimate(0, 0.0)

    def push(self, mic_chunk, far_chunk):
        mic_chunk = _as_samples(mic_chunk)
        far_chunk = _as_samples(far_chunk)
        if mic_chunk.shape != far_chunk.shape:
            raise DataError(
                f"mic/far chunks differ in length: {mic_chunk.shape} vs "
                f"{far_chunk.shape}")
        if mic_chunk.size:
            self._pending_mic = np.concatenate([self._pending_mic, mic_chunk])
            self._pending_far = np.concatenate([self._pending_far, far_chunk])
        blk = self.cfg.block_len
        while self._pending_mic.shape[0] >= blk:
            self._consume_block(self._pending_mic[:blk], self._pending_far[:blk])
            self._pending_mic = self._pending_mic[blk:]
            self._pending_far = self._pending_far[blk:]
        return self.estimate

    def _consume_block(self, mic_block, far_block):
        win = self.cfg.window_len
        self._mic_hist = np.concatenate([self._mic_hist, mic_block])[-win:]
        self._far_hist = np.concatenate([self._far_hist, far_block])[-win:]
        cross = (np.fft.rfft(self._mic_hist, self._nfft)
                 * np.conj(np.fft.rfft(self._far_hist, self._nfft)))
        rho = self.cfg.smoothing
        self._avg = rho * self._avg + (1.0 - rho) * cross
        self.blocks_seen += 1
        if not np.abs(self._avg).any():
            return  # no evidence yet (silence); keep the previous estimate
        cc = np.fft.irfft(_weighted(self._avg, self.cfg.weighting), self._nfft)
        delay, confidence = _peak_search(
            cc, self.cfg.max_delay, self.cfg.exclusion_radius)
        self.estimate = DelayEstimate(delay, confidence)


def streaming_gcc_delay(state, mic_chunk, far_chunk):
    """Functional wrapper over ``StreamingGcc.push``."""
    return state.push(mic_chunk, far_chunk)


def align_by_shift(far, estimate):
    """Shift the far-end by the estimated delay, zero-filled, same length.

    Positive delay moves the signal later (the mic heard it late), negative
    earlier.
    """
    far = _as_samples(far)
    delay = estimate.delay_samples if isinstance(estimate, DelayEstimate) else int(estimate)
    n = far.shape[0]
    if abs(delay) > n:
        raise DataError(f"shift {delay} exceeds clip length {n}")
    out = np.zeros_like(far)
    if delay >= 0:
        out[delay:] = far[:n - delay]
    else:
        out[:n + delay] = far[-delay:]
    return out
