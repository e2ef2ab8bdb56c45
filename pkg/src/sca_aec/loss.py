"""Training objective: time-domain L1 plus spectrally weighted magnitude error.

Both terms run on the real/imag plane pair the rest of the package uses;
the spectral magnitude of a difference is ``hypot`` of the plane
differences, never a complex dtype.
"""

from dataclasses import dataclass

import numpy as np

from .dsp import AudioClip, StftConfig, stacked_stft_arrays, stft_t
from .errors import ConfigError, DataError
from .tensor import Tensor, add, as_tensor, hypot, mul, sub, tabs, tsum


@dataclass
class LossWeights:
    """Term weights; defaults keep every factor at 1.

    ``time_squared`` / ``spectral_squared`` switch the respective term from
    absolute value to squared error; the absolute form is the default.
    """

    alpha: float = 1.0
    beta: float = 1.0
    w: np.ndarray | None = None
    time_squared: bool = False
    spectral_squared: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights alpha/beta must be >= 0")
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=np.float64)
            if self.w.ndim != 1:
                raise ConfigError("spectral weights must be a 1-d vector")
            if np.any(self.w < 0):
                raise ConfigError("spectral weights must be >= 0 elementwise")

    def resolve_w(self, n_bins):
        if self.w is None:
            return np.ones(n_bins)
        if self.w.shape[0] != n_bins:
            raise ConfigError(
                f"spectral weights have {self.w.shape[0]} bins, transform has {n_bins}")
        return self.w


def low_emphasis_weights(n_bins):
    """Alternative spectral weighting w_k = 1/(1 + k/(F-1)).

    Halves the weight at the top bin relative to DC; useful when high-band
    residuals dominate the default flat weighting.
    """
    k = np.arange(n_bins, dtype=np.float64)
    return 1.0 / (1.0 + k / (n_bins - 1))


def _as_samples(x):
    if isinstance(x, AudioClip):
        return x.samples
    return x


def aec_loss(est, target, weights=None, stft_cfg=None):
    """Scalar objective over time samples plus spectral magnitudes.

    ``est`` may carry gradients; ``target`` never does.  Accepts [n] or
    [b, n]; sums over every axis.  Returns (scalar Tensor, term breakdown
    dict with plain-float "time"/"spectral"/"total").

    Equal inputs give an exact zero: the time term is a sum of exact
    zeros, and both spectra go through the same stacked-fft code path so
    their planes match bitwise.
    """
    weights = weights if weights is not None else LossWeights()
    cfg = stft_cfg if stft_cfg is not None else StftConfig()
    est = as_tensor(_as_samples(est))
    tgt = np.asarray(_as_samples(target), dtype=np.float64)
    if est.shape != tgt.shape:
        raise DataError(
            f"estimate/target length mismatch: {est.shape} vs {tgt.shape}")
    if weights.alpha == 0 and weights.beta == 0:
        raise ConfigError("alpha and beta are both zero; loss has no terms")

    total = None
    time_term = 0.0
    if weights.alpha != 0:
        diff = sub(est, Tensor(tgt))
        if weights.time_squared:
            summed = tsum(mul(diff, diff))
        else:
            summed = tsum(tabs(diff))
        total = mul(summed, weights.alpha)
        time_term = total.item()

    spectral_term = 0.0
    if weights.beta != 0:
        est_r, est_i = stft_t(est, cfg)
        tgt_r, tgt_i = stacked_stft_arrays(tgt, cfg)
        dr = sub(est_r, Tensor(tgt_r))
        di = sub(est_i, Tensor(tgt_i))
        if weights.spectral_squared:
            mag = add(mul(dr, dr), mul(di, di))
        else:
            mag = hypot(dr, di)
        summed = tsum(mul(mag, Tensor(weights.resolve_w(cfg.n_bins))))
        term = mul(summed, weights.beta)
        spectral_term = term.item()
        total = term if total is None else add(total, term)

    return total, {
        "time": time_term,
        "spectral": spectral_term,
        "total": time_term + spectral_term,
    }
