"""Sample-domain / spectral-domain conversion and the complex projection.

Analysis is a periodic-Hann STFT; synthesis is weighted overlap-add with
per-sample least-squares normalization (divide by the local sum of squared
window values), which reconstructs every sample the analysis window did not
zero out.  Offline and streaming paths share the per-frame transform, so
streaming emission is bit-identical to offline analysis under any chunking.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .ops import affine
from .tensor import Tensor, as_tensor, concat, record_op, reshape

SAMPLE_RATE = 48000

_den_guard = 1e-12


@dataclass
class AudioClip:
    """Mono audio at full scale +-1.0."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"audio must be mono 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("audio contains non-finite samples")
        if self.sample_rate != SAMPLE_RATE:
            raise DataError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")

    def __len__(self):
        return self.samples.shape[0]


def periodic_hann(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass
class StftConfig:
    window_len: int = 960
    hop: int = 480
    fft_len: int = 960
    window: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.hop <= 0 or self.hop > self.window_len:
            raise ConfigError(f"hop {self.hop} must be in (0, window_len]")
        if self.fft_len < self.window_len:
            raise ConfigError("fft_len shorter than the analysis window")
        if self.window is None:
            self.window = periodic_hann(self.window_len)
        self.window = np.asarray(self.window, dtype=np.float64)
        if self.window.shape != (self.window_len,):
            raise ConfigError("window length disagrees with window_len")
        ola = self.ola_profile()
        if np.ptp(ola) > 1e-10 * np.max(ola):
            raise ConfigError("window does not overlap-add to a constant at this hop")

    @property
    def n_bins(self):
        return self.fft_len // 2 + 1

    def ola_profile(self):
        """Interior overlap-add profile of the window itself (one hop period)."""
        per = self.window_len // self.hop
        acc = np.zeros(self.hop)
        for m in range(per):
            acc += self.window[m * self.hop:m * self.hop + self.hop]
        return acc

    def n_frames(self, n_samples):
        if n_samples < self.window_len:
            raise DataError(
                f"clip of {n_samples} samples is shorter than one analysis window")
        return 1 + (n_samples - self.window_len) // self.hop

    def n_samples(self, n_frames):
        return (n_frames - 1) * self.hop + self.window_len

    def cola_interior(self, n_frames):
        """Sample range fully covered by overlapping windows.

        The periodic Hann is zero at its first sample, so the first hop of
        samples (covered by one window only) and the trailing partial
        overlap are excluded from exact-reconstruction claims.
        """
        return slice(self.hop, n_frames * self.hop)

    def key(self):
        return (self.window_len, self.hop, self.fft_len)


@dataclass
class Spectrogram:
    """Real/imag plane pair, each [t, F]."""

    real_plane: Tensor
    imag_plane: Tensor
    config: StftConfig

    def __post_init__(self):
        self.real_plane = as_tensor(self.real_plane)
        self.imag_plane = as_tensor(self.imag_plane)
        if self.real_plane.shape != self.imag_plane.shape:
            raise DataError("real/imag planes differ in shape")
        if self.real_plane.shape[-1] != self.config.n_bins:
            raise DataError(
                f"plane has {self.real_plane.shape[-1]} bins, config wants "
                f"{self.config.n_bins}")

    @property
    def n_frames(self):
        return self.real_plane.shape[-2]


def _frame_spectrum(seg, cfg):
    """rfft of one windowed frame; the only frame transform in the package."""
    return np.fft.rfft(seg * cfg.window, n=cfg.fft_len)


def _stft_arrays(x, cfg):
    t = cfg.n_frames(x.shape[0])
    r = np.empty((t, cfg.n_bins))
    i = np.empty((t, cfg.n_bins))
    for tau in range(t):
        spec = _frame_spectrum(x[tau * cfg.hop:tau * cfg.hop + cfg.window_len], cfg)
        r[tau] = spec.real
        i[tau] = spec.imag
    return r, i


def stft(clip, cfg):
    """Offline analysis; frame tau reads samples [tau*hop, tau*hop + window)."""
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    r, i = _stft_arrays(x, cfg)
    return Spectrogram(Tensor(r), Tensor(i), cfg)


def _wola_denominator(cfg, n):
    """Overlap-added squared window on the infinite frame grid, length n.

    The sum is hop-periodic and, for the periodic Hann at half-window hop,
    stays within [0.5, 1].  Normalizing by the grid extension instead of
    the per-clip sum keeps the division bounded at the clip edges, where
    per-clip coverage drops to one frame and the squared window tail would
    otherwise amplify inconsistent (e.g. masked) spectra by orders of
    magnitude.  Interior samples are covered by every grid frame anyway,
    so exact reconstruction there is unaffected.
    """
    per = cfg.window_len // cfg.hop
    w2 = cfg.window * cfg.window
    acc = np.zeros(cfg.hop)
    for m in range(per):
        acc += w2[m * cfg.hop:(m + 1) * cfg.hop]
    reps = -(-n // cfg.hop)
    return np.tile(acc, reps)[:n]


def _frames_from_planes(r, i, cfg):
    """Per-frame time signals from spectral planes, imag of DC/Nyquist dropped.

    The real-signal spectrum has no imaginary part at DC (or Nyquist for
    even fft length); zeroing those entries pins the synthesis semantics
    instead of leaving them to the FFT backend.
    """
    y = r + 1j * i
    y[..., 0] = r[..., 0]
    if cfg.fft_len % 2 == 0:
        y[..., -1] = r[..., -1]
    return np.fft.irfft(y, n=cfg.fft_len, axis=-1)[..., :cfg.window_len]


def _istft_arrays(r, i, cfg):
    t = r.shape[-2]
    n = cfg.n_samples(t)
    frames = _frames_from_planes(r, i, cfg)
    num = np.zeros(r.shape[:-2] + (n,))
    for tau in range(t):
        sl = slice(tau * cfg.hop, tau * cfg.hop + cfg.window_len)
        num[..., sl] += frames[..., tau, :] * cfg.window
    den = _wola_denominator(cfg, n)
    good = den > _den_guard
    out = np.zeros_like(num)
    out[..., good] = num[..., good] / den[good]
    return out


def istft(spec, cfg=None):
    """Weighted overlap-add synthesis back to samples.

    Exact inverse of ``stft`` on the fully overlapped interior
    (``cfg.cola_interior``); the leading and trailing hop fade in and out
    under the grid-extension normalization.
    """
    if cfg is not None and cfg.key() != spec.config.key():
        raise DataError("spectrogram was produced under a different stft config")
    x = _istft_arrays(spec.real_plane.data, spec.imag_plane.data, spec.config)
    return AudioClip(x)


class StreamingStft:
    """Push samples in arbitrary chunks, get finished frames back.

    Emitted frames concatenate to exactly the offline analysis of the
    concatenated sample stream (same per-frame transform on the same bits).
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self._pending = np.empty(0)
        self.frames_emitted = 0

    def push(self, samples):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.size:
            self._pending = np.concatenate([self._pending, samples])
        cfg = self.cfg
        out_r, out_i = [], []
        while self._pending.shape[0] >= cfg.window_len:
            spec = _frame_spectrum(self._pending[:cfg.window_len], cfg)
            out_r.append(spec.real)
            out_i.append(spec.imag)
            self._pending = self._pending[cfg.hop:]
            self.frames_emitted += 1
        if not out_r:
            return np.empty((0, cfg.n_bins)), np.empty((0, cfg.n_bins))
        return np.stack(out_r), np.stack(out_i)


class StreamingIstft:
    """Overlap-add synthesis that emits samples once they are final.

    A sample is final when every frame overlapping it has been pushed, so
    each pushed frame finalizes one hop of output (the first frame also
    covers the leading ramp); ``flush`` drains the tail.  Matches offline
    ``istft`` bit-exactly: same frame signals, same accumulation order,
    same normalization.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self._num = np.zeros(cfg.window_len)
        self._den = _wola_denominator(cfg, cfg.window_len)
        self._started = False

    def push_frame(self, r, i):
        cfg = self.cfg
        frame = _frames_from_planes(np.asarray(r), np.asarray(i), cfg)
        if self._started:
            # shift out the hop finalized by the previous frame
            self._num[:-cfg.hop] = self._num[cfg.hop:]
            self._num[-cfg.hop:] = 0.0
        self._num += frame * cfg.window
        self._started = True
        return self._emit(self._num[:cfg.hop], self._den[:cfg.hop])

    def flush(self):
        if not self._started:
            return np.empty(0)
        tail = self._emit(self._num[self.cfg.hop:], self._den[self.cfg.hop:])
        self._num[:] = 0.0
        self._started = False
        return tail

    @staticmethod
    def _emit(num, den):
        good = den > _den_guard
        out = np.zeros_like(num)
        out[good] = num[good] / den[good]
        return out


# ---------------------------------------------------------------------------
# differentiable transforms
# ---------------------------------------------------------------------------

def _rfft_adjoint(gy, cfg):
    """Adjoint of x -> rfft(x) viewed as a map into (re, im) plane pairs."""
    n = cfg.fft_len
    g = np.fft.rfft(gy, n=n, axis=-1)
    gr = (2.0 / n) * g.real
    gi = (2.0 / n) * g.imag
    gr[..., 0] *= 0.5
    gi[..., 0] = 0.0
    if n % 2 == 0:
        gr[..., -1] *= 0.5
        gi[..., -1] = 0.0
    return gr, gi


def _irfft_like(gr, gi, cfg):
    """Apply sum_k (gr_k cos - gi_k sin) per output sample via one irfft."""
    n = cfg.fft_len
    a = 0.5 * (gr + 1j * gi)
    a[..., 0] = gr[..., 0]
    if n % 2 == 0:
        a[..., -1] = gr[..., -1]
    return n * np.fft.irfft(a, n=n, axis=-1)


def stacked_stft_arrays(x, cfg):
    """Batched analysis on plain arrays: [.., n] -> real/imag [.., t, F].

    Numerically identical to stacking ``_frame_spectrum`` outputs but runs
    one batched fft; both ``stft_t`` and the training loss build spectra
    through this exact path, so equal inputs give bitwise-equal planes.
    """
    x = np.asarray(x, dtype=np.float64)
    t = cfg.n_frames(x.shape[-1])
    hop, wl = cfg.hop, cfg.window_len
    frames = np.stack([x[..., tau * hop:tau * hop + wl] for tau in range(t)], axis=-2)
    spec = np.fft.rfft(frames * cfg.window, n=cfg.fft_len, axis=-1)
    return spec.real.copy(), spec.imag.copy()


def stft_t(x, cfg):
    """Differentiable analysis: Tensor [n] or [b, n] -> plane pair [.., t, F]."""
    x = as_tensor(x)
    t = cfg.n_frames(x.shape[-1])
    w = cfg.window
    hop, wl = cfg.hop, cfg.window_len
    real, imag = stacked_stft_arrays(x.data, cfg)
    out_r = Tensor(real)
    out_i = Tensor(imag)

    def scatter(gframes):
        gx = np.zeros(x.shape)
        for tau in range(t):
            gx[..., tau * hop:tau * hop + wl] += gframes[..., tau, :] * w
        return gx

    def bwd_r(go):
        gframes = _irfft_like(go, np.zeros_like(go), cfg)[..., :wl]
        return (scatter(gframes),)

    def bwd_i(go):
        gframes = _irfft_like(np.zeros_like(go), go, cfg)[..., :wl]
        return (scatter(gframes),)

    record_op(out_r, (x,), bwd_r)
    record_op(out_i, (x,), bwd_i)
    return out_r, out_i


def istft_t(r, i, cfg):
    """Differentiable synthesis: plane pair [.., t, F] -> Tensor [.., n].

    Forward values are identical to ``istft`` (shared helpers); the
    backward pass is the exact adjoint of this linear map.
    """
    r, i = as_tensor(r), as_tensor(i)
    t = r.shape[-2]
    n = cfg.n_samples(t)
    out = Tensor(_istft_arrays(r.data, i.data, cfg))

    den = _wola_denominator(cfg, n)
    good = den > _den_guard
    hop, wl = cfg.hop, cfg.window_len

    def bwd(go):
        gnum = np.zeros_like(go)
        gnum[..., good] = go[..., good] / den[good]
        gframes = np.zeros(r.shape[:-2] + (t, cfg.fft_len))
        for tau in range(t):
            gframes[..., tau, :wl] = gnum[..., tau * hop:tau * hop + wl] * cfg.window
        # imag of DC/Nyquist was dropped in synthesis, so its grad is zero;
        # the rfft adjoint returns exactly that.
        return _rfft_adjoint(gframes, cfg)

    record_op(out, (r, i), bwd)
    return out


# ---------------------------------------------------------------------------
# complex projection
# ---------------------------------------------------------------------------

@dataclass
class ComplexProjection:
    """Affine F -> d applied with the same weights to both planes."""

    weight: Tensor
    bias: Tensor

    @staticmethod
    def create(n_bins, d, rng):
        from .attention import uniform_init
        w = Tensor(uniform_init(rng, (n_bins, d), n_bins), requires_grad=True)
        b = Tensor(np.zeros(d), requires_grad=True)
        return ComplexProjection(w, b)

    def named_parameters(self, prefix):
        return [(f"{prefix}.w", self.weight), (f"{prefix}.b", self.bias)]


def project(spec, proj):
    """Spectrogram (or raw plane pair) -> [b, t, 2, d] feature stack."""
    if isinstance(spec, Spectrogram):
        r, i = spec.real_plane, spec.imag_plane
    else:
        r, i = spec
    r, i = as_tensor(r), as_tensor(i)
    if r.shape[-1] != proj.weight.shape[0]:
        raise DataError(
            f"projection expects {proj.weight.shape[0]} bins, got {r.shape[-1]}")
    pr = affine(r, proj.weight, proj.bias)
    pi = affine(i, proj.weight, proj.bias)
    if pr.ndim == 2:
        t, d = pr.shape
        pr = reshape(pr, (1, t, 1, d))
        pi = reshape(pi, (1, t, 1, d))
    else:
        b, t, d = pr.shape
        pr = reshape(pr, (b, t, 1, d))
        pi = reshape(pi, (b, t, 1, d))
    return concat([pr, pi], axis=2)
