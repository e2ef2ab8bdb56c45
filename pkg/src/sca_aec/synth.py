"""Deterministic synthetic speech-like and noise signals.

Stand-ins for a speech corpus in tests and desk-scale experiments: a
harmonic buzz with per-syllable pitch and formant movement under an
on/off envelope, and spectrally tilted noise.  Everything derives from
the supplied rng, so equal seeds give equal samples.
"""

import numpy as np
from scipy.signal import lfilter

from .dsp import SAMPLE_RATE


def _resonator(x, center_hz, sample_rate, r=0.97):
    a = [1.0, -2.0 * r * np.cos(2.0 * np.pi * center_hz / sample_rate), r * r]
    return lfilter([1.0 - r], a, x)


def speech_like(rng, seconds, sample_rate=SAMPLE_RATE, level=0.25):
    """Voiced-syllable stream: harmonic stacks through moving formants.

    Roughly 20% of syllable slots are pauses, giving the on/off energy
    pattern delay estimators and the attention alignment need.
    """
    n = int(round(seconds * sample_rate))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        seg = int(rng.uniform(0.12, 0.35) * sample_rate)
        seg = min(seg, n - pos)
        if seg <= 0:
            break
        voiced = rng.uniform() >= 0.2
        f0 = float(rng.uniform(90.0, 250.0))
        formants = rng.uniform(300.0, 3200.0, size=2)
        amp = float(rng.uniform(0.4, 1.0))
        if voiced:
            t = np.arange(seg) / sample_rate
            x = np.zeros(seg)
            for k in range(1, int(4000.0 / f0) + 1):
                x += np.sin(2.0 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
            for fc in formants:
                x = _resonator(x, fc, sample_rate)
            ramp = min(seg // 4, int(0.01 * sample_rate))
            env = np.ones(seg)
            if ramp > 0:
                env[:ramp] = np.linspace(0.0, 1.0, ramp, endpoint=False)
                env[-ramp:] = np.linspace(1.0, 0.0, ramp)
            peak = np.max(np.abs(x))
            if peak > 0:
                out[pos:pos + seg] = x * env * (amp / peak)
        pos += seg
    rms = np.sqrt(np.mean(out * out))
    if rms > 0:
        out *= level / rms
    return np.clip(out, -0.99, 0.99)


def noise_like(rng, seconds, sample_rate=SAMPLE_RATE, level=0.1, tilt=0.5):
    """Random-phase noise with a 1/f^tilt spectral slope, fixed RMS."""
    n = int(round(seconds * sample_rate))
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shaping = 1.0 / np.maximum(freqs, 20.0) ** tilt
    out = np.fft.irfft(spec * shaping, n)
    rms = np.sqrt(np.mean(out * out))
    if rms > 0:
        out *= level / rms
    return out
