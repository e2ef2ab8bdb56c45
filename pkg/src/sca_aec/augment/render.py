"""Rendering one scenario into the microphone mixture d = s + z + v.

The echo path is far speech -> echo-path-change edits -> loudspeaker
nonlinearity -> bulk delay -> room convolution -> SER scaling.  The
far-end reference the model consumes stays unmodified: path edits are
what make the echo stray from the reference.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..dsp import SAMPLE_RATE
from ..errors import DataError
from ..gcc import align_by_shift
from .rir import convolve_steady, convolve_time_variant


def apply_nonlinearity(x, spec):
    """Loudspeaker distortion, renormalized to the input RMS.

    ``spec`` is the scenario's nonlinearity dict: arctan saturation
    arctan(gamma x)/gamma or a cubic polynomial a1 x + a2 x^2 + a3 x^3.
    """
    x = np.asarray(x, dtype=np.float64)
    kind = spec.get("kind", "none")
    if kind == "none":
        return x.copy()
    if kind == "arctan":
        gamma = spec["gamma"]
        y = np.arctan(gamma * x) / gamma
    elif kind == "polynomial":
        y = spec["a1"] * x + spec["a2"] * x * x + spec["a3"] * x ** 3
    else:
        raise DataError(f"unknown nonlinearity kind {kind!r}")
    rms_in = math.sqrt(np.mean(x * x))
    rms_out = math.sqrt(np.mean(y * y))
    if rms_in == 0.0 or rms_out == 0.0:
        return y
    return y * (rms_in / rms_out)


def apply_epc(x, events, side, sample_rate=SAMPLE_RATE):
    """Cut or insert silence segments, length preserving.

    Cuts close the gap and zero-pad the tail; inserts push the rest later
    and drop the overflow.  Events apply in list order; each position is
    interpreted against the signal as already edited.
    """
    out = np.asarray(x, dtype=np.float64).copy()
    n = out.shape[0]
    for e in events:
        if e.side != side:
            continue
        start = min(int(round(e.time_s * sample_rate)), n)
        dur = int(round(e.duration_ms / 1000.0 * sample_rate))
        if e.kind == "cut":
            stop = min(start + dur, n)
            out = np.concatenate([out[:start], out[stop:], np.zeros(stop - start)])
        else:
            out = np.concatenate([out[:start], np.zeros(dur), out[start:]])[:n]
    return out


@dataclass
class AugmentedExample:
    """One rendered clip set; mic == target + echo + noise sample-exactly."""

    far: np.ndarray        # x(n), the reference the model sees
    mic: np.ndarray        # d(n)
    target: np.ndarray     # s(n)
    echo: np.ndarray       # z(n)
    noise: np.ndarray      # v(n)
    spec: object
    true_delay_samples: float
    non_causal: bool

    @property
    def true_delay_ms(self):
        return 1000.0 * self.true_delay_samples / SAMPLE_RATE


def _energy(x):
    return float(np.sum(x * x))


def render_example(spec, near_speech, far_speech, noise, rir,
                   direct_delay_samples=0.0):
    """Mix one scenario into an AugmentedExample.

    ``rir`` is one impulse response, or a list of per-block responses for
    a time-variant path.  ``noise`` may be None for noise-free sets.  The
    recorded ground-truth delay is the injected bulk delay plus the RIR
    direct-path delay; negative totals are flagged, never dropped.
    """
    near = np.asarray(near_speech, dtype=np.float64)
    far = np.asarray(far_speech, dtype=np.float64)
    n = min(near.shape[0], far.shape[0])
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        n = min(n, noise.shape[0])
    if n < 1:
        raise DataError("empty input clips")
    near, far = near[:n], far[:n]

    s_src = apply_epc(near, spec.epc_events, "near")
    bulk = int(round(spec.delay_ms / 1000.0 * SAMPLE_RATE))
    if abs(bulk) > n:
        raise DataError(f"bulk delay {bulk} exceeds clip length {n}")

    if spec.mode == "NEST":
        x_ref = np.zeros(n)
        z = np.zeros(n)
        s = s_src
    else:
        path_in = apply_epc(far, spec.epc_events, "far")
        driven = align_by_shift(apply_nonlinearity(path_in, spec.nonlinearity),
                                bulk)
        if isinstance(rir, (list, tuple)):
            z_raw = (convolve_time_variant(driven, list(rir))
                     if len(rir) > 1 else convolve_steady(driven, rir[0]))
        else:
            z_raw = convolve_steady(driven, rir)
        e_z = _energy(z_raw)
        if e_z == 0.0:
            raise DataError("echo path produced no energy (silent far end?)")
        e_ref = _energy(s_src)   # FEST scales against the pre-zeroing speech
        if e_ref == 0.0:
            raise DataError("near speech is silent; SER is undefined")
        z = z_raw * math.sqrt(e_ref / (e_z * 10.0 ** (spec.ser_db / 10.0)))
        x_ref = far
        s = np.zeros(n) if spec.mode == "FEST" else s_src

    if noise is None:
        v = np.zeros(n)
    else:
        e_v = _energy(noise)
        if e_v == 0.0:
            raise DataError("noise clip is silent; SNR is undefined")
        e_mix = _energy(s + z)
        if e_mix == 0.0:
            raise DataError("signal+echo mix is silent; SNR is undefined")
        v = noise * math.sqrt(e_mix / (e_v * 10.0 ** (spec.snr_db / 10.0)))

    mic = s + z + v
    true_delay = bulk + float(direct_delay_samples)
    return AugmentedExample(far=x_ref, mic=mic, target=s, echo=z, noise=v,
                            spec=spec, true_delay_samples=true_delay,
                            non_causal=true_delay < 0)
