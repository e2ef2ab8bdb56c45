"""WAV reading and writing: mono 48 kHz, PCM16 or float32."""

import numpy as np
from scipy.io import wavfile

from .dsp import SAMPLE_RATE, AudioClip
from .errors import DataError


def read_wav(path):
    """Load a WAV into an AudioClip; PCM16 scales by 1/32768."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise DataError(f"missing WAV file: {path}")
    except ValueError as exc:
        raise DataError(f"unreadable WAV file {path}: {exc}")
    if rate != SAMPLE_RATE:
        raise DataError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples)


def write_wav(path, samples, fmt="float32"):
    """Write mono 48 kHz WAV; ``fmt`` is "pcm16" or "float32".

    PCM16 rounds samples * 32767 and clips to the int16 range, so a
    read-back differs by at most one quantization step.
    """
    if isinstance(samples, AudioClip):
        samples = samples.samples
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise DataError(f"audio must be mono 1-D, got shape {samples.shape}")
    if not np.all(np.isfinite(samples)):
        raise DataError("refusing to write non-finite samples")
    if fmt == "pcm16":
        scaled = np.clip(np.round(samples * 32767.0), -32768, 32767)
        wavfile.write(path, SAMPLE_RATE, scaled.astype(np.int16))
    elif fmt == "float32":
        wavfile.write(path, SAMPLE_RATE, samples.astype(np.float32))
    else:
        raise DataError(f"unknown WAV format {fmt!r}")
