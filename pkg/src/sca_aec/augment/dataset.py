"""Dataset rendering: manifest of source WAVs in, rendered AEC clips out.

Every conversation draws one scenario and one room, then renders all
three talk modes from that single draw, so FEST/NEST/DT triples share
acoustics.  Per-example rngs are seeded by (master seed, index), which
makes output bytes independent of worker scheduling.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..audio_io import read_wav, write_wav
from ..backend import thread_limit
from ..dsp import SAMPLE_RATE
from ..errors import ConfigError, DataError
from ..metrics import write_csv, write_jsonl
from ..synth import noise_like, speech_like
from .render import render_example
from .rir import SPEED_OF_SOUND, RoomSpec, image_method_rir
from .scenario import (DELAY_BUCKETS_MS, MODES, RT60_BUCKETS_MS,
                       SER_BUCKETS_DB, SNR_BUCKETS_DB, bucket_index,
                       sample_scenario)

_OVERRIDE_KEYS = ("rt60_s", "delay_ms", "snr_db", "ser_db",
                  "nonlinearity_off", "epc_off", "noise_off")


def thread_count(requested=None):
    """Worker cap: explicit argument, else SCA_AEC_THREADS, else cpu count."""
    if requested:
        return max(1, int(requested))
    if os.environ.get("SCA_AEC_THREADS", "").strip():
        return thread_limit()
    return min(8, os.cpu_count() or 1)


def _sample_room(rng, rt60_s):
    """Room draw; long decays get proportionally larger rooms so the image
    cloud needed to cover the decay stays tractable and beta stays sane."""
    scale = 1.0 + 1.2 * max(0.0, rt60_s - 0.5)
    dims = np.array([rng.uniform(4.0, 8.0) * scale,
                     rng.uniform(3.0, 6.0) * scale,
                     rng.uniform(2.4, 3.2) * min(scale, 1.6)])
    margin = 0.5
    src = mic = None
    for _ in range(100):
        src = rng.uniform(margin, dims - margin)
        mic = rng.uniform(margin, dims - margin)
        if np.linalg.norm(src - mic) >= 0.3:
            break
    return RoomSpec.from_rt60(dims, src, mic, rt60_s)


def _apply_overrides(spec, overrides, rng):
    if not overrides:
        return spec
    for key in overrides:
        if key not in _OVERRIDE_KEYS:
            raise ConfigError(f"unknown scenario override {key!r}")
    values = {}
    for key in sorted(overrides):
        val = overrides[key]
        if key.endswith("_off"):
            continue
        if isinstance(val, (tuple, list)):
            lo, hi = val
            values[key] = float(rng.uniform(lo, hi))
        else:
            values[key] = float(val)
    spec = spec.with_mode(spec.mode)
    for key, val in values.items():
        setattr(spec, key, val)
    if overrides.get("nonlinearity_off"):
        spec.nonlinearity = {"kind": "none"}
    if overrides.get("epc_off"):
        spec.epc_events = []
    spec.__post_init__()
    return spec


def _render_conversation(index, row, base_dir, clips_dir, master_seed, overrides):
    rng = np.random.default_rng([master_seed, index])
    near = read_wav(Path(base_dir) / row["near_wav"]).samples
    far = read_wav(Path(base_dir) / row["far_wav"]).samples
    noise = None
    if row.get("noise_wav") and not (overrides or {}).get("noise_off"):
        noise = read_wav(Path(base_dir) / row["noise_wav"]).samples
    clip_seconds = min(near.shape[0], far.shape[0]) / SAMPLE_RATE

    spec = sample_scenario(rng, clip_seconds=clip_seconds, mode="DT")
    spec = _apply_overrides(spec, overrides, rng)
    spec.rng_seed = [int(master_seed), int(index)]

    room = _sample_room(rng, spec.rt60_s)
    rir = image_method_rir(room)
    direct = (np.linalg.norm(room.source_pos - room.mic_pos)
              / SPEED_OF_SOUND * SAMPLE_RATE)

    rows = []
    for mode in MODES:
        ex = render_example(spec.with_mode(mode), near, far, noise, rir,
                            direct_delay_samples=direct)
        stem = f"{index:05d}_{mode}"
        paths = {}
        for role, signal in (("far", ex.far), ("mic", ex.mic),
                             ("target", ex.target)):
            rel = f"clips/{stem}_{role}.wav"
            write_wav(Path(clips_dir) / f"{stem}_{role}.wav", signal)
            paths[f"{role}_wav"] = rel
        sidecar = {
            "index": index,
            "mode": mode,
            "scenario": ex.spec.to_dict(),
            "room": {
                "dimensions": room.dimensions.tolist(),
                "source_pos": room.source_pos.tolist(),
                "mic_pos": room.mic_pos.tolist(),
                "beta": room.beta,
                "rt60_s": room.rt60_s,
            },
            "true_delay_samples": ex.true_delay_samples,
            "true_delay_ms": ex.true_delay_ms,
            "non_causal": ex.non_causal,
            "clip_seconds": clip_seconds,
        }
        with open(Path(clips_dir) / f"{stem}.json", "w", encoding="utf-8") as f:
            json.dump(sidecar, f, sort_keys=True, indent=1)
            f.write("\n")
        rows.append({**paths, **sidecar})
    return rows


def _bucket_histogram(manifest_rows):
    """Per-distribution bucket counts over conversations (DT rows)."""
    tables = (("rt60_ms", RT60_BUCKETS_MS),
              ("delay_ms", DELAY_BUCKETS_MS),
              ("snr_db", SNR_BUCKETS_DB),
              ("ser_db", SER_BUCKETS_DB))
    counts = {name: [0] * len(buckets) for name, buckets in tables}
    for row in manifest_rows:
        if row["mode"] != "DT":
            continue
        sc = row["scenario"]
        values = {"rt60_ms": sc["rt60_s"] * 1000.0, "delay_ms": sc["delay_ms"],
                  "snr_db": sc["snr_db"], "ser_db": sc["ser_db"]}
        for name, buckets in tables:
            idx = bucket_index(values[name], buckets)
            if idx is not None:
                counts[name][idx] += 1
    out = []
    for name, buckets in tables:
        for i, (lo, hi) in enumerate(buckets):
            out.append({"distribution": name, "bucket_lo": lo, "bucket_hi": hi,
                        "count": counts[name][i]})
    return out


def augment_dataset(manifest_path, out_dir, count, seed, threads=None,
                    overrides=None):
    """Render ``count`` conversations (x3 modes) from a source manifest.

    Returns (manifest_rows, error_rows).  A failing conversation is
    reported and skipped; the run continues.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    base_dir = manifest_path.parent
    source_rows = []
    with open(manifest_path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                source_rows.append(json.loads(line))
    if not source_rows:
        raise DataError(f"manifest {manifest_path} lists no source rows")

    out_dir = Path(out_dir)
    clips_dir = out_dir / "clips"
    clips_dir.mkdir(parents=True, exist_ok=True)

    def job(index):
        row = source_rows[index % len(source_rows)]
        try:
            return index, _render_conversation(
                index, row, base_dir, clips_dir, seed, overrides), None
        except (DataError, OSError) as exc:
            return index, None, {"index": index, "error": str(exc)}

    with ThreadPoolExecutor(max_workers=thread_count(threads)) as ex:
        results = list(ex.map(job, range(count)))

    manifest_rows = []
    error_rows = []
    for _, rows, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            error_rows.append(err)
        else:
            manifest_rows.extend(rows)

    write_jsonl(out_dir / "manifest.jsonl", manifest_rows)
    write_csv(out_dir / "summary.csv", _bucket_histogram(manifest_rows),
              fieldnames=["distribution", "bucket_lo", "bucket_hi", "count"])
    if error_rows:
        write_jsonl(out_dir / "errors.jsonl", error_rows)
    return manifest_rows, error_rows


def make_corpus(out_dir, count, clip_seconds, seed):
    """Synthetic source corpus + manifest, the input side of ``augment``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        names = {"near_wav": f"near_{i:05d}.wav", "far_wav": f"far_{i:05d}.wav",
                 "noise_wav": f"noise_{i:05d}.wav"}
        write_wav(out_dir / names["near_wav"], speech_like(rng, clip_seconds))
        write_wav(out_dir / names["far_wav"], speech_like(rng, clip_seconds))
        write_wav(out_dir / names["noise_wav"], noise_like(rng, clip_seconds))
        rows.append(names)
    write_jsonl(out_dir / "manifest.jsonl", rows)
    return rows


def load_manifest(dataset_dir, mode=None):
    """Rows of a rendered dataset's manifest, optionally one talk mode."""
    path = Path(dataset_dir) / "manifest.jsonl"
    if not path.exists():
        raise DataError(f"no manifest.jsonl under {dataset_dir}")
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    if mode is not None:
        rows = [r for r in rows if r["mode"] == mode]
    return rows


def load_clip_triple(dataset_dir, row):
    """(far, mic, target) sample arrays for one manifest row."""
    base = Path(dataset_dir)
    return (read_wav(base / row["far_wav"]).samples,
            read_wav(base / row["mic_wav"]).samples,
            read_wav(base / row["target_wav"]).samples)
