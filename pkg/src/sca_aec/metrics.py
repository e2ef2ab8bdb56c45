"""Echo-cancellation metrics and deterministic report writers."""

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dsp import AudioClip
from .errors import DataError

# enhanced energy below this fraction of mic energy counts as fully removed
_CAP_RATIO = 1e-20
_CAP_DB = 100.0


def _as_samples(x):
    if isinstance(x, AudioClip):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def erle(mic, enhanced):
    """Echo return loss enhancement, 10*log10(sum mic^2 / sum enhanced^2).

    Meaningful when the microphone holds echo only (FEST-style clips):
    energy the model removes is echo by construction.
    """
    mic = _as_samples(mic)
    enhanced = _as_samples(enhanced)
    if mic.shape != enhanced.shape:
        raise DataError(f"length mismatch: {mic.shape} vs {enhanced.shape}")
    e_mic = float(np.sum(mic * mic))
    if e_mic == 0.0:
        raise DataError("silent reference: microphone signal has zero energy")
    e_enh = float(np.sum(enhanced * enhanced))
    if e_enh < _CAP_RATIO * e_mic:
        return _CAP_DB
    return 10.0 * np.log10(e_mic / e_enh)


@dataclass
class MetricReport:
    """Per-clip evaluation row; erle_db stays None outside FEST mode."""

    clip_id: str
    mode: str
    true_delay_ms: float
    erle_db: float | None = None
    non_causal: bool = False
    loss_terms: dict = field(default_factory=dict)

    def to_row(self):
        row = {
            "clip_id": self.clip_id,
            "mode": self.mode,
            "true_delay_ms": self.true_delay_ms,
            "erle_db": self.erle_db,
            "non_causal": self.non_causal,
        }
        for name, value in sorted(self.loss_terms.items()):
            row[f"loss_{name}"] = value
        return row


DEFAULT_SWEEP_EDGES_MS = (0.0, 100.0, 200.0, 300.0, 400.0, 500.0, 600.0)


def delay_sweep(entries, edges_ms=DEFAULT_SWEEP_EDGES_MS):
    """Bucket (delay_ms, erle_db) pairs and average per bucket.

    Buckets are [lo, hi) except the last, which closes at hi so the top
    edge is not silently dropped.  Empty buckets are omitted with a
    warning; entries outside every bucket are skipped with a warning.
    Rows come back ordered by lower edge.
    """
    edges = [float(e) for e in edges_ms]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise DataError("bucket edges must be strictly increasing, >= 2 values")
    sums = [0.0] * (len(edges) - 1)
    counts = [0] * (len(edges) - 1)
    skipped = 0
    for delay_ms, erle_db in entries:
        idx = None
        for i in range(len(edges) - 1):
            hi_ok = delay_ms <= edges[i + 1] if i == len(edges) - 2 else delay_ms < edges[i + 1]
            if edges[i] <= delay_ms and hi_ok:
                idx = i
                break
        if idx is None:
            skipped += 1
            continue
        sums[idx] += erle_db
        counts[idx] += 1
    if skipped:
        warnings.warn(f"{skipped} entries fell outside the sweep range", stacklevel=2)
    table = []
    for i in range(len(edges) - 1):
        if counts[i] == 0:
            warnings.warn(
                f"delay bucket [{edges[i]}, {edges[i + 1]}] ms is empty; omitted",
                stacklevel=2)
            continue
        table.append({
            "delay_lo_ms": edges[i],
            "delay_hi_ms": edges[i + 1],
            "count": counts[i],
            "mean_erle_db": sums[i] / counts[i],
        })
    return table


def write_jsonl(path, rows):
    """One JSON object per line, keys sorted; byte-stable for equal rows."""
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True))
            f.write("\n")


def write_csv(path, rows, fieldnames=None):
    """CSV with an explicit or first-row-derived column order."""
    rows = list(rows)
    if fieldnames is None:
        if not rows:
            raise DataError("cannot infer CSV columns from zero rows")
        fieldnames = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
