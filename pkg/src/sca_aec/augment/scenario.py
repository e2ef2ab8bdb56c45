"""Scenario sampling: the per-conversation draw of room acoustics, delay,
mixing levels, loudspeaker nonlinearity and echo-path-change events.

Bucket tables and probabilities follow the augmentation recipe; the delay
probabilities are renormalized because the published ones sum to 1.1.
All draws for one scenario come from a single rng in a fixed order, so a
seed pins the scenario byte for byte.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError

MODES = ("FEST", "NEST", "DT")

RT60_BUCKETS_MS = ((50, 300), (300, 600), (600, 1000), (1000, 1500))
RT60_PROBS = (0.6, 0.3, 0.08, 0.02)

DELAY_BUCKETS_MS = ((-20, 0), (0, 200), (200, 400), (400, 600))
_DELAY_RAW = (0.05, 0.6, 0.4, 0.05)   # published values; they sum to 1.1
DELAY_PROBS = tuple(p / sum(_DELAY_RAW) for p in _DELAY_RAW)

SNR_BUCKETS_DB = ((0, 10), (10, 20), (20, 30), (30, 40))
SNR_PROBS = (0.1, 0.1, 0.3, 0.5)

SER_BUCKETS_DB = ((-10, 0), (0, 10), (10, 30), (30, 40))
SER_PROBS = (0.1, 0.5, 0.3, 0.1)

EPC_MEAN_PER_10S = 1.0
EPC_DURATION_MS = (10.0, 200.0)


def _bucket_draw(rng, buckets, probs):
    idx = rng.choice(len(buckets), p=probs)
    lo, hi = buckets[idx]
    return float(rng.uniform(lo, hi))


def bucket_index(value, buckets):
    """Index of the bucket holding ``value`` (last bucket right-closed)."""
    for i, (lo, hi) in enumerate(buckets):
        if lo <= value < hi or (i == len(buckets) - 1 and value == hi):
            return i
    return None


@dataclass
class EpcEvent:
    """One echo-path change: cut or insert a segment on one talker side."""

    time_s: float
    kind: str            # "cut" | "insert"
    duration_ms: float
    side: str            # "near" | "far"

    def __post_init__(self):
        if self.kind not in ("cut", "insert"):
            raise ConfigError(f"unknown epc kind {self.kind!r}")
        if self.side not in ("near", "far"):
            raise ConfigError(f"unknown epc side {self.side!r}")
        if not EPC_DURATION_MS[0] <= self.duration_ms <= EPC_DURATION_MS[1]:
            raise ConfigError(
                f"epc duration {self.duration_ms} ms outside {EPC_DURATION_MS}")
        if self.time_s < 0:
            raise ConfigError("epc time must be >= 0")

    def to_dict(self):
        return {"time_s": self.time_s, "kind": self.kind,
                "duration_ms": self.duration_ms, "side": self.side}


@dataclass
class ScenarioSpec:
    mode: str = "DT"
    rt60_s: float = 0.3
    delay_ms: float = 0.0
    snr_db: float = 30.0
    ser_db: float = 0.0
    nonlinearity: dict = field(default_factory=lambda: {"kind": "none"})
    epc_events: list = field(default_factory=list)
    rng_seed: object = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0.05 <= self.rt60_s <= 1.5:
            raise ConfigError(f"rt60 {self.rt60_s} s outside its buckets")
        if not -20.0 <= self.delay_ms <= 600.0:
            raise ConfigError(f"delay {self.delay_ms} ms outside its buckets")
        if not 0.0 <= self.snr_db <= 40.0:
            raise ConfigError(f"snr {self.snr_db} dB outside its buckets")
        if not -10.0 <= self.ser_db <= 40.0:
            raise ConfigError(f"ser {self.ser_db} dB outside its buckets")
        kind = self.nonlinearity.get("kind")
        if kind not in ("none", "arctan", "polynomial"):
            raise ConfigError(f"unknown nonlinearity {kind!r}")
        self.epc_events = [e if isinstance(e, EpcEvent) else EpcEvent(**e)
                           for e in self.epc_events]

    def with_mode(self, mode):
        return replace(self, mode=mode,
                       epc_events=[replace(e) for e in self.epc_events])

    def to_dict(self):
        return {
            "mode": self.mode,
            "rt60_s": self.rt60_s,
            "delay_ms": self.delay_ms,
            "snr_db": self.snr_db,
            "ser_db": self.ser_db,
            "nonlinearity": dict(self.nonlinearity),
            "epc_events": [e.to_dict() for e in self.epc_events],
            "rng_seed": self.rng_seed,
        }

    @staticmethod
    def from_dict(d):
        return ScenarioSpec(**d)


def sample_scenario(rng, clip_seconds=10.0, mode="DT"):
    """One scenario draw; the caller expands it to the three talk modes.

    Draw order is fixed: RT60, delay, SNR, SER, nonlinearity, EPC events.
    Every EPC candidate consumes the same number of draws whether or not
    it is accepted, so acceptance never shifts later draws.
    """
    rt60_ms = _bucket_draw(rng, RT60_BUCKETS_MS, RT60_PROBS)
    delay_ms = _bucket_draw(rng, DELAY_BUCKETS_MS, DELAY_PROBS)
    snr_db = _bucket_draw(rng, SNR_BUCKETS_DB, SNR_PROBS)
    ser_db = _bucket_draw(rng, SER_BUCKETS_DB, SER_PROBS)

    if rng.uniform() < 0.5:
        nonlinearity = {"kind": "arctan", "gamma": float(rng.uniform(1.0, 5.0))}
    else:
        nonlinearity = {"kind": "polynomial",
                        "a1": float(rng.uniform(0.8, 1.0)),
                        "a2": float(rng.uniform(-0.3, 0.3)),
                        "a3": float(rng.uniform(-0.3, 0.3))}

    events = []
    n_candidates = int(rng.poisson(EPC_MEAN_PER_10S * clip_seconds / 10.0))
    for _ in range(n_candidates):
        accept_prob = rng.uniform(0.0, 0.1)
        u = rng.uniform()
        time_s = float(rng.uniform(0.0, clip_seconds))
        kind = "cut" if rng.uniform() < 0.5 else "insert"
        duration_ms = float(rng.uniform(*EPC_DURATION_MS))
        side = "near" if rng.uniform() < 0.5 else "far"
        if u < accept_prob:
            events.append(EpcEvent(time_s, kind, duration_ms, side))

    return ScenarioSpec(mode=mode, rt60_s=rt60_ms / 1000.0, delay_ms=delay_ms,
                        snr_db=snr_db, ser_db=ser_db,
                        nonlinearity=nonlinearity, epc_events=events)
