"""Synthetic AEC data: scenarios, room acoustics, rendering, datasets."""

from .dataset import (augment_dataset, load_clip_triple, load_manifest,
                      make_corpus, thread_count)
from .render import AugmentedExample, apply_epc, apply_nonlinearity, render_example
from .rir import (RoomSpec, convolve_steady, convolve_time_variant,
                  image_method_rir, measure_rt60, time_variant_rir)
from .scenario import (DELAY_BUCKETS_MS, DELAY_PROBS, MODES, RT60_BUCKETS_MS,
                       RT60_PROBS, SER_BUCKETS_DB, SER_PROBS, SNR_BUCKETS_DB,
                       SNR_PROBS, EpcEvent, ScenarioSpec, bucket_index,
                       sample_scenario)

__all__ = [
    "AugmentedExample", "DELAY_BUCKETS_MS", "DELAY_PROBS", "EpcEvent",
    "MODES", "RT60_BUCKETS_MS", "RT60_PROBS", "RoomSpec", "SER_BUCKETS_DB",
    "SER_PROBS", "SNR_BUCKETS_DB", "SNR_PROBS", "ScenarioSpec",
    "apply_epc", "apply_nonlinearity", "augment_dataset", "bucket_index",
    "convolve_steady", "convolve_time_variant", "image_method_rir",
    "load_clip_triple", "load_manifest", "make_corpus", "measure_rt60",
    "render_example", "sample_scenario", "thread_count", "time_variant_rir",
]
