"""Streaming cross-attention acoustic echo cancellation.

A self-contained engine: real-pair STFT front end, cross-attention
alignment between microphone and far-end reference, a gated convolutional
recurrent mask estimator, and the training/evaluation machinery around
them.  Dense math runs on numpy; the few hot kernels switch to compiled
implementations when available (see ``sca_aec.backend``).
"""

from .backend import BACKEND, USE_NUMBA
from .checkpoint import (load_checkpoint, load_model, restore_model,
                         save_checkpoint, save_model)
from .dsp import (SAMPLE_RATE, AudioClip, ComplexProjection, Spectrogram,
                  StftConfig, StreamingIstft, StreamingStft, istft, istft_t,
                  periodic_hann, project, stft, stft_t)
from .errors import ConfigError, DataError, GraphError, NumericalError
from .gcc import (DelayEstimate, GccConfig, StreamingGcc, align_by_shift,
                  global_gcc_delay, streaming_gcc_delay)
from .loss import LossWeights, aec_loss, low_emphasis_weights
from .metrics import MetricReport, delay_sweep, erle
from .network import (ComplexMask, ModelConfig, ScaCrnModel, model_forward,
                      param_count)
from .streaming import StreamingAec, enhance_offline, enhance_streaming
from .tensor import Graph, Parameter, Tensor, backward
from .train import Adam, TrainConfig, batch_loss, dataset_loss, train_model

__version__ = "0.1.0"

__all__ = [
    "Adam", "AudioClip", "ComplexMask", "ComplexProjection", "ConfigError",
    "DataError", "DelayEstimate", "GccConfig", "Graph", "GraphError",
    "LossWeights", "MetricReport", "ModelConfig", "NumericalError",
    "Parameter", "SAMPLE_RATE", "ScaCrnModel", "Spectrogram", "StftConfig",
    "StreamingAec", "StreamingGcc", "StreamingIstft", "StreamingStft",
    "BACKEND", "Tensor", "TrainConfig", "USE_NUMBA", "aec_loss",
    "align_by_shift", "backward", "batch_loss", "dataset_loss", "delay_sweep",
    "enhance_offline", "enhance_streaming", "erle", "global_gcc_delay",
    "istft", "istft_t", "load_checkpoint", "load_model",
    "low_emphasis_weights", "model_forward", "param_count", "periodic_hann",
    "project", "restore_model", "save_checkpoint", "save_model", "stft",
    "stft_t", "streaming_gcc_delay", "train_model",
]
