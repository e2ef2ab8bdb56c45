"""The full echo-cancellation model.

Complex projections of the mic and far-end spectrograms feed two
cross-attention directions (or a plain concat when attention is disabled),
then a three-block gated-conv encoder, an LSTM over the flattened
bottleneck, a three-block gated transposed-conv decoder with skip
concatenation, and an output projection plus bounded complex gate whose
mask multiplies the mic spectrogram.
"""

from dataclasses import dataclass, field

import numpy as np

from .attention import (CrossAttentionModule, build_streaming_mask, sca_forward,
                        uniform_init)
from .dsp import ComplexProjection, Spectrogram, StftConfig, project
from .errors import ConfigError, DataError
from .ops import (batch_norm, bounded_complex_gate, causal_conv2d, complex_mul,
                  conv_transpose2d_causal, glu, lstm_seq, affine)
from .tensor import Parameter, Tensor, as_tensor, concat, reshape, transpose


@dataclass
class ModelConfig:
    d: int = 64
    n_heads: int = 4
    lookahead: object = 0          # frames; None = unlimited (non-streaming)
    encoder_channels: tuple = (8, 16, 16)
    decoder_channels: tuple = (16, 8, 2)
    lstm_hidden: int = None        # None: bottleneck feature count
    stft: StftConfig = field(default_factory=StftConfig)
    mask_bound: float = 1.0
    attention: str = "sca"
    residual_source: str = "kv"
    history: int = 1024            # streaming attention window, frames
    d_ff: int = None               # None: 4d

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ConfigError(f"d={self.d} not divisible by {self.n_heads} heads")
        if (2 * self.d) % 8 != 0:
            raise ConfigError(
                f"feature extent 2d={2 * self.d} must survive three stride-2 halvings")
        if len(self.encoder_channels) != 3 or len(self.decoder_channels) != 3:
            raise ConfigError("encoder/decoder need exactly three blocks each")
        if self.decoder_channels[-1] != 2:
            raise ConfigError("decoder must end in 2 channels (real+imag mask planes)")
        if self.attention not in ("sca", "none"):
            raise ConfigError(f"unknown attention mode {self.attention!r}")
        if self.residual_source not in ("kv", "query"):
            raise ConfigError(f"unknown residual_source {self.residual_source!r}")
        if self.mask_bound <= 0:
            raise ConfigError("mask_bound must be positive")
        if self.lookahead is not None and self.lookahead != float("inf"):
            if int(self.lookahead) < 0:
                raise ConfigError("negative lookahead")
            self.lookahead = int(self.lookahead)
        if self.history < 1:
            raise ConfigError("history must be at least one frame")

    @property
    def bottleneck_extent(self):
        return (2 * self.d) // 8

    @property
    def bottleneck_features(self):
        return self.encoder_channels[-1] * self.bottleneck_extent

    @property
    def lstm_hidden_resolved(self):
        return self.bottleneck_features if self.lstm_hidden is None else self.lstm_hidden

    def to_dict(self):
        return {
            "d": self.d,
            "n_heads": self.n_heads,
            "lookahead": None if self.lookahead in (None, float("inf")) else self.lookahead,
            "encoder_channels": list(self.encoder_channels),
            "decoder_channels": list(self.decoder_channels),
            "lstm_hidden": self.lstm_hidden,
            "stft": {"window_len": self.stft.window_len, "hop": self.stft.hop,
                     "fft_len": self.stft.fft_len},
            "mask_bound": self.mask_bound,
            "attention": self.attention,
            "residual_source": self.residual_source,
            "history": self.history,
            "d_ff": self.d_ff,
        }

    @staticmethod
    def from_dict(d):
        d = dict(d)
        stft = d.pop("stft")
        return ModelConfig(
            stft=StftConfig(window_len=stft["window_len"], hop=stft["hop"],
                            fft_len=stft["fft_len"]),
            encoder_channels=tuple(d.pop("encoder_channels")),
            decoder_channels=tuple(d.pop("decoder_channels")),
            **d)


@dataclass
class ComplexMask:
    """Per-bin complex multiplier, magnitude bounded by the gate."""

    m_r: Tensor
    m_i: Tensor


class _ConvBlock:
    """conv (or transposed conv) -> GLU -> batch-norm; kernel emits 2x
    channels so the GLU can halve them."""

    def __init__(self, c_in, c_out, rng, transposed):
        fan_in = c_in * 2 if transposed else c_in * 4
        if transposed:
            shape = (c_in, 2 * c_out, 2, 2)  # [y channels, pre-GLU out, 2, 2]
        else:
            shape = (2 * c_out, c_in, 2, 2)
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = Tensor(uniform_init(rng, shape, fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(2 * c_out), requires_grad=True)
        self.bn_gain = Tensor(np.ones(c_out), requires_grad=True)
        self.bn_bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.running_mean = np.zeros(c_out)
        self.running_var = np.ones(c_out)

    def named_parameters(self, prefix):
        return [(f"{prefix}.kernel", self.kernel), (f"{prefix}.bias", self.bias),
                (f"{prefix}.bn.gain", self.bn_gain), (f"{prefix}.bn.bias", self.bn_bias)]

    def named_buffers(self, prefix):
        return [(f"{prefix}.bn.running_mean", self.running_mean),
                (f"{prefix}.bn.running_var", self.running_var)]


class ScaCrnModel:
    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        n_bins = config.stft.n_bins
        d = config.d

        self.proj_near = ComplexProjection.create(n_bins, d, rng)
        self.proj_far = ComplexProjection.create(n_bins, d, rng)

        if config.attention == "sca":
            self.sca_lf = CrossAttentionModule(d, config.n_heads, rng, config.d_ff,
                                               config.residual_source)
            self.sca_fl = CrossAttentionModule(d, config.n_heads, rng, config.d_ff,
                                               config.residual_source)
        else:
            self.sca_lf = self.sca_fl = None

        enc = config.encoder_channels
        self.encoder = []
        c_in = 2
        for c_out in enc:
            self.encoder.append(_ConvBlock(c_in, c_out, rng, transposed=False))
            c_in = c_out

        feat = config.bottleneck_features
        hidden = config.lstm_hidden_resolved
        self.lstm_wx = Tensor(uniform_init(rng, (4 * hidden, feat), feat),
                              requires_grad=True)
        self.lstm_wh = Tensor(uniform_init(rng, (4 * hidden, hidden), hidden),
                              requires_grad=True)
        self.lstm_bias = Tensor(np.zeros(4 * hidden), requires_grad=True)
        self.lstm_out_w = Tensor(uniform_init(rng, (hidden, feat), hidden),
                                 requires_grad=True)
        self.lstm_out_b = Tensor(np.zeros(feat), requires_grad=True)

        dec = config.decoder_channels
        dec_ins = (enc[2] + enc[2], dec[0] + enc[1], dec[1] + enc[0])
        self.decoder = [_ConvBlock(ci, co, rng, transposed=True)
                        for ci, co in zip(dec_ins, dec)]

        self.out_proj_w = Tensor(uniform_init(rng, (2 * d, n_bins), 2 * d),
                                 requires_grad=True)
        self.out_proj_b = Tensor(np.zeros(n_bins), requires_grad=True)

        names = [n for n, _ in self.named_parameters()]
        if len(names) != len(set(names)):
            raise ConfigError("duplicate parameter names in model")

    # -- parameter plumbing --------------------------------------------------

    def named_parameters(self):
        items = []
        items += self.proj_near.named_parameters("proj_near")
        items += self.proj_far.named_parameters("proj_far")
        if self.sca_lf is not None:
            items += self.sca_lf.named_parameters("sca.lf")
            items += self.sca_fl.named_parameters("sca.fl")
        for i, blk in enumerate(self.encoder):
            items += blk.named_parameters(f"enc.block{i}")
        items += [("lstm.wx", self.lstm_wx), ("lstm.wh", self.lstm_wh),
                  ("lstm.bias", self.lstm_bias),
                  ("lstm_out.w", self.lstm_out_w), ("lstm_out.b", self.lstm_out_b)]
        for i, blk in enumerate(self.decoder):
            items += blk.named_parameters(f"dec.block{i}")
        items += [("out_proj.w", self.out_proj_w), ("out_proj.b", self.out_proj_b)]
        return items

    def parameters(self):
        return [Parameter(n, t) for n, t in self.named_parameters()]

    def named_buffers(self):
        items = []
        for i, blk in enumerate(self.encoder):
            items += blk.named_buffers(f"enc.block{i}")
        for i, blk in enumerate(self.decoder):
            items += blk.named_buffers(f"dec.block{i}")
        return items

    def zero_grad(self):
        for _, t in self.named_parameters():
            t.grad = None

    # -- forward pieces ------------------------------------------------------

    def encode(self, x, training=False):
        """[b, 2, t, 2d] -> (bottleneck [b, c3, t, 2d/8], per-block skips)."""
        f = x.shape[-1]
        if f % 8 != 0 or f < 8:
            raise DataError(
                f"feature extent {f} does not survive three stride-2 halvings")
        skips = []
        for blk in self.encoder:
            y = causal_conv2d(x, blk.kernel, blk.bias)
            y = glu(y)
            y = batch_norm(y, blk.bn_gain, blk.bn_bias,
                           blk.running_mean, blk.running_var, training)
            skips.append(y)
            x = y
        return x, skips

    def recurrent_forward(self, bottleneck, state=None):
        """LSTM over the flattened bottleneck; returns same shape + carry."""
        b, c, t, fp = bottleneck.shape
        flat = reshape(transpose(bottleneck, (0, 2, 1, 3)), (b, t, c * fp))
        h0, c0 = state if state is not None else (None, None)
        h_seq, carry = lstm_seq(flat, self.lstm_wx, self.lstm_wh, self.lstm_bias,
                                h0, c0)
        y = affine(h_seq, self.lstm_out_w, self.lstm_out_b)
        out = transpose(reshape(y, (b, t, c, fp)), (0, 2, 1, 3))
        return out, carry

    def decode(self, bottleneck, skips, training=False):
        """Mirror of encode with per-block skip concatenation on channels."""
        if len(skips) != len(self.decoder):
            raise DataError(f"expected {len(self.decoder)} skips, got {len(skips)}")
        x = concat([bottleneck, skips[2]], axis=1)
        y = None
        for i, blk in enumerate(self.decoder):
            if x.shape[1] != blk.c_in:
                raise DataError(
                    f"decoder block {i} expects {blk.c_in} channels, got {x.shape[1]}")
            y = conv_transpose2d_causal(x, blk.kernel, blk.bias)
            y = glu(y)
            y = batch_norm(y, blk.bn_gain, blk.bn_bias,
                           blk.running_mean, blk.running_var, training)
            if i < 2:
                x = concat([y, skips[1 - i]], axis=1)
        return y

    def mask_head(self, decoded):
        """[b, 2, t, 2d] -> mask planes [b, t, F]; shared affine per plane."""
        raw_r = affine(decoded[:, 0], self.out_proj_w, self.out_proj_b)
        raw_i = affine(decoded[:, 1], self.out_proj_w, self.out_proj_b)
        return bounded_complex_gate(raw_r, raw_i, self.config.mask_bound)

    def forward_planes(self, mic_r, mic_i, far_r, far_i, training=False):
        """Batched core: plane Tensors [b, t, F] -> (m_r, m_i, e_r, e_i)."""
        mic_r, mic_i = as_tensor(mic_r), as_tensor(mic_i)
        far_r, far_i = as_tensor(far_r), as_tensor(far_i)
        if mic_r.shape != far_r.shape:
            raise DataError(
                f"mic/far disagree: {mic_r.shape} vs {far_r.shape}")
        b, t, _ = mic_r.shape
        d2 = 2 * self.config.d

        l = project((mic_r, mic_i), self.proj_near)
        f = project((far_r, far_i), self.proj_far)
        if self.config.attention == "sca":
            mask = build_streaming_mask(t, self.config.lookahead)
            sca = sca_forward(self.sca_lf, self.sca_fl, l, f, mask)
            ca_r, ca_i = sca.ca_r, sca.ca_i
        else:
            ca_r = concat([l[:, :, 0, :], f[:, :, 0, :]], axis=-1)
            ca_i = concat([l[:, :, 1, :], f[:, :, 1, :]], axis=-1)

        x = concat([reshape(ca_r, (b, 1, t, d2)), reshape(ca_i, (b, 1, t, d2))],
                   axis=1)
        bottleneck, skips = self.encode(x, training)
        rec, _ = self.recurrent_forward(bottleneck)
        decoded = self.decode(rec, skips, training)
        m_r, m_i = self.mask_head(decoded)
        e_r, e_i = complex_mul(m_r, m_i, mic_r, mic_i)
        return m_r, m_i, e_r, e_i


def model_forward(model, mic, far, training=False):
    """Single-clip forward: Spectrograms in, (ComplexMask, Spectrogram) out."""
    if not isinstance(mic, Spectrogram) or not isinstance(far, Spectrogram):
        raise DataError("model_forward expects Spectrogram inputs")
    if mic.n_frames != far.n_frames:
        raise DataError(
            f"mic has {mic.n_frames} frames, far has {far.n_frames}")
    if mic.config.key() != far.config.key():
        raise DataError("mic and far use different stft configs")
    t, n_bins = mic.real_plane.shape
    m_r, m_i, e_r, e_i = model.forward_planes(
        reshape(mic.real_plane, (1, t, n_bins)),
        reshape(mic.imag_plane, (1, t, n_bins)),
        reshape(far.real_plane, (1, t, n_bins)),
        reshape(far.imag_plane, (1, t, n_bins)),
        training=training)
    mask = ComplexMask(reshape(m_r, (t, n_bins)), reshape(m_i, (t, n_bins)))
    enhanced = Spectrogram(reshape(e_r, (t, n_bins)),
                           reshape(e_i, (t, n_bins)), mic.config)
    return mask, enhanced


def param_count(model):
    return sum(t.size for _, t in model.named_parameters())
