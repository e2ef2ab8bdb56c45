"""Streaming cross-attention alignment between near-end and far-end planes.

Two module instances per model, one per direction (near-to-far and
far-to-near); each instance serves both the real and imaginary planes with
the same weights.  A lookahead mask limits how far past the query frame the
keys may reach; lookahead 0 is strictly causal, unlimited lookahead is the
non-streaming variant.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .ops import affine, layer_norm, masked_softmax
from .tensor import Tensor, concat, matmul, mul, relu, transpose


def uniform_init(rng, shape, fan_in):
    """Weight init: uniform on +-sqrt(1/fan_in)."""
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class StreamingMask:
    """Boolean attention mask allowing key j for query i iff j <= i + L."""

    lookahead: object  # int, or None for unlimited
    allow: np.ndarray  # [t, t] bool

    @property
    def t(self):
        return self.allow.shape[0]


def build_streaming_mask(t, lookahead):
    """Mask over t frames; ``lookahead`` of None or inf allows everything.

    Masked cells get exactly zero attention weight (the softmax excludes
    them from both max and sum, equivalent to a -1e30 additive bias whose
    exp underflows to an exact 0).
    """
    if t < 1:
        raise ValueError(f"mask needs at least one frame, got t={t}")
    if lookahead is None or lookahead == math.inf:
        return StreamingMask(None, np.ones((t, t), dtype=bool))
    lk = int(lookahead)
    rows = np.arange(t)[:, None]
    cols = np.arange(t)[None, :]
    return StreamingMask(lk, cols <= rows + lk)


class CrossAttentionModule:
    """Multi-head cross-attention with pre-LN, FFN and post-LN.

    Layout per head: W_q, W_k, W_v are [d, d_h].  The K and V paths share
    one layer-norm of the KV source (both read the same normalized input).
    The residual adds the KV source to the attention output, and the result
    runs through FFN then the output layer-norm, in that order, with no
    second residual.
    """

    def __init__(self, d, n_heads, rng, d_ff=None, residual_source="kv"):
        if d % n_heads != 0:
            raise ConfigError(f"model dim {d} not divisible by {n_heads} heads")
        if residual_source not in ("kv", "query"):
            raise ConfigError(f"unknown residual_source {residual_source!r}")
        self.d = d
        self.n_heads = n_heads
        self.d_h = d // n_heads
        self.d_ff = 4 * d if d_ff is None else d_ff
        self.residual_source = residual_source

        def w(shape, fan_in):
            return Tensor(uniform_init(rng, shape, fan_in), requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        def ones(shape):
            return Tensor(np.ones(shape), requires_grad=True)

        self.q_ln_gain, self.q_ln_bias = ones(d), zeros(d)
        self.kv_ln_gain, self.kv_ln_bias = ones(d), zeros(d)
        self.wq = [w((d, self.d_h), d) for _ in range(n_heads)]
        self.wk = [w((d, self.d_h), d) for _ in range(n_heads)]
        self.wv = [w((d, self.d_h), d) for _ in range(n_heads)]
        self.wo = w((d, d), d)
        self.ffn_w1, self.ffn_b1 = w((d, self.d_ff), d), zeros(self.d_ff)
        self.ffn_w2, self.ffn_b2 = w((self.d_ff, d), self.d_ff), zeros(d)
        self.out_ln_gain, self.out_ln_bias = ones(d), zeros(d)

    def named_parameters(self, prefix):
        items = [
            (f"{prefix}.q_ln.gain", self.q_ln_gain),
            (f"{prefix}.q_ln.bias", self.q_ln_bias),
            (f"{prefix}.kv_ln.gain", self.kv_ln_gain),
            (f"{prefix}.kv_ln.bias", self.kv_ln_bias),
        ]
        for i in range(self.n_heads):
            items.append((f"{prefix}.wq.head{i}", self.wq[i]))
            items.append((f"{prefix}.wk.head{i}", self.wk[i]))
            items.append((f"{prefix}.wv.head{i}", self.wv[i]))
        items += [
            (f"{prefix}.wo", self.wo),
            (f"{prefix}.ffn.w1", self.ffn_w1),
            (f"{prefix}.ffn.b1", self.ffn_b1),
            (f"{prefix}.ffn.w2", self.ffn_w2),
            (f"{prefix}.ffn.b2", self.ffn_b2),
            (f"{prefix}.out_ln.gain", self.out_ln_gain),
            (f"{prefix}.out_ln.bias", self.out_ln_bias),
        ]
        return items


@dataclass
class ScaOutput:
    """Direction-concatenated attention planes, each [b, t, 2d]."""

    ca_r: Tensor
    ca_i: Tensor


def cross_attend(module, query_src, kv_src, mask):
    """One direction of cross-attention over [t, d] or [b, t, d] inputs.

    Computes LN separately for query and KV sources, per-head scaled
    dot-product attention under ``mask``, head concat, output projection,
    then LN(FFN(residual + attention)).  The residual source defaults to
    the KV input; a config flag can switch it to the query input.
    """
    if query_src.shape != kv_src.shape:
        raise ValueError(
            f"query/kv shape mismatch: {query_src.shape} vs {kv_src.shape}")
    t = query_src.shape[-2]
    if mask.allow.shape != (t, t):
        raise ValueError(f"mask is {mask.allow.shape}, inputs have t={t}")
    q = layer_norm(query_src, module.q_ln_gain, module.q_ln_bias)
    kv = layer_norm(kv_src, module.kv_ln_gain, module.kv_ln_bias)
    scale = 1.0 / math.sqrt(module.d_h)

    heads = []
    for i in range(module.n_heads):
        qh = matmul(q, module.wq[i])
        kh = matmul(kv, module.wk[i])
        vh = matmul(kv, module.wv[i])
        if qh.ndim == 2:
            logits = mul(matmul(qh, transpose(kh)), scale)
        else:
            logits = mul(matmul(qh, transpose(kh, (0, 2, 1))), scale)
        weights = masked_softmax(logits, mask.allow)
        heads.append(matmul(weights, vh))
    mha = matmul(concat(heads, axis=-1), module.wo)

    residual = kv_src if module.residual_source == "kv" else query_src
    x = residual + mha
    hidden = relu(affine(x, module.ffn_w1, module.ffn_b1))
    y = affine(hidden, module.ffn_w2, module.ffn_b2)
    return layer_norm(y, module.out_ln_gain, module.out_ln_bias)


def attention_weights(module, query_src, kv_src, mask):
    """Per-head attention matrices as plain arrays, for probes and tests."""
    q = layer_norm(query_src, module.q_ln_gain, module.q_ln_bias)
    kv = layer_norm(kv_src, module.kv_ln_gain, module.kv_ln_bias)
    scale = 1.0 / math.sqrt(module.d_h)
    out = []
    for i in range(module.n_heads):
        qh = matmul(q, module.wq[i])
        kh = matmul(kv, module.wk[i])
        if qh.ndim == 2:
            logits = mul(matmul(qh, transpose(kh)), scale)
        else:
            logits = mul(matmul(qh, transpose(kh, (0, 2, 1))), scale)
        out.append(masked_softmax(logits, mask.allow).data)
    return out


def sca_forward(module_lf, module_fl, l, f, mask):
    """Both attention directions over [b, t, 2, d] near/far feature stacks.

    Plane axis 2 holds (real, imag).  Direction l->f queries with the
    far-end features and attends over near-end keys/values; f->l is the
    mirror.  Each direction runs its real and imag planes through the same
    module instance.
    """
    if l.shape != f.shape:
        raise ValueError(f"near/far shape mismatch: {l.shape} vs {f.shape}")
    l_r, l_i = l[:, :, 0, :], l[:, :, 1, :]
    f_r, f_i = f[:, :, 0, :], f[:, :, 1, :]
    a_lf_r = cross_attend(module_lf, f_r, l_r, mask)
    a_lf_i = cross_attend(module_lf, f_i, l_i, mask)
    a_fl_r = cross_attend(module_fl, l_r, f_r, mask)
    a_fl_i = cross_attend(module_fl, l_i, f_i, mask)
    return ScaOutput(
        ca_r=concat([a_lf_r, a_fl_r], axis=-1),
        ca_i=concat([a_lf_i, a_fl_i], axis=-1),
    )
