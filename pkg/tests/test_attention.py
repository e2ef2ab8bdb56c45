"""Cross-attention directions, masking, and the streaming causality contract."""

import math

import numpy as np
import pytest

from sca_aec.attention import (CrossAttentionModule, attention_weights,
                               build_streaming_mask, cross_attend,
                               sca_forward)
from sca_aec.gradcheck import grad_check
from sca_aec.tensor import Tensor, tsum


def ln_oracle(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def attend_oracle(mod, q_src, kv_src, allow):
    """cross_attend recomputed with explicit per-head, per-frame loops."""
    t = q_src.shape[0]
    q_in = ln_oracle(q_src, mod.q_ln_gain.data, mod.q_ln_bias.data)
    kv_in = ln_oracle(kv_src, mod.kv_ln_gain.data, mod.kv_ln_bias.data)
    heads = []
    for h in range(mod.n_heads):
        q = q_in @ mod.wq[h].data
        k = kv_in @ mod.wk[h].data
        v = kv_in @ mod.wv[h].data
        out_h = np.zeros((t, mod.d_h))
        for i in range(t):
            logits = np.full(t, -np.inf)
            for j in range(t):
                if allow[i, j]:
                    logits[j] = q[i] @ k[j] / math.sqrt(mod.d_h)
            w = np.exp(logits - logits[allow[i]].max())
            w[~allow[i]] = 0.0
            w /= w.sum()
            for j in range(t):
                out_h[i] += w[j] * v[j]
        heads.append(out_h)
    mha = np.concatenate(heads, axis=-1) @ mod.wo.data
    resid = (kv_src if mod.residual_source == "kv" else q_src) + mha
    ffn = np.maximum(resid @ mod.ffn_w1.data + mod.ffn_b1.data, 0.0)
    ffn = ffn @ mod.ffn_w2.data + mod.ffn_b2.data
    return ln_oracle(ffn, mod.out_ln_gain.data, mod.out_ln_bias.data)


# ----------------------------------------------------------------- masks

def test_mask_lower_triangular_at_zero_lookahead():
    m = build_streaming_mask(3, 0)
    assert np.array_equal(m.allow, np.array([[1, 0, 0],
                                             [1, 1, 0],
                                             [1, 1, 1]], dtype=bool))


def test_mask_one_frame_lookahead():
    m = build_streaming_mask(3, 1)
    assert np.array_equal(m.allow, np.array([[1, 1, 0],
                                             [1, 1, 1],
                                             [1, 1, 1]], dtype=bool))


def test_mask_unlimited_allows_everything():
    for look in (None, math.inf):
        m = build_streaming_mask(2, look)
        assert m.allow.all()


def test_mask_needs_at_least_one_frame():
    with pytest.raises(ValueError):
        build_streaming_mask(0, 0)


# ---------------------------------------------------------- cross_attend

def test_single_frame_ignores_mask():
    rng = np.random.default_rng(0)
    mod = CrossAttentionModule(8, 2, rng)
    q = Tensor(rng.standard_normal((1, 8)))
    kv = Tensor(rng.standard_normal((1, 8)))
    masked = cross_attend(mod, q, kv, build_streaming_mask(1, 0))
    free = cross_attend(mod, q, kv, build_streaming_mask(1, None))
    assert np.array_equal(masked.data, free.data)


def test_zero_lookahead_first_frame_ignores_the_future():
    rng = np.random.default_rng(1)
    mod = CrossAttentionModule(8, 2, rng)
    mask = build_streaming_mask(4, 0)
    q = rng.standard_normal((4, 8))
    kv = rng.standard_normal((4, 8))
    base = cross_attend(mod, Tensor(q), Tensor(kv), mask).data
    q2, kv2 = q.copy(), kv.copy()
    q2[1:] += rng.standard_normal((3, 8))
    kv2[1:] += rng.standard_normal((3, 8))
    moved = cross_attend(mod, Tensor(q2), Tensor(kv2), mask).data
    assert np.array_equal(base[0], moved[0])


def test_cross_attend_matches_loop_oracle():
    rng = np.random.default_rng(2)
    mod = CrossAttentionModule(8, 2, rng)
    for look in (0, 1, None):
        mask = build_streaming_mask(5, look)
        q = rng.standard_normal((5, 8))
        kv = rng.standard_normal((5, 8))
        got = cross_attend(mod, Tensor(q), Tensor(kv), mask).data
        ref = attend_oracle(mod, q, kv, mask.allow)
        assert np.max(np.abs(got - ref)) < 1e-12


def test_query_residual_variant_matches_oracle():
    rng = np.random.default_rng(3)
    mod = CrossAttentionModule(8, 2, rng, residual_source="query")
    mask = build_streaming_mask(4, 0)
    q = rng.standard_normal((4, 8))
    kv = rng.standard_normal((4, 8))
    got = cross_attend(mod, Tensor(q), Tensor(kv), mask).data
    ref = attend_oracle(mod, q, kv, mask.allow)
    assert np.max(np.abs(got - ref)) < 1e-12


def test_attention_rows_are_probabilities():
    rng = np.random.default_rng(4)
    mod = CrossAttentionModule(8, 4, rng)
    mask = build_streaming_mask(6, 0)
    q = Tensor(rng.standard_normal((6, 8)))
    kv = Tensor(rng.standard_normal((6, 8)))
    w = np.stack(attention_weights(mod, q, kv, mask))
    assert w.shape == (4, 6, 6)
    assert np.all(w >= 0.0)
    assert np.all(np.abs(w.sum(axis=-1) - 1.0) < 1e-12)
    assert np.all(w[:, ~mask.allow] == 0.0)


def test_cross_attend_gradient():
    rng = np.random.default_rng(5)
    mod = CrossAttentionModule(8, 2, rng)
    mask = build_streaming_mask(6, 0)
    kv = Tensor(rng.standard_normal((6, 8)))
    w = rng.standard_normal((6, 8))

    def f(x):
        return tsum(cross_attend(mod, x, kv, mask) * w)

    assert grad_check(f, rng.standard_normal((6, 8))) < 1e-4


# ------------------------------------------------------------ sca_forward

def _planes(rng, b, t, d):
    return Tensor(rng.standard_normal((b, t, 2, d)))


def test_sca_weight_sharing_across_planes():
    rng = np.random.default_rng(6)
    lf = CrossAttentionModule(8, 2, rng)
    fl = CrossAttentionModule(8, 2, rng)
    l = rng.standard_normal((1, 4, 1, 8))
    f = rng.standard_normal((1, 4, 1, 8))
    l2 = Tensor(np.concatenate([l, l], axis=2))   # real == imag
    f2 = Tensor(np.concatenate([f, f], axis=2))
    out = sca_forward(lf, fl, l2, f2, build_streaming_mask(4, 0))
    assert np.array_equal(out.ca_r.data, out.ca_i.data)


def test_sca_direction_packing():
    rng = np.random.default_rng(7)
    lf = CrossAttentionModule(8, 2, rng)
    fl = CrossAttentionModule(8, 2, rng)
    l = _planes(rng, 1, 5, 8)
    f = _planes(rng, 1, 5, 8)
    mask = build_streaming_mask(5, 0)
    out = sca_forward(lf, fl, l, f, mask)
    assert out.ca_r.shape == (1, 5, 16)
    # a_{l,f}: query = far, kv = near; packed first
    a_lf_r = cross_attend(lf, Tensor(f.data[0, :, 0]),
                          Tensor(l.data[0, :, 0]), mask)
    assert np.max(np.abs(out.ca_r.data[0, :, :8] - a_lf_r.data)) < 1e-12


def test_sca_mask_saturation_is_bit_exact():
    rng = np.random.default_rng(8)
    lf = CrossAttentionModule(8, 2, rng)
    fl = CrossAttentionModule(8, 2, rng)
    l = _planes(rng, 1, 4, 8)
    f = _planes(rng, 1, 4, 8)
    a = sca_forward(lf, fl, l, f, build_streaming_mask(4, None))
    b = sca_forward(lf, fl, l, f, build_streaming_mask(4, 4 + 10))
    assert np.array_equal(a.ca_r.data, b.ca_r.data)
    assert np.array_equal(a.ca_i.data, b.ca_i.data)


def test_sca_mutating_one_module_leaves_other_direction_alone():
    rng = np.random.default_rng(9)
    lf = CrossAttentionModule(8, 2, rng)
    fl = CrossAttentionModule(8, 2, rng)
    l = _planes(rng, 1, 4, 8)
    f = _planes(rng, 1, 4, 8)
    mask = build_streaming_mask(4, 0)
    before = sca_forward(lf, fl, l, f, mask)
    lf.wo.data[:] += 0.1
    after = sca_forward(lf, fl, l, f, mask)
    assert not np.array_equal(before.ca_r.data[..., :8],
                              after.ca_r.data[..., :8])
    assert np.array_equal(before.ca_r.data[..., 8:], after.ca_r.data[..., 8:])


def test_sca_forward_gradient_through_everything():
    rng = np.random.default_rng(10)
    lf = CrossAttentionModule(8, 2, rng)
    fl = CrossAttentionModule(8, 2, rng)
    mask = build_streaming_mask(6, 0)
    f_src = Tensor(rng.standard_normal((1, 6, 2, 8)))
    wr = rng.standard_normal((1, 6, 16))
    wi = rng.standard_normal((1, 6, 16))

    def f(x):
        out = sca_forward(lf, fl, x, f_src, mask)
        return tsum(out.ca_r * wr) + tsum(out.ca_i * wi)

    assert grad_check(f, rng.standard_normal((1, 6, 2, 8))) < 1e-4


def test_causality_is_bit_exact_over_random_trials():
    # 50 randomized perturb-and-compare trials; masked weights are exact
    # zeros so prefixes never move
    rng = np.random.default_rng(11)
    mod_lf = CrossAttentionModule(8, 2, rng)
    mod_fl = CrossAttentionModule(8, 2, rng)
    for _ in range(50):
        t = int(rng.integers(2, 7))
        tau = int(rng.integers(0, t - 1))
        mask = build_streaming_mask(t, 0)
        l = rng.standard_normal((1, t, 2, 8))
        f = rng.standard_normal((1, t, 2, 8))
        base = sca_forward(mod_lf, mod_fl, Tensor(l), Tensor(f), mask)
        l2, f2 = l.copy(), f.copy()
        l2[:, tau + 1:] = rng.standard_normal(l2[:, tau + 1:].shape)
        f2[:, tau + 1:] = rng.standard_normal(f2[:, tau + 1:].shape)
        moved = sca_forward(mod_lf, mod_fl, Tensor(l2), Tensor(f2), mask)
        assert np.array_equal(base.ca_r.data[:, :tau + 1],
                              moved.ca_r.data[:, :tau + 1])
        assert np.array_equal(base.ca_i.data[:, :tau + 1],
                              moved.ca_i.data[:, :tau + 1])
