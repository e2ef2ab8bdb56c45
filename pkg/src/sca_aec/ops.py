"""Network building blocks: fused differentiable ops over the hot kernels.

Everything here takes and returns ``Tensor`` and registers a hand-derived
backward rule on the active graph.  Convolution geometry is fixed to the
2x2 kernel / time stride 1 / feature stride 2 layout implemented in
``kernels``; the time axis is causal (one implicit left pad frame).
"""

import numpy as np

from . import kernels
from .tensor import Tensor, _unbroadcast, as_tensor, record_op

_epsilon_default = 1e-5


def masked_softmax(logits, mask):
    """Row softmax over the last axis restricted to ``mask``.

    ``mask`` is a boolean ndarray broadcastable to ``logits``; disallowed
    cells come out exactly 0.  A row with no allowed cell is an error, not
    a NaN factory.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        mask = np.broadcast_to(mask, logits.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("empty attention row: mask disallows every key")

    x = logits.data
    neg = np.where(mask, x, -np.inf)
    m = neg.max(axis=-1, keepdims=True)  # finite: every row has an allowed cell
    e = np.exp(neg - m)                  # exp(-inf) is an exact 0.0
    s = e.sum(axis=-1, keepdims=True)
    out = Tensor(e / s)

    def bwd(go):
        dot = (go * out.data).sum(axis=-1, keepdims=True)
        return (out.data * (go - dot),)

    return record_op(out, (logits,), bwd)


def layer_norm(x, gain, bias, eps=_epsilon_default):
    """Normalize over the last axis (population variance), then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm over an empty last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    out = Tensor(xhat * gain.data + bias.data)

    def bwd(go):
        lead = tuple(range(go.ndim - 1))
        ggain = (go * xhat).sum(axis=lead)
        gbias = go.sum(axis=lead)
        gxhat = go * gain.data
        # standard layer-norm input gradient, derived from xhat = xc*ivar
        gx = ivar * (gxhat
                     - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return record_op(out, (x, gain, bias), bwd)


def affine(x, weight, bias):
    """x @ weight + bias with weight laid out [d_in, d_out]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    out = Tensor(x.data @ weight.data + bias.data)

    def bwd(go):
        lead = tuple(range(go.ndim - 1))
        gx = go @ weight.data.T
        flat_x = x.data.reshape(-1, x.shape[-1])
        flat_go = go.reshape(-1, go.shape[-1])
        gw = flat_x.T @ flat_go
        gb = go.sum(axis=lead)
        return gx, gw, gb

    return record_op(out, (x, weight, bias), bwd)


def glu(x):
    """Gated linear unit over the channel axis of [b, 2c, t, f]."""
    x = as_tensor(x)
    c2 = x.shape[1]
    if c2 % 2 != 0:
        raise ValueError(f"glu needs an even channel count, got {c2}")
    c = c2 // 2
    a = x.data[:, :c]
    g = x.data[:, c:]
    sig = 0.5 * (np.tanh(0.5 * g) + 1.0)
    out = Tensor(a * sig)

    def bwd(go):
        gx = np.empty_like(x.data)
        gx[:, :c] = go * sig
        gx[:, c:] = go * a * sig * (1.0 - sig)
        return (gx,)

    return record_op(out, (x,), bwd)


def _check_conv_args(x, kernel):
    if x.ndim != 4:
        raise ValueError(f"conv expects [b, c, t, f] input, got ndim {x.ndim}")
    if kernel.ndim != 4 or kernel.shape[2:] != (2, 2):
        raise ValueError(f"kernel must be [c_out, c_in, 2, 2], got {kernel.shape}")


def causal_conv2d(x, kernel, bias=None):
    """2x2 conv, stride (1, 2), one zero frame of left context in time.

    x: [b, c_in, t, f] -> [b, c_out, t, f // 2].
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_conv_args(x, kernel)
    b, ci, t, f = x.shape
    if kernel.shape[1] != ci:
        raise ValueError(f"kernel expects {kernel.shape[1]} input channels, got {ci}")
    if f < 2:
        raise ValueError("conv needs at least 2 feature bins")
    xp = np.zeros((b, ci, t + 1, f), dtype=x.dtype)
    xp[:, :, 1:, :] = x.data
    bias_t = as_tensor(bias) if bias is not None else None
    bias_arr = bias_t.data if bias_t is not None else np.zeros(kernel.shape[0], dtype=x.dtype)
    out = Tensor(kernels.conv2d_fwd(xp, kernel.data, bias_arr))

    def bwd(go):
        go = np.ascontiguousarray(go)
        gxp = kernels.conv2d_gx(go, kernel.data, f)
        gk = kernels.conv2d_gk(xp, go)
        grads = [gxp[:, :, 1:, :], gk]
        if bias_t is not None:
            grads.append(go.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (x, kernel) if bias_t is None else (x, kernel, bias_t)
    return record_op(out, inputs, bwd)


def conv_transpose2d(y, kernel, bias=None):
    """Exact adjoint of ``causal_conv2d`` (same kernel layout).

    y: [b, c_out, t, f'] -> [b, c_in, t, 2f']; output frame tau gathers from
    y frames tau-1 and tau, so the operator is anti-causal in time exactly
    as the adjoint demands.  Satisfies <conv(x,k), y> == <x, convt(y,k)>.
    """
    y, kernel = as_tensor(y), as_tensor(kernel)
    _check_conv_args(y, kernel)
    if kernel.shape[0] != y.shape[1]:
        raise ValueError(f"kernel expects {kernel.shape[0]} output channels, got {y.shape[1]}")
    b, co, t, fp = y.shape
    f = 2 * fp
    yc = np.ascontiguousarray(y.data)
    gxp = kernels.conv2d_gx(yc, kernel.data, f)
    bias_t = as_tensor(bias) if bias is not None else None
    z = gxp[:, :, 1:, :]
    if bias_t is not None:
        z = z + bias_t.data[None, :, None, None]
    out = Tensor(z)

    def bwd(go):
        xp = np.zeros((b, kernel.shape[1], t + 1, f), dtype=go.dtype)
        xp[:, :, 1:, :] = go
        gy = kernels.conv2d_fwd(xp, kernel.data, np.zeros(co, dtype=go.dtype))
        gk = kernels.conv2d_gk(xp, yc)
        grads = [gy, gk]
        if bias_t is not None:
            grads.append(go.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (y, kernel) if bias_t is None else (y, kernel, bias_t)
    return record_op(out, inputs, bwd)


def conv_transpose2d_causal(y, kernel, bias=None):
    """Causal decoder transposed conv: adjoint shifted one frame later.

    Output frame tau gathers from y frames tau and tau+1 in the pure
    adjoint; shifting by one frame makes it read tau-1 and tau instead, so
    streaming never touches future frames.  y: [b, c_out, t, f'] ->
    [b, c_in, t, 2f'].
    """
    y, kernel = as_tensor(y), as_tensor(kernel)
    _check_conv_args(y, kernel)
    if kernel.shape[0] != y.shape[1]:
        raise ValueError(f"kernel expects {kernel.shape[0]} output channels, got {y.shape[1]}")
    b, co, t, fp = y.shape
    f = 2 * fp
    yc = np.ascontiguousarray(y.data)
    gxp = kernels.conv2d_gx(yc, kernel.data, f)
    bias_t = as_tensor(bias) if bias is not None else None
    z = gxp[:, :, :t, :]
    if bias_t is not None:
        z = z + bias_t.data[None, :, None, None]
    out = Tensor(z)

    def bwd(go):
        xp = np.zeros((b, kernel.shape[1], t + 1, f), dtype=go.dtype)
        xp[:, :, :t, :] = go
        gy = kernels.conv2d_fwd(xp, kernel.data, np.zeros(co, dtype=go.dtype))
        gk = kernels.conv2d_gk(xp, yc)
        grads = [gy, gk]
        if bias_t is not None:
            grads.append(go.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (y, kernel) if bias_t is None else (y, kernel, bias_t)
    return record_op(out, inputs, bwd)


def batch_norm(x, gain, bias, running_mean, running_var, training,
               momentum=0.9, eps=_epsilon_default):
    """Channel batch-norm over [b, c, t, f].

    In training mode normalizes by batch statistics (population variance)
    and updates the running buffers in place:
    running = momentum * running + (1 - momentum) * batch.  In frozen mode
    the running buffers normalize and nothing is updated.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes)
        xc = x.data - mu[None, :, None, None]
        var = (xc * xc).mean(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean
        var = running_var
        xc = x.data - mu[None, :, None, None]
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar[None, :, None, None]
    out = Tensor(xhat * gain.data[None, :, None, None]
                 + bias.data[None, :, None, None])

    def bwd(go):
        ggain = (go * xhat).sum(axis=axes)
        gbias = go.sum(axis=axes)
        gxhat = go * gain.data[None, :, None, None]
        if training:
            iv = ivar[None, :, None, None]
            m1 = gxhat.mean(axis=axes)[None, :, None, None]
            m2 = (gxhat * xhat).mean(axis=axes)[None, :, None, None]
            gx = iv * (gxhat - m1 - xhat * m2)
        else:
            gx = gxhat * ivar[None, :, None, None]
        return gx, ggain, gbias

    return record_op(out, (x, gain, bias), bwd)


def lstm_seq(x, wx, wh, bias, h0=None, c0=None):
    """Unidirectional LSTM over [b, t, d_in] -> [b, t, hidden].

    Gate order inside the stacked weights is input, forget, cell, output.
    wx: [4h, d_in], wh: [4h, h], bias: [4h].  Returns (h_seq, (hT, cT))
    where the final state is plain arrays for streaming carry-over.
    """
    x, wx, wh, bias = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(bias)
    if x.ndim != 3:
        raise ValueError(f"lstm_seq expects [b, t, d], got ndim {x.ndim}")
    b, t, d = x.shape
    hidden = wh.shape[1]
    if wx.shape != (4 * hidden, d):
        raise ValueError(f"wx shape {wx.shape} inconsistent with input dim {d}")
    h0a = np.zeros((b, hidden), dtype=x.dtype) if h0 is None else np.asarray(h0)
    c0a = np.zeros((b, hidden), dtype=x.dtype) if c0 is None else np.asarray(c0)

    xt = np.ascontiguousarray(x.data.swapaxes(0, 1))  # [t, b, d]
    wxT = np.ascontiguousarray(wx.data.T)
    whT = np.ascontiguousarray(wh.data.T)
    h_seq, c_seq, gates, tanhc = kernels.lstm_fwd(xt, wxT, whT, bias.data, h0a, c0a)
    out = Tensor(h_seq.swapaxes(0, 1).copy())

    def bwd(go):
        gh_seq = np.ascontiguousarray(go.swapaxes(0, 1))
        gx, gwx, gwh, gbias, _gh0, _gc0 = kernels.lstm_bwd(
            xt, wx.data, wh.data, h_seq, c_seq, gates, tanhc, h0a, c0a, gh_seq)
        return gx.swapaxes(0, 1), gwx, gwh, gbias

    record_op(out, (x, wx, wh, bias), bwd)
    return out, (h_seq[-1].copy(), c_seq[-1].copy())


def lstm_step(x_t, h, c, wx, wh, bias):
    """One LSTM step on plain arrays; bit-identical to one lstm_seq frame.

    x_t: [b, d], h/c: [b, hidden].  Inference-only (nothing is recorded).
    """
    x_t = np.asarray(x_t)
    xt = np.ascontiguousarray(x_t[None, :, :])
    wxT = np.ascontiguousarray(np.asarray(wx).T)
    whT = np.ascontiguousarray(np.asarray(wh).T)
    h_seq, c_seq, _, _ = kernels.lstm_fwd(xt, wxT, whT, np.asarray(bias),
                                          np.asarray(h), np.asarray(c))
    return h_seq[0], c_seq[0]


def bounded_complex_gate(raw_r, raw_i, bound):
    """Map raw (re, im) planes to a magnitude-bounded complex mask.

    With rho = |raw|, the mask is bound * tanh(rho) * raw / rho, which keeps
    the direction of raw and squashes the magnitude into [0, bound).  The
    rho -> 0 limit is 0 with a finite Jacobian, handled by a series branch.
    """
    raw_r, raw_i = as_tensor(raw_r), as_tensor(raw_i)
    r, i = raw_r.data, raw_i.data
    rho = np.hypot(r, i)
    small = rho < 1e-6
    safe = np.where(small, 1.0, rho)
    th = np.tanh(rho)
    # f = bound * tanh(rho) / rho, series 1 - rho^2/3 near zero
    f = bound * np.where(small, 1.0 - rho * rho / 3.0, th / safe)
    out_r = Tensor(f * r)
    out_i = Tensor(f * i)

    def make_bwd():
        # g = d(f)/d(rho) / rho = bound * (rho * sech^2 - tanh) / rho^3
        sech2 = 1.0 - th * th
        g = bound * np.where(small, -2.0 / 3.0,
                             (rho * sech2 - th) / (safe * safe * safe))
        return f, g

    f_saved, g_saved = make_bwd()

    def bwd_r(go):
        gr = go * (f_saved + r * r * g_saved)
        gi = go * (r * i * g_saved)
        return gr, gi

    def bwd_i(go):
        gr = go * (r * i * g_saved)
        gi = go * (f_saved + i * i * g_saved)
        return gr, gi

    record_op(out_r, (raw_r, raw_i), bwd_r)
    record_op(out_i, (raw_r, raw_i), bwd_i)
    return out_r, out_i


def complex_mul(ar, ai, br, bi):
    """(ar + j ai) * (br + j bi) as a pair of real tensors."""
    ar, ai, br, bi = as_tensor(ar), as_tensor(ai), as_tensor(br), as_tensor(bi)
    out_r = Tensor(ar.data * br.data - ai.data * bi.data)
    out_i = Tensor(ar.data * bi.data + ai.data * br.data)

    def bwd_r(go):
        return (_unbroadcast(go * br.data, ar.shape),
                _unbroadcast(-go * bi.data, ai.shape),
                _unbroadcast(go * ar.data, br.shape),
                _unbroadcast(-go * ai.data, bi.shape))

    def bwd_i(go):
        return (_unbroadcast(go * bi.data, ar.shape),
                _unbroadcast(go * br.data, ai.shape),
                _unbroadcast(go * ai.data, br.shape),
                _unbroadcast(go * ar.data, bi.shape))

    record_op(out_r, (ar, ai, br, bi), bwd_r)
    record_op(out_i, (ar, ai, br, bi), bwd_i)
    return out_r, out_i
