"""Hot numeric kernels with paired numba and pure-numpy implementations.

Geometry conventions shared by all convolution kernels:

* activations are ``[batch, channel, time, feature]``
* kernels are ``[c_out, c_in, 2, 2]`` (time taps, feature taps)
* time is causal: the caller left-pads one frame, so ``xp`` has ``t + 1``
  frames and output frame ``tau`` reads padded frames ``tau`` and ``tau + 1``
  (original frames ``tau - 1`` and ``tau``)
* feature stride is 2, output feature extent ``f // 2``

``conv2d_gx`` is the exact adjoint of ``conv2d_fwd`` (into padded
coordinates); transposed convolutions and conv backward both reuse it.
"""

import math

import numpy as np

from .backend import USE_NUMBA, njit

_HALF_TAPS = 40  # windowed-sinc support of fractional-delay pulses: 81 taps


# ---------------------------------------------------------------------------
# causal 2x2 conv, stride 1x2
# ---------------------------------------------------------------------------

def _conv2d_fwd_numpy(xp, k, bias):
    b, ci, tp, f = xp.shape
    co = k.shape[0]
    t = tp - 1
    fp = f // 2
    y = np.empty((b, co, t, fp), dtype=xp.dtype)
    y[:] = bias[None, :, None, None]
    for u in range(2):
        for v in range(2):
            sl = xp[:, :, u:u + t, v:v + 2 * fp:2]
            y += np.einsum("bctf,oc->botf", sl, k[:, :, u, v], optimize=True)
    return y


@njit
def _conv2d_fwd_numba(xp, k, bias):
    b, ci, tp, f = xp.shape
    co = k.shape[0]
    t = tp - 1
    fp = f // 2
    y = np.empty((b, co, t, fp), dtype=xp.dtype)
    for ib in range(b):
        for io in range(co):
            for it in range(t):
                for jf in range(fp):
                    acc = bias[io]
                    for ic in range(ci):
                        acc += xp[ib, ic, it, 2 * jf] * k[io, ic, 0, 0]
                        acc += xp[ib, ic, it, 2 * jf + 1] * k[io, ic, 0, 1]
                        acc += xp[ib, ic, it + 1, 2 * jf] * k[io, ic, 1, 0]
                        acc += xp[ib, ic, it + 1, 2 * jf + 1] * k[io, ic, 1, 1]
                    y[ib, io, it, jf] = acc
    return y


def _conv2d_gx_numpy(gy, k, f):
    b, co, t, fp = gy.shape
    ci = k.shape[1]
    gxp = np.zeros((b, ci, t + 1, f), dtype=gy.dtype)
    for u in range(2):
        for v in range(2):
            contrib = np.einsum("botf,oc->bctf", gy, k[:, :, u, v], optimize=True)
            gxp[:, :, u:u + t, v:v + 2 * fp:2] += contrib
    return gxp


@njit
def _conv2d_gx_numba(gy, k, f):
    b, co, t, fp = gy.shape
    ci = k.shape[1]
    gxp = np.zeros((b, ci, t + 1, f), dtype=gy.dtype)
    for ib in range(b):
        for io in range(co):
            for it in range(t):
                for jf in range(fp):
                    g = gy[ib, io, it, jf]
                    for ic in range(ci):
                        gxp[ib, ic, it, 2 * jf] += g * k[io, ic, 0, 0]
                        gxp[ib, ic, it, 2 * jf + 1] += g * k[io, ic, 0, 1]
                        gxp[ib, ic, it + 1, 2 * jf] += g * k[io, ic, 1, 0]
                        gxp[ib, ic, it + 1, 2 * jf + 1] += g * k[io, ic, 1, 1]
    return gxp


def _conv2d_gk_numpy(xp, gy):
    b, co, t, fp = gy.shape
    ci = xp.shape[1]
    gk = np.empty((co, ci, 2, 2), dtype=gy.dtype)
    for u in range(2):
        for v in range(2):
            sl = xp[:, :, u:u + t, v:v + 2 * fp:2]
            gk[:, :, u, v] = np.einsum("botf,bctf->oc", gy, sl, optimize=True)
    return gk


@njit
def _conv2d_gk_numba(xp, gy):
    b, co, t, fp = gy.shape
    ci = xp.shape[1]
    gk = np.zeros((co, ci, 2, 2), dtype=gy.dtype)
    for ib in range(b):
        for io in range(co):
            for it in range(t):
                for jf in range(fp):
                    g = gy[ib, io, it, jf]
                    for ic in range(ci):
                        gk[io, ic, 0, 0] += g * xp[ib, ic, it, 2 * jf]
                        gk[io, ic, 0, 1] += g * xp[ib, ic, it, 2 * jf + 1]
                        gk[io, ic, 1, 0] += g * xp[ib, ic, it + 1, 2 * jf]
                        gk[io, ic, 1, 1] += g * xp[ib, ic, it + 1, 2 * jf + 1]
    return gk


# ---------------------------------------------------------------------------
# LSTM sequence forward/backward
# ---------------------------------------------------------------------------
# Inputs are time-major [t, b, .] so per-step slices stay contiguous.
# Gate layout along the last axis is [input, forget, cell, output].
# The caches hold post-activation gates and tanh(c) for the backward pass.

def _lstm_fwd_numpy(xt, wxT, whT, bias, h0, c0):
    t, b, _ = xt.shape
    hdim = h0.shape[1]
    h_seq = np.empty((t, b, hdim), dtype=xt.dtype)
    c_seq = np.empty((t, b, hdim), dtype=xt.dtype)
    gates = np.empty((t, b, 4 * hdim), dtype=xt.dtype)
    tanhc = np.empty((t, b, hdim), dtype=xt.dtype)
    h = h0
    c = c0
    for tau in range(t):
        a = np.dot(xt[tau], wxT) + np.dot(h, whT) + bias
        gi = 0.5 * (np.tanh(0.5 * a[:, :hdim]) + 1.0)
        gf = 0.5 * (np.tanh(0.5 * a[:, hdim:2 * hdim]) + 1.0)
        gg = np.tanh(a[:, 2 * hdim:3 * hdim])
        go = 0.5 * (np.tanh(0.5 * a[:, 3 * hdim:]) + 1.0)
        c = gf * c + gi * gg
        tc = np.tanh(c)
        h = go * tc
        gates[tau, :, :hdim] = gi
        gates[tau, :, hdim:2 * hdim] = gf
        gates[tau, :, 2 * hdim:3 * hdim] = gg
        gates[tau, :, 3 * hdim:] = go
        c_seq[tau] = c
        tanhc[tau] = tc
        h_seq[tau] = h
    return h_seq, c_seq, gates, tanhc


@njit
def _lstm_fwd_numba(xt, wxT, whT, bias, h0, c0):
    t, b, _ = xt.shape
    hdim = h0.shape[1]
    h_seq = np.empty((t, b, hdim), dtype=xt.dtype)
    c_seq = np.empty((t, b, hdim), dtype=xt.dtype)
    gates = np.empty((t, b, 4 * hdim), dtype=xt.dtype)
    tanhc = np.empty((t, b, hdim), dtype=xt.dtype)
    h = h0.copy()
    c = c0.copy()
    for tau in range(t):
        a = np.dot(xt[tau], wxT) + np.dot(h, whT)
        for ib in range(b):
            for j in range(hdim):
                gi = 0.5 * (math.tanh(0.5 * (a[ib, j] + bias[j])) + 1.0)
                gf = 0.5 * (math.tanh(0.5 * (a[ib, hdim + j] + bias[hdim + j])) + 1.0)
                gg = math.tanh(a[ib, 2 * hdim + j] + bias[2 * hdim + j])
                go = 0.5 * (math.tanh(0.5 * (a[ib, 3 * hdim + j] + bias[3 * hdim + j])) + 1.0)
                cv = gf * c[ib, j] + gi * gg
                tc = math.tanh(cv)
                c[ib, j] = cv
                h[ib, j] = go * tc
                gates[tau, ib, j] = gi
                gates[tau, ib, hdim + j] = gf
                gates[tau, ib, 2 * hdim + j] = gg
                gates[tau, ib, 3 * hdim + j] = go
                c_seq[tau, ib, j] = cv
                tanhc[tau, ib, j] = tc
        h_seq[tau] = h
    return h_seq, c_seq, gates, tanhc


def _lstm_bwd_numpy(xt, wx, wh, h_seq, c_seq, gates, tanhc, h0, c0, gh_seq):
    t, b, hdim = h_seq.shape
    gx = np.empty_like(xt)
    gwx = np.zeros_like(wx)
    gwh = np.zeros_like(wh)
    gbias = np.zeros(4 * hdim, dtype=xt.dtype)
    gh = np.zeros((b, hdim), dtype=xt.dtype)
    gc = np.zeros((b, hdim), dtype=xt.dtype)
    for tau in range(t - 1, -1, -1):
        gi = gates[tau, :, :hdim]
        gf = gates[tau, :, hdim:2 * hdim]
        gg = gates[tau, :, 2 * hdim:3 * hdim]
        go = gates[tau, :, 3 * hdim:]
        tc = tanhc[tau]
        c_prev = c_seq[tau - 1] if tau > 0 else c0
        h_prev = h_seq[tau - 1] if tau > 0 else h0
        ght = gh + gh_seq[tau]
        gct = gc + ght * go * (1.0 - tc * tc)
        ga = np.empty((b, 4 * hdim), dtype=xt.dtype)
        ga[:, :hdim] = gct * gg * gi * (1.0 - gi)
        ga[:, hdim:2 * hdim] = gct * c_prev * gf * (1.0 - gf)
        ga[:, 2 * hdim:3 * hdim] = gct * gi * (1.0 - gg * gg)
        ga[:, 3 * hdim:] = ght * tc * go * (1.0 - go)
        gx[tau] = np.dot(ga, wx)
        gh = np.dot(ga, wh)
        gc = gct * gf
        gwx += np.dot(ga.T, xt[tau])
        gwh += np.dot(ga.T, h_prev)
        gbias += ga.sum(axis=0)
    return gx, gwx, gwh, gbias, gh, gc


@njit
def _lstm_bwd_numba(xt, wx, wh, h_seq, c_seq, gates, tanhc, h0, c0, gh_seq):
    t, b, hdim = h_seq.shape
    gx = np.empty_like(xt)
    gwx = np.zeros_like(wx)
    gwh = np.zeros_like(wh)
    gbias = np.zeros(4 * hdim, dtype=xt.dtype)
    gh = np.zeros((b, hdim), dtype=xt.dtype)
    gc = np.zeros((b, hdim), dtype=xt.dtype)
    ga = np.empty((b, 4 * hdim), dtype=xt.dtype)
    for tau in range(t - 1, -1, -1):
        for ib in range(b):
            for j in range(hdim):
                gi = gates[tau, ib, j]
                gf = gates[tau, ib, hdim + j]
                gg = gates[tau, ib, 2 * hdim + j]
                go = gates[tau, ib, 3 * hdim + j]
                tc = tanhc[tau, ib, j]
                c_prev = c_seq[tau - 1, ib, j] if tau > 0 else c0[ib, j]
                ght = gh[ib, j] + gh_seq[tau, ib, j]
                gct = gc[ib, j] + ght * go * (1.0 - tc * tc)
                ga[ib, j] = gct * gg * gi * (1.0 - gi)
                ga[ib, hdim + j] = gct * c_prev * gf * (1.0 - gf)
                ga[ib, 2 * hdim + j] = gct * gi * (1.0 - gg * gg)
                ga[ib, 3 * hdim + j] = ght * tc * go * (1.0 - go)
                gc[ib, j] = gct * gf
        gx[tau] = np.dot(ga, wx)
        gh = np.dot(ga, wh)
        gaT = np.ascontiguousarray(ga.T)
        gwx += np.dot(gaT, xt[tau])
        if tau > 0:
            gwh += np.dot(gaT, h_seq[tau - 1])
        else:
            gwh += np.dot(gaT, h0)
        for ib in range(b):
            for j in range(4 * hdim):
                gbias[j] += ga[ib, j]
    return gx, gwx, gwh, gbias, gh, gc


# ---------------------------------------------------------------------------
# image-source pulse accumulation
# ---------------------------------------------------------------------------

def _rir_accumulate_numpy(h, centers, amps, fs, fc):
    n = h.shape[0]
    tw = (2 * _HALF_TAPS + 1) / fs
    offsets = np.arange(-_HALF_TAPS, _HALF_TAPS + 1)
    base = np.ceil(centers).astype(np.int64)
    idx = base[:, None] + offsets[None, :]
    tt = (idx - centers[:, None]) / fs
    win = 0.5 * (1.0 + np.cos(2.0 * np.pi * tt / tw))
    win[np.abs(tt) > tw / 2] = 0.0
    arg = 2.0 * fc * tt
    pulse = np.sinc(arg) * win * amps[:, None]
    valid = (idx >= 0) & (idx < n)
    np.add.at(h, idx[valid], pulse[valid])
    return h


@njit
def _rir_accumulate_numba(h, centers, amps, fs, fc):
    n = h.shape[0]
    tw = (2 * _HALF_TAPS + 1) / fs
    for m in range(centers.shape[0]):
        c = centers[m]
        a = amps[m]
        lo = int(math.ceil(c)) - _HALF_TAPS
        if lo < 0:
            lo = 0
        hi = int(math.ceil(c)) + _HALF_TAPS
        if hi > n - 1:
            hi = n - 1
        for idx in range(lo, hi + 1):
            t = (idx - c) / fs
            if abs(t) > tw / 2:
                continue
            win = 0.5 * (1.0 + math.cos(2.0 * math.pi * t / tw))
            arg = 2.0 * fc * t
            if arg == 0.0:
                s = 1.0
            else:
                s = math.sin(math.pi * arg) / (math.pi * arg)
            h[idx] += a * win * s
    return h


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

IMPLS = {
    "conv2d_fwd": (_conv2d_fwd_numba, _conv2d_fwd_numpy),
    "conv2d_gx": (_conv2d_gx_numba, _conv2d_gx_numpy),
    "conv2d_gk": (_conv2d_gk_numba, _conv2d_gk_numpy),
    "lstm_fwd": (_lstm_fwd_numba, _lstm_fwd_numpy),
    "lstm_bwd": (_lstm_bwd_numba, _lstm_bwd_numpy),
    "rir_accumulate": (_rir_accumulate_numba, _rir_accumulate_numpy),
}


def get_impl(name, backend):
    """Fetch one implementation by name, for benchmarks and parity tests."""
    nb, py = IMPLS[name]
    return nb if backend == "numba" else py


_sel = 0 if USE_NUMBA else 1
conv2d_fwd = IMPLS["conv2d_fwd"][_sel]
conv2d_gx = IMPLS["conv2d_gx"][_sel]
conv2d_gk = IMPLS["conv2d_gk"][_sel]
lstm_fwd = IMPLS["lstm_fwd"][_sel]
lstm_bwd = IMPLS["lstm_bwd"][_sel]
rir_accumulate = IMPLS["rir_accumulate"][_sel]


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    xp = np.zeros((1, 1, 3, 4))
    k = np.zeros((1, 1, 2, 2))
    y = conv2d_fwd(xp, k, np.zeros(1))
    conv2d_gx(y, k, 4)
    conv2d_gk(xp, y)
    xt = np.zeros((2, 1, 3))
    wx = np.zeros((8, 3))
    wh = np.zeros((8, 2))
    bias = np.zeros(8)
    h0 = np.zeros((1, 2))
    hs, cs, gates, tanhc = lstm_fwd(
        xt, np.ascontiguousarray(wx.T), np.ascontiguousarray(wh.T), bias, h0, h0
    )
    lstm_bwd(xt, wx, wh, hs, cs, gates, tanhc, h0, h0, np.zeros_like(hs))
    rir_accumulate(np.zeros(64), np.array([10.0]), np.array([1.0]), 48000.0, 21600.0)
