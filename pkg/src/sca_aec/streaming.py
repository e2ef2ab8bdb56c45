"""Chunked real-time inference engine.

Samples go in (any chunking, including one sample at a time), enhanced
samples come out once every frame they depend on has arrived.  The engine
advances frame by frame internally, so its output is bit-identical under
any input chunking; against offline batch inference it agrees to floating
round-off (the matmul shapes differ).

Per-stream state: the two analysis buffers, projected-feature and
key/value histories for attention (bounded by the config history window),
one input frame of left context per conv block, the LSTM carry, and the
synthesis overlap-add tail.
"""

import math
from collections import deque

import numpy as np

from .dsp import AudioClip, StreamingIstft, StreamingStft, istft, stft
from .errors import ConfigError, DataError
from .network import model_forward
from .ops import (batch_norm, bounded_complex_gate, causal_conv2d,
                  conv_transpose2d_causal, glu, layer_norm, lstm_step)
from .tensor import Tensor


def _as_samples(x):
    if isinstance(x, AudioClip):
        return x.samples
    return np.asarray(x, dtype=np.float64)


class _DirectionState:
    """Attention caches for one cross-attention direction.

    Rows are indexed by absolute frame; ``base`` is the absolute index of
    list element 0 (shared with the engine's pruning).  Keys and values
    are projected once per arriving frame, queries once per emitted frame.
    """

    def __init__(self, module, query_is_far):
        self.module = module
        self.query_is_far = query_is_far
        n = module.n_heads
        self.q_ln = ([], [])                       # per plane: [d] rows
        self.k = tuple([[] for _ in range(n)] for _ in range(2))
        self.v = tuple([[] for _ in range(n)] for _ in range(2))
        self.resid = ([], [])

    def ingest(self, near, far, residual_source):
        """Cache per-frame rows; ``near``/``far`` are (r_row, i_row) pairs."""
        m = self.module
        q_src = far if self.query_is_far else near
        kv_src = near if self.query_is_far else far
        for plane in (0, 1):
            q_row = Tensor(q_src[plane])
            kv_row = Tensor(kv_src[plane])
            self.q_ln[plane].append(
                layer_norm(q_row, m.q_ln_gain, m.q_ln_bias).data)
            kv_ln = layer_norm(kv_row, m.kv_ln_gain, m.kv_ln_bias).data
            for h in range(m.n_heads):
                self.k[plane][h].append(kv_ln @ m.wk[h].data)
                self.v[plane][h].append(kv_ln @ m.wv[h].data)
            self.resid[plane].append(
                kv_src[plane] if residual_source == "kv" else q_src[plane])

    def attend(self, plane, tau, lo, hi, base):
        """Attention output row for query frame tau over kv rows [lo, hi]."""
        m = self.module
        scale = 1.0 / math.sqrt(m.d_h)
        q_ln = self.q_ln[plane][tau - base]
        heads = []
        for h in range(m.n_heads):
            qh = q_ln @ m.wq[h].data
            keys = np.stack(self.k[plane][h][lo - base:hi + 1 - base])
            vals = np.stack(self.v[plane][h][lo - base:hi + 1 - base])
            logits = (keys @ qh) * scale
            peak = logits.max()
            e = np.exp(logits - peak)
            heads.append((e / e.sum()) @ vals)
        mha = np.concatenate(heads) @ m.wo.data
        x = self.resid[plane][tau - base] + mha
        hidden = np.maximum(x @ m.ffn_w1.data + m.ffn_b1.data, 0.0)
        y = hidden @ m.ffn_w2.data + m.ffn_b2.data
        return layer_norm(Tensor(y), m.out_ln_gain, m.out_ln_bias).data

    def prune(self, count):
        for plane in (0, 1):
            del self.q_ln[plane][:count]
            del self.resid[plane][:count]
            for h in range(self.module.n_heads):
                del self.k[plane][h][:count]
                del self.v[plane][h][:count]


class StreamingAec:
    """Sample-in/sample-out echo canceller around a trained model.

    ``push`` accepts equal-length mic/far chunks and returns whatever
    enhanced samples became final; ``flush`` drains the rest.  Emission
    lags the input by the analysis window plus ``lookahead`` frames.
    """

    def __init__(self, model, zero_mask=False):
        cfg = model.config
        if cfg.attention == "sca" and cfg.lookahead in (None, math.inf):
            raise ConfigError(
                "unlimited lookahead cannot stream; run offline inference")
        self.model = model
        self.zero_mask = zero_mask
        self.lookahead = 0 if cfg.attention == "none" else int(cfg.lookahead)
        self.history = cfg.history
        self._stft_mic = StreamingStft(cfg.stft)
        self._stft_far = StreamingStft(cfg.stft)
        self._istft = StreamingIstft(cfg.stft)
        self._mic_pending = deque()
        self._ca_pending = deque()      # attention == "none" only
        self._base = 0                  # absolute index of history row 0
        self._ingested = 0
        self._processed = 0
        self._flushed = False
        if cfg.attention == "sca":
            self._dirs = [_DirectionState(model.sca_lf, query_is_far=True),
                          _DirectionState(model.sca_fl, query_is_far=False)]
        else:
            self._dirs = []
        self._conv_prev = {}
        hidden = cfg.lstm_hidden_resolved
        self._lstm_h = np.zeros((1, hidden))
        self._lstm_c = np.zeros((1, hidden))

    # -- input side -----------------------------------------------------------

    def push(self, mic_chunk, far_chunk):
        if self._flushed:
            raise DataError("stream already flushed")
        mic_chunk = _as_samples(mic_chunk)
        far_chunk = _as_samples(far_chunk)
        if mic_chunk.shape != far_chunk.shape:
            raise DataError(
                f"mic/far chunks differ in length: {mic_chunk.shape} vs "
                f"{far_chunk.shape}")
        mic_r, mic_i = self._stft_mic.push(mic_chunk)
        far_r, far_i = self._stft_far.push(far_chunk)
        for k in range(mic_r.shape[0]):
            self._ingest_frame((mic_r[k], mic_i[k]), (far_r[k], far_i[k]))
        return self._drain(final=False)

    def flush(self):
        """Process frames still waiting on lookahead and drain synthesis.

        Their attention simply ends at the last real frame, exactly as the
        offline mask does at the clip edge.  Input samples too few to fill
        a final analysis window are discarded, as offline framing does.
        """
        if self._flushed:
            raise DataError("stream already flushed")
        out = self._drain(final=True)
        tail = self._istft.flush()
        self._flushed = True
        return np.concatenate([out, tail]) if tail.size else out

    def _ingest_frame(self, mic_rows, far_rows):
        model = self.model
        self._mic_pending.append(mic_rows)
        near = tuple(r @ model.proj_near.weight.data + model.proj_near.bias.data
                     for r in mic_rows)
        far = tuple(r @ model.proj_far.weight.data + model.proj_far.bias.data
                    for r in far_rows)
        if self._dirs:
            for d in self._dirs:
                d.ingest(near, far, model.config.residual_source)
        else:
            self._ca_pending.append(
                (np.concatenate([near[0], far[0]]),
                 np.concatenate([near[1], far[1]])))
        self._ingested += 1

    # -- frame pipeline -------------------------------------------------------

    def _drain(self, final):
        limit = self._ingested if final else self._ingested - self.lookahead
        chunks = []
        while self._processed < limit:
            tau = self._processed
            if self._dirs:
                hi = min(tau + self.lookahead, self._ingested - 1)
                lo = max(0, hi - self.history + 1)
                rows = [[d.attend(plane, tau, lo, hi, self._base)
                         for d in self._dirs] for plane in (0, 1)]
                ca_r = np.concatenate(rows[0])
                ca_i = np.concatenate(rows[1])
            else:
                ca_r, ca_i = self._ca_pending.popleft()
            chunks.append(self._frame_step(ca_r, ca_i))
            self._processed += 1
            self._maybe_prune()
        if not chunks:
            return np.empty(0)
        return np.concatenate(chunks)

    def _maybe_prune(self):
        keep_from = max(0, self._processed - self.history)
        count = keep_from - self._base
        if count < 256 or not self._dirs:
            return
        for d in self._dirs:
            d.prune(count)
        self._base = keep_from

    def _conv_step(self, key, blk, x, transposed):
        prev = self._conv_prev.get(key)
        xin = x if prev is None else np.concatenate([prev, x], axis=2)
        self._conv_prev[key] = x
        op = conv_transpose2d_causal if transposed else causal_conv2d
        y = op(Tensor(xin), blk.kernel, blk.bias).data
        if prev is not None:
            y = y[:, :, 1:, :]
        y = glu(Tensor(y)).data
        return batch_norm(Tensor(y), blk.bn_gain, blk.bn_bias,
                          blk.running_mean, blk.running_var, False).data

    def _frame_step(self, ca_r, ca_i):
        model = self.model
        d2 = ca_r.shape[0]
        x = np.empty((1, 2, 1, d2))
        x[0, 0, 0] = ca_r
        x[0, 1, 0] = ca_i
        skips = []
        for i, blk in enumerate(model.encoder):
            x = self._conv_step(("enc", i), blk, x, transposed=False)
            skips.append(x)
        _, c3, _, f3 = x.shape
        flat = x.transpose(0, 2, 1, 3).reshape(1, c3 * f3)
        self._lstm_h, self._lstm_c = lstm_step(
            flat, self._lstm_h, self._lstm_c,
            model.lstm_wx.data, model.lstm_wh.data, model.lstm_bias.data)
        y = self._lstm_h @ model.lstm_out_w.data + model.lstm_out_b.data
        x = np.concatenate([y.reshape(1, 1, c3, f3).transpose(0, 2, 1, 3),
                            skips[2]], axis=1)
        for i, blk in enumerate(model.decoder):
            x = self._conv_step(("dec", i), blk, x, transposed=True)
            if i < 2:
                x = np.concatenate([x, skips[1 - i]], axis=1)
        raw_r = x[0, 0, 0] @ model.out_proj_w.data + model.out_proj_b.data
        raw_i = x[0, 1, 0] @ model.out_proj_w.data + model.out_proj_b.data
        m_r, m_i = bounded_complex_gate(raw_r, raw_i, model.config.mask_bound)
        m_r, m_i = m_r.data, m_i.data
        if self.zero_mask:
            m_r = np.zeros_like(m_r)
            m_i = np.zeros_like(m_i)
        mic_r, mic_i = self._mic_pending.popleft()
        e_r = m_r * mic_r - m_i * mic_i
        e_i = m_r * mic_i + m_i * mic_r
        return self._istft.push_frame(e_r, e_i)


# ---------------------------------------------------------------------------
# whole-clip helpers
# ---------------------------------------------------------------------------

def enhance_offline(model, mic, far, zero_mask=False):
    """Batch inference; returns enhanced samples of length n_samples(t)."""
    cfg = model.config.stft
    mic = _as_samples(mic)
    far = _as_samples(far)
    if mic.shape != far.shape:
        raise DataError(f"mic/far length mismatch: {mic.shape} vs {far.shape}")
    spec_mic = stft(mic, cfg)
    spec_far = stft(far, cfg)
    _, enhanced = model_forward(model, spec_mic, spec_far)
    if zero_mask:
        return np.zeros(cfg.n_samples(spec_mic.n_frames))
    return istft(enhanced).samples


def enhance_streaming(model, mic, far, chunk=480, zero_mask=False):
    """Run the chunked engine over a whole clip; output matches
    ``enhance_offline`` length for equal-length inputs."""
    if chunk < 1:
        raise ConfigError(f"chunk must be >= 1 sample, got {chunk}")
    mic = _as_samples(mic)
    far = _as_samples(far)
    if mic.shape != far.shape:
        raise DataError(f"mic/far length mismatch: {mic.shape} vs {far.shape}")
    engine = StreamingAec(model, zero_mask=zero_mask)
    parts = []
    for start in range(0, mic.shape[0], chunk):
        parts.append(engine.push(mic[start:start + chunk],
                                 far[start:start + chunk]))
    parts.append(engine.flush())
    return np.concatenate(parts)
