"""Adam training over a rendered dataset, with resumable checkpoints.

Shuffling is derived from (seed, epoch) rather than a carried rng, so a run
resumed from epoch k replays epochs k.. exactly as the uninterrupted run
would have; together with the saved optimizer state that makes resume
bit-exact.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment.dataset import load_clip_triple
from .checkpoint import load_checkpoint, optim_blobs_from, restore_model, save_model
from .dsp import SAMPLE_RATE, istft_t, stacked_stft_arrays
from .errors import DataError, NumericalError
from .loss import aec_loss
from .metrics import write_csv, write_jsonl
from .tensor import Graph, Tensor, backward, mul


class Adam:
    """Adam on named parameters, with global gradient-norm clipping first."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 clip_norm=5.0):
        self.params = list(named_params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def grad_norm(self):
        sq = 0.0
        for _, p in self.params:
            if p.grad is not None:
                sq += float(np.sum(p.grad * p.grad))
        return math.sqrt(sq)

    def step(self):
        """One update; returns the pre-clip gradient norm."""
        norm = self.grad_norm()
        if not math.isfinite(norm):
            raise NumericalError(f"gradient norm is {norm}")
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad * scale
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def state_blobs(self):
        blobs = {"t": np.array([float(self.t)])}
        for name, _ in self.params:
            blobs[f"m.{name}"] = self.m[name]
            blobs[f"v.{name}"] = self.v[name]
        return blobs

    def load_state_blobs(self, blobs):
        if not blobs:
            return
        self.t = int(blobs["t"][0])
        for name, _ in self.params:
            self.m[name][...] = blobs[f"m.{name}"]
            self.v[name][...] = blobs[f"v.{name}"]


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0

    def to_dict(self):
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr": self.lr, "betas": list(self.betas), "eps": self.eps,
                "clip_norm": self.clip_norm, "seed": self.seed}


def _row_length(row):
    return int(round(row["clip_seconds"] * SAMPLE_RATE))


def _batches(rows, batch_size, rng=None):
    """Index batches of equally long clips; shuffled when an rng is given."""
    groups = {}
    for i, row in enumerate(rows):
        groups.setdefault(_row_length(row), []).append(i)
    batches = []
    for key in sorted(groups):
        idx = np.array(groups[key])
        if rng is not None:
            rng.shuffle(idx)
        for k in range(0, len(idx), batch_size):
            batches.append(idx[k:k + batch_size])
    if rng is not None and len(batches) > 1:
        order = rng.permutation(len(batches))
        batches = [batches[j] for j in order]
    return batches


def _load_batch(dataset_dir, rows, idx):
    fars, mics, tgts = [], [], []
    for i in idx:
        far, mic, tgt = load_clip_triple(dataset_dir, rows[i])
        fars.append(far)
        mics.append(mic)
        tgts.append(tgt)
    lengths = {x.shape[0] for x in fars + mics + tgts}
    if len(lengths) != 1:
        raise DataError(f"batch mixes clip lengths {sorted(lengths)}")
    return np.stack(fars), np.stack(mics), np.stack(tgts)


def batch_loss(model, far, mic, target, weights=None, training=False):
    """Mean per-clip loss for one batch of waveforms [b, n]."""
    cfg = model.config.stft
    mic_r, mic_i = stacked_stft_arrays(mic, cfg)
    far_r, far_i = stacked_stft_arrays(far, cfg)
    _, _, e_r, e_i = model.forward_planes(
        Tensor(mic_r), Tensor(mic_i), Tensor(far_r), Tensor(far_i),
        training=training)
    est = istft_t(e_r, e_i, cfg)
    n = est.shape[-1]
    loss, terms = aec_loss(est, target[:, :n], weights, cfg)
    b = mic.shape[0]
    loss = mul(loss, 1.0 / b)
    terms = {k: v / b for k, v in terms.items()}
    return loss, terms


def dataset_loss(model, dataset_dir, rows, batch_size=8, weights=None):
    """Mean per-clip loss over ``rows`` with frozen normalization stats."""
    total = 0.0
    count = 0
    for idx in _batches(rows, batch_size):
        far, mic, tgt = _load_batch(dataset_dir, rows, idx)
        loss, _ = batch_loss(model, far, mic, tgt, weights, training=False)
        total += loss.item() * len(idx)
        count += len(idx)
    if count == 0:
        raise DataError("no rows to evaluate")
    return total / count


def _write_curve(out_dir, curve):
    rows = [{"epoch": c["epoch"], "train_loss": repr(c["train_loss"]),
             "val_loss": "" if c["val_loss"] is None else repr(c["val_loss"])}
            for c in curve]
    write_csv(out_dir / "loss_curve.csv", rows,
              fieldnames=["epoch", "train_loss", "val_loss"])


def _dump_diagnostics(out_dir, epoch, batch_index, idx, terms, opt):
    rows = [{"epoch": epoch, "batch": batch_index,
             "clip_rows": [int(i) for i in idx], "loss_terms": terms,
             "grad_norm": opt.grad_norm(),
             "param_norms": {name: float(np.linalg.norm(p.data))
                             for name, p in opt.params}}]
    write_jsonl(Path(out_dir) / "diagnostics.jsonl", rows)


def train_model(model, dataset_dir, rows, out_dir, cfg=None, val_rows=None,
                weights=None, resume=None, log=None):
    """Fit ``model`` on manifest ``rows``; returns the loss curve.

    Writes last.ckpt every epoch, best.ckpt on validation improvement
    (training loss stands in when there is no validation split), and
    loss_curve.csv.  ``resume`` takes a last.ckpt path.
    """
    cfg = cfg or TrainConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise DataError("empty training split")

    opt = Adam(model.named_parameters(), lr=cfg.lr, betas=cfg.betas,
               eps=cfg.eps, clip_norm=cfg.clip_norm)
    start_epoch = 0
    curve = []
    best = math.inf
    if resume is not None:
        _, blobs, extra = load_checkpoint(resume)
        restore_model(model, blobs)
        opt.load_state_blobs(optim_blobs_from(blobs))
        start_epoch = int(extra["epoch"])
        curve = list(extra.get("loss_curve", []))
        best = float(extra.get("best", math.inf))

    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 101, epoch])
        total = 0.0
        count = 0
        for bi, idx in enumerate(_batches(rows, cfg.batch_size, rng)):
            far, mic, tgt = _load_batch(dataset_dir, rows, idx)
            opt.zero_grad()
            with Graph() as g:
                loss, terms = batch_loss(model, far, mic, tgt, weights,
                                         training=True)
            if not np.isfinite(loss.data):
                _dump_diagnostics(out_dir, epoch, bi, idx, terms, opt)
                raise NumericalError(
                    f"loss became non-finite at epoch {epoch} batch {bi}; "
                    f"wrote {out_dir / 'diagnostics.jsonl'}")
            backward(loss, g)
            try:
                opt.step()
            except NumericalError:
                _dump_diagnostics(out_dir, epoch, bi, idx, terms, opt)
                raise
            total += loss.item() * len(idx)
            count += len(idx)

        train_loss = total / count
        val_loss = (dataset_loss(model, dataset_dir, val_rows,
                                 cfg.batch_size, weights)
                    if val_rows else None)
        curve.append({"epoch": epoch, "train_loss": train_loss,
                      "val_loss": val_loss})
        _write_curve(out_dir, curve)

        score = train_loss if val_loss is None else val_loss
        extra = {"epoch": epoch + 1, "loss_curve": curve, "best": min(best, score),
                 "train_config": cfg.to_dict()}
        save_model(out_dir / "last.ckpt", model, extra=extra,
                   optim_blobs=opt.state_blobs())
        if score < best:
            best = score
            save_model(out_dir / "best.ckpt", model, extra=extra,
                       optim_blobs=opt.state_blobs())
        if log is not None:
            msg = f"epoch {epoch}: train {train_loss:.6g}"
            if val_loss is not None:
                msg += f"  val {val_loss:.6g}"
            log(msg)
    return curve
