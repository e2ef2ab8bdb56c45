"""Finite-difference gradient verification.

Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|) where a is
the taped gradient and n a central difference.  ``grad_check`` probes every
coordinate of a single input; ``grad_check_params`` probes a sampled subset
of each parameter so whole models stay affordable.
"""

import numpy as np

from .tensor import Graph, Tensor, backward


def grad_check(f, x, h=1e-5):
    """Max relative error of d f / d x over all coordinates of ``x``.

    ``f`` maps one Tensor to a scalar Tensor and must not depend on global
    state that the probe evaluations would disturb.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    with Graph() as g:
        y = f(leaf)
    backward(y, g)
    analytic = np.zeros_like(base) if leaf.grad is None else leaf.grad

    flat = base.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(base)).item()
        flat[i] = orig - h
        fm = f(Tensor(base)).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * h)

    a = analytic.reshape(-1)
    denom = np.maximum(1e-8, np.abs(a) + np.abs(numeric))
    return float(np.max(np.abs(a - numeric) / denom))


def grad_check_params(loss_fn, params, rng=None, coords_per_param=None, h=1e-5):
    """Max relative error of d loss / d p over (a sample of) each parameter.

    ``loss_fn()`` recomputes the scalar loss from the live parameter tensors,
    so in-place perturbation of ``p.tensor.data`` probes the true pipeline.
    ``coords_per_param`` of None checks every coordinate.
    """
    for p in params:
        p.tensor.grad = None
    with Graph() as g:
        loss = loss_fn()
    backward(loss, g)

    worst = 0.0
    for p in params:
        t = p.tensor
        analytic = (np.zeros_like(t.data) if t.grad is None else t.grad).reshape(-1)
        flat = t.data.reshape(-1)
        if coords_per_param is None or coords_per_param >= flat.size:
            coords = range(flat.size)
        else:
            coords = rng.choice(flat.size, size=coords_per_param, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            n = (fp - fm) / (2.0 * h)
            a = analytic[i]
            rel = abs(a - n) / max(1e-8, abs(a) + abs(n))
            if rel > worst:
                worst = rel
    return worst
