"""Dense real tensors with taped reverse-mode differentiation.

The network needs a small, fixed op set, so the substrate stays minimal:
float64 data (float32 allowed for inference), an explicit ``Graph`` tape that
records executed ops in order, and a ``backward`` that replays the tape in
exact reverse order.  Ops record themselves only while a graph is active and
an involved tensor participates in differentiation, so inference pays no
tape overhead.
"""

import threading
from dataclasses import dataclass

import numpy as np

from .errors import GraphError

_FLOAT_TYPES = (np.float32, np.float64)

_local = threading.local()


def _stack():
    if not hasattr(_local, "graphs"):
        _local.graphs = []
    return _local.graphs


def active_graph():
    """The innermost open Graph on this thread, or None."""
    s = _stack()
    return s[-1] if s else None


class Tensor:
    """N-dimensional real array, optionally participating in a grad tape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Parameter:
    """A named leaf tensor of a model."""

    name: str
    tensor: Tensor

    def __post_init__(self):
        self.tensor.requires_grad = True


class _Node:
    __slots__ = ("out", "inputs", "bwd")

    def __init__(self, out, inputs, bwd):
        self.out = out
        self.inputs = inputs
        self.bwd = bwd


class Graph:
    """Ordered tape of executed ops; consumed by exactly one backward pass."""

    def __init__(self):
        self.nodes = []
        self.consumed = False
        self._traced = set()

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self
        return False

    def record(self, out, inputs, bwd):
        self.nodes.append(_Node(out, inputs, bwd))
        self._traced.add(id(out))

    def wants(self, t):
        return t.requires_grad or id(t) in self._traced


def record_op(out, inputs, bwd):
    """Register ``out = op(inputs)`` on the active tape, if any wants grads.

    ``bwd(grad_out)`` must return one gradient array (or None) per input.
    """
    g = active_graph()
    if g is None:
        return out
    if any(g.wants(t) for t in inputs):
        g.record(out, inputs, bwd)
    return out


def backward(loss, graph):
    """Reverse sweep over ``graph``, accumulating grads of reachable leaves.

    The loss must be scalar and the graph not yet consumed.  Every
    ``requires_grad`` tensor reachable from the loss gets ``.grad`` populated
    (accumulated onto any existing value); unreachable grads are untouched.
    """
    if graph.consumed:
        raise GraphError("graph already consumed by a backward pass")
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph.consumed = True

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(graph.nodes):
        go = grads.pop(id(node.out), None)
        if go is None:
            continue
        in_grads = node.bwd(go)
        for t, g in zip(node.inputs, in_grads):
            if g is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if t.requires_grad:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Reduce a broadcasted gradient back to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def bwd(go):
        return _unbroadcast(go, a.shape), _unbroadcast(go, b.shape)

    return record_op(out, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def bwd(go):
        return _unbroadcast(go, a.shape), _unbroadcast(-go, b.shape)

    return record_op(out, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def bwd(go):
        return (_unbroadcast(go * b.data, a.shape),
                _unbroadcast(go * a.data, b.shape))

    return record_op(out, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def bwd(go):
        return (_unbroadcast(go / b.data, a.shape),
                _unbroadcast(-go * a.data / (b.data * b.data), b.shape))

    return record_op(out, (a, b), bwd)


def neg(a):
    a = as_tensor(a)
    out = Tensor(-a.data)
    return record_op(out, (a,), lambda go: (-go,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects tensors with ndim >= 2")
    out = Tensor(a.data @ b.data)

    def bwd(go):
        ga = go @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ go
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record_op(out, (a, b), bwd)


def getitem(a, idx):
    a = as_tensor(a)
    out = Tensor(a.data[idx])

    def bwd(go):
        g = np.zeros_like(a.data)
        g[idx] += go
        return (g,)

    return record_op(out, (a,), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return record_op(out, (a,), lambda go: (go.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    out = Tensor(np.transpose(a.data, axes))

    def bwd(go):
        if axes is None:
            return (np.transpose(go),)
        inv = np.argsort(axes)
        return (np.transpose(go, inv),)

    return record_op(out, (a,), bwd)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(go):
        return tuple(np.split(go, splits, axis=axis))

    return record_op(out, tuple(tensors), bwd)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(go):
        g = go
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy() if g.shape != a.shape
                else g,)

    return record_op(out, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for i in ax:
            n *= a.shape[i]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def exp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    return record_op(out, (a,), lambda go: (go * out.data,))


def sqrt(a):
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.data))
    return record_op(out, (a,), lambda go: (go * 0.5 / out.data,))


def tanh(a):
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))
    return record_op(out, (a,), lambda go: (go * (1.0 - out.data * out.data),))


def sigmoid(a):
    a = as_tensor(a)
    # tanh form avoids overflow for large negative inputs
    out = Tensor(0.5 * (np.tanh(0.5 * a.data) + 1.0))
    return record_op(out, (a,), lambda go: (go * out.data * (1.0 - out.data),))


def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    return record_op(out, (a,), lambda go: (go * (a.data > 0.0),))


def tabs(a):
    """Elementwise absolute value; sub-gradient 0 at the origin."""
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))
    return record_op(out, (a,), lambda go: (go * np.sign(a.data),))


def hypot(a, b):
    """sqrt(a^2 + b^2) with sub-gradient 0 at the origin."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(np.hypot(a.data, b.data))

    def bwd(go):
        safe = np.where(out.data > 0.0, out.data, 1.0)
        ga = go * np.where(out.data > 0.0, a.data / safe, 0.0)
        gb = go * np.where(out.data > 0.0, b.data / safe, 0.0)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record_op(out, (a, b), bwd)
