"""Dense-tensor reverse-mode automatic differentiation, plus the Adam
optimizer and reduce-on-plateau scheduler used by the training loops.

Everything is float64: interaction estimates difference four forward passes
per sample and are cancellation-prone, so single precision is not enough.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g, shape):
    # Adjoint of numpy broadcasting: sum g back down to `shape`.
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _attach(out, bw):
    # Store the local-gradient closure only while recording; otherwise drop it
    # so inference does not pin the upstream graph in memory.
    if out._parents:
        out._backward = bw
    return out


class Value:
    """A float64 array with a gradient accumulator, forming a reverse-mode DAG.

    Operations record parent references and local-gradient closures when grad
    recording is on; `backward()` walks the DAG once in reverse topological
    order, accumulating (never overwriting) into `.grad`.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents if _grad_enabled else ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(shape={self.data.shape})"

    # -- graph plumbing ---------------------------------------------------

    def _toposort(self):
        order, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order  # parents before children

    def backward(self):
        """Seed d(self)/d(self)=1 and accumulate gradients through the DAG."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = self._toposort()
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Value) else Value(x)

    def __add__(self, other):
        other = self._lift(other)
        out = Value(self.data + other.data, (self, other))

        def bw(g):
            self.grad += _unbroadcast(g, self.data.shape)
            other.grad += _unbroadcast(g, other.data.shape)

        return _attach(out, bw)

    __radd__ = __add__

    def __neg__(self):
        out = Value(-self.data, (self,))

        def bw(g):
            self.grad += -g

        return _attach(out, bw)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = Value(self.data * other.data, (self, other))

        def bw(g):
            self.grad += _unbroadcast(g * other.data, self.data.shape)
            other.grad += _unbroadcast(g * self.data, other.data.shape)

        return _attach(out, bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out = Value(self.data / other.data, (self, other))

        def bw(g):
            self.grad += _unbroadcast(g / other.data, self.data.shape)
            other.grad += _unbroadcast(-g * self.data / other.data**2, other.data.shape)

        return _attach(out, bw)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents supported")
        out = Value(self.data**p, (self,))

        def bw(g):
            self.grad += g * p * self.data ** (p - 1)

        return _attach(out, bw)

    def __matmul__(self, other):
        other = self._lift(other)
        out = Value(self.data @ other.data, (self, other))

        def bw(g):
            self.grad += g @ other.data.T
            other.grad += self.data.T @ g

        return _attach(out, bw)

    def __rmatmul__(self, other):
        return self._lift(other) @ self

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        out = Value(self.data.reshape(*shape), (self,))

        def bw(g):
            self.grad += g.reshape(self.data.shape)

        return _attach(out, bw)

    @property
    def T(self):
        out = Value(self.data.T, (self,))

        def bw(g):
            self.grad += g.T

        return _attach(out, bw)

    def take(self, idx):
        """Gather rows along axis 0 (repeated indices accumulate on backward)."""
        idx = np.asarray(idx)
        out = Value(self.data[idx], (self,))

        def bw(g):
            np.add.at(self.grad, idx, g)

        return _attach(out, bw)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Value(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.grad += np.broadcast_to(g, self.data.shape)

        return _attach(out, bw)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / count

    def norm(self):
        """Euclidean norm of the flattened array (gradient 0 at the origin)."""
        n = float(np.linalg.norm(self.data))
        out = Value(n, (self,))

        def bw(g):
            if n > 0.0:
                self.grad += g * self.data / n

        return _attach(out, bw)

    # -- elementwise nonlinearities ------------------------------------------------

    def exp(self):
        e = np.exp(self.data)
        out = Value(e, (self,))

        def bw(g):
            self.grad += g * e

        return _attach(out, bw)

    def log(self):
        out = Value(np.log(self.data), (self,))

        def bw(g):
            self.grad += g / self.data

        return _attach(out, bw)

    def sqrt(self):
        r = np.sqrt(self.data)
        out = Value(r, (self,))

        def bw(g):
            self.grad += g * 0.5 / r

        return _attach(out, bw)

    def relu(self):
        out = Value(np.maximum(self.data, 0.0), (self,))

        def bw(g):
            self.grad += g * (self.data > 0)

        return _attach(out, bw)

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = Value(s, (self,))

        def bw(g):
            self.grad += g * s * (1 - s)

        return _attach(out, bw)

    def silu(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = Value(self.data * s, (self,))

        def bw(g):
            self.grad += g * s * (1 + self.data * (1 - s))

        return _attach(out, bw)

    def tanh(self):
        t = np.tanh(self.data)
        out = Value(t, (self,))

        def bw(g):
            self.grad += g * (1 - t * t)

        return _attach(out, bw)


def concat(values, axis=0):
    """Concatenate Values along an axis; backward splits the gradient back."""
    values = [Value._lift(v) for v in values]
    out = Value(np.concatenate([v.data for v in values], axis=axis), tuple(values))
    sizes = [v.data.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for v, a, b in zip(values, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(a, b)
            v.grad += g[tuple(sl)]

    return _attach(out, bw)


def scatter_sum(values, index, n_rows):
    """Sum rows of `values` into `n_rows` buckets given by `index` (axis 0)."""
    values = Value._lift(values)
    index = np.asarray(index)
    out_data = np.zeros((n_rows,) + values.data.shape[1:])
    np.add.at(out_data, index, values.data)
    out = Value(out_data, (values,))

    def bw(g):
        values.grad += g[index]

    return _attach(out, bw)


def softmax(x, axis=-1):
    # the max-shift is a detached constant, which keeps exp stable and is
    # gradient-neutral
    z = x + (-x.data.max(axis=axis, keepdims=True))
    e = z.exp()
    return e / e.sum(axis=axis, keepdims=True)


def grad(output, params):
    """d(output)/d(p) for each p in params; a scalar output is required.

    Parameters not reachable from `output` get zero arrays of their shape.
    """
    if not isinstance(output, Value) or output.data.size != 1:
        raise ValueError("output must be a scalar Value")
    for p in params:
        p.grad = None  # clear stale accumulators from earlier passes
    output.backward()
    return [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        for p in params
    ]


class Adam:
    """Adam with bias correction; holds per-parameter moments and step count."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not align with parameters")
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class PlateauScheduler:
    """Multiply lr by `factor` after `patience` consecutive non-improving epochs.

    Improvement means a strictly lower metric; lr never drops below min_lr.
    """

    def __init__(self, lr, factor=0.6, patience=10, min_lr=5e-6):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best_metric = None
        self.wait = 0

    def step(self, val_metric):
        val_metric = float(val_metric)
        if math.isnan(val_metric):
            raise ValueError("NaN validation metric")
        if self.best_metric is None or val_metric < self.best_metric:
            self.best_metric = val_metric
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.lr
