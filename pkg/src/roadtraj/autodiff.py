"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Just enough machinery for an attention LSTM encoder-decoder: 2-D tensors
(plus 0-d scalars from reductions), a fixed primitive set, and a tape
that is rebuilt on every forward pass. float32 is the working precision;
float64 is accepted so tests can run high-precision oracles through the
same code path.

Every primitive checks its output for NaN/Inf and raises NumericError,
so divergence surfaces at the op that produced it. Set
`autodiff.FINITE_CHECKS = False` to trade that diagnostic for speed.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import DataError, GraphError, NumericError

FINITE_CHECKS = True

CE_EPS = 1e-12

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr, op_name):
    if FINITE_CHECKS and not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op_name}")


class Tensor:
    """A numpy array plus the bookkeeping for one reverse pass."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise GraphError(f"item() needs a single value, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        """Run the reverse pass from this scalar; fills .grad on the tape."""
        if self._consumed:
            raise GraphError("backward already ran on this graph; rebuild the forward pass")
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar, got shape {self.data.shape}")
        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()
        self._consumed = True

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _ensure_grad(t):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


def _make(data, op_name, parents, backward):
    _check_finite(data, op_name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _binary_shapes_ok(a, b):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DataError(
            f"shape mismatch: {a.data.shape} vs {b.data.shape}"
        ) from None


def add(a, b):
    _binary_shapes_ok(a, b)
    data = a.data + b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    out = _make(data, "add", (a, b), backward)
    return out


def sub(a, b):
    _binary_shapes_ok(a, b)
    data = a.data - b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    out = _make(data, "sub", (a, b), backward)
    return out


def mul(a, b):
    _binary_shapes_ok(a, b)
    data = a.data * b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out = _make(data, "mul", (a, b), backward)
    return out


def scale(a, c):
    """Multiply by a python constant (no gradient for the constant)."""
    c = float(c)
    data = a.data * np.asarray(c, dtype=a.data.dtype)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * c)

    out = _make(data, "scale", (a,), backward)
    return out


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DataError(
            f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DataError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    out = _make(data, "matmul", (a, b), backward)
    return out


def concat(parts, axis=1):
    """Concatenate along the last (column) axis of 2-D tensors."""
    parts = list(parts)
    if axis != 1:
        raise DataError("concat supports the last axis of 2-D tensors only")
    for p in parts:
        if p.data.ndim != 2:
            raise DataError(f"concat expects 2-D tensors, got shape {p.data.shape}")
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1:
        raise DataError(f"concat row mismatch: {sorted(rows)}")
    data = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.data.shape[1] for p in parts]

    def backward():
        g = out.grad
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                _accumulate(p, g[:, offset : offset + w])
            offset += w

    out = _make(data, "concat", parts, backward)
    return out


def slice_cols(a, start, stop):
    if a.data.ndim != 2:
        raise DataError(f"slice_cols expects a 2-D tensor, got shape {a.data.shape}")
    data = a.data[:, start:stop].copy()

    def backward():
        if a.requires_grad:
            buf = _ensure_grad(a)
            buf[:, start:stop] += out.grad

    out = _make(data, "slice_cols", (a,), backward)
    return out


def row_lookup(table, indices):
    """Gather rows of an embedding table: (V, d) x (n,) -> (n, d)."""
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise DataError(f"row_lookup expects 1-D indices, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise DataError(
            f"row_lookup index out of range [0, {table.data.shape[0]}) "
            f"(got min {idx.min()}, max {idx.max()})"
        )
    data = table.data[idx]

    def backward():
        if table.requires_grad:
            buf = _ensure_grad(table)
            np.add.at(buf, idx, out.grad)

    out = _make(data, "row_lookup", (table,), backward)
    return out


def leaky_relu(a, slope=0.2):
    """max(x, slope * x); keeps attention scores sensitive to shared terms."""
    data = np.where(a.data > 0, a.data, a.data * np.asarray(slope, a.data.dtype))

    def backward():
        if a.requires_grad:
            factor = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
            _accumulate(a, out.grad * factor)

    out = _make(data, "leaky_relu", (a,), backward)
    return out


def tanh(a):
    data = np.tanh(a.data)

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * (1.0 - data * data))

    out = _make(data, "tanh", (a,), backward)
    return out


def sigmoid(a):
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * data * (1.0 - data))

    out = _make(data, "sigmoid", (a,), backward)
    return out


def softmax(a):
    """Row-wise softmax over the last axis; every output row sums to 1."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward():
        g = out.grad
        inner = (g * data).sum(axis=-1, keepdims=True)
        if a.requires_grad:
            _accumulate(a, (g - inner) * data)

    out = _make(data, "softmax", (a,), backward)
    return out


def dropout(a, p, train, rng=None):
    """Inverted dropout: zero entries with probability p, scale the rest.

    Identity when train is False or p == 0. The caller supplies the rng
    so training runs stay reproducible.
    """
    if not 0.0 <= p < 1.0:
        raise DataError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise DataError("dropout in training mode needs an rng")
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype)
    mask = keep / np.asarray(1.0 - p, dtype=a.data.dtype)
    data = a.data * mask

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad * mask)

    out = _make(data, "dropout", (a,), backward)
    return out


def cross_entropy(probs, targets):
    """Per-row -ln p[target] for a (n, K) probability tensor -> (n, 1).

    Probabilities below CE_EPS are clamped before the log; clamped rows
    get zero gradient (the safe-log convention).
    """
    idx = np.asarray(targets)
    if probs.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != probs.data.shape[0]:
        raise DataError(
            f"cross_entropy expects (n, K) probs and (n,) targets, got "
            f"{probs.data.shape} and {idx.shape}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= probs.data.shape[1]):
        raise DataError("cross_entropy target index out of range")
    rows = np.arange(idx.shape[0])
    p = probs.data[rows, idx]
    clamped = np.maximum(p, CE_EPS)
    data = (-np.log(clamped)).astype(probs.data.dtype).reshape(-1, 1)

    def backward():
        if probs.requires_grad:
            g = out.grad[:, 0]
            buf = _ensure_grad(probs)
            safe = p > CE_EPS
            buf[rows[safe], idx[safe]] += -g[safe] / p[safe]

    out = _make(data, "cross_entropy", (probs,), backward)
    return out


def tsum(a):
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward():
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(out.grad, a.data.shape))

    out = _make(data, "sum", (a,), backward)
    return out


def tmean(a):
    n = a.data.size
    data = np.asarray(a.data.mean(), dtype=a.data.dtype)

    def backward():
        if a.requires_grad:
            _accumulate(a, np.broadcast_to(out.grad / n, a.data.shape))

    out = _make(data, "mean", (a,), backward)
    return out


class ParamStore:
    """Named parameter tensors with per-parameter gradient accumulators."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params = {}

    def create(self, name, shape, rng, init_scale=0.1):
        """Add a parameter initialized uniform in [-init_scale, init_scale]."""
        if name in self._params:
            raise DataError(f"duplicate parameter name {name!r}")
        data = rng.uniform(-init_scale, init_scale, size=shape).astype(self.dtype)
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def register(self, name, t):
        if name in self._params:
            raise DataError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def global_grad_norm(self):
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                g = t.grad.astype(np.float64, copy=False)
                total += float((g * g).sum())
        return float(np.sqrt(total))

    def clip_gradients(self, max_norm):
        """Scale all gradients so the global norm is at most max_norm."""
        norm = self.global_grad_norm()
        if norm > max_norm and norm > 0.0:
            factor = np.asarray(max_norm / norm, dtype=self.dtype)
            for t in self._params.values():
                if t.grad is not None:
                    t.grad *= factor
        return norm

    def sgd_step(self, lr):
        """p <- p - lr * grad for every parameter; missing grads count as 0."""
        for name, t in self._params.items():
            if t.grad is None:
                continue
            if not np.isfinite(t.grad).all():
                raise NumericError(
                    f"non-finite gradient for parameter {name!r}; step aborted"
                )
            t.data -= np.asarray(lr, dtype=t.data.dtype) * t.grad

    def to_dtype(self, dtype):
        """Deep copy of the store in another precision (for test oracles)."""
        clone = ParamStore(dtype=dtype)
        for name, t in self._params.items():
            clone.register(name, Tensor(t.data.astype(dtype, copy=True), requires_grad=True))
        return clone

    def copy(self):
        return self.to_dtype(self.dtype)
