"""Dense float64 tensors with tape-style reverse-mode differentiation.

Every differentiable operation appends a node to an implicit tape; a node's
sequence number is allocated when it is created, so ordering nodes by that
number is a valid topological order.  ``backward`` walks the nodes reachable
from a scalar loss in reverse creation order and accumulates adjoints.

The graph is never reused: build it, call ``backward`` once, drop it.
"""

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DomainError, ShapeError

__all__ = [
    "Tensor", "Parameter", "Graph", "as_tensor", "backward", "no_grad", "record",
    "add", "sub", "mul", "div", "neg", "matmul", "relu", "tanh", "sigmoid", "exp",
    "log", "square", "sum", "mean", "reshape", "concat", "take", "clip",
    "log_softmax", "dropout", "elementwise",
]

_sequence = itertools.count()
_grad_enabled = True


class _Node:
    __slots__ = ("seq", "parents", "backward")

    def __init__(self, parents, backward):
        self.seq = next(_sequence)
        self.parents = parents
        self.backward = backward


class Tensor:
    """An n-d array of 64-bit reals, optionally attached to the tape."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data

    def __repr__(self):
        tag = "param" if isinstance(self, Parameter) else ("node" if self._node else "const")
        return f"Tensor({tag}, shape={self.shape})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@contextmanager
def no_grad():
    """Evaluate without recording nodes on the tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def record(data, parents, backward_fn):
    """Wrap ``data`` as the output of a differentiable operation.

    ``backward_fn(g)`` receives the adjoint of the output and must return one
    adjoint (or None) per parent, each shaped like that parent.  Custom fused
    operations (LSTM recurrences, CTC) use this entry point directly.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(tuple(parents), backward_fn)
    return out


class Graph:
    """Nodes reachable from a loss, in tape (= topological) order."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, loss):
        seen = set()
        found = []
        stack = [loss]
        while stack:
            t = stack.pop()
            if id(t) in seen or t._node is None:
                continue
            seen.add(id(t))
            found.append(t)
            stack.extend(t._node.parents)
        found.sort(key=lambda t: t._node.seq)
        return cls(found)

    def __len__(self):
        return len(self.nodes)


def backward(loss, params=None):
    """Populate gradients of a scalar ``loss``.

    Returns a dict mapping each reached leaf (or each of ``params`` when given,
    with zeros for unreached ones) to its gradient array; the same arrays are
    stored on ``leaf.grad``.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    graph = Graph.trace(loss)
    adjoints = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    if loss._node is None and loss.requires_grad:
        leaves[id(loss)] = (loss, adjoints[id(loss)])
    for out in reversed(graph.nodes):
        g = adjoints.pop(id(out), None)
        if g is None:
            continue
        parent_grads = out._node.backward(g)
        for parent, pg in zip(out._node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if parent._node is None:
                if key in leaves:
                    leaves[key] = (parent, leaves[key][1] + pg)
                else:
                    leaves[key] = (parent, np.array(pg, dtype=np.float64))
            elif key in adjoints:
                adjoints[key] = adjoints[key] + pg
            else:
                adjoints[key] = pg
    if params is None:
        result = {t: g for t, g in leaves.values()}
    else:
        result = {}
        for p in params:
            hit = leaves.get(id(p))
            result[p] = hit[1] if hit is not None else np.zeros_like(p.data)
    for t, g in result.items():
        t.grad = g
    return result


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return record(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape),
                             _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return record(out, (a, b),
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    """Matrix product; ``a`` may carry leading batch axes, ``b`` is 2-d."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def grad(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return record(out, (a, b), grad)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return record(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return record(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    return record(np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x):
    x = as_tensor(x)
    return record(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


_UNARY = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log,
          "square": square, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op, *args):
    """Dispatch an elementwise operation by name."""
    if op in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{op} takes one operand")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{op} takes two operands")
        return _BINARY[op](*args)
    raise ContractError(f"unknown elementwise op {op!r}")


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def grad(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record(out, (x,), grad)


def mean(x, axis=None):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return record(out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def _getitem(x, index):
    out = x.data[index]

    def grad(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return record(out, (x,), grad)


def take(x, indices, axis):
    """Gather ``x`` along ``axis`` with an integer index array broadcast like
    ``np.take_along_axis``."""
    x = as_tensor(x)
    indices = np.asarray(indices)
    out = np.take_along_axis(x.data, indices, axis=axis)

    def grad(g):
        full = np.zeros_like(x.data)
        idx = list(np.indices(g.shape, sparse=True))
        idx[axis % x.ndim] = indices
        np.add.at(full, tuple(idx), g)
        return (full,)

    return record(out, (x,), grad)


def clip(x, low, high):
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)
    return record(np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


def log_softmax(x, axis=-1):
    """Shift-stabilised log-softmax over ``axis``."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] < 1:
        raise ShapeError(f"log_softmax: empty axis in shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def grad(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record(out, (x,), grad)


def dropout(x, rate, rng=None, training=True):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)
