"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation creates a new :class:`Tensor` that remembers
its parents and a closure mapping the output adjoint to parent adjoints.
Node ids are drawn from a global monotone counter, so sorting the reachable
graph by descending id replays the recording tape in reverse.

Broadcasting follows numpy semantics; adjoints are summed back over the
broadcast axes. Only leaves (tensors created with ``requires_grad=True``)
accumulate ``.grad``; repeated ``backward`` calls add up unless
:meth:`Tensor.zero_grad` is called in between.
"""

from __future__ import annotations

import contextlib
import itertools
import os
import threading

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, NumericDomainError, NumericError

__all__ = [
    "Tensor",
    "tensor",
    "parameter",
    "no_grad",
    "grad_enabled",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "exp",
    "log",
    "sigmoid",
    "logsigmoid",
    "tanh",
    "softplus",
    "maximum",
    "abs_",
    "clip",
    "sqrt",
    "square",
    "concat",
    "split",
    "stack",
    "elementwise",
    "finite_difference_grad",
]

_ids = itertools.count()
_state = threading.local()
DEBUG = bool(os.environ.get("STOXLSTM_DEBUG"))


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise DimensionError(f"shapes {shapes} are not broadcast-compatible") from exc


class Tensor:
    """A float64 array that can take part in gradient recording."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids) if requires_grad else None
        self.name = name
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _result(cls, data, parents, backward_fn):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._parents = ()
        out._backward = None
        out.node_id = None
        out.requires_grad = False
        if DEBUG and not np.all(np.isfinite(data)):
            if all(np.all(np.isfinite(p.data)) for p in parents):
                raise NumericError("non-finite output from finite inputs")
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.node_id = next(_ids)
            out._parents = parents
            out._backward = backward_fn
        return out

    # -- array protocol -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- methods --------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        data_shape = self.shape
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([data_shape[a] for a in axes]))
        return reduce_sum(self, axis, keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad, name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- backward -----------------------------------------------------------------
def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every tracked leaf."""
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backward root is not recorded on any tape")

    nodes = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.node_id in nodes:
            continue
        nodes[node.node_id] = node
        stack.extend(p for p in node._parents if p.requires_grad and p.node_id not in nodes)

    grads = {root.node_id: np.ones_like(root.data)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg


# -- binary ops ---------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return Tensor._result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return Tensor._result(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape(a.shape, b.shape)
    if np.any(b.data == 0.0):
        raise NumericDomainError("division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return Tensor._result(out, (a, b), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the adjoint to ``a``."""
    a, b = _t(a), _t(b)
    _broadcast_shape(a.shape, b.shape)
    pick_a = a.data >= b.data

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return Tensor._result(np.maximum(a.data, b.data), (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(ad @ bd, (a, b), bw)


# -- unary ops ----------------------------------------------------------------
def _unary(x, value, dvalue):
    x = _t(x)
    return Tensor._result(value, (x,), lambda g: (g * dvalue(),))


def exp(x) -> Tensor:
    x = _t(x)
    out = np.exp(x.data)
    return _unary(x, out, lambda: out)


def log(x) -> Tensor:
    x = _t(x)
    if np.any(x.data <= 0.0):
        raise NumericDomainError("log of non-positive value")
    xd = x.data
    return _unary(x, np.log(xd), lambda: 1.0 / xd)


def sqrt(x) -> Tensor:
    x = _t(x)
    if np.any(x.data < 0.0):
        raise NumericDomainError("sqrt of negative value")
    out = np.sqrt(x.data)
    return _unary(x, out, lambda: 0.5 / out)


def square(x) -> Tensor:
    x = _t(x)
    xd = x.data
    return _unary(x, xd * xd, lambda: 2.0 * xd)


def sigmoid(x) -> Tensor:
    x = _t(x)
    out = expit(x.data)
    return _unary(x, out, lambda: out * (1.0 - out))


def logsigmoid(x) -> Tensor:
    x = _t(x)
    xd = x.data
    return _unary(x, -np.logaddexp(0.0, -xd), lambda: expit(-xd))


def tanh(x) -> Tensor:
    x = _t(x)
    out = np.tanh(x.data)
    return _unary(x, out, lambda: 1.0 - out * out)


def softplus(x) -> Tensor:
    x = _t(x)
    xd = x.data
    return _unary(x, np.logaddexp(0.0, xd), lambda: expit(xd))


def abs_(x) -> Tensor:
    x = _t(x)
    xd = x.data
    return _unary(x, np.abs(xd), lambda: np.sign(xd))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the adjoint passes only where the input is inside."""
    x = _t(x)
    xd = x.data
    return _unary(x, np.clip(xd, lo, hi), lambda: ((xd >= lo) & (xd <= hi)).astype(np.float64))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
    "max": maximum,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise op by name (``max`` takes a tensor and a scalar)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# -- structural ops -----------------------------------------------------------
def reduce_sum(x, axis=None, keepdims=False) -> Tensor:
    x = _t(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def reshape(x, shape) -> Tensor:
    x = _t(x)
    old = x.shape
    return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = _t(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    return Tensor._result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x, index) -> Tensor:
    x = _t(x)
    shape = x.shape

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)

    def bw(g):
        full = np.zeros(shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._result(np.array(x.data[index]), (x,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_t(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    cuts = np.cumsum(sizes)[:-1]
    return Tensor._result(data, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)))


def split(x, parts: int, axis: int = -1) -> list:
    """Split into ``parts`` equal chunks along ``axis``."""
    x = _t(x)
    if x.shape[axis] % parts:
        raise DimensionError(f"cannot split extent {x.shape[axis]} into {parts} parts")
    node = Tensor._result(x.data, (x,), lambda g: (g,))
    chunks = np.split(x.data, parts, axis=axis)
    width = x.shape[axis] // parts
    ax = axis % x.ndim
    outs = []
    for i, chunk in enumerate(chunks):
        index = (slice(None),) * ax + (slice(i * width, (i + 1) * width),)
        outs.append(_slice_of(node, chunk, index))
    return outs


def _slice_of(x, data, index):
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return Tensor._result(np.array(data), (x,), bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    n = len(tensors)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return Tensor._result(data, tuple(tensors), bw)


# -- checking -----------------------------------------------------------------
def finite_difference_grad(fn, arrays, eps: float = 1e-5):
    """Central differences of scalar ``fn()`` with respect to each array.

    ``arrays`` are perturbed in place and restored; ``fn`` must read them.
    """
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(fn())
            flat[i] = orig - eps
            down = float(fn())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        out.append(g)
    return out
