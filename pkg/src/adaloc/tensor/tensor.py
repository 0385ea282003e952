"""Dense tensors with tape-based reverse-mode differentiation.

A ``Tensor`` wraps a numpy array. Operations on tensors that require
gradients record a node (parents plus a closure mapping the output
gradient to parent gradients). ``backward`` walks the recorded graph in
reverse topological order, accumulates into leaf ``.grad`` buffers and
then frees the graph.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericError, ShapeError, StateError
from . import kernels

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError("default dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def float64_mode():
    """Run the enclosed block in 64-bit precision (gradient checks)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(np.float64)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_spent")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _DEFAULT_DTYPE, copy=True)
        if any(n <= 0 for n in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._spent = False

    @classmethod
    def _node(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._spent = False
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        else:
            out._parents = ()
            out._backward = None
            out._op = "const"
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, like=self)))

    def __rsub__(self, other):
        return add(as_tensor(other, like=self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return sum_(self, axis) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def relu(self):
        return relu(self)

    # -- differentiation -------------------------------------------------
    def backward(self) -> None:
        """Reverse-mode accumulation from this scalar into every tracked leaf."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._spent:
            raise StateError("backward() already called on this graph; rebuild it with a new forward pass")
        self._spent = True
        if not self.requires_grad:
            return
        order = _topological(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node.requires_grad = False
                node._spent = True


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------------
# primitives

def add(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._node(out, (a, b), back, "add")


def neg(a: Tensor) -> Tensor:
    return Tensor._node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.data.dtype)
        return Tensor._node(a.data * c, (a,), lambda g: (_unbroadcast(g * c, a.shape),), "scale")
    a = as_tensor(a, like=b)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._node(out, (a, b), back, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return Tensor._node(out, (a, b), back, "matmul")


def sum_(a: Tensor, axis=None) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Tensor._node(out, (a,), back, "sum")


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor._node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)
    return Tensor._node(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def _check_finite(x: np.ndarray, what: str):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what}: non-finite input")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with per-row max subtraction."""
    _check_finite(x.data, "softmax_rows")
    flat = x.data.reshape(-1, x.shape[-1])
    y = kernels.softmax_fwd(flat)

    def back(g):
        return (kernels.softmax_bwd(y, g.reshape(y.shape)).reshape(x.shape),)

    return Tensor._node(y.reshape(x.shape), (x,), back, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last (feature) axis, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match features {d}")
    flat = x.data.reshape(-1, d)
    y, xhat, rstd = kernels.layernorm_fwd(flat, gamma.data, beta.data, eps)

    def back(g):
        gx, gg, gb = kernels.layernorm_bwd(g.reshape(-1, d), xhat, rstd, gamma.data)
        return gx.reshape(x.shape), gg, gb

    return Tensor._node(y.reshape(x.shape), (x, gamma, beta), back, "layer_norm")


def max_pool_last(x: Tensor, segment: int) -> Tensor:
    """Max over non-overlapping ``segment``-wide windows of the last axis.

    The axis is right-padded with a sentinel that never wins, so the output
    width is ceil(d / segment). Gradient goes to each window's argmax only.
    """
    d = x.shape[-1]
    flat = x.data.reshape(-1, d)
    out, idx = kernels.maxpool_fwd(flat, segment)
    lead = x.shape[:-1]

    def back(g):
        return (kernels.maxpool_bwd(g.reshape(out.shape), idx, d).reshape(x.shape),)

    return Tensor._node(out.reshape(lead + (out.shape[1],)), (x,), back, "max_pool")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool,
            mask: np.ndarray | None = None) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not training or rate == 0.0:
        return x
    if mask is None:
        keep = rng.random(x.shape, dtype=np.float32) >= rate
        mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return Tensor._node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def mse_loss(pred: Tensor, target) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    diff = pred.data - t
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)
    return Tensor._node(out, (pred,), lambda g: (g * (2.0 / n) * diff,), "mse")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    out = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype)

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return Tensor._node(out, (logits,), back, "cross_entropy")
