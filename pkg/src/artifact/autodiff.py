"""Small reverse-mode automatic differentiation engine over float64 arrays.

Every operation that touches a tensor with ``requires_grad`` records its
parents and a backward rule on the output node.  Calling
:meth:`Tensor.backward` on a scalar walks the resulting graph in reverse
topological order, so each node's rule runs exactly once and gradients of
tensors used several times accumulate additively.

Broadcasting is deliberately limited: elementwise binary ops need equal
shapes, except that a 1-D bias whose length matches the trailing axis may be
added to any tensor, and plain Python scalars act as constants.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    DetachedGraphError,
    MissingGradError,
    NonFiniteInputError,
    NotScalarError,
    ShapeMismatchError,
)

__all__ = [
    "Tensor",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "concat",
    "transpose",
    "reshape",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "softmax",
    "square",
    "tsum",
    "mean",
    "bce_with_logits",
    "Adam",
    "no_grad",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(data) -> np.ndarray:
    if isinstance(data, np.ndarray) and data.dtype == np.float64:
        return data
    return np.array(data, dtype=np.float64)


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` of every tensor that requires grad and feeds this one."""
        if self.data.size != 1:
            raise NotScalarError(f"backward needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise DetachedGraphError("loss does not depend on any tensor requiring grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def custom_op(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    """Record an operation whose backward rule is supplied by the caller.

    ``backward`` receives the upstream gradient and returns one gradient (or
    ``None``) per parent, in order.
    """
    return _node(data, parents, backward, op)


def _is_scalar_const(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) and not isinstance(x, bool)


# elementwise binary ops

def add(a, b) -> Tensor:
    if _is_scalar_const(b):
        a = _wrap(a)
        return _node(a.data + b, (a,), lambda g: (g,), "add")
    if _is_scalar_const(a):
        return add(b, a)
    a, b = _wrap(a), _wrap(b)
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        axes = tuple(range(a.ndim - 1))
        return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)), "add_bias")
    if a.ndim == 1 and b.ndim >= 1 and a.shape[0] == b.shape[-1]:
        return add(b, a)
    raise ShapeMismatchError(f"add: incompatible shapes {a.shape} and {b.shape}")


def neg(a) -> Tensor:
    a = _wrap(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    if _is_scalar_const(b):
        return add(a, -b)
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    if _is_scalar_const(b):
        a = _wrap(a)
        c = float(b)
        return _node(a.data * c, (a,), lambda g: (g * c,), "scale")
    if _is_scalar_const(a):
        return mul(b, a)
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mul: shapes must match, got {a.shape} and {b.shape}")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def matmul(a, b) -> Tensor:
    """Matrix product for 2-D @ 2-D, batched 3-D @ 2-D and batched 3-D @ 3-D."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim not in (2, 3) or b.ndim not in (2, 3) or (a.ndim == 2 and b.ndim == 3):
        raise ShapeMismatchError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (b.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeMismatchError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim == 3:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _node(out, (a, b), backward, "matmul")


# structural ops

def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ShapeMismatchError("concat: need at least one tensor")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeMismatchError(f"concat: incompatible shapes {[x.shape for x in ts]}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _node(np.concatenate([t.data for t in ts], axis=ax), ts, backward, "concat")


def getitem(a, index) -> Tensor:
    """Basic (slice/integer) indexing; fancy indexing is not supported."""
    a = _wrap(a)
    if isinstance(index, (list, np.ndarray)):
        raise ShapeMismatchError("only basic slicing is supported")
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _node(np.array(out, copy=True), (a,), backward, "slice")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _wrap(a)
    if a.ndim < 2:
        raise ShapeMismatchError("transpose needs at least 2 dimensions")
    return _node(np.swapaxes(a.data, -1, -2).copy(), (a,),
                 lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _wrap(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatchError(str(exc)) from None
    return _node(out.copy(), (a,), lambda g: (g.reshape(a.shape),), "reshape")


# elementwise unary ops

def _check_finite(a: Tensor, name: str) -> None:
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteInputError(f"{name}: input contains non-finite values")


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid_inplace(x: np.ndarray) -> np.ndarray:
    """Logistic function computed in place through ``exp``; faster than ``expit`` on small blocks."""
    with np.errstate(over="ignore"):
        np.negative(x, out=x)
        np.exp(x, out=x)
    x += 1.0
    np.reciprocal(x, out=x)
    return x


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    y = _sigmoid(a.data)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(a) -> Tensor:
    a = _wrap(a)
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,), "exp")


def log(a) -> Tensor:
    a = _wrap(a)
    _check_finite(a, "log")
    if np.any(a.data <= 0):
        raise NonFiniteInputError("log: input must be strictly positive")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def square(a) -> Tensor:
    a = _wrap(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    _check_finite(a, "softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (a,), backward, "softmax")


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 ``targets``.

    Evaluated as ``softplus(z) - y z`` so saturated logits stay finite.
    """
    z = _wrap(logits)
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if y.shape != z.shape:
        raise ShapeMismatchError(f"bce: logits {z.shape} vs targets {y.shape}")
    _check_finite(z, "bce_with_logits")
    n = z.data.size
    loss = (np.logaddexp(0.0, z.data) - y * z.data).sum() / n
    return _node(np.asarray(loss), (z,), lambda g: (g * (expit(z.data) - y) / n,), "bce")


# reductions

def tsum(a, axis: int | tuple[int, ...] | None = None) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(np.asarray(out, dtype=np.float64), (a,), backward, "sum")


def mean(a, axis: int | tuple[int, ...] | None = None) -> Tensor:
    a = _wrap(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis), 1.0 / n)


class Adam:
    """Adam optimizer with bias correction.

    Moment buffers live on the optimizer, so successive :meth:`step` calls
    continue the same running averages.  Gradients are cleared after each step.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise MissingGradError(f"parameters {missing} have no gradient")
        self.t += 1
        adam_step(self.params, self._m, self._v, self.lr, self.beta1, self.beta2,
                  self.eps, self.t)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params: Sequence[Tensor], m: list[np.ndarray], v: list[np.ndarray],
              lr: float, beta1: float, beta2: float, eps: float, t: int) -> None:
    """One in-place Adam update at step ``t`` (1-based); clears the gradients."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, mi, vi in zip(params, m, v):
        if p.grad is None:
            raise MissingGradError("parameter has no gradient")
        g = p.grad
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * g * g
        p.data -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        p.grad = None
