"""Reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the models in this package: dense affine layers,
leaky rectifiers, reductions, exp/log, row gathers for embedding tables,
and concatenation. Set `debug_check_finite(True)` to raise on the first op
that produces a non-finite value.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError

_CHECK_FINITE = False


def debug_check_finite(enable: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = enable


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    # -- graph construction ------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul_scalar(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul_scalar(self, -1.0))

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / float(other))
        raise TypeError("only scalar division is supported")

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced", where=backward.__qualname__)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.data.shape))

    out = _node(data, (a, b), backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    out = _node(data, (a, b), backward)
    return out


def mul_scalar(a: Tensor, s: float) -> Tensor:
    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * s)

    out = _node(a.data * s, (a,), backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    out = _node(data, (a, b), backward)
    return out


def transpose(a: Tensor) -> Tensor:
    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.T)

    out = _node(a.data.T, (a,), backward)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.data.shape))

    out = _node(a.data.reshape(shape), (a,), backward)
    return out


def square(a: Tensor) -> Tensor:
    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * 2.0 * a.data)

    out = _node(a.data * a.data, (a,), backward)
    return out


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * data)

    out = _node(data, (a,), backward)
    return out


def log(a: Tensor) -> Tensor:
    def backward():
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    out = _node(np.log(a.data), (a,), backward)
    return out


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        if not a.requires_grad:
            return
        grad = out.grad
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        a._accumulate(np.broadcast_to(grad, a.data.shape).copy())

    out = _node(data, (a,), backward)
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul_scalar(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * factor)

    out = _node(np.where(a.data > 0, a.data, a.data * slope), (a,), backward)
    return out


def rows(table: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D tensor (embedding lookup)."""
    idx = np.asarray(indices, dtype=np.intp)

    def backward():
        if table.requires_grad:
            grad = np.zeros_like(table.data)
            np.add.at(grad, idx, out.grad)
            table._accumulate(grad)

    out = _node(table.data[idx], (table,), backward)
    return out


def pick(a: Tensor, index: tuple) -> Tensor:
    """Single-element indexing that keeps the gradient flowing."""

    def backward():
        if a.requires_grad:
            grad = np.zeros_like(a.data)
            grad[index] = out.grad
            a._accumulate(grad)

    out = _node(np.asarray(a.data[index]), (a,), backward)
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, lo, hi in zip(tensors, offsets, offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * data.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(out.grad[tuple(sl)])

    out = _node(data, tuple(tensors), backward)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for row-batched inputs."""
    return add(matmul(x, w), b)


def mse(predicted: Tensor, target: Tensor) -> Tensor:
    return mean(square(predicted - target))


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of one (1, C) logit row against an integer label."""
    shift = float(logits.data.max())
    z = logits - Tensor(np.full_like(logits.data, shift))
    lse = log(tensor_sum(exp(z)))
    return lse - pick(z, (0, label))


class SGD:
    """Gradient descent with classic momentum (v <- mu v + g; p <- p - lr v)."""

    def __init__(self, params, lr: float, momentum: float = 0.9):
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            if p.grad is not None:
                v += p.grad
            p.data -= self.lr * v
