"""Minimal dense float64 kernel with taped reverse-mode gradients.

Everything is a 64-bit numpy array wrapped in a :class:`Tensor` that records
how it was computed. Calling :func:`backward` on a scalar loss walks the tape
in reverse and accumulates gradients into every tensor that requires them.
Summation order is numpy's fixed single-pass/pairwise order, so repeated runs
with the same inputs are bit-identical on the same machine.

Supported broadcasting is the row/bias pattern (a trailing-shape operand
combined with a batch-major one); gradients are un-broadcast by summing over
the expanded axes.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray


class Tensor:
    """A float64 array plus the tape entry that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def require_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("tensor contains NaN or Inf")
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all routed through the module-level ops
    def __add__(self, other): return add(self, _wrap(other))
    def __radd__(self, other): return add(_wrap(other), self)
    def __sub__(self, other): return sub(self, _wrap(other))
    def __rsub__(self, other): return sub(_wrap(other), self)
    def __mul__(self, other): return hadamard(self, _wrap(other))
    def __rmul__(self, other): return hadamard(_wrap(other), self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, _wrap(other))
    def __pow__(self, exponent): return power(self, exponent)
    def __getitem__(self, key): return take(self, key)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient over the axes that broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make(
        data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ValueError(f"matmul expects 1-D or 2-D operands, got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g: Array):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g @ bd.T, ad.T @ g

    return _make(data, (a, b), backward)


def affine(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """w @ x + b."""
    return add(matmul(w, x), b)


def power(a: Tensor, exponent: float) -> Tensor:
    data = a.data ** exponent
    return _make(data, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _make(data, (a,), lambda g: (g * (1.0 - data ** 2),))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so exp never overflows; saturates to exactly 0/1 at extremes
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(data, (a,), lambda g: (g * data * (1.0 - data),))


def relu(a: Tensor) -> Tensor:
    data = np.maximum(0.0, a.data)
    return _make(data, (a,), lambda g: (g * (a.data > 0),))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(data, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return hadamard(sum_(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a: Tensor, key) -> Tensor:
    data = a.data[key]

    def backward(g: Array):
        out = np.zeros_like(a.data)
        out[key] = g
        return (out,)

    return _make(data, (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward(g: Array):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, offsets, axis=axis))

    return _make(data, tuple(tensors), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g: Array):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    The loss must be scalar. Gradients add onto whatever is already in
    ``grad``, so zero parameter grads between optimizer steps.
    """
    if loss.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires gradients")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.array(pg, dtype=np.float64, copy=True)
        if node.grad is None:
            node.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            node.grad = node.grad + g


# ---------------------------------------------------------------------------
# parameter bookkeeping
# ---------------------------------------------------------------------------

class ParamStore:
    """Named tensors in stable insertion order.

    Trainable entries receive gradients and optimizer updates; non-trainable
    entries (batch-norm running statistics) are carried for serialization and
    parameter accounting only.
    """

    def __init__(self):
        self._entries: dict[str, tuple[Tensor, bool]] = {}

    def add(self, name: str, tensor: Tensor, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name!r}")
        tensor.requires_grad = trainable
        self._entries[name] = (tensor, trainable)
        return tensor

    def items(self):
        for name, (tensor, trainable) in self._entries.items():
            yield name, tensor, trainable

    def tensors(self, trainable_only: bool = False):
        for _, tensor, trainable in self.items():
            if trainable or not trainable_only:
                yield tensor

    def named(self, trainable_only: bool = False):
        for name, tensor, trainable in self.items():
            if trainable or not trainable_only:
                yield name, tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name][0]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def count(self) -> int:
        """Total scalar parameters, running statistics included."""
        return sum(t.size for t in self.tensors())

    def zero_grads(self) -> None:
        for tensor in self.tensors():
            tensor.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_diff_check(f, params: ParamStore, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f`` is a zero-argument callable that runs a fresh forward pass over the
    current parameter values and returns a scalar loss Tensor. The relative
    error for one coordinate is |ga - gn| / max(1, |ga| + |gn|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    params.zero_grads()
    loss = f()
    if loss.requires_grad:
        backward(loss)
    analytic = {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        for name, t in params.named(trainable_only=True)
    }

    worst = 0.0
    for name, tensor in params.named(trainable_only=True):
        flat = tensor.data.reshape(-1)
        ga_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            gn = (up - down) / (2.0 * eps)
            ga = ga_flat[i]
            err = abs(ga - gn) / max(1.0, abs(ga) + abs(gn))
            worst = max(worst, err)
    params.zero_grads()
    return worst
