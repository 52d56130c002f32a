"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and
a vector-Jacobian closure. ``Tensor.backward()`` topologically sorts the
graph (iteratively, so deep recurrent chains are fine) and accumulates
gradients into ``.grad``. All data is float64; gradient checks downstream
rely on that.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

Array = np.ndarray


def _as_array(x) -> Array:
    if isinstance(x, np.ndarray) and x.dtype == np.float64:
        return x
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


def _stable_sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tensor:
    """A node in the computation graph holding a float64 ndarray."""

    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, parents: tuple = (), vjp=None):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self._parents = parents
        self._vjp = vjp

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # -- graph traversal -----------------------------------------------
    def backward(self, seed: Array | float | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``.grad``."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data) if seed is None else _as_array(seed)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = lift(other)
        a, b = self, other
        return Tensor(
            a.data + b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = lift(other)
        a, b = self, other
        return Tensor(
            a.data - b.data,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        )

    def __rsub__(self, other) -> "Tensor":
        return lift(other) - self

    def __mul__(self, other) -> "Tensor":
        other = lift(other)
        a, b = self, other
        return Tensor(
            a.data * b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = lift(other)
        a, b = self, other
        return Tensor(
            a.data / b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            ),
        )

    def __rtruediv__(self, other) -> "Tensor":
        return lift(other) / self

    def __neg__(self) -> "Tensor":
        a = self
        return Tensor(-a.data, (a,), lambda g: (-g,))

    def __pow__(self, p: float) -> "Tensor":
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        return Tensor(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))

    def __matmul__(self, other) -> "Tensor":
        other = lift(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul requires tensors with ndim >= 2")

        def vjp(g: Array):
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            return ga, gb

        return Tensor(a.data @ b.data, (a, b), vjp)

    # -- elementwise nonlinearities --------------------------------------
    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self
        return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return Tensor(out, (self,), lambda g: (g * 0.5 / out,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> "Tensor":
        out = _stable_sigmoid(self.data)
        return Tensor(out, (self,), lambda g: (g * out * (1.0 - out),))

    def clip(self, lo: float, hi: float) -> "Tensor":
        # Gradient passes through only where the value was not clamped.
        a = self
        mask = (a.data > lo) & (a.data < hi)
        return Tensor(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))

    # -- shape ops -------------------------------------------------------
    def reshape(self, shape: tuple[int, ...]) -> "Tensor":
        a = self
        return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, axes: tuple[int, ...]) -> "Tensor":
        a = self
        inverse = tuple(np.argsort(axes))
        return Tensor(
            np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),)
        )

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        a = self

        def vjp(g: Array):
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.shape).copy(),)

        return Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def softmax(x: Tensor) -> Tensor:
    """Row-stochastic softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g: Array):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return Tensor(out, (x,), vjp)


def l2norm(x: Tensor) -> Tensor:
    """Euclidean norm of all entries; subgradient 0 at the origin.

    The zero case matters: identically-zero difference vectors (e.g. between
    duplicate window aggregates) must not poison gradients with NaN.
    """
    val = float(np.sqrt(np.sum(x.data * x.data)))

    def vjp(g: Array):
        if val == 0.0:
            return (np.zeros_like(x.data),)
        return (g * x.data / val,)

    return Tensor(val, (x,), vjp)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: Array):
        slicer: list = [slice(None)] * g.ndim
        grads = []
        for k in range(len(parts)):
            slicer[axis] = slice(int(offsets[k]), int(offsets[k + 1]))
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), vjp)


def finite_difference_gradient(f, x: Array, h: float = 1e-5) -> Array:
    """Central-difference gradient of scalar ``f`` at ``x``, coordinate-wise."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return grad
