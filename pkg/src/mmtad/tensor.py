"""Dense float64 tensors with a dynamically recorded reverse-mode graph.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure computing parent gradients from its own gradient. Arrays may carry
leading batch axes; the listed ops act on the trailing one or two axes.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

LOG_CLAMP = 1e-12


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward: Callable | None = None):
        # op outputs are fresh arrays already; only leaves need a defensive copy
        self.data = (np.asarray(data, dtype=np.float64) if _backward is not None
                     else np.array(data, dtype=np.float64))
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape})"

    # operator sugar
    def __add__(self, other): return add(self, _wrap(other))
    def __radd__(self, other): return add(_wrap(other), self)
    def __sub__(self, other): return sub(self, _wrap(other))
    def __rsub__(self, other): return sub(_wrap(other), self)
    def __mul__(self, other): return mul(self, _wrap(other))
    def __rmul__(self, other): return mul(_wrap(other), self)
    def __truediv__(self, other): return div(self, _wrap(other))
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    return Tensor(data, _parents=parents, _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out axes numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _node(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _node(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _node(a.data * b.data, (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _node(out, (a, b), back)


def scale(a: Tensor, k: float) -> Tensor:
    return _node(a.data * k, (a,), lambda g: (g * k,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    pick_a = a.data <= b.data

    def back(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), b.shape))
    return _node(np.where(pick_a, a.data, b.data), (a, b), back)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    pick_a = a.data >= b.data

    def back(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), b.shape))
    return _node(np.where(pick_a, a.data, b.data), (a, b), back)


def log(a: Tensor, clamp: float = LOG_CLAMP) -> Tensor:
    """Natural log with inputs clamped from below at ``clamp``."""
    x = np.maximum(a.data, clamp)
    live = a.data >= clamp
    return _node(np.log(x), (a,), lambda g: (np.where(live, g / x, 0.0),))


def gelu(a: Tensor) -> Tensor:
    # tanh approximation; smooth everywhere, which the finite-difference checks need
    c = np.sqrt(2.0 / np.pi)
    x = a.data
    x2 = x * x
    inner = c * x * (1.0 + 0.044715 * x2)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def back(g):
        dinner = c * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner),)
    return _node(out, (a,), back)


# ---------------------------------------------------------------- reductions

def sum_all(a: Tensor) -> Tensor:
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def sum_axis(a: Tensor, axis: int) -> Tensor:
    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return _node(a.data.sum(axis=axis), (a,), back)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


# ---------------------------------------------------------------- shape ops

def transpose(a: Tensor) -> Tensor:
    """Swap the trailing two axes."""
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat of an empty list")
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))
    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, back)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        return (full,)
    return _node(a.data[..., start:stop], (a,), back)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes; leading axes broadcast."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _node(a.data @ b.data, (a, b), back)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis with per-row max subtraction."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return _node(out, (a,), back)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row over the feature axis, then apply gain and bias."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = a.data
    n = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        gx_hat = g * gain.data
        gx = inv / n * (n * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape))
    return _node(out, (a, gain, bias), back)


def conv1d_temporal(a: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Zero-padded cross-correlation along time.

    ``a`` is ``(..., T, Cin)``, ``kernel`` is ``(k, Cin, Cout)`` with odd ``k``,
    ``bias`` is ``(Cout,)``. Output is ``(..., T, Cout)``.
    """
    k, cin, cout = kernel.shape
    if k % 2 == 0:
        raise ShapeError(f"conv kernel size must be odd, got {k}")
    if a.shape[-1] != cin:
        raise ShapeError(f"conv input width {a.shape[-1]} != kernel Cin {cin}")
    pad = (k - 1) // 2
    T = a.shape[-2]
    lead = [(0, 0)] * (a.data.ndim - 2)
    xp = np.pad(a.data, lead + [(pad, pad), (0, 0)])
    out = np.broadcast_to(bias.data, a.shape[:-1] + (cout,)).copy()
    for j in range(k):
        out += xp[..., j:j + T, :] @ kernel.data[j]

    def back(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(kernel.data)
        for j in range(k):
            gxp[..., j:j + T, :] += g @ kernel.data[j].T
            win = xp[..., j:j + T, :]
            gk[j] = (win.reshape(-1, cin).T @ g.reshape(-1, cout))
        ga = gxp[..., pad:pad + T, :]
        gb = g.reshape(-1, cout).sum(axis=0)
        return ga, gk, gb
    return _node(out, (a, kernel, bias), back)


# ---------------------------------------------------------------- graph

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, leaves: Iterable[Tensor] = ()) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every leaf reachable from ``loss``.

    Leaves passed explicitly but not reachable receive an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for leaf in leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
