"""Reverse-mode automatic differentiation over array-valued nodes.

Every operation records its inputs and a vector-Jacobian product on the
tape that owns its operands. Scalars are 0-d arrays, so a scalar graph is
the special case; batching whole sample sets into one node keeps the
Python overhead per training step small.

Tapes are independent objects: two threads may build and replay two
different tapes concurrently.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from uniqode.errors import ShapeError, UsageError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum the upstream gradient back down to the operand's shape
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node on a tape: a float64 array plus how to push gradients back."""

    __slots__ = ("tape", "value", "parents", "vjp", "index", "is_leaf")
    # make ndarray operands defer to the reflected Var operators
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", value, parents=(), vjp=None, is_leaf=False):
        self.tape = tape
        self.value = np.asarray(value, dtype=np.float64)
        self.parents: tuple[Var, ...] = parents
        self.vjp: Callable[[np.ndarray], Sequence[np.ndarray]] | None = vjp
        self.is_leaf = is_leaf
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        kind = "leaf" if self.is_leaf else "node"
        return f"Var({kind}, shape={self.value.shape})"

    # arithmetic sugar; all of it routes through the functions below
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, k):
        return power(self, k)

    def __getitem__(self, key):
        return getitem(self, key)


class Tape:
    """Ordered record of operations. Node order is a topological order."""

    def __init__(self) -> None:
        self.nodes: list[Var] = []

    def leaf(self, value) -> Var:
        return Var(self, np.array(value, dtype=np.float64), is_leaf=True)

    def constant(self, value) -> Var:
        return Var(self, value)

    @property
    def leaves(self) -> list[Var]:
        return [v for v in self.nodes if v.is_leaf]

    def __len__(self) -> int:
        return len(self.nodes)


def _tape_of(*items) -> Tape:
    tape = None
    for it in items:
        if isinstance(it, Var):
            if tape is None:
                tape = it.tape
            elif it.tape is not tape:
                raise UsageError("operands belong to different tapes")
    if tape is None:
        raise UsageError("at least one operand must be a Var")
    return tape


def _lift(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.constant(x)


def _binary(a, b, forward, grads) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    out = forward(a.value, b.value)

    def vjp(g):
        ga, gb = grads(g, a.value, b.value, out)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Var(tape, out, (a, b), vjp)


def add(a, b) -> Var:
    return _binary(a, b, np.add, lambda g, x, y, o: (g, g))


def sub(a, b) -> Var:
    return _binary(a, b, np.subtract, lambda g, x, y, o: (g, -g))


def mul(a, b) -> Var:
    return _binary(a, b, np.multiply, lambda g, x, y, o: (g * y, g * x))


def div(a, b) -> Var:
    return _binary(a, b, np.divide, lambda g, x, y, o: (g / y, -g * o / y))


def neg(a: Var) -> Var:
    return Var(a.tape, -a.value, (a,), lambda g: (-g,))


def power(a: Var, k: float) -> Var:
    k = float(k)
    x = a.value
    if k == 2.0:
        return Var(a.tape, x * x, (a,), lambda g: (2.0 * g * x,))
    return Var(a.tape, x**k, (a,), lambda g: (k * g * x ** (k - 1.0),))


def square(a: Var) -> Var:
    return power(a, 2)


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return Var(a.tape, out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return Var(a.tape, out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    x = a.value
    return Var(a.tape, np.log(x), (a,), lambda g: (g / x,))


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    x, y = a.value, b.value
    return Var(tape, x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def affine(x, w: Var, b: Var) -> Var:
    """``x @ w + b`` as one node; b has shape (out,). ``x`` may be a plain array."""
    tape = _tape_of(x, w, b)
    x = _lift(tape, x)
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine shape mismatch {x.shape} @ {w.shape}")
    xv, wv = x.value, w.value
    out = xv @ wv
    out += b.value
    return Var(tape, out, (x, w, b), lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)))


def tanh_slope_scale(dh: Var, h: Var) -> Var:
    """``dh * (1 - h**2)``: pushes a tangent through tanh given its output ``h``."""
    hv, dv = h.value, dh.value
    slope = 1.0 - hv * hv

    def vjp(g):
        gh = g * dv
        gh *= hv
        gh *= -2.0
        return g * slope, gh

    return Var(h.tape, dv * slope, (dh, h), vjp)


def sum(a: Var, axis=None) -> Var:  # noqa: A001
    shape = a.shape
    out = a.value.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Var(a.tape, out, (a,), vjp)


def mean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.shape[axis]
    return sum(a, axis=axis) * (1.0 / n)


def _is_basic_index(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, slice, type(None), type(Ellipsis))) for k in items)


def getitem(a: Var, key) -> Var:
    shape = a.shape
    basic = _is_basic_index(key)

    def vjp(g):
        full = np.zeros(shape)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return Var(a.tape, a.value[key], (a,), vjp)


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return Var(a.tape, a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence, axis: int = -1) -> Var:
    tape = _tape_of(*parts)
    parts = [_lift(tape, p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([p.value for p in parts], axis=axis)
    return Var(tape, out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=axis)))


def backward(root: Var) -> dict[Var, np.ndarray]:
    """Replay the tape of ``root`` in reverse; return d(root)/d(leaf) for every leaf.

    Leaves that the root does not depend on get exact zeros. The gradient
    arrays are also returned in the same order as ``tape.leaves`` when the
    dict is iterated.
    """
    if root.value.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    tape = root.tape
    adj: dict[int, np.ndarray] = {root.index: np.ones_like(root.value)}
    for node in reversed(tape.nodes[: root.index + 1]):
        g = adj.pop(node.index, None) if not node.is_leaf else adj.get(node.index)
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if parent.is_leaf or parent.vjp is not None:
                prev = adj.get(parent.index)
                adj[parent.index] = pg if prev is None else prev + pg
    return {
        leaf: adj.get(leaf.index, np.zeros_like(leaf.value)).reshape(leaf.shape)
        for leaf in tape.leaves
    }


def grad(fn: Callable[..., Var], *values) -> tuple[float | np.ndarray, list[np.ndarray]]:
    """Evaluate ``fn`` on fresh leaves built from ``values``; return (value, grads)."""
    tape = Tape()
    leaves = [tape.leaf(v) for v in values]
    out = fn(*leaves)
    grads = backward(out)
    return out.value.item(), [grads[leaf] for leaf in leaves]
