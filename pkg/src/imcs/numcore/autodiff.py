"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records primitive operations as they execute.  Every op in
this module accepts plain arrays, Python scalars, or :class:`Var` nodes; when
none of the operands is a ``Var`` the op simply returns the numpy result, so
one forward implementation serves both evaluation and differentiation.

Example
-------
>>> tape = Tape()
>>> x = tape.leaf([1.0, -2.0])
>>> (g,) = grad(sq_norm(x), [x])
>>> g
array([ 2., -4.])
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class GradError(ValueError):
    """Contract violation in a gradient request."""


class UnknownLeafError(GradError):
    pass


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended in execution order, so every node's inputs precede it
    and a single reverse sweep visits each node once.
    """

    def __init__(self) -> None:
        self.nodes: list[Var] = []

    def leaf(self, value) -> "Var":
        return self._record(np.array(value, dtype=np.float64), ())

    def _record(self, value: np.ndarray, parents) -> "Var":
        node = Var(value, self, len(self.nodes), parents)
        self.nodes.append(node)
        return node

    def __len__(self) -> int:
        return len(self.nodes)


class Var:
    __slots__ = ("value", "tape", "index", "parents")
    __array_priority__ = 100.0  # make ndarray <op> Var defer to Var

    def __init__(self, value, tape, index, parents):
        self.value = value
        self.tape = tape
        self.index = index
        # tuple of (parent Var, vjp callable mapping output adjoint -> parent adjoint)
        self.parents = parents

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise GradError("operands recorded on different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _node(tape: Tape, value, pairs) -> Var:
    parents = tuple((p, fn) for p, fn in pairs if isinstance(p, Var))
    return tape._record(value, parents)


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av + bv
    if tape is None:
        return out
    return _node(tape, out, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(g, bv.shape)),
    ])


def sub(a, b):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av - bv
    if tape is None:
        return out
    return _node(tape, out, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: -_unbroadcast(g, bv.shape)),
    ])


def neg(a):
    tape = _tape_of(a)
    out = -value_of(a)
    if tape is None:
        return out
    return _node(tape, out, [(a, lambda g: -g)])


def mul(a, b):
    """Elementwise (broadcasting) product."""
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if tape is None:
        return out
    return _node(tape, out, [
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


def matmul(a, b):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    if av.ndim == 0 or bv.ndim == 0 or av.ndim > 2 or bv.ndim > 2:
        raise ValueError(f"matmul supports 1-D/2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out = av @ bv
    if tape is None:
        return out

    def ga(g):
        if bv.ndim == 1:
            return np.outer(g, bv) if av.ndim == 2 else g * bv
        return g @ bv.T

    def gb(g):
        if av.ndim == 1:
            return np.outer(av, g) if bv.ndim == 2 else g * av
        return av.T @ g

    return _node(tape, out, [(a, ga), (b, gb)])


def transpose(a):
    tape = _tape_of(a)
    out = value_of(a).T
    if tape is None:
        return out
    return _node(tape, out, [(a, lambda g: g.T)])


# --------------------------------------------------------------- activations


def relu(a):
    tape = _tape_of(a)
    av = value_of(a)
    mask = av > 0
    out = np.where(mask, av, 0.0)
    if tape is None:
        return out
    return _node(tape, out, [(a, lambda g: g * mask)])


def tanh(a):
    tape = _tape_of(a)
    out = np.tanh(value_of(a))
    if tape is None:
        return out
    return _node(tape, out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a):
    tape = _tape_of(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * value_of(a)))
    if tape is None:
        return out
    return _node(tape, out, [(a, lambda g: g * out * (1.0 - out))])


def log(a, eps: float = 1e-12):
    """Natural log clamped as ln(max(eps, a)); gradient is zero where clamped."""
    tape = _tape_of(a)
    av = value_of(a)
    safe = np.maximum(av, eps)
    out = np.log(safe)
    if tape is None:
        return out
    live = av > eps
    return _node(tape, out, [(a, lambda g: np.where(live, g / safe, 0.0))])


def abs_(a):
    """Absolute value with subgradient sign(a), 0 at 0."""
    tape = _tape_of(a)
    av = value_of(a)
    out = np.abs(av)
    if tape is None:
        return out
    return _node(tape, out, [(a, lambda g: g * np.sign(av))])


# -------------------------------------------------------------- restructuring


def concat(parts: Sequence, axis: int = -1):
    tape = _tape_of(*parts)
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])
    pairs = []
    for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
        idx = [slice(None)] * out.ndim
        idx[ax] = slice(int(lo), int(hi))
        pairs.append((p, lambda g, idx=tuple(idx): g[idx]))
    return _node(tape, out, pairs)


def getitem(a, key):
    tape = _tape_of(a)
    av = value_of(a)
    out = av[key]
    if tape is None:
        return out

    def back(g):
        full = np.zeros_like(av)
        np.add.at(full, key, g)
        return full

    return _node(tape, np.array(out), [(a, back)])


def reshape(a, shape):
    tape = _tape_of(a)
    av = value_of(a)
    out = av.reshape(shape)
    if tape is None:
        return out
    return _node(tape, out, [(a, lambda g: g.reshape(av.shape))])


# ---------------------------------------------------------------- reductions


def _expand(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum_(a, axis: int | None = None):
    tape = _tape_of(a)
    av = value_of(a)
    out = np.asarray(av.sum(axis=axis))
    if tape is None:
        return out
    return _node(tape, out, [(a, lambda g: np.array(_expand(g, av.shape, axis)))])


def mean(a, axis: int | None = None):
    av = value_of(a)
    n = av.size if axis is None else av.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def sq_norm(a, axis: int | None = None):
    """Sum of squares (squared L2 norm), optionally along one axis."""
    tape = _tape_of(a)
    av = value_of(a)
    out = np.asarray((av * av).sum(axis=axis))
    if tape is None:
        return out
    return _node(tape, out, [(a, lambda g: 2.0 * av * _expand(g, av.shape, axis))])


def l2_norm(a, axis: int | None = None):
    """Euclidean norm; subgradient 0 at the origin."""
    tape = _tape_of(a)
    av = value_of(a)
    out = np.sqrt(np.asarray((av * av).sum(axis=axis)))
    if tape is None:
        return out

    def back(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return av * _expand(scale, av.shape, axis)

    return _node(tape, out, [(a, back)])


def l1_norm(a, axis: int | None = None):
    """Sum of absolute values; subgradient sign(a), 0 at 0."""
    tape = _tape_of(a)
    av = value_of(a)
    out = np.asarray(np.abs(av).sum(axis=axis))
    if tape is None:
        return out
    return _node(tape, out, [(a, lambda g: np.sign(av) * _expand(g, av.shape, axis))])


# ------------------------------------------------------------------ backward


def grad(out: Var, leaves: Sequence[Var]) -> list[np.ndarray]:
    """Exact reverse-mode gradients of scalar ``out`` w.r.t. each leaf.

    Returns one array per leaf, shaped like the leaf.  Leaves that ``out``
    does not depend on get zeros.
    """
    if not isinstance(out, Var):
        raise GradError("output is not recorded on a tape")
    if out.value.size != 1:
        raise GradError(f"gradient requires a scalar output, got shape {out.value.shape}")
    tape = out.tape
    for leaf in leaves:
        if not isinstance(leaf, Var) or leaf.tape is not tape or tape.nodes[leaf.index] is not leaf:
            raise UnknownLeafError(f"{leaf!r} is not a node of this tape")

    adj: list[np.ndarray | None] = [None] * (out.index + 1)
    adj[out.index] = np.ones_like(out.value)
    nodes = tape.nodes
    for i in range(out.index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        for parent, vjp in nodes[i].parents:
            contrib = vjp(g)
            j = parent.index
            adj[j] = contrib if adj[j] is None else adj[j] + contrib

    result = []
    for leaf in leaves:
        g = adj[leaf.index] if leaf.index <= out.index else None
        result.append(np.zeros_like(leaf.value) if g is None else np.array(g, dtype=np.float64))
    return result


def value_and_grad(fn: Callable, *args):
    """Evaluate ``fn(*leaves)`` on a fresh tape and return (value, grads)."""
    tape = Tape()
    leaves = [tape.leaf(a) for a in args]
    out = fn(*leaves)
    return float(out.value), grad(out, leaves)
