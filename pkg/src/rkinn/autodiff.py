"""Minimal automatic differentiation for the surrogate and its losses.

Two pieces:

* ``Var``: a reverse-mode tape node over numpy arrays. Building expressions
  from Vars records the graph; ``grad`` accumulates vector-Jacobian products
  in reverse creation order, which is deterministic for a fixed expression.
* ``Dual``: forward-mode dual numbers carrying (value, tangent). Arithmetic
  obeys the chain rule exactly. The payloads can themselves be Vars, which is
  how time-derivatives of the surrogate stay differentiable with respect to
  the weights (forward over reverse).

The math functions at module level (tanh, sigmoid, exp, ...) dispatch on the
argument type so one implementation of a model works for plain numpy
evaluation, tape evaluation, and tangent propagation.
"""

from __future__ import annotations

import itertools

import numpy as np

from .linalg import NumericalError

_counter = itertools.count()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over the axes numpy broadcast when producing it from `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def value_of(x):
    return x.value if isinstance(x, Var) else x


class Var:
    """Reverse-mode tape node wrapping a numpy array."""

    __slots__ = ("value", "grad", "name", "_parents", "_vjp", "_order")

    # Make ndarray <op> Var dispatch to our reflected methods instead of
    # numpy building an object array.
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, name=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.name = name
        self._parents = tuple(p for p in parents if isinstance(p, Var))
        self._vjp = vjp
        self._order = next(_counter)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = self.name or "var"
        return f"Var({label}, shape={self.value.shape})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        a, bv = self, value_of(other)
        out = Var(a.value + bv, parents=(a, other),
                  vjp=lambda g: (_unbroadcast(g, a.value.shape),
                                 _unbroadcast(g, np.shape(bv)) if isinstance(other, Var) else None))
        return out

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        a, bv = self, value_of(other)
        return Var(a.value - bv, parents=(a, other),
                   vjp=lambda g: (_unbroadcast(g, a.value.shape),
                                  _unbroadcast(-g, np.shape(bv)) if isinstance(other, Var) else None))

    def __rsub__(self, other):
        a, bv = self, value_of(other)
        return Var(bv - a.value, parents=(a,),
                   vjp=lambda g: (_unbroadcast(-g, a.value.shape),))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        a, bv = self, value_of(other)
        av = a.value
        return Var(av * bv, parents=(a, other),
                   vjp=lambda g: (_unbroadcast(g * bv, av.shape),
                                  _unbroadcast(g * av, np.shape(bv)) if isinstance(other, Var) else None))

    __rmul__ = __mul__

    def __neg__(self):
        a = self
        return Var(-a.value, parents=(a,), vjp=lambda g: (-g,))

    def __truediv__(self, other):
        a, bv = self, value_of(other)
        av = a.value
        return Var(av / bv, parents=(a, other),
                   vjp=lambda g: (_unbroadcast(g / bv, av.shape),
                                  _unbroadcast(-g * av / (bv * bv), np.shape(bv))
                                  if isinstance(other, Var) else None))

    def __rtruediv__(self, other):
        a, bv = self, value_of(other)
        av = a.value
        return Var(bv / av, parents=(a,),
                   vjp=lambda g: (_unbroadcast(-g * bv / (av * av), av.shape),))

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        a, bv = self, value_of(other)
        av = a.value
        if av.ndim != 2 or np.ndim(bv) != 2:
            raise NumericalError("tape matmul supports 2-d operands only")
        return Var(av @ bv, parents=(a, other),
                   vjp=lambda g: (g @ bv.T,
                                  av.T @ g if isinstance(other, Var) else None))

    def __rmatmul__(self, other):
        a, bv = self, value_of(other)
        av = a.value
        if av.ndim != 2 or np.ndim(bv) != 2:
            raise NumericalError("tape matmul supports 2-d operands only")
        return Var(bv @ av, parents=(a,), vjp=lambda g: (bv.T @ g,))

    def __getitem__(self, key):
        a = self
        val = a.value[key]

        def vjp(g):
            out = np.zeros_like(a.value)
            out[key] = g
            return (out,)

        return Var(val, parents=(a,), vjp=vjp)


def custom(value, parents, vjp, name=None) -> Var:
    """Build a tape node with a user-supplied vector-Jacobian product."""
    return Var(value, parents=parents, vjp=vjp, name=name)


def concat(parts, axis=0) -> Var:
    """Concatenate Vars (and array constants) along an axis."""
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(p, Var):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                grads.append(g[tuple(idx)])
            else:
                grads.append(None)
        return tuple(grads)

    return Var(out, parents=tuple(parts), vjp=vjp)


def vsum(x, axis=None):
    """Sum of a Var/Dual/ndarray, differentiable."""
    if isinstance(x, Dual):
        return Dual(vsum(x.value, axis), vsum(x.tangent, axis))
    if isinstance(x, Var):
        a = x
        val = a.value.sum(axis=axis)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, a.value.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), a.value.shape).copy(),)

        return Var(val, parents=(a,), vjp=vjp)
    return np.sum(x, axis=axis)


def _unary(x, fn, dfn_from_out=None, dfn_from_in=None):
    """Common scaffolding for elementwise functions.

    Exactly one of dfn_from_out (derivative as a function of the output) or
    dfn_from_in (of the input) must be given.
    """
    if isinstance(x, Dual):
        out = _unary(x.value, fn, dfn_from_out, dfn_from_in)
        d = dfn_from_out(out) if dfn_from_out else dfn_from_in(x.value)
        return Dual(out, d * x.tangent)
    if isinstance(x, Var):
        out_val = fn(x.value)
        if dfn_from_out:
            return Var(out_val, parents=(x,),
                       vjp=lambda g, o=out_val: (g * dfn_from_out(o),))
        return Var(out_val, parents=(x,),
                   vjp=lambda g, xv=x.value: (g * dfn_from_in(xv),))
    return fn(x)


def tanh(x):
    return _unary(x, np.tanh, dfn_from_out=lambda o: 1.0 - _sq(o))


def _sq(v):
    return v * v


def exp(x):
    return _unary(x, np.exp, dfn_from_out=lambda o: o)


def log(x):
    return _unary(x, np.log, dfn_from_in=lambda v: 1.0 / v)


def _np_sigmoid(v):
    out = np.empty_like(np.asarray(v, dtype=float))
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    return _unary(x, _np_sigmoid, dfn_from_out=lambda o: o * (1.0 - o))


def swish(x):
    return x * sigmoid(x)


def rbf(x):
    return exp(-(x * x))


class Dual:
    """Forward-mode dual number: value plus tangent, chain rule exact.

    Payloads can be numpy arrays or tape Vars; mixing a Dual with a plain
    array or Var treats the latter as tangent-free.
    """

    __slots__ = ("value", "tangent")

    __array_ufunc__ = None

    def __init__(self, value, tangent):
        self.value = value
        self.tangent = tangent

    @staticmethod
    def _tan(other):
        return other.tangent if isinstance(other, Dual) else None

    @staticmethod
    def _value(other):
        return other.value if isinstance(other, Dual) else other

    def __add__(self, other):
        ot = Dual._tan(other)
        return Dual(self.value + Dual._value(other),
                    self.tangent if ot is None else self.tangent + ot)

    __radd__ = __add__

    def __sub__(self, other):
        ot = Dual._tan(other)
        return Dual(self.value - Dual._value(other),
                    self.tangent if ot is None else self.tangent - ot)

    def __rsub__(self, other):
        return Dual(other - self.value, -self.tangent)

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def __mul__(self, other):
        ov, ot = Dual._value(other), Dual._tan(other)
        tan = self.tangent * ov
        if ot is not None:
            tan = tan + self.value * ot
        return Dual(self.value * ov, tan)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.value
            val = self.value * inv
            return Dual(val, (self.tangent - val * other.tangent) * inv)
        return Dual(self.value / other, self.tangent / other)

    def __matmul__(self, other):
        ov, ot = Dual._value(other), Dual._tan(other)
        tan = self.tangent @ ov
        if ot is not None:
            tan = tan + self.value @ ot
        return Dual(self.value @ ov, tan)

    def __rmatmul__(self, other):
        return Dual(other @ self.value, other @ self.tangent)

    def __getitem__(self, key):
        return Dual(self.value[key], self.tangent[key])


# The spec-facing name for the forward-mode carrier.
TangentScalar = Dual


def grad(out: Var, leaves) -> list[np.ndarray]:
    """Reverse accumulation of d(out)/d(leaf) for a scalar output Var.

    Raises NumericalError naming the offending leaf if any partial is
    non-finite.
    """
    if out.value.shape != ():
        raise NumericalError("grad expects a scalar output")

    seen: dict[int, Var] = {}
    stack = [out]
    nodes: list[Var] = []
    while stack:
        v = stack.pop()
        if id(v) in seen:
            continue
        seen[id(v)] = v
        nodes.append(v)
        stack.extend(v._parents)
    nodes.sort(key=lambda v: v._order, reverse=True)

    for v in nodes:
        v.grad = None
    out.grad = np.ones(())
    for v in nodes:
        if v.grad is None or v._vjp is None:
            continue
        for parent, g in zip(v._parents, v._vjp(v.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g

    grads = []
    for leaf in leaves:
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        if not np.all(np.isfinite(g)):
            raise NumericalError(
                f"non-finite gradient for parameter {leaf.name or 'unnamed'}")
        grads.append(g)
    return grads
