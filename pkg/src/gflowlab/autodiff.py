"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the handful of operations an MLP policy and the balance losses need are
supported. Every operation on a :class:`Var` evaluates eagerly and, if the
operand lives on a :class:`Tape`, appends a node holding the local
vector-Jacobian products. :meth:`Tape.backward` then walks the nodes in
reverse creation order, which is a reverse topological order by
construction.

    >>> tape = Tape()
    >>> x = tape.variable(np.array([1.0, 2.0]))
    >>> y = (x * x).sum()
    >>> tape.backward(y)[x]
    array([2., 4.])
"""

from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    pass


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Var:
    __slots__ = ("value", "tape", "_id")
    # make numpy binops defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, tape=None, _id=None):
        self.value = value
        self.tape = tape
        self._id = _id

    def __repr__(self):
        return f"Var({self.value!r})"

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __float__(self):
        return float(self.value)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = _lift(other, self.tape)
        out = self.value + other.value
        sa, sb = np.shape(self.value), np.shape(other.value)
        return _record(out, [(self, lambda g: _unbroadcast(g, sa)), (other, lambda g: _unbroadcast(g, sb))])

    __radd__ = __add__

    def __neg__(self):
        return _record(-self.value, [(self, lambda g: -g)])

    def __sub__(self, other):
        return self + (-_lift(other, self.tape))

    def __rsub__(self, other):
        return _lift(other, self.tape) + (-self)

    def __mul__(self, other):
        other = _lift(other, self.tape)
        a, b = self.value, other.value
        sa, sb = np.shape(a), np.shape(b)
        return _record(a * b, [(self, lambda g: _unbroadcast(g * b, sa)), (other, lambda g: _unbroadcast(g * a, sb))])

    __rmul__ = __mul__

    def __pow__(self, k):
        if not isinstance(k, (int, float)):
            raise TypeError("only constant exponents are supported")
        a = self.value
        return _record(a**k, [(self, lambda g: g * k * a ** (k - 1))])

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        a = self.value
        out = a[idx]

        def vjp(g):
            full = np.zeros_like(a, dtype=np.float64)
            np.add.at(full, idx, g)
            return full

        return _record(out, [(self, vjp)])

    def sum(self, axis=None):
        a = self.value
        out = np.sum(a, axis=axis)
        if axis is None:
            return _record(out, [(self, lambda g: np.broadcast_to(g, np.shape(a)).copy())])
        return _record(out, [(self, lambda g: np.broadcast_to(np.expand_dims(g, axis), np.shape(a)).copy())])

    def reshape(self, *shape):
        a = self.value
        return _record(np.reshape(a, shape if len(shape) > 1 else shape[0]), [(self, lambda g: np.reshape(g, np.shape(a)))])

    def tanh(self):
        y = np.tanh(self.value)
        return _record(y, [(self, lambda g: g * (1.0 - y * y))])

    def exp(self):
        y = np.exp(self.value)
        return _record(y, [(self, lambda g: g * y)])

    def log(self):
        a = self.value
        return _record(np.log(a), [(self, lambda g: g / a)])


def _lift(x, tape):
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64), None)


def _record(value, parents):
    tape = None
    live = []
    for v, fn in parents:
        if v.tape is not None:
            if tape is not None and v.tape is not tape:
                raise TapeError("operands recorded on different tapes")
            tape = v.tape
            live.append((v._id, fn))
    if tape is None:
        return Var(value)
    return tape._push(value, live)


def matmul(a, b):
    tape = a.tape if isinstance(a, Var) and a.tape is not None else getattr(b, "tape", None)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    out = av @ bv

    def ga(g):
        if bv.ndim == 1:
            return np.outer(g, bv) if av.ndim == 2 else g * bv
        return g @ bv.T if av.ndim == 2 else bv @ g

    def gb(g):
        if av.ndim == 1:
            return np.outer(av, g) if bv.ndim == 2 else g * av
        return av.T @ g if bv.ndim == 2 else g @ av

    return _record(out, [(a, ga), (b, gb)])


def tanh(x):
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


def masked_log_softmax(logits, mask):
    """Row-wise log-softmax restricted to entries where ``mask`` is True.

    Masked-out positions are returned as 0 and carry no gradient; callers
    must never read them as log-probabilities.
    """
    mask = np.asarray(mask, dtype=bool)
    x = logits.value if isinstance(logits, Var) else np.asarray(logits)
    shifted = np.where(mask, x, -np.inf)
    m = shifted.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # rows with no valid entry
    e = np.where(mask, np.exp(shifted - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    s = np.where(s > 0, s, 1.0)
    out = np.where(mask, x - m - np.log(s), 0.0)
    if not isinstance(logits, Var):
        return out
    p = e / s

    def vjp(g):
        g = np.where(mask, g, 0.0)
        return g - p * g.sum(axis=-1, keepdims=True)

    return _record(out, [(logits, vjp)])


class Tape:
    """Records one evaluation; ``backward`` may be called once."""

    def __init__(self):
        self._values = []
        self._parents = []
        self._leaves = []
        self._done = False

    def __len__(self):
        return len(self._values)

    def variable(self, value) -> Var:
        v = self._push(np.asarray(value, dtype=np.float64), [])
        self._leaves.append(v._id)
        return v

    def _push(self, value, parents):
        if self._done:
            raise TapeError("tape already differentiated; record a new one")
        self._values.append(value)
        self._parents.append(parents)
        return Var(value, self, len(self._values) - 1)

    def backward(self, loss: Var) -> "Gradients":
        if self._done:
            raise TapeError("backward already ran on this tape")
        if loss.tape is not self:
            if loss.tape is None:
                self._done = True
                return Gradients({i: np.zeros_like(self._values[i]) for i in self._leaves})
            raise TapeError("loss was not recorded on this tape")
        if np.ndim(loss.value) != 0:
            raise TapeError("backward needs a scalar loss")
        self._done = True
        grads = [None] * len(self._values)
        grads[loss._id] = np.ones_like(loss.value, dtype=np.float64)
        visited = 0
        for i in range(loss._id, -1, -1):
            g = grads[i]
            if g is None:
                continue
            visited += 1
            for pid, fn in self._parents[i]:
                contrib = fn(g)
                grads[pid] = contrib if grads[pid] is None else grads[pid] + contrib
        self.nodes_visited = visited
        return Gradients({i: (grads[i] if grads[i] is not None else np.zeros_like(self._values[i])) for i in self._leaves})


class Gradients:
    def __init__(self, by_id):
        self._by_id = by_id

    def __getitem__(self, var: Var) -> np.ndarray:
        return np.asarray(self._by_id[var._id], dtype=np.float64)


def grad(tape: Tape, loss: Var, wrt: Var) -> np.ndarray:
    """Gradient of ``loss`` with respect to the leaf ``wrt``."""
    return tape.backward(loss)[wrt]
