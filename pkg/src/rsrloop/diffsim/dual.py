"""Forward-mode dual numbers over numpy arrays.

A :class:`Dual` carries a value array and a tangent array with one extra
trailing axis, one slot per seeded input. Only the ufuncs the dynamics use
are supported; anything else raises so silent derivative loss can't happen.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.mixins import NDArrayOperatorsMixin
from scipy.special import expit


def _split(x):
    if isinstance(x, Dual):
        return x.value, x.tangent
    return np.asarray(x, dtype=float), None


def _scale(t, f):
    """Tangent ``t`` times value-shaped factor ``f``; ``None`` is a zero tangent."""
    if t is None:
        return None
    return t * np.asarray(f)[..., None]


def _add(t1, t2):
    if t1 is None:
        return t2
    if t2 is None:
        return t1
    return t1 + t2


def _wrap(v, t):
    if t is None:
        return v
    # keep tangent shape aligned with the broadcast value shape
    t = np.broadcast_to(t, np.shape(v) + t.shape[-1:])
    return Dual(v, t)


class Dual(NDArrayOperatorsMixin):
    __slots__ = ("value", "tangent")

    def __init__(self, value, tangent):
        self.value = np.asarray(value, dtype=float)
        self.tangent = np.asarray(tangent, dtype=float)

    @classmethod
    def seed(cls, values) -> list:
        """One independent variable per entry of ``values``."""
        values = np.asarray(values, dtype=float)
        eye = np.eye(len(values))
        return [cls(values[i], eye[i]) for i in range(len(values))]

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Dual({self.value!r}, {self.tangent!r})"

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            return NotImplemented
        rule = _RULES.get(ufunc)
        if rule is None:
            raise TypeError(f"Dual does not support ufunc {ufunc.__name__}")
        return rule(*inputs)


def _binary_add(a, b):
    (va, ta), (vb, tb) = _split(a), _split(b)
    return _wrap(va + vb, _add(ta, tb))


def _binary_sub(a, b):
    (va, ta), (vb, tb) = _split(a), _split(b)
    return _wrap(va - vb, _add(ta, None if tb is None else -tb))


def _binary_mul(a, b):
    (va, ta), (vb, tb) = _split(a), _split(b)
    return _wrap(va * vb, _add(_scale(ta, vb), _scale(tb, va)))


def _binary_div(a, b):
    (va, ta), (vb, tb) = _split(a), _split(b)
    v = va / vb
    t = _add(_scale(ta, 1.0 / vb), _scale(tb, -v / vb))
    return _wrap(v, t)


def _neg(a):
    va, ta = _split(a)
    return _wrap(-va, None if ta is None else -ta)


def _unary(f, df):
    def rule(a):
        va, ta = _split(a)
        v = f(va)
        return _wrap(v, _scale(ta, df(va, v)))
    return rule


def _select(pick_first):
    def rule(a, b):
        return where(pick_first(value(a), value(b)), a, b)
    return rule


def _logaddexp(a, b):
    (va, ta), (vb, tb) = _split(a), _split(b)
    v = np.logaddexp(va, vb)
    wa = np.exp(va - v)
    wb = np.exp(vb - v)
    return _wrap(v, _add(_scale(ta, wa), _scale(tb, wb)))


_RULES = {
    np.add: _binary_add,
    np.subtract: _binary_sub,
    np.multiply: _binary_mul,
    np.true_divide: _binary_div,
    np.negative: _neg,
    np.positive: lambda a: a,
    np.tanh: _unary(np.tanh, lambda x, v: 1.0 - v * v),
    np.sin: _unary(np.sin, lambda x, v: np.cos(x)),
    np.cos: _unary(np.cos, lambda x, v: -np.sin(x)),
    np.exp: _unary(np.exp, lambda x, v: v),
    np.sqrt: _unary(np.sqrt, lambda x, v: 0.5 / v),
    np.square: _unary(np.square, lambda x, v: 2.0 * x),
    np.absolute: _unary(np.absolute, lambda x, v: np.sign(x)),
    np.logaddexp: _logaddexp,
    np.maximum: _select(lambda x, y: x >= y),
    np.minimum: _select(lambda x, y: x <= y),
}


def value(x):
    return x.value if isinstance(x, Dual) else x


def tangent(x, n):
    if isinstance(x, Dual):
        return np.broadcast_to(x.tangent, np.shape(x.value) + (n,))
    return np.zeros(np.shape(x) + (n,))


def where(cond, a, b):
    """``np.where`` that keeps tangents."""
    (va, ta), (vb, tb) = _split(a), _split(b)
    v = np.where(cond, va, vb)
    if ta is None and tb is None:
        return v
    n = (ta if ta is not None else tb).shape[-1]
    shape = np.shape(v)
    ta = np.zeros(shape + (n,)) if ta is None else np.broadcast_to(ta, shape + (n,))
    tb = np.zeros(shape + (n,)) if tb is None else np.broadcast_to(tb, shape + (n,))
    return Dual(v, np.where(np.broadcast_to(cond, shape)[..., None], ta, tb))


def softplus(x, beta):
    """Smooth ramp ``log(1 + exp(beta x)) / beta``."""
    return np.logaddexp(0.0, x * beta) / beta


def sigmoid(x, beta):
    """Derivative of :func:`softplus`; only used on values (no tangent)."""
    return expit(beta * value(x))
