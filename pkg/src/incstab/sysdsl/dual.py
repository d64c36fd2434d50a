"""Forward-mode dual numbers.

A :class:`DualScalar` carries a value and a tuple of partial derivatives, one
per active seed direction. Values and partials may be floats or equally shaped
numpy arrays, so one dual pass can differentiate at many points at once.
"""

from __future__ import annotations

import math

import numpy as np


class DualScalar:
    __slots__ = ("value", "partials")

    def __init__(self, value, partials):
        self.value = value
        self.partials = tuple(partials)

    def __repr__(self):
        return f"DualScalar({self.value!r}, {self.partials!r})"

    def chain(self, value, slope) -> "DualScalar":
        """Result of applying a unary function with derivative ``slope`` here."""
        return DualScalar(value, tuple(slope * d for d in self.partials))

    def __add__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(self.value + other.value,
                              tuple(a + b for a, b in zip(self.partials, other.partials)))
        return DualScalar(self.value + other, self.partials)

    __radd__ = __add__

    def __neg__(self):
        return DualScalar(-self.value, tuple(-d for d in self.partials))

    def __sub__(self, other):
        if isinstance(other, DualScalar):
            return DualScalar(self.value - other.value,
                              tuple(a - b for a, b in zip(self.partials, other.partials)))
        return DualScalar(self.value - other, self.partials)

    def __rsub__(self, other):
        return DualScalar(other - self.value, tuple(-d for d in self.partials))

    def __mul__(self, other):
        if isinstance(other, DualScalar):
            u, v = self.value, other.value
            return DualScalar(u * v, tuple(u * b + v * a
                                           for a, b in zip(self.partials, other.partials)))
        return DualScalar(self.value * other, tuple(other * d for d in self.partials))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DualScalar):
            u, v = self.value, other.value
            q = u / v
            return DualScalar(q, tuple((a - q * b) / v
                                       for a, b in zip(self.partials, other.partials)))
        return DualScalar(self.value / other, tuple(d / other for d in self.partials))

    def __rtruediv__(self, other):
        q = other / self.value
        return DualScalar(q, tuple(-q * d / self.value for d in self.partials))

    def __pow__(self, other):
        if not isinstance(other, DualScalar) and float(other).is_integer() and other >= 0:
            return ipow(self, int(other))
        return rpow(self, other)

    def __rpow__(self, other):
        return rpow(other, self)


def _is_scalar(a) -> bool:
    return isinstance(a, (float, int))


def seed(values, direction: int | None = None) -> list[DualScalar]:
    """Wrap ``values`` as dual numbers.

    With ``direction=j`` a single partial is carried, seeded along coordinate
    ``j``; with ``None`` every coordinate gets its own partial slot.
    """
    n = len(values)
    out = []
    for i, v in enumerate(values):
        zero = 0.0 if _is_scalar(v) else np.zeros_like(v)
        one = 1.0 if _is_scalar(v) else np.ones_like(v)
        if direction is None:
            out.append(DualScalar(v, [one if k == i else zero for k in range(n)]))
        else:
            out.append(DualScalar(v, [one if i == direction else zero]))
    return out


def value_of(a):
    return a.value if isinstance(a, DualScalar) else a


def partials_of(a, k: int):
    """Partials of ``a`` (zeros if ``a`` is a plain constant)."""
    if isinstance(a, DualScalar):
        return a.partials
    return (0.0,) * k


# elementary functions: (f, f') pairs applied with float/array dispatch
def _unary(fm, fn, dm):
    def apply(a):
        if isinstance(a, DualScalar):
            v = a.value
            return a.chain(_np_or_math(v, fm, fn), dm(v))
        return _np_or_math(a, fm, fn)
    return apply


def _np_or_math(v, fm, fn):
    if _is_scalar(v):
        try:
            return fm(v)
        except OverflowError:
            with np.errstate(over="ignore"):
                return float(fn(v))
    return fn(v)


sin = _unary(math.sin, np.sin, lambda v: _np_or_math(v, math.cos, np.cos))
cos = _unary(math.cos, np.cos, lambda v: -_np_or_math(v, math.sin, np.sin))
tan = _unary(math.tan, np.tan, lambda v: 1.0 / _np_or_math(v, math.cos, np.cos) ** 2)
exp = _unary(math.exp, np.exp, lambda v: _np_or_math(v, math.exp, np.exp))
log = _unary(math.log, np.log, lambda v: 1.0 / v)
sqrt = _unary(math.sqrt, np.sqrt, lambda v: 0.5 / _np_or_math(v, math.sqrt, np.sqrt))
tanh = _unary(math.tanh, np.tanh, lambda v: 1.0 - _np_or_math(v, math.tanh, np.tanh) ** 2)
sinh = _unary(math.sinh, np.sinh, lambda v: _np_or_math(v, math.cosh, np.cosh))
cosh = _unary(math.cosh, np.cosh, lambda v: _np_or_math(v, math.sinh, np.sinh))
atan = _unary(math.atan, np.arctan, lambda v: 1.0 / (1.0 + v * v))


def _power(v, k):
    try:
        return v ** k
    except OverflowError:
        return math.copysign(math.inf, v) if k % 2 else math.inf


def _real_power(a, b):
    try:
        return a ** b
    except OverflowError:
        return math.inf


def rpow(a, b):
    """``a ** b`` for a positive base and any real exponent."""
    if not isinstance(b, DualScalar):
        if isinstance(a, DualScalar):
            v = _real_power(a.value, b)
            return a.chain(v, b * _real_power(a.value, b - 1))
        return _real_power(a, b)
    return exp(b * log(a))


def ipow(a, k: int):
    """``a ** k`` for a non-negative integer ``k``."""
    if k == 0:
        return 1.0
    if isinstance(a, DualScalar):
        v = a.value
        return a.chain(_power(v, k), k * _power(v, k - 1))
    return _power(a, k)
