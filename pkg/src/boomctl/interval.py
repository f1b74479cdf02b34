"""
Vectorized interval arithmetic with outward rounding.

An :class:`Interval` holds two numpy arrays ``lo`` and ``hi`` so that a whole
batch of boxes is evaluated in one pass. Every arithmetic result is widened
by one ulp in each direction (``np.nextafter``), which contains the exact
result of correctly rounded ``+ - * /``. ``sin``/``cos`` rely on the platform
libm (not guaranteed correctly rounded) and are widened by two ulps plus a
tiny absolute pad; this is conservative in practice but not a formal proof.

:class:`Dual` carries an interval value together with interval enclosures of
its partial derivatives, which is what :func:`centered_enclosure` needs for
the mean-value form.
"""

from __future__ import annotations

import math

import numpy as np

_INF = np.inf
_TRIG_PAD = 1e-300


def _down(x):
    return np.nextafter(x, -_INF)


def _up(x):
    return np.nextafter(x, _INF)


class Interval:
    __slots__ = ("lo", "hi")
    __array_ufunc__ = None

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        self.lo, self.hi = np.broadcast_arrays(lo, hi)

    @classmethod
    def point(cls, x):
        return cls(x, x)

    def __repr__(self):
        return f"Interval({self.lo!r}, {self.hi!r})"

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self):
        return self.hi - self.lo

    def mag(self):
        """Largest absolute value contained."""
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def contains(self, x):
        return (self.lo <= x) & (x <= self.hi)

    def intersect(self, other):
        return Interval(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    # -- arithmetic -------------------------------------------------------

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __add__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        if isinstance(other, Interval):
            return Interval(_down(self.lo + other.lo), _up(self.hi + other.hi))
        other = np.asarray(other, dtype=float)
        return Interval(_down(self.lo + other), _up(self.hi + other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        if isinstance(other, Interval):
            return Interval(_down(self.lo - other.hi), _up(self.hi - other.lo))
        other = np.asarray(other, dtype=float)
        return Interval(_down(self.lo - other), _up(self.hi - other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        if not isinstance(other, Interval):
            other = np.asarray(other, dtype=float)
            a, b = self.lo * other, self.hi * other
            return Interval(_down(np.minimum(a, b)), _up(np.maximum(a, b)))
        p = (self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi)
        lo = np.minimum(np.minimum(p[0], p[1]), np.minimum(p[2], p[3]))
        hi = np.maximum(np.maximum(p[0], p[1]), np.maximum(p[2], p[3]))
        # 0 * inf produces nan; treat as unbounded
        lo = np.where(np.isnan(lo), -_INF, lo)
        hi = np.where(np.isnan(hi), _INF, hi)
        return Interval(_down(lo), _up(hi))

    __rmul__ = __mul__

    def reciprocal(self):
        bad = (self.lo <= 0) & (self.hi >= 0)
        with np.errstate(divide="ignore"):
            lo = np.where(bad, -_INF, _down(1.0 / self.hi))
            hi = np.where(bad, _INF, _up(1.0 / self.lo))
        return Interval(lo, hi)

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        if not isinstance(other, Interval):
            other = Interval.point(other)
        bad = (other.lo <= 0) & (other.hi >= 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = (self.lo / other.lo, self.lo / other.hi, self.hi / other.lo, self.hi / other.hi)
        lo = np.minimum(np.minimum(q[0], q[1]), np.minimum(q[2], q[3]))
        hi = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
        lo = np.where(bad | np.isnan(lo), -_INF, _down(lo))
        hi = np.where(bad | np.isnan(hi), _INF, _up(hi))
        return Interval(lo, hi)

    def __rtruediv__(self, other):
        return Interval.point(other) / self

    def sqr(self):
        a, b = self.lo * self.lo, self.hi * self.hi
        straddle = (self.lo <= 0) & (self.hi >= 0)
        lo = np.where(straddle, 0.0, _down(np.minimum(a, b)))
        return Interval(np.maximum(lo, 0.0), _up(np.maximum(a, b)))

    # -- transcendental ---------------------------------------------------

    def _trig(self, fn, peak_offset):
        # fn attains +1 at peak_offset + 2 k pi and -1 half a period later
        two_pi = 2.0 * math.pi
        a, b = fn(self.lo), fn(self.hi)
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        kmax = np.ceil((self.lo - peak_offset) / two_pi)
        has_max = peak_offset + two_pi * kmax <= self.hi
        kmin = np.ceil((self.lo - peak_offset - math.pi) / two_pi)
        has_min = peak_offset + math.pi + two_pi * kmin <= self.hi
        wide = (self.hi - self.lo) >= two_pi
        hi = np.where(has_max | wide, 1.0, _up(_up(hi)) + _TRIG_PAD)
        lo = np.where(has_min | wide, -1.0, _down(_down(lo)) - _TRIG_PAD)
        return Interval(np.maximum(lo, -1.0), np.minimum(hi, 1.0))

    def sin(self):
        return self._trig(np.sin, 0.5 * math.pi)

    def cos(self):
        return self._trig(np.cos, 0.0)


def isin(x):
    return x.sin() if isinstance(x, (Interval, Dual)) else np.sin(x)


def icos(x):
    return x.cos() if isinstance(x, (Interval, Dual)) else np.cos(x)


class Dual:
    """Interval value with interval enclosures of its gradient."""

    __slots__ = ("v", "g")
    __array_ufunc__ = None

    def __init__(self, v, g):
        self.v = v
        self.g = tuple(g)

    @classmethod
    def variable(cls, v, index, n):
        zero = Interval.point(np.zeros_like(v.lo))
        one = Interval.point(np.ones_like(v.lo))
        return cls(v, [one if i == index else zero for i in range(n)])

    def __neg__(self):
        return Dual(-self.v, [-gi for gi in self.g])

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.v + other.v, [a + b for a, b in zip(self.g, other.g)])
        return Dual(self.v + other, self.g)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.v - other.v, [a - b for a, b in zip(self.g, other.g)])
        return Dual(self.v - other, self.g)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.v * other.v,
                        [a * other.v + self.v * b for a, b in zip(self.g, other.g)])
        return Dual(self.v * other, [gi * other for gi in self.g])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.v / other.v
            return Dual(q, [(a - q * b) / other.v for a, b in zip(self.g, other.g)])
        return Dual(self.v / other, [gi / other for gi in self.g])

    def __rtruediv__(self, other):
        q = other / self.v
        return Dual(q, [-(q * gi) / self.v for gi in self.g])

    def sin(self):
        c = self.v.cos()
        return Dual(self.v.sin(), [c * gi for gi in self.g])

    def cos(self):
        s = self.v.sin()
        return Dual(self.v.cos(), [-(s * gi) for gi in self.g])

    def pad(self, r):
        """Widen value and every gradient component by ``[-r, r]``."""
        rr = Interval(-r, r)
        return Dual(self.v + rr, [gi + rr for gi in self.g])


def centered_enclosure(f, boxes):
    """Enclosure of ``f`` over a batch of boxes by the mean-value form.

    Parameters
    ----------
    f : callable
        Function of ``n`` interval-like arguments built from the operations
        supported by :class:`Interval` and :class:`Dual`.
    boxes : sequence of Interval
        One interval (batch) per coordinate.

    Returns
    -------
    Interval
        Intersection of the natural extension and the mean-value form
        ``f(c) + sum_i df/dx_i(X) (X_i - c_i)``.
    """
    n = len(boxes)
    duals = [Dual.variable(b, i, n) for i, b in enumerate(boxes)]
    over = f(*duals)
    centers = [Interval.point(b.mid) for b in boxes]
    fc = f(*centers)
    mv = fc
    for gi, b, c in zip(over.g, boxes, centers):
        mv = mv + gi * (b - c)
    return over.v.intersect(mv)
