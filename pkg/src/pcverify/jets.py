"""First-order interval jets: forward-mode derivatives over boxes.

A :class:`Jet` stores an interval value and an interval gradient with
respect to ``k`` inputs as two arrays ``lo, hi`` of length ``k + 1``
(index 0 is the value). Evaluating a function on jets seeded over a box
yields a sound enclosure of both its range and its Jacobian on that box,
which is what the mean-value reach step consumes.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import (
    DomainError,
    Interval,
    _interval_cos,
    _interval_sin,
    _interval_sqrt,
    _interval_tan,
    _sqr_interval,
    cos,
    sin,
    sqr,
    sqrt,
    tan,
)

__all__ = ["Jet", "Jet2", "jet_inputs"]

_NEG = -np.inf
_POS = np.inf


def _out(lo: np.ndarray, hi: np.ndarray) -> "Jet":
    return Jet(np.nextafter(lo, _NEG), np.nextafter(hi, _POS))


def _scale_pair(slo: float, shi: float, lo: np.ndarray, hi: np.ndarray) -> tuple:
    """Interval ``[slo, shi]`` times each interval ``[lo_i, hi_i]``."""
    if slo == shi:
        a, b = slo * lo, slo * hi
        return np.minimum(a, b), np.maximum(a, b)
    p1, p2, p3, p4 = slo * lo, slo * hi, shi * lo, shi * hi
    return np.minimum(np.minimum(p1, p2), np.minimum(p3, p4)), np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))


class Jet:
    __slots__ = ("lo", "hi")
    __array_ufunc__ = None

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo = lo
        self.hi = hi

    @classmethod
    def variable(cls, lo: float, hi: float, index: int, k: int) -> "Jet":
        a = np.zeros(k + 1)
        b = np.zeros(k + 1)
        a[0], b[0] = lo, hi
        a[index + 1] = b[index + 1] = 1.0
        return cls(a, b)

    @property
    def value(self) -> Interval:
        return Interval(float(self.lo[0]), float(self.hi[0]))

    @property
    def grad_lo(self) -> np.ndarray:
        return self.lo[1:]

    @property
    def grad_hi(self) -> np.ndarray:
        return self.hi[1:]

    def _chain(self, f: Interval, df: Interval) -> "Jet":
        """Result with value ``f`` and gradient ``df * grad``."""
        lo, hi = _scale_pair(df.lo, df.hi, self.lo, self.hi)
        lo[0], hi[0] = f.lo, f.hi
        return _out(lo, hi)

    def __add__(self, other):
        if isinstance(other, Jet):
            return _out(self.lo + other.lo, self.hi + other.hi)
        if isinstance(other, Interval):
            lo, hi = self.lo.copy(), self.hi.copy()
            lo[0] += other.lo
            hi[0] += other.hi
            return _out(lo, hi)
        lo, hi = self.lo.copy(), self.hi.copy()
        lo[0] += other
        hi[0] += other
        return _out(lo, hi)

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        return Jet(-self.hi, -self.lo)

    def __sub__(self, other):
        if isinstance(other, Jet):
            return _out(self.lo - other.hi, self.hi - other.lo)
        if isinstance(other, Interval):
            return self + Interval(-other.hi, -other.lo)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            lo, hi = _scale_pair(float(self.lo[0]), float(self.hi[0]), other.lo, other.hi)
            lo2, hi2 = _scale_pair(float(other.lo[0]), float(other.hi[0]), self.lo[1:], self.hi[1:])
            lo[1:] += lo2
            hi[1:] += hi2
            return _out(lo, hi)
        if isinstance(other, Interval):
            lo, hi = _scale_pair(other.lo, other.hi, self.lo, self.hi)
            return _out(lo, hi)
        other = float(other)
        a, b = self.lo * other, self.hi * other
        return _out(np.minimum(a, b), np.maximum(a, b))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Jet(value={self.value!r}, k={self.lo.size - 1})"


def _jet_sin(x: Jet) -> Jet:
    v = x.value
    return x._chain(_interval_sin(v), _interval_cos(v))


def _jet_cos(x: Jet) -> Jet:
    v = x.value
    s = _interval_sin(v)
    return x._chain(_interval_cos(v), Interval(-s.hi, -s.lo))


def _jet_tan(x: Jet) -> Jet:
    v = x.value
    t = _interval_tan(v)
    return x._chain(t, _sqr_interval(t) + 1.0)


def _jet_sqrt(x: Jet) -> Jet:
    v = x.value
    if v.lo <= 0.0:
        raise DomainError(f"sqrt derivative unbounded on {v}")
    s = _interval_sqrt(v)
    d = Interval(0.5 / s.hi, 0.5 / s.lo)
    return x._chain(s, Interval(math.nextafter(d.lo, -math.inf), math.nextafter(d.hi, math.inf)))


def _jet_sqr(x: Jet) -> Jet:
    v = x.value
    two_v = Interval(2.0 * v.lo, 2.0 * v.hi)
    return x._chain(_sqr_interval(v), two_v)


sin.register(Jet, _jet_sin)
cos.register(Jet, _jet_cos)
tan.register(Jet, _jet_tan)
sqrt.register(Jet, _jet_sqrt)
sqr.register(Jet, _jet_sqr)


def jet_inputs(lo: np.ndarray, hi: np.ndarray) -> list:
    """Independent jets for each coordinate of the box ``[lo, hi]``."""
    k = len(lo)
    return [Jet.variable(float(lo[i]), float(hi[i]), i, k) for i in range(k)]


# -- second order ----------------------------------------------------------

def _imul(alo, ahi, blo, bhi) -> tuple:
    """Elementwise (broadcast) interval product, not yet rounded."""
    if np.ndim(alo) == 0 and alo == ahi:
        # exact scalar: one product per bound, ordered by sign
        if alo >= 0:
            return alo * blo, alo * bhi
        return alo * bhi, alo * blo
    p1, p2, p3, p4 = alo * blo, alo * bhi, ahi * blo, ahi * bhi
    return np.minimum(np.minimum(p1, p2), np.minimum(p3, p4)), np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))


def _down(a):
    return np.nextafter(a, _NEG)


def _up(a):
    return np.nextafter(a, _POS)


class Jet2:
    """Interval value, gradient and Hessian with respect to ``k`` inputs.

    The Hessian is stored in full (``k x k``), symmetric by construction.
    """

    __slots__ = ("vlo", "vhi", "glo", "ghi", "hlo", "hhi")
    __array_ufunc__ = None

    def __init__(self, vlo, vhi, glo, ghi, hlo, hhi):
        self.vlo, self.vhi = vlo, vhi
        self.glo, self.ghi = glo, ghi
        self.hlo, self.hhi = hlo, hhi

    @classmethod
    def variable(cls, lo: float, hi: float, index: int, k: int) -> "Jet2":
        g = np.zeros(k)
        g[index] = 1.0
        h = np.zeros((k, k))
        return cls(float(lo), float(hi), g, g.copy(), h, h.copy())

    @classmethod
    def affine(cls, lo: float, hi: float, grad: np.ndarray) -> "Jet2":
        """Jet of an affine function with exact (point) gradient ``grad``."""
        k = grad.size
        h = np.zeros((k, k))
        return cls(float(lo), float(hi), grad.copy(), grad.copy(), h, h.copy())

    @property
    def k(self) -> int:
        return self.glo.size

    @property
    def value(self) -> Interval:
        return Interval(self.vlo, self.vhi)

    def _with_value(self, lo: float, hi: float) -> "Jet2":
        return Jet2(math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf),
                    self.glo, self.ghi, self.hlo, self.hhi)

    def __add__(self, other):
        if isinstance(other, Jet2):
            return Jet2(math.nextafter(self.vlo + other.vlo, -math.inf), math.nextafter(self.vhi + other.vhi, math.inf),
                        _down(self.glo + other.glo), _up(self.ghi + other.ghi),
                        _down(self.hlo + other.hlo), _up(self.hhi + other.hhi))
        if isinstance(other, Interval):
            return self._with_value(self.vlo + other.lo, self.vhi + other.hi)
        return self._with_value(self.vlo + other, self.vhi + other)

    __radd__ = __add__

    def __neg__(self) -> "Jet2":
        return Jet2(-self.vhi, -self.vlo, -self.ghi, -self.glo, -self.hhi, -self.hlo)

    def __sub__(self, other):
        if isinstance(other, Jet2):
            return self + (-other)
        if isinstance(other, Interval):
            return self._with_value(self.vlo - other.hi, self.vhi - other.lo)
        return self._with_value(self.vlo - other, self.vhi - other)

    def __rsub__(self, other):
        return (-self) + other

    def _scaled(self, slo: float, shi: float) -> "Jet2":
        vlo, vhi = _imul(slo, shi, self.vlo, self.vhi)
        glo, ghi = _imul(slo, shi, self.glo, self.ghi)
        hlo, hhi = _imul(slo, shi, self.hlo, self.hhi)
        return Jet2(math.nextafter(float(vlo), -math.inf), math.nextafter(float(vhi), math.inf),
                    _down(glo), _up(ghi), _down(hlo), _up(hhi))

    def __mul__(self, other):
        if isinstance(other, Jet2):
            u, v = self, other
            vlo, vhi = _imul(u.vlo, u.vhi, v.vlo, v.vhi)
            g1lo, g1hi = _imul(u.vlo, u.vhi, v.glo, v.ghi)
            g2lo, g2hi = _imul(v.vlo, v.vhi, u.glo, u.ghi)
            h1lo, h1hi = _imul(u.vlo, u.vhi, v.hlo, v.hhi)
            h2lo, h2hi = _imul(v.vlo, v.vhi, u.hlo, u.hhi)
            olo, ohi = _imul(u.glo[:, None], u.ghi[:, None], v.glo[None, :], v.ghi[None, :])
            return Jet2(math.nextafter(float(vlo), -math.inf), math.nextafter(float(vhi), math.inf),
                        _down(g1lo + g2lo), _up(g1hi + g2hi),
                        _down(h1lo + h2lo + olo + olo.T), _up(h1hi + h2hi + ohi + ohi.T))
        if isinstance(other, Interval):
            return self._scaled(other.lo, other.hi)
        other = float(other)
        return self._scaled(other, other)

    __rmul__ = __mul__

    def _chain(self, f: Interval, d1: Interval, d2: Interval) -> "Jet2":
        """Compose with a scalar function: value ``f``, derivatives ``d1``, ``d2``."""
        glo, ghi = _imul(d1.lo, d1.hi, self.glo, self.ghi)
        h1lo, h1hi = _imul(d1.lo, d1.hi, self.hlo, self.hhi)
        olo, ohi = _imul(self.glo[:, None], self.ghi[:, None], self.glo[None, :], self.ghi[None, :])
        h2lo, h2hi = _imul(d2.lo, d2.hi, olo, ohi)
        return Jet2(f.lo, f.hi, _down(glo), _up(ghi), _down(h1lo + h2lo), _up(h1hi + h2hi))

    def __repr__(self) -> str:
        return f"Jet2(value={self.value!r}, k={self.k})"


def _neg_iv(a: Interval) -> Interval:
    return Interval(-a.hi, -a.lo)


def _jet2_sin(x: Jet2) -> Jet2:
    v = x.value
    s, c = _interval_sin(v), _interval_cos(v)
    return x._chain(s, c, _neg_iv(s))


def _jet2_cos(x: Jet2) -> Jet2:
    v = x.value
    s, c = _interval_sin(v), _interval_cos(v)
    return x._chain(c, _neg_iv(s), _neg_iv(c))


def _jet2_tan(x: Jet2) -> Jet2:
    t = _interval_tan(x.value)
    d1 = _sqr_interval(t) + 1.0
    d2 = (t * d1) * 2.0
    return x._chain(t, d1, d2)


def _jet2_sqrt(x: Jet2) -> Jet2:
    v = x.value
    if v.lo <= 0.0:
        raise DomainError(f"sqrt derivative unbounded on {v}")
    s = _interval_sqrt(v)
    inv = Interval(math.nextafter(1.0 / s.hi, -math.inf), math.nextafter(1.0 / s.lo, math.inf))
    d1 = inv * 0.5
    d2 = (_sqr_interval(inv) * inv) * -0.25
    return x._chain(s, d1, d2)


def _jet2_sqr(x: Jet2) -> Jet2:
    v = x.value
    return x._chain(_sqr_interval(v), v * 2.0, Interval(2.0, 2.0))


sin.register(Jet2, _jet2_sin)
cos.register(Jet2, _jet2_cos)
tan.register(Jet2, _jet2_tan)
sqrt.register(Jet2, _jet2_sqrt)
sqr.register(Jet2, _jet2_sqr)
