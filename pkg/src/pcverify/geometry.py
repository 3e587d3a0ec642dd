"""Interval arithmetic and axis-aligned boxes.

Every operation rounds outward so that the returned enclosure stays sound
under floating point. The scalar math functions ``sin``, ``cos``, ``tan``,
``sqrt`` and ``sqr`` dispatch on their argument type, which lets the plant
models in :mod:`pcverify.systems` be written once and evaluated on floats,
numpy batches, :class:`Interval` values or reach-time derivative jets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import singledispatch
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "DomainError",
    "DimensionMismatch",
    "Interval",
    "HyperRect",
    "interval_arith",
    "interval_trig",
    "rect_bisect",
    "rect_contains",
    "rect_intersects",
    "affine_interval_eval",
    "affine_image",
    "sin",
    "cos",
    "tan",
    "sqrt",
    "sqr",
]

_TWO_PI = 2.0 * math.pi
_HALF_PI = 0.5 * math.pi
_EPS = np.finfo(float).eps


class DomainError(ValueError):
    """An interval operation left the domain of the real function."""


class DimensionMismatch(ValueError):
    pass


def _down(x: float, ulps: int = 1) -> float:
    for _ in range(ulps):
        x = math.nextafter(x, -math.inf)
    return x


def _up(x: float, ulps: int = 1) -> float:
    for _ in range(ulps):
        x = math.nextafter(x, math.inf)
    return x


Real = Union[int, float]


@dataclass(frozen=True, slots=True)
class Interval:
    """Closed interval ``[lo, hi]``; degenerate intervals are allowed."""

    lo: float
    hi: float

    # numpy scalars must defer to our reflected operators
    __array_ufunc__ = None

    def __post_init__(self) -> None:
        lo, hi = float(self.lo), float(self.hi)
        if not lo <= hi:
            raise ValueError(f"invalid interval [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, x: Real) -> "Interval":
        return cls(x, x)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self) -> float:
        return 0.5 * (self.hi - self.lo)

    @property
    def mag(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def contains(self, other: Union[Real, "Interval"]) -> bool:
        if isinstance(other, Interval):
            return self.lo <= other.lo and other.hi <= self.hi
        return self.lo <= other <= self.hi

    def __contains__(self, x: Real) -> bool:
        return self.contains(x)

    def subset(self, other: "Interval") -> bool:
        return other.contains(self)

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def __add__(self, other):
        if isinstance(other, Interval):
            return Interval(_down(self.lo + other.lo), _up(self.hi + other.hi))
        if isinstance(other, (int, float, np.floating)):
            return Interval(_down(self.lo + other), _up(self.hi + other))
        return NotImplemented

    __radd__ = __add__

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        if isinstance(other, Interval):
            return Interval(_down(self.lo - other.hi), _up(self.hi - other.lo))
        if isinstance(other, (int, float, np.floating)):
            return Interval(_down(self.lo - other), _up(self.hi - other))
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return Interval(_down(other - self.hi), _up(other - self.lo))
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, Interval):
            p = (self.lo * other.lo, self.lo * other.hi,
                 self.hi * other.lo, self.hi * other.hi)
            return Interval(_down(min(p)), _up(max(p)))
        if isinstance(other, (int, float, np.floating)):
            a, b = self.lo * other, self.hi * other
            if a > b:
                a, b = b, a
            return Interval(_down(a), _up(b))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Interval):
            if other.lo <= 0.0 <= other.hi:
                raise DomainError(f"division by interval containing zero: {other}")
            q = (self.lo / other.lo, self.lo / other.hi,
                 self.hi / other.lo, self.hi / other.hi)
            return Interval(_down(min(q)), _up(max(q)))
        if isinstance(other, (int, float, np.floating)):
            if other == 0:
                raise DomainError("division by zero")
            a, b = self.lo / other, self.hi / other
            if a > b:
                a, b = b, a
            return Interval(_down(a), _up(b))
        return NotImplemented

    def __abs__(self) -> "Interval":
        if self.lo >= 0.0:
            return self
        if self.hi <= 0.0:
            return -self
        return Interval(0.0, max(-self.lo, self.hi))

    def __pow__(self, n: int) -> "Interval":
        if n != 2:
            raise NotImplementedError("only squaring is supported")
        return _sqr_interval(self)

    def __repr__(self) -> str:
        return f"[{self.lo!r}, {self.hi!r}]"


def interval_arith(op: str, a: Interval, b: Union[Interval, Real, None] = None) -> Interval:
    """Apply one of ``add, sub, mul, neg, scale, abs`` to interval operands."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "scale":
        if isinstance(b, Interval):
            raise TypeError("scale takes a real factor")
        return a * float(b)
    if op == "neg":
        return -a
    if op == "abs":
        return abs(a)
    raise ValueError(f"unknown interval op {op!r}")


def _sqr_interval(a: Interval) -> Interval:
    m = abs(a)
    return Interval(max(0.0, _down(m.lo * m.lo)), _up(m.hi * m.hi))


def _has_point(lo: float, hi: float, offset: float, period: float) -> bool:
    """True if some ``offset + k*period`` lies in ``[lo, hi]``."""
    k = math.ceil((lo - offset) / period)
    return offset + k * period <= hi


def _interval_sin(a: Interval) -> Interval:
    if a.width >= _TWO_PI:
        return Interval(-1.0, 1.0)
    vals = (math.sin(a.lo), math.sin(a.hi))
    lo, hi = min(vals), max(vals)
    if _has_point(a.lo, a.hi, _HALF_PI, _TWO_PI):
        hi = 1.0
    if _has_point(a.lo, a.hi, -_HALF_PI, _TWO_PI):
        lo = -1.0
    return Interval(max(-1.0, _down(lo, 2)), min(1.0, _up(hi, 2)))


def _interval_cos(a: Interval) -> Interval:
    if a.width >= _TWO_PI:
        return Interval(-1.0, 1.0)
    vals = (math.cos(a.lo), math.cos(a.hi))
    lo, hi = min(vals), max(vals)
    if _has_point(a.lo, a.hi, 0.0, _TWO_PI):
        hi = 1.0
    if _has_point(a.lo, a.hi, math.pi, _TWO_PI):
        lo = -1.0
    return Interval(max(-1.0, _down(lo, 2)), min(1.0, _up(hi, 2)))


def _interval_tan(a: Interval) -> Interval:
    if a.width >= math.pi or _has_point(a.lo, a.hi, _HALF_PI, math.pi):
        raise DomainError(f"tan pole inside {a}")
    return Interval(_down(math.tan(a.lo), 2), _up(math.tan(a.hi), 2))


def _interval_sqrt(a: Interval) -> Interval:
    if a.hi < 0.0:
        raise DomainError(f"sqrt of negative interval {a}")
    lo = math.sqrt(max(a.lo, 0.0))
    return Interval(max(0.0, _down(lo)), _up(math.sqrt(a.hi)))


def interval_trig(fn: str, a: Interval) -> Interval:
    """Tight enclosure of ``sin``, ``cos`` or ``tan`` over ``a``."""
    impl = {"sin": _interval_sin, "cos": _interval_cos, "tan": _interval_tan}.get(fn)
    if impl is None:
        raise ValueError(f"unknown trig function {fn!r}")
    return impl(a)


# -- type-dispatched scalar math -------------------------------------------

@singledispatch
def sin(x):
    return math.sin(x)


@singledispatch
def cos(x):
    return math.cos(x)


@singledispatch
def tan(x):
    return math.tan(x)


@singledispatch
def sqrt(x):
    return math.sqrt(x)


@singledispatch
def sqr(x):
    return x * x


for _fn, _np_fn, _iv_fn in (
    (sin, np.sin, _interval_sin),
    (cos, np.cos, _interval_cos),
    (tan, np.tan, _interval_tan),
    (sqrt, np.sqrt, _interval_sqrt),
):
    _fn.register(np.ndarray, _np_fn)
    _fn.register(Interval, _iv_fn)
sqr.register(Interval, _sqr_interval)


# -- boxes -----------------------------------------------------------------

class HyperRect:
    """Axis-aligned box ``[lo_0, hi_0] x ... x [lo_{n-1}, hi_{n-1}]``.

    Stored as two read-only float arrays. Instances are immutable and
    hashable by value.
    """

    __slots__ = ("lo", "hi")

    def __init__(self, lo: Iterable[float], hi: Iterable[float]):
        lo = np.array(lo, dtype=float).reshape(-1)
        hi = np.array(hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise DimensionMismatch("lo and hi must be non-empty and of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError(f"box has lo > hi: {lo} {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        self.lo = lo
        self.hi = hi

    @classmethod
    def from_intervals(cls, dims: Sequence[Interval]) -> "HyperRect":
        return cls([d.lo for d in dims], [d.hi for d in dims])

    @classmethod
    def from_bounds(cls, bounds: Sequence[Sequence[float]]) -> "HyperRect":
        b = np.asarray(bounds, dtype=float)
        return cls(b[:, 0], b[:, 1])

    @classmethod
    def point(cls, p: Iterable[float]) -> "HyperRect":
        p = np.asarray(p, dtype=float)
        return cls(p, p)

    @property
    def dims(self) -> tuple:
        return tuple(Interval(a, b) for a, b in zip(self.lo, self.hi))

    @property
    def ndim(self) -> int:
        return self.lo.size

    def __len__(self) -> int:
        return self.lo.size

    def __getitem__(self, i: int) -> Interval:
        return Interval(self.lo[i], self.hi[i])

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def volume(self) -> float:
        return float(np.prod(self.width))

    def bounds(self) -> np.ndarray:
        return np.stack([self.lo, self.hi], axis=1)

    def project(self, mask: Sequence[int]) -> "HyperRect":
        idx = list(mask)
        return HyperRect(self.lo[idx], self.hi[idx])

    def hull(self, other: "HyperRect") -> "HyperRect":
        _check_dims(self, other)
        return HyperRect(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def intersection(self, other: "HyperRect") -> "HyperRect | None":
        _check_dims(self, other)
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return HyperRect(lo, hi)

    def inflate(self, amount) -> "HyperRect":
        amount = np.broadcast_to(np.asarray(amount, dtype=float), self.lo.shape)
        return HyperRect(self.lo - amount, self.hi + amount)

    def contains(self, p) -> bool:
        return rect_contains(self, p)

    def intersects(self, other: "HyperRect") -> bool:
        return rect_intersects(self, other)

    def bisect(self, axis: int) -> tuple:
        return rect_bisect(self, axis)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + rng.random((n, self.ndim)) * self.width

    def __eq__(self, other) -> bool:
        if not isinstance(other, HyperRect):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self) -> int:
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self) -> str:
        parts = ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in zip(self.lo, self.hi))
        return f"HyperRect({parts})"


def _check_dims(a: HyperRect, b: HyperRect) -> None:
    if a.ndim != b.ndim:
        raise DimensionMismatch(f"dimension {a.ndim} vs {b.ndim}")


def rect_bisect(r: HyperRect, axis: int) -> tuple:
    """Split ``r`` at the midpoint of ``axis``; the halves share one face."""
    if not 0 <= axis < r.ndim:
        raise IndexError(f"axis {axis} out of range for {r.ndim}-d box")
    mid = 0.5 * (r.lo[axis] + r.hi[axis])
    hi1 = r.hi.copy()
    hi1[axis] = mid
    lo2 = r.lo.copy()
    lo2[axis] = mid
    return HyperRect(r.lo, hi1), HyperRect(lo2, r.hi)


def rect_contains(r: HyperRect, p) -> bool:
    """Inclusive containment of a point or a box."""
    if isinstance(p, HyperRect):
        _check_dims(r, p)
        return bool(np.all(r.lo <= p.lo) and np.all(p.hi <= r.hi))
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size != r.ndim:
        raise DimensionMismatch(f"point of dimension {p.size} vs box of {r.ndim}")
    return bool(np.all(r.lo <= p) and np.all(p <= r.hi))


def rect_intersects(a: HyperRect, b: HyperRect) -> bool:
    """Componentwise overlap; touching faces count as intersecting."""
    _check_dims(a, b)
    return bool(np.all(a.lo <= b.hi) and np.all(b.lo <= a.hi))


def affine_interval_eval(coeffs: Sequence[float], intercept: float, box: HyperRect) -> Interval:
    """Exact range of ``intercept + coeffs . x`` over ``box``, rounded outward."""
    c = np.asarray(coeffs, dtype=float).reshape(-1)
    if c.size != box.ndim:
        raise DimensionMismatch(f"{c.size} coefficients for a {box.ndim}-d box")
    lo_terms = np.where(c >= 0, c * box.lo, c * box.hi)
    hi_terms = np.where(c >= 0, c * box.hi, c * box.lo)
    lo = math.fsum(lo_terms) + intercept
    hi = math.fsum(hi_terms) + intercept
    slack = (c.size + 2) * _EPS * (float(np.sum(np.abs(lo_terms) + np.abs(hi_terms))) + abs(intercept))
    return Interval(_down(lo - slack), _up(hi + slack))


def affine_image(C: np.ndarray, d: np.ndarray, box: HyperRect) -> tuple:
    """Row-wise :func:`affine_interval_eval`: bounds of ``C x + d`` over ``box``.

    Returns ``(lo, hi)`` arrays.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != box.ndim:
        raise DimensionMismatch(f"matrix with {C.shape[1]} columns for a {box.ndim}-d box")
    c = box.center
    r = box.radius
    mid = C @ c + d
    spread = np.abs(C) @ r
    slack = (C.shape[1] + 2) * _EPS * (np.abs(C) @ np.abs(c) + spread + np.abs(d))
    return mid - spread - slack, mid + spread + slack
