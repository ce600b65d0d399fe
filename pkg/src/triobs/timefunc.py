"""Scalar functions of time with exact first derivatives.

Gain schedules are compositions of a few primitives (constants, smoothstep
ramps, fields of ``t`` such as the decay envelope, and C1 cubic Hermite
interpolants) combined with arithmetic.  Every node returns its value and
derivative together (forward-mode differentiation), either vectorised in
double precision or as an ``mpmath`` scalar at the current working
precision.  The latter lets the verification suite evaluate algebraic
identities of the assembled gain matrices without cancellation.

Nodes serialise to plain dictionaries so a schedule can be written to disk
and rebuilt exactly.
"""

from __future__ import annotations

import bisect
import math
from typing import Any

import mpmath
import numpy as np
from scipy.interpolate import PchipInterpolator

from .exprlang import ScalarField

__all__ = [
    "TimeFunction",
    "Constant",
    "Smoothstep",
    "FieldOfTime",
    "Hermite",
    "ShiftClamp",
    "smoothstep",
    "as_time_function",
    "from_dict",
]


class TimeFunction:
    """Base class.  Subclasses implement ``_np`` and ``_mp``."""

    def __call__(self, t):
        return self.eval(t)[0]

    def deriv(self, t):
        return self.eval(t)[1]

    def eval(self, t):
        """Value and derivative at ``t`` (scalar or array), in float64."""
        arr = np.asarray(t, dtype=float)
        with np.errstate(all="ignore"):
            v, d = self._np(arr)
        v = np.broadcast_to(v, arr.shape).astype(float)
        d = np.broadcast_to(d, arr.shape).astype(float)
        if arr.ndim == 0:
            return float(v), float(d)
        return v, d

    def eval_mp(self, t):
        """Value and derivative as mpmath numbers (scalar ``t`` only)."""
        return self._mp(mpmath.mpf(t))

    def _np(self, t):
        raise NotImplementedError

    def _mp(self, t):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def breakpoints(self) -> set[float]:
        """Times where the function may fail to be smooth (knots, ramp ends, seams)."""
        return set()

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return _Sum(self, as_time_function(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _Sum(self, _Neg(as_time_function(other)))

    def __rsub__(self, other):
        return _Sum(as_time_function(other), _Neg(self))

    def __mul__(self, other):
        return _Prod(self, as_time_function(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _Quot(self, as_time_function(other))

    def __rtruediv__(self, other):
        return _Quot(as_time_function(other), self)

    def __neg__(self):
        return _Neg(self)

    def __pow__(self, k):
        return _Pow(self, float(k))


def as_time_function(v) -> TimeFunction:
    if isinstance(v, TimeFunction):
        return v
    return Constant(float(v))


class Constant(TimeFunction):
    def __init__(self, value: float):
        self.value = float(value)

    def _np(self, t):
        return np.full(t.shape, self.value), np.zeros(t.shape)

    def _mp(self, t):
        return mpmath.mpf(self.value), mpmath.mpf(0)

    def to_dict(self):
        return {"kind": "const", "value": self.value}

    def __repr__(self):
        return f"Constant({self.value!r})"


class Smoothstep(TimeFunction):
    """C1 ramp: 0 at ``t0``, 1 from ``t0 + tau/2`` on, cubic ``3u^2 - 2u^3`` between."""

    def __init__(self, t0: float, tau: float):
        if not tau > 0:
            raise ValueError(f"smoothstep width must be positive, got {tau}")
        self.t0 = float(t0)
        self.tau = float(tau)

    def _np(self, t):
        half = self.tau / 2.0
        u = np.clip((t - self.t0) / half, 0.0, 1.0)
        v = u * u * (3.0 - 2.0 * u)
        d = 6.0 * u * (1.0 - u) / half
        return v, d

    def _mp(self, t):
        half = mpmath.mpf(self.tau) / 2
        u = (t - mpmath.mpf(self.t0)) / half
        u = min(max(u, mpmath.mpf(0)), mpmath.mpf(1))
        return u * u * (3 - 2 * u), 6 * u * (1 - u) / half

    def to_dict(self):
        return {"kind": "smoothstep", "t0": self.t0, "tau": self.tau}

    def breakpoints(self):
        return {self.t0, self.t0 + self.tau / 2.0}


def smoothstep(t0: float, tau: float) -> Smoothstep:
    """Ramp reaching 1 at ``t0 + tau/2``; see :class:`Smoothstep`."""
    return Smoothstep(t0, tau)


class FieldOfTime(TimeFunction):
    """A user expression in ``t`` with its symbolic derivative."""

    def __init__(self, field: ScalarField):
        if field.variables != ("t",):
            raise ValueError(f"time field must take ('t',), got {field.variables}")
        self.field = field
        self.dfield = field.diff("t")

    def _np(self, t):
        return self.field.vectorized(t), self.dfield.vectorized(t)

    def _mp(self, t):
        return mpmath.mpf(self.field.mp(t)), mpmath.mpf(self.dfield.mp(t))

    def to_dict(self):
        return {"kind": "field", "source": self.field.source}


class Hermite(TimeFunction):
    """C1 piecewise-cubic Hermite interpolant, optionally of the logarithm.

    With ``log=True`` the node represents ``exp(h(t))`` where ``h`` interpolates
    the logarithm of positive knot values; this keeps exponentially growing
    gains smooth and positive.  Outside the knot range the end values are
    held constant.
    """

    def __init__(self, knots, values, slopes=None, log: bool = False, monotone: bool = True):
        x = np.asarray(knots, dtype=float)
        y = np.asarray(values, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or len(x) < 2:
            raise ValueError("knots and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(x) <= 0):
            raise ValueError("knots must be strictly increasing")
        if log:
            if np.any(y <= 0):
                raise ValueError("log interpolation needs positive values")
            y = np.log(y)
        if slopes is None:
            slopes = PchipInterpolator(x, y).derivative()(x) if monotone else np.gradient(y, x)
        self.x = x
        self.y = y
        self.d = np.asarray(slopes, dtype=float)
        self.log = bool(log)

    @property
    def knot_values(self) -> np.ndarray:
        return np.exp(self.y) if self.log else self.y.copy()

    def _np(self, t):
        x, y, d = self.x, self.y, self.d
        tc = np.clip(t, x[0], x[-1])
        i = np.clip(np.searchsorted(x, tc, side="right") - 1, 0, len(x) - 2)
        h = x[i + 1] - x[i]
        s = (tc - x[i]) / h
        s2, s3 = s * s, s * s * s
        h00, h10, h01, h11 = 2 * s3 - 3 * s2 + 1, s3 - 2 * s2 + s, -2 * s3 + 3 * s2, s3 - s2
        v = h00 * y[i] + h10 * h * d[i] + h01 * y[i + 1] + h11 * h * d[i + 1]
        dv = ((6 * s2 - 6 * s) * y[i] + (3 * s2 - 4 * s + 1) * h * d[i]
              + (-6 * s2 + 6 * s) * y[i + 1] + (3 * s2 - 2 * s) * h * d[i + 1]) / h
        dv = np.where((t < x[0]) | (t > x[-1]), 0.0, dv)
        if self.log:
            ev = np.exp(v)
            return ev, dv * ev
        return v, dv

    def _mp(self, t):
        x = self.x
        tf = float(t)
        if tf <= x[0]:
            i, tc = 0, mpmath.mpf(x[0])
        elif tf >= x[-1]:
            i, tc = len(x) - 2, mpmath.mpf(x[-1])
        else:
            i, tc = min(bisect.bisect_right(x, tf) - 1, len(x) - 2), t
        outside = tf < x[0] or tf > x[-1]
        xi, xj = mpmath.mpf(x[i]), mpmath.mpf(x[i + 1])
        yi, yj = mpmath.mpf(self.y[i]), mpmath.mpf(self.y[i + 1])
        di, dj = mpmath.mpf(self.d[i]), mpmath.mpf(self.d[i + 1])
        h = xj - xi
        s = (tc - xi) / h
        s2, s3 = s * s, s * s * s
        v = (2 * s3 - 3 * s2 + 1) * yi + (s3 - 2 * s2 + s) * h * di + (-2 * s3 + 3 * s2) * yj + (s3 - s2) * h * dj
        dv = ((6 * s2 - 6 * s) * yi + (3 * s2 - 4 * s + 1) * h * di
              + (-6 * s2 + 6 * s) * yj + (3 * s2 - 2 * s) * h * dj) / h
        if outside:
            dv = mpmath.mpf(0)
        if self.log:
            ev = mpmath.exp(v)
            return ev, dv * ev
        return v, dv

    def scaled(self, factor: float) -> "Hermite":
        """Copy multiplied by a positive constant (log mode) or any constant (linear mode)."""
        if self.log:
            if factor <= 0:
                raise ValueError("log-mode interpolant can only be scaled by a positive factor")
            out = Hermite.__new__(Hermite)
            out.x, out.y, out.d, out.log = self.x, self.y + math.log(factor), self.d, True
            return out
        out = Hermite.__new__(Hermite)
        out.x, out.y, out.d, out.log = self.x, self.y * factor, self.d * factor, False
        return out

    def breakpoints(self):
        return set(self.x.tolist())

    def to_dict(self):
        return {"kind": "hermite", "log": self.log, "knots": self.x.tolist(),
                "values": self.y.tolist(), "slopes": self.d.tolist()}


class ShiftClamp(TimeFunction):
    """``d - c`` up to ``seam``, then ``max(floor, d - c)``.

    Continuous at the seam whenever ``d(seam) - c >= floor``.
    """

    def __init__(self, d: TimeFunction, c: float, floor: float, seam: float):
        self.d = d
        self.c = float(c)
        self.floor = float(floor)
        self.seam = float(seam)

    def _np(self, t):
        v, dv = self.d._np(t)
        v = v - self.c
        clamp = (t > self.seam) & (v < self.floor)
        return np.where(clamp, self.floor, v), np.where(clamp, 0.0, dv)

    def _mp(self, t):
        v, dv = self.d._mp(t)
        v = v - self.c
        if t > self.seam and v < self.floor:
            return mpmath.mpf(self.floor), mpmath.mpf(0)
        return v, dv

    def to_dict(self):
        return {"kind": "shiftclamp", "d": self.d.to_dict(), "c": self.c,
                "floor": self.floor, "seam": self.seam}

    def breakpoints(self):
        return self.d.breakpoints() | {self.seam}


class _Sum(TimeFunction):
    def __init__(self, a, b):
        self.a, self.b = a, b

    def _np(self, t):
        va, da = self.a._np(t)
        vb, db = self.b._np(t)
        return va + vb, da + db

    def _mp(self, t):
        va, da = self.a._mp(t)
        vb, db = self.b._mp(t)
        return va + vb, da + db

    def breakpoints(self):
        return self.a.breakpoints() | self.b.breakpoints()

    def to_dict(self):
        return {"kind": "add", "a": self.a.to_dict(), "b": self.b.to_dict()}


class _Neg(TimeFunction):
    def __init__(self, a):
        self.a = a

    def _np(self, t):
        v, d = self.a._np(t)
        return -v, -d

    def _mp(self, t):
        v, d = self.a._mp(t)
        return -v, -d

    def breakpoints(self):
        return self.a.breakpoints()

    def to_dict(self):
        return {"kind": "neg", "a": self.a.to_dict()}


class _Prod(TimeFunction):
    def __init__(self, a, b):
        self.a, self.b = a, b

    def _np(self, t):
        va, da = self.a._np(t)
        vb, db = self.b._np(t)
        # 0 * inf from a vanishing ramp times a huge factor counts as 0
        return _safe_mul(va, vb), _safe_mul(da, vb) + _safe_mul(va, db)

    def _mp(self, t):
        va, da = self.a._mp(t)
        vb, db = self.b._mp(t)
        return va * vb, da * vb + va * db

    def breakpoints(self):
        return self.a.breakpoints() | self.b.breakpoints()

    def to_dict(self):
        return {"kind": "mul", "a": self.a.to_dict(), "b": self.b.to_dict()}


def _safe_mul(u, v):
    out = u * v
    return np.where((u == 0) | (v == 0), 0.0, out)


class _Quot(TimeFunction):
    def __init__(self, a, b):
        self.a, self.b = a, b

    def _np(self, t):
        va, da = self.a._np(t)
        vb, db = self.b._np(t)
        q = va / vb
        return q, (da - _safe_mul(q, db)) / vb

    def _mp(self, t):
        va, da = self.a._mp(t)
        vb, db = self.b._mp(t)
        q = va / vb
        return q, (da - q * db) / vb

    def breakpoints(self):
        return self.a.breakpoints() | self.b.breakpoints()

    def to_dict(self):
        return {"kind": "div", "a": self.a.to_dict(), "b": self.b.to_dict()}


class _Pow(TimeFunction):
    """``a ** k`` for a real exponent; ``a`` must be positive unless ``k`` is a non-negative integer."""

    def __init__(self, a, k: float):
        self.a, self.k = a, float(k)

    def _np(self, t):
        v, d = self.a._np(t)
        k = self.k
        if k == 0:
            return np.ones_like(v), np.zeros_like(v)
        p = v ** k
        dp = _safe_mul(k * v ** (k - 1.0), d) if k != 1 else d
        return p, dp

    def _mp(self, t):
        v, d = self.a._mp(t)
        k = self.k
        if k == 0:
            return mpmath.mpf(1), mpmath.mpf(0)
        kk = int(k) if k == int(k) else mpmath.mpf(k)
        return v ** kk, (kk * v ** (kk - 1) * d if k != 1 else d)

    def breakpoints(self):
        return self.a.breakpoints()

    def to_dict(self):
        return {"kind": "pow", "a": self.a.to_dict(), "k": self.k}


def from_dict(data: dict[str, Any]) -> TimeFunction:
    """Rebuild a node tree written by ``to_dict``."""
    kind = data["kind"]
    if kind == "const":
        return Constant(data["value"])
    if kind == "smoothstep":
        return Smoothstep(data["t0"], data["tau"])
    if kind == "field":
        return FieldOfTime(ScalarField.from_text(data["source"], ("t",)))
    if kind == "hermite":
        out = Hermite.__new__(Hermite)
        out.x = np.asarray(data["knots"], dtype=float)
        out.y = np.asarray(data["values"], dtype=float)
        out.d = np.asarray(data["slopes"], dtype=float)
        out.log = bool(data["log"])
        return out
    if kind == "shiftclamp":
        return ShiftClamp(from_dict(data["d"]), data["c"], data["floor"], data["seam"])
    if kind == "add":
        return _Sum(from_dict(data["a"]), from_dict(data["b"]))
    if kind == "neg":
        return _Neg(from_dict(data["a"]))
    if kind == "mul":
        return _Prod(from_dict(data["a"]), from_dict(data["b"]))
    if kind == "div":
        return _Quot(from_dict(data["a"]), from_dict(data["b"]))
    if kind == "pow":
        return _Pow(from_dict(data["a"]), data["k"])
    raise ValueError(f"unknown time-function kind {kind!r}")
