"""Triangular plants, the output-injected vector field and the factor map.

The plant has the form::

    x_i' = f_i(t, x1..xi) + a_i(t, x1) * x_{i+1}^{m_i},   i < n
    x_n' = f_n(t, x1..xn)
    y    = x1

with odd powers ``m_i``.  The observer copy ``F(t, z, y)`` substitutes the
measured ``y`` for ``x1`` everywhere, so the difference of two copies
factors as ``F(t, x, y) - F(t, z, y) = A(t, q, x, x - z, y) (x - z)`` with a
lower-triangular ``q`` from the mean-value theorem and the divided
differences ``b_m(alpha, beta)`` on the superdiagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .exprlang import ScalarField, extremum_on_box

__all__ = [
    "SystemValidationError",
    "FactorizationError",
    "TriangularSystem",
    "FactorCoeffs",
    "eval_plant_rhs",
    "eval_F",
    "eval_b",
    "b_interval",
    "vartheta",
    "eval_A",
    "factor_q",
]


class SystemValidationError(ValueError):
    """The plant description violates a structural assumption."""


class FactorizationError(RuntimeError):
    """Line-integral quadrature for ``q`` did not converge."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (achieved residual {residual:.3e})")


def state_names(n: int) -> tuple[str, ...]:
    return tuple(f"x{i}" for i in range(1, n + 1))


@dataclass(frozen=True)
class TriangularSystem:
    """Triangular plant with odd powers.

    Attributes
    ----------
    n : int
        State dimension, at least 2.
    m : tuple of int
        ``n - 1`` odd positive powers.
    f : tuple of ScalarField
        ``f[i]`` takes ``(t, x1, ..., x_{i+1})``.
    a : tuple of ScalarField
        ``a[i]`` takes ``(t, x1)`` and must be positive.
    beta : ScalarField
        Completeness bound over ``(t, s)``: ``|x(t)| <= beta(t, |x0|)``.
    name : str
    note : str
        Free text (e.g. the growth hypothesis the bound was derived from).
    """

    n: int
    m: tuple[int, ...]
    f: tuple[ScalarField, ...]
    a: tuple[ScalarField, ...]
    beta: ScalarField
    name: str = "system"
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))
        object.__setattr__(self, "f", tuple(self.f))
        object.__setattr__(self, "a", tuple(self.a))
        n = self.n
        if not isinstance(n, int) or n < 2:
            raise SystemValidationError(f"n must be an integer >= 2, got {n!r}")
        if len(self.m) != n - 1:
            raise SystemValidationError(f"expected {n - 1} powers m, got {len(self.m)}")
        for i, mi in enumerate(self.m, start=1):
            if mi < 1 or mi % 2 == 0:
                raise SystemValidationError(f"m{i} = {mi} must be an odd positive integer")
        if len(self.f) != n:
            raise SystemValidationError(f"expected {n} drift terms f, got {len(self.f)}")
        if len(self.a) != n - 1:
            raise SystemValidationError(f"expected {n - 1} coefficients a, got {len(self.a)}")
        xs = state_names(n)
        for i, fi in enumerate(self.f):
            want = ("t",) + xs[: i + 1]
            if fi.variables != want:
                raise SystemValidationError(f"f{i + 1} must take {want}, got {fi.variables}")
        for i, ai in enumerate(self.a):
            if ai.variables != ("t", "x1"):
                raise SystemValidationError(f"a{i + 1} must take ('t', 'x1'), got {ai.variables}")
        if self.beta.variables != ("t", "s"):
            raise SystemValidationError(f"beta must take ('t', 's'), got {self.beta.variables}")

    @classmethod
    def from_strings(cls, f: Sequence[str], a: Sequence[str], m: Sequence[int], beta: str,
                     name: str = "system", note: str = "") -> "TriangularSystem":
        n = len(f)
        xs = state_names(n)
        fs = tuple(ScalarField.from_text(str(src), ("t",) + xs[: i + 1], f"f{i + 1}")
                   for i, src in enumerate(f))
        as_ = tuple(ScalarField.from_text(str(src), ("t", "x1"), f"a{i + 1}") for i, src in enumerate(a))
        return cls(n, tuple(m), fs, as_, ScalarField.from_text(str(beta), ("t", "s"), "beta"),
                   name=name, note=note)

    # pickling drops the compiled caches
    def __getstate__(self):
        return {k: getattr(self, k) for k in ("n", "m", "f", "a", "beta", "name", "note")}

    def __setstate__(self, state):
        for k, v in state.items():
            object.__setattr__(self, k, v)

    @property
    def ell(self) -> int:
        return self.n * (self.n + 1) // 2

    @cached_property
    def partials(self) -> tuple[tuple[ScalarField | None, ...], ...]:
        """``partials[i][j]`` is d f_{i+1} / d x_{j+1} for ``1 <= j <= i`` (0-based), else None."""
        out = []
        for i, fi in enumerate(self.f):
            row = [None] * self.n
            for j in range(1, i + 1):
                row[j] = fi.diff(f"x{j + 1}")
            out.append(tuple(row))
        return tuple(out)

    @cached_property
    def nonzero_partials(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, j) for i in range(self.n) for j in range(1, i + 1)
                     if not (self.partials[i][j].is_constant and self.partials[i][j].expression.value == 0))

    @cached_property
    def _f_fns(self):
        return tuple(fi._fn_math for fi in self.f)

    @cached_property
    def _a_fns(self):
        return tuple(ai._fn_math for ai in self.a)

    def beta_value(self, t: float, s: float) -> float:
        return float(self.beta(t, s))

    def validate(self, t_range: tuple[float, float], y_halfwidth: float, grid: int = 41) -> None:
        """Check positivity of every ``a_i`` and ``beta(t, s) >= s`` on grids.

        Raises
        ------
        SystemValidationError
            With guidance on how to normalize a negative coefficient.
        """
        t0, t1 = t_range
        box = {"t": (t0, t1), "x1": (-y_halfwidth, y_halfwidth)}
        for i, ai in enumerate(self.a, start=1):
            lo = extremum_on_box(ai, box, "min", grid=grid)
            if lo <= 0:
                raise SystemValidationError(
                    f"a{i} is not positive on t in [{t0}, {t1}], |x1| <= {y_halfwidth:g} (min {lo:g}). "
                    f"If a{i} is negative everywhere, substitute x{i + 1} -> -x{i + 1} "
                    f"(flip the sign of a{i} and of x{i + 1} in every other term) and retry.")
        tt = np.linspace(t0, t1, grid)
        ss = np.linspace(0.0, max(1.0, 2 * y_halfwidth), grid)
        T, S = np.meshgrid(tt, ss, indexing="ij")
        bv = self.beta.vectorized(T, S)
        bad = np.argwhere(~(bv >= S - 1e-12))
        if bad.size:
            i, j = bad[0]
            raise SystemValidationError(
                f"beta(t, s) < s at t={T[i, j]:g}, s={S[i, j]:g} (beta={bv[i, j]:g})")


@dataclass(frozen=True)
class FactorCoeffs:
    """Lower-triangular mean-value coefficients with a zero first column."""

    q: np.ndarray
    norm: float
    residual: float = 0.0


def eval_plant_rhs(sys: TriangularSystem, t: float, x) -> np.ndarray:
    """Right-hand side of the plant at ``(t, x)``."""
    return eval_F(sys, t, x, x[0])


def eval_F(sys: TriangularSystem, t: float, x, y: float) -> np.ndarray:
    """Output-injected copy: the plant field with ``x1`` replaced by ``y``.

    The result does not depend on ``x[0]``.
    """
    n = sys.n
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"state must have length {n}, got shape {x.shape}")
    args = [y] + [float(v) for v in x[1:]]
    out = np.empty(n)
    fs, as_ = sys._f_fns, sys._a_fns
    for i in range(n):
        v = fs[i](t, *args[: i + 1])
        if i < n - 1:
            v += as_[i](t, y) * args[i + 1] ** sys.m[i]
        out[i] = v
    return out


def plant_rhs_batch(sys: TriangularSystem, t: float, X: np.ndarray) -> np.ndarray:
    """Vectorised plant field for a batch of states ``X`` of shape ``(N, n)``."""
    out = np.empty_like(X)
    y = X[:, 0]
    for i in range(sys.n):
        cols = [X[:, j] for j in range(i + 1)]
        v = sys.f[i].vectorized(t, *cols)
        if i < sys.n - 1:
            v = v + sys.a[i].vectorized(t, y) * X[:, i + 1] ** sys.m[i]
        out[:, i] = v
    return out


def eval_b(m: int, alpha, beta):
    """Divided-difference polynomial ``sum_j alpha^(m-1-j) (alpha - beta)^j``.

    Satisfies ``eval_b(m, x, x - z) * (x - z) == x^m - z^m`` and is
    homogeneous of degree ``m - 1``.  Works elementwise on arrays.
    """
    if m < 1 or m % 2 == 0:
        raise ValueError(f"m must be odd and positive, got {m}")
    if isinstance(alpha, (float, np.floating)) and isinstance(beta, (float, np.floating)):
        a = float(alpha)
        zs = a - float(beta)
        acc, zp = 0.0, 1.0
        for j in range(m):
            acc += a ** (m - 1 - j) * zp
            zp *= zs
        return acc
    alpha = np.asarray(alpha, dtype=float)
    z = alpha - np.asarray(beta, dtype=float)
    total = np.zeros(np.broadcast(alpha, z).shape)
    zp = np.ones_like(total)
    for j in range(m):
        total = total + alpha ** (m - 1 - j) * zp
        zp = zp * z
    return total if total.ndim else float(total)


def b_interval(m: int, halfwidth, e):
    """Exact range of ``eval_b(m, alpha, e)`` over ``|alpha| <= halfwidth``.

    For odd ``m`` the only critical point of ``alpha -> b(alpha, e)`` is the
    minimiser ``alpha = e/2``, so the minimum sits at ``clip(e/2)`` and the
    maximum at an endpoint.
    """
    e = np.asarray(e, dtype=float)
    hw = np.asarray(halfwidth, dtype=float)
    lo = eval_b(m, np.clip(e / 2.0, -hw, hw), e)
    hi = np.maximum(eval_b(m, hw, e), eval_b(m, -hw, e))
    return lo, hi


def vartheta(m: int, grid: int = 100_000) -> float:
    """Certified lower bound of ``min b_m`` over the unit circle.

    The sampled minimum is reduced by ``spacing * max|db/dtheta|`` (the
    derivative bound is the largest sampled slope, doubled), so the result
    is a valid lower bound.

    Raises
    ------
    ArithmeticError
        If the bound is not positive (impossible for odd ``m``).
    """
    if grid < 10_000:
        raise ValueError("grid must be >= 1e4")
    theta = np.linspace(0.0, 2 * np.pi, grid, endpoint=False)
    vals = eval_b(m, np.cos(theta), np.sin(theta))
    spacing = 2 * np.pi / grid
    slope = np.max(np.abs(np.diff(np.append(vals, vals[0])))) / spacing
    bound = float(vals.min() - spacing * 2.0 * slope)
    if bound <= 0:
        raise ArithmeticError(f"vartheta({m}) lower bound is not positive: {bound}")
    return bound


def eval_A(sys: TriangularSystem, t: float, q: FactorCoeffs | np.ndarray, x, e, y: float) -> np.ndarray:
    """Factor matrix: ``q`` below/on the diagonal, ``a_i(t,y) b_i(x_{i+1}, e_{i+1})`` above."""
    n = sys.n
    qq = q.q if isinstance(q, FactorCoeffs) else np.asarray(q, dtype=float)
    A = np.tril(qq).astype(float)
    A[:, 0] = 0.0
    for i in range(n - 1):
        A[i, i + 1] = sys._a_fns[i](t, y) * eval_b(sys.m[i], x[i + 1], e[i + 1])
    return A


def _simpson(fn, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = fn(lm), fn(rm)
    left = (m - a) / 6.0 * (fa + 4 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4 * frm + fb)
    delta = left + right - whole
    if abs(delta) <= 15 * tol:
        return left + right + delta / 15.0, True
    if depth <= 0:
        return left + right + delta / 15.0, False
    l, okl = _simpson(fn, a, m, fa, flm, fm, left, tol / 2, depth - 1)
    r, okr = _simpson(fn, m, b, fm, frm, fb, right, tol / 2, depth - 1)
    return l + r, okl and okr


def _adaptive_simpson(fn, tol: float = 1e-10, max_depth: int = 40) -> tuple[float, bool]:
    fa, fm, fb = fn(0.0), fn(0.5), fn(1.0)
    whole = (fa + 4 * fm + fb) / 6.0
    return _simpson(fn, 0.0, 1.0, fa, fm, fb, whole, tol, max_depth)


def factor_q(sys: TriangularSystem, t: float, x, z, y: float, tol: float = 1e-10) -> FactorCoeffs:
    """Mean-value coefficients ``q_ij = int_0^1 df_i/dx_j(t, y, z + s(x - z)) ds`` for ``j >= 2``.

    Raises
    ------
    FactorizationError
        If adaptive Simpson quadrature fails to meet ``tol``.
    """
    n = sys.n
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    e = x - z
    q = np.zeros((n, n))
    ok_all = True
    for i in range(1, n):
        for j in range(1, i + 1):
            fn_ij = sys.partials[i][j]._fn_math

            def integrand(s, fn_ij=fn_ij, i=i):
                pt = z[1: i + 1] + s * e[1: i + 1]
                return fn_ij(t, y, *pt)

            if sys.partials[i][j].is_constant:
                q[i, j] = sys.partials[i][j].expression.value
                continue
            val, ok = _adaptive_simpson(integrand, tol)
            q[i, j] = val
            ok_all = ok_all and ok
    A = eval_A(sys, t, q, x, e, y)
    resid = float(np.linalg.norm(eval_F(sys, t, x, y) - eval_F(sys, t, z, y) - A @ e))
    if not ok_all:
        raise FactorizationError("adaptive Simpson quadrature did not converge", resid)
    return FactorCoeffs(q, float(np.linalg.norm(q)), resid)


_GL_NODES = 0.5 * (1.0 + np.array([-math.sqrt(3 / 5), 0.0, math.sqrt(3 / 5)]))
_GL_WEIGHTS = np.array([5 / 18, 8 / 18, 5 / 18])


def delta_F(sys: TriangularSystem, t: float, x, e, y: float) -> np.ndarray:
    """``F(t, x, y) - F(t, x - e, y)`` evaluated without cancellation.

    The power terms use the divided differences ``a_i b_i(x_{i+1}, e_{i+1}) e_{i+1}``
    exactly; the drift terms use 3-point Gauss-Legendre on the mean-value
    integral, exact for polynomial drifts up to degree 6.  This keeps full
    relative accuracy when ``e`` is far below the rounding level of ``x``.
    """
    n = sys.n
    z = x - e
    out = np.zeros(n)
    for i in range(1, n):
        acc = 0.0
        for j in range(1, i + 1):
            p = sys.partials[i][j]
            if p.is_constant:
                c = p.expression.value
                if c:
                    acc += c * e[j]
                continue
            fn = p._fn_math
            s = 0.0
            for node, w in zip(_GL_NODES, _GL_WEIGHTS):
                s += w * fn(t, y, *(z[1: i + 1] + node * e[1: i + 1]))
            acc += s * e[j]
        out[i] = acc
    for i in range(n - 1):
        out[i] += sys._a_fns[i](t, y) * eval_b(sys.m[i], x[i + 1], e[i + 1]) * e[i + 1]
    return out


def jacobian_F(sys: TriangularSystem, t: float, z, y: float) -> np.ndarray:
    """Jacobian of ``F(t, z, y)`` with respect to ``z`` (first column is zero)."""
    n = sys.n
    J = np.zeros((n, n))
    args = [y] + [float(v) for v in z[1:]]
    for i in range(1, n):
        for j in range(1, i + 1):
            p = sys.partials[i][j]
            J[i, j] = p.expression.value if p.is_constant else p._fn_math(t, *args[: i + 1])
    for i in range(n - 1):
        mi = sys.m[i]
        if mi == 1:
            J[i, i + 1] += sys._a_fns[i](t, y)
        else:
            J[i, i + 1] += sys._a_fns[i](t, y) * mi * args[i + 1] ** (mi - 1)
    return J
