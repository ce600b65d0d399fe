"""Scalar envelopes consumed by the gain synthesis.

* ``g`` - the decay envelope, ``0 < g < 1`` with ``g' >= -g`` and ``g -> 0``;
* ``sigma`` - a bound on the drift partials ``df_i/dx_j`` (``i, j >= 2``) over
  the ball of radius ``2 beta(t, R) + xi``, which is also the radius of the
  ball containing the mean-value coefficients ``q``;
* ``w`` - a positive lower bound of every ``a_i(t, y)`` for ``|y| <= beta(t, R)``;
* ``a_hi`` - per-coefficient upper bounds on the same interval.

The measured output is confined to ``[-beta(t, R), beta(t, R)]`` because
``y = x1`` and ``|x(t)| <= beta(t, |x0|)``.  All discretised sups/infs carry
a 1.1 safety factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exprlang import ScalarField, extremum_on_box
from .ode import IntegrationError, integrate
from .system import TriangularSystem, plant_rhs_batch
from .timefunc import FieldOfTime, Hermite

__all__ = [
    "EnvelopeError",
    "ValidationReport",
    "EnvelopeSet",
    "DEFAULT_G",
    "SAFETY",
    "validate_g",
    "validate_beta",
    "sigma_R",
    "w_R",
    "build_envelopes",
]

DEFAULT_G = "0.5*exp(-t)"
SAFETY = 1.1


class EnvelopeError(ValueError):
    """An envelope could not be certified."""


@dataclass
class ValidationReport:
    """Outcome of an envelope validation with a witness on failure."""

    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    witness: dict | None = None

    def raise_if_failed(self):
        if not self.passed:
            raise EnvelopeError(f"{self.name} failed: {self.witness}")


def validate_g(g: ScalarField, horizon: float, t0: float = 0.0, grid: int = 1000,
               target: float = 1e-3) -> ValidationReport:
    """Check ``0 < g < 1``, ``g' >= -g`` on a grid and ``sqrt(g(horizon)) <= target``.

    ``target`` is the precision on ``|e|`` the run aims for at the horizon.
    """
    tt = np.linspace(t0, horizon, grid)
    gv = g.vectorized(tt)
    dg = g.diff("t").vectorized(tt)
    details = {"g_horizon": float(gv[-1]), "target": target}
    bad = np.flatnonzero(~((gv > 0) & (gv < 1)))
    if bad.size:
        i = bad[0]
        return ValidationReport("g range (0 < g < 1)", False, details, {"t": float(tt[i]), "g": float(gv[i])})
    slack = dg + gv
    bad = np.flatnonzero(slack < -1e-12 * np.maximum(1.0, np.abs(gv)))
    if bad.size:
        i = bad[0]
        return ValidationReport("g decay rate (g' >= -g)", False, details,
                                {"t": float(tt[i]), "g": float(gv[i]), "dg": float(dg[i])})
    if np.sqrt(gv[-1]) > target:
        return ValidationReport("g terminal precision", False, details,
                                {"t": float(horizon), "sqrt_g": float(np.sqrt(gv[-1]))})
    return ValidationReport("g", True, details)


def validate_beta(sys: TriangularSystem, R: float, horizon: float, trials: int = 100,
                  seed: int = 0, t0: float = 0.0, h: float = 0.01, grid: int = 41) -> ValidationReport:
    """Monte Carlo check of ``|x(t)| <= beta(t, |x0|)`` and of ``beta(t, s) >= s``.

    Initial states are drawn uniformly from the closed ball of radius ``R``;
    all trials are integrated together as one batched system.
    """
    tt = np.linspace(t0, horizon, grid)
    ss = np.linspace(0.0, max(R, 1.0) * 2, grid)
    T, S = np.meshgrid(tt, ss, indexing="ij")
    bv = sys.beta.vectorized(T, S)
    bad = np.argwhere(~(bv >= S))
    if bad.size:
        i, j = bad[0]
        return ValidationReport("beta(t, s) >= s", False, {},
                                {"t": float(T[i, j]), "s": float(S[i, j]), "beta": float(bv[i, j])})
    rng = np.random.default_rng(seed)
    n = sys.n
    d = rng.normal(size=(trials, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = R * rng.uniform(size=trials) ** (1.0 / n)
    X0 = d * r[:, None]

    def rhs(t, flat):
        return plant_rhs_batch(sys, t, flat.reshape(trials, n)).ravel()

    try:
        traj = integrate(rhs, t0, X0.ravel(), horizon, h, label="plant-batch")
    except IntegrationError as exc:
        return ValidationReport("forward completeness", False, {"trials": trials},
                                {"error": str(exc)})
    X = traj.x.reshape(len(traj.t), trials, n)
    norms = np.linalg.norm(X, axis=2)
    bounds = sys.beta.vectorized(traj.t[:, None], np.linalg.norm(X0, axis=1)[None, :])
    margin = bounds - norms
    worst = np.unravel_index(np.argmin(margin), margin.shape)
    details = {"trials": trials, "seed": seed, "worst_margin": float(margin[worst]),
               "samples": int(margin.size)}
    if margin[worst] < 0:
        ti, k = worst
        return ValidationReport("forward completeness", False, details,
                                {"t": float(traj.t[ti]), "x0": X0[k].tolist(), "x": X[ti, k].tolist(),
                                 "bound": float(bounds[worst])})
    return ValidationReport("forward completeness", True, details)


def _box(sys_vars, t_lo, t_hi, half):
    box = {"t": (t_lo, t_hi)}
    for v in sys_vars:
        box[v] = (-half, half)
    return box


def _beta_max(sys: TriangularSystem, R: float, t_lo: float, t_hi: float) -> float:
    ts = np.linspace(t_lo, t_hi, 5)
    return float(np.max(sys.beta.vectorized(ts, np.full_like(ts, R))))


def _sigma_interval(sys, R, xi, t_lo, t_hi, grid, safety):
    half = 2.0 * _beta_max(sys, R, t_lo, t_hi) + xi
    total = 0.0
    for i, j in sys.nonzero_partials:
        p = sys.partials[i][j]
        total += extremum_on_box(p, _box(p.variables[1:], t_lo, t_hi, half), "max_abs", grid, safety)
    return total


def sigma_R(sys: TriangularSystem, R: float, xi: float, t: float, grid: int = 11,
            safety: float = SAFETY) -> float:
    """Certified bound on the sum of ``|df_i/dx_j|`` (``2 <= j <= i``) at time ``t``.

    The Euclidean ball of radius ``2 beta(t, R) + xi`` is enclosed in the
    axis-aligned box of the same half-width.
    """
    return _sigma_interval(sys, R, xi, t, t, grid, safety)


def _a_interval(sys, R, t_lo, t_hi, grid, safety, mode):
    half = _beta_max(sys, R, t_lo, t_hi)
    vals = []
    for ai in sys.a:
        vals.append(extremum_on_box(ai, {"t": (t_lo, t_hi), "x1": (-half, half)}, mode, grid, safety))
    return vals


def w_R(sys: TriangularSystem, R: float, t: float, grid: int = 1001, safety: float = SAFETY) -> float:
    """Lower bound of ``min_i a_i(t, y)`` over ``|y| <= beta(t, R)``, divided by ``safety``.

    Raises
    ------
    EnvelopeError
        If the bound is not positive.
    """
    w = min(_a_interval(sys, R, t, t, grid, safety, "min"))
    if w <= 0:
        raise EnvelopeError(f"a_i not positive near t={t}: lower bound {w}")
    return w


@dataclass
class EnvelopeSet:
    """Time-indexed envelopes for one radius ``R`` and slack ``xi``.

    ``sigma`` and ``a_hi`` are nondecreasing C1 interpolants whose value on
    each knot interval dominates the interval's sup; ``w`` is nonincreasing
    and dominated by the interval's inf.
    """

    sys: TriangularSystem
    g_field: ScalarField
    R: float
    xi: float
    t0: float
    horizon: float
    sigma: Hermite
    w: Hermite
    a_hi: tuple[Hermite, ...]
    knots: np.ndarray

    @property
    def g(self) -> FieldOfTime:
        return FieldOfTime(self.g_field)

    def y_halfwidth(self, t):
        t = np.asarray(t, dtype=float)
        return self.sys.beta.vectorized(t, np.full_like(t, self.R))

    def to_dict(self) -> dict:
        return {"R": self.R, "xi": self.xi, "t0": self.t0, "horizon": self.horizon,
                "g": self.g_field.source, "knots": self.knots.tolist(),
                "sigma": self.sigma.to_dict(), "w": self.w.to_dict(),
                "a_hi": [h.to_dict() for h in self.a_hi]}


def build_envelopes(sys: TriangularSystem, g: ScalarField, R: float, xi: float, t0: float,
                    horizon: float, spacing: float = 0.25, grid: int = 11,
                    safety: float = SAFETY) -> EnvelopeSet:
    """Tabulate ``sigma``, ``w`` and ``a_hi`` on a knot grid over ``[t0, horizon]``.

    Each knot value covers the interval up to the next knot (the time axis is
    part of the extremum box), running max/min make the tables monotone, and
    a monotone C1 cubic interpolates them.
    """
    if horizon <= t0:
        raise EnvelopeError("horizon must exceed t0")
    nk = max(2, int(np.ceil((horizon - t0) / spacing)) + 1)
    knots = np.linspace(t0, horizon, nk)
    ends = np.append(knots[1:], knots[-1])
    sig = np.array([_sigma_interval(sys, R, xi, a, b, grid, safety) for a, b in zip(knots, ends)])
    lows = np.array([_a_interval(sys, R, a, b, max(grid, 101), safety, "min") for a, b in zip(knots, ends)])
    highs = np.array([_a_interval(sys, R, a, b, max(grid, 101), safety, "max") for a, b in zip(knots, ends)])
    w = np.minimum.accumulate(lows.min(axis=1))
    if np.any(w <= 0):
        i = int(np.flatnonzero(w <= 0)[0])
        raise EnvelopeError(f"a_i not positive on [{knots[i]:g}, {ends[i]:g}] for |y| <= beta(t, {R})")
    sig = np.maximum.accumulate(sig)
    highs = np.maximum.accumulate(highs, axis=0)
    return EnvelopeSet(
        sys=sys, g_field=g, R=float(R), xi=float(xi), t0=float(t0), horizon=float(horizon),
        sigma=Hermite(knots, sig), w=Hermite(knots, w),
        a_hi=tuple(Hermite(knots, highs[:, i]) for i in range(sys.n - 1)), knots=knots)
