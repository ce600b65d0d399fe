"""Inductive construction of the time-varying gain schedule.

Level ``k`` acts on the last ``k`` error coordinates.  Level 2 is built in
closed form from the envelopes; every further level borders the previous
matrix with a scalar ``p_R`` (driven by the previous level's injection gain
``phi_k``) and ``p_1 = p_R^2/(L-1) + L``, which keeps ``det(P_k - I)`` equal
to ``(L-1)^k``.  The injection gains ``phi`` are synthesised numerically:
at each knot the worst-case ratio

    [e'PAe + e'Pdot e/2 + dbar e'Pe] / e1^2

over the admissible set is bounded in closed form along ``e1`` (see
``_pykernels.phi_sup``), doubled, interpolated in log space, and then
re-validated on a denser time grid.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import mpmath
import numpy as np

from . import kernels
from .envelopes import EnvelopeSet, build_envelopes
from .exprlang import ScalarField
from .system import TriangularSystem, vartheta
from .timefunc import Constant, FieldOfTime, Hermite, ShiftClamp, TimeFunction, from_dict, smoothstep

__all__ = [
    "SynthesisError",
    "GainOverflowError",
    "SynthesisGrids",
    "GainLevel",
    "GainSchedule",
    "smoothstep",
    "synth_level2",
    "synth_phi",
    "extend_level",
    "make_dbar",
    "synth_schedule",
    "SCHEDULE_FORMAT",
]

SCHEDULE_FORMAT = "triobs-schedule/1"
OVERFLOW_LIMIT = 1e300


class SynthesisError(RuntimeError):
    """A synthesis step failed; ``level`` names the level involved."""

    def __init__(self, message: str, level: int | None = None, witness: dict | None = None):
        self.level = level
        self.witness = witness or {}
        prefix = f"level {level}: " if level is not None else ""
        super().__init__(prefix + message)


class GainOverflowError(SynthesisError):
    """A gain exceeded the representable range guard."""


@dataclass
class SynthesisGrids:
    """Sampling densities for the numerical parts of the synthesis.

    Attributes
    ----------
    knot_spacing : float
        Base spacing of the gain knots in time.
    n_mag : int
        Log-spaced magnitudes per tail direction.
    n_shell : int
        Extra magnitudes near ``xi`` and on the sphere ``|e| = xi`` (each).
    n_dir : int
        Uniform tail directions (levels with at least two tail coordinates).
    graded : int
        Near-axis / near-eigenvector perturbation exponents per direction.
    interval_samples : int
        Samples per knot interval entering the knot maxima.
    validate_factor : int
        Offset sub-points per knot interval in the re-validation pass.
    rounds : int
        Doubling rounds allowed when re-validation fails.
    safety : float
        Multiplier on the knot-wise maximum.
    phi_floor : float
        Smallest injection gain (the gain must stay positive).
    envelope_spacing, envelope_grid
        Knot spacing and per-axis grid of the envelope tables.
    """

    knot_spacing: float = 0.1
    n_mag: int = 20
    n_shell: int = 12
    n_dir: int = 16
    graded: int = 10
    interval_samples: int = 2
    validate_factor: int = 10
    rounds: int = 3
    safety: float = 2.0
    phi_floor: float = 1e-6
    envelope_spacing: float = 0.25
    envelope_grid: int = 11

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _check_magnitude(values, what: str, level: int, times) -> None:
    v = np.asarray(values, dtype=float)
    bad = ~np.isfinite(v) | (np.abs(v) > OVERFLOW_LIMIT)
    if np.any(bad):
        i = int(np.flatnonzero(bad.ravel())[0])
        t = float(np.asarray(times).ravel()[i % np.asarray(times).size])
        raise GainOverflowError(f"{what} exceeds {OVERFLOW_LIMIT:g} near t={t:.6g}", level,
                                {"t": t, "quantity": what})


@dataclass
class GainLevel:
    """One level of the inductive construction.

    ``P`` is ``[[p1, pR], [pR, L]]`` for ``k = 2`` and the bordered matrix
    ``[[p1, pR, 0...], [pR, P_{k-1}], ...]`` above.
    """

    k: int
    n: int
    L: float
    p1: TimeFunction
    pR: TimeFunction
    child: "GainLevel | None"
    d: TimeFunction
    theta: TimeFunction
    M: float
    tau: float
    m: int
    gamma: float
    vartheta: float
    zeta: TimeFunction | None = None
    phi: TimeFunction | None = None
    phi_info: dict = field(default_factory=dict)

    @property
    def dbar(self) -> TimeFunction:
        """Rate handed to the next level: ``d - 1/2``."""
        return self.d - 0.5

    @property
    def offset(self) -> int:
        """0-based index of the level's first coordinate in the full state."""
        return self.n - self.k

    @property
    def det_target(self) -> float:
        return (self.L - 1.0) ** self.k

    def qmask(self) -> np.ndarray:
        mask = np.tril(np.ones((self.k, self.k), dtype=bool))
        if self.offset == 0:
            mask[:, 0] = False
        return mask

    def mvec(self, sys: TriangularSystem) -> np.ndarray:
        return np.array(sys.m[self.offset: self.n - 1], dtype=np.int64)

    def chain(self) -> list["GainLevel"]:
        out, lvl = [], self
        while lvl is not None:
            out.append(lvl)
            lvl = lvl.child
        return out[::-1]

    def matrices(self, t):
        """``P(t)`` and ``Pdot(t)`` with shape ``(..., k, k)``."""
        t = np.asarray(t, dtype=float)
        k = self.k
        P = np.zeros(t.shape + (k, k))
        D = np.zeros_like(P)
        p1, dp1 = self.p1.eval(t)
        pr, dpr = self.pR.eval(t)
        P[..., 0, 0], D[..., 0, 0] = p1, dp1
        P[..., 0, 1] = P[..., 1, 0] = pr
        D[..., 0, 1] = D[..., 1, 0] = dpr
        if self.child is None:
            P[..., 1, 1] = self.L
        else:
            Pc, Dc = self.child.matrices(t)
            P[..., 1:, 1:] = Pc
            D[..., 1:, 1:] = Dc
        return P, D

    def P(self, t):
        return self.matrices(t)[0]

    def breakpoints(self) -> set[float]:
        """Non-smooth points of ``P(t)`` over all nested levels."""
        out = self.p1.breakpoints() | self.pR.breakpoints()
        return out | self.child.breakpoints() if self.child is not None else out

    def Pdot(self, t):
        return self.matrices(t)[1]

    def P_mp(self, t) -> mpmath.matrix:
        """``P(t)`` in mpmath at the current working precision."""
        k = self.k
        P = mpmath.zeros(k, k)
        P[0, 0] = self.p1.eval_mp(t)[0]
        P[0, 1] = P[1, 0] = self.pR.eval_mp(t)[0]
        if self.child is None:
            P[1, 1] = mpmath.mpf(self.L)
        else:
            Pc = self.child.P_mp(t)
            for i in range(k - 1):
                for j in range(k - 1):
                    P[i + 1, j + 1] = Pc[i, j]
        return P

    def summary(self) -> dict:
        return {"k": self.k, "M": self.M, "tau": self.tau, "m": self.m, "gamma": self.gamma,
                "vartheta": self.vartheta, **{f"phi_{k}": v for k, v in self.phi_info.items()
                                              if isinstance(v, (int, float, str))}}

    def to_dict(self) -> dict:
        return {"k": self.k, "n": self.n, "L": self.L, "M": self.M, "tau": self.tau, "m": self.m,
                "gamma": self.gamma, "vartheta": self.vartheta,
                "p1": self.p1.to_dict(), "pR": self.pR.to_dict(), "d": self.d.to_dict(),
                "theta": self.theta.to_dict(),
                "zeta": None if self.zeta is None else self.zeta.to_dict(),
                "phi": None if self.phi is None else self.phi.to_dict(),
                # wall-clock timings stay out so serialised schedules are reproducible
                "phi_info": {k: v for k, v in self.phi_info.items()
                             if isinstance(v, (int, float, str)) and k != "seconds"}}

    @classmethod
    def from_dict(cls, data: dict, child: "GainLevel | None") -> "GainLevel":
        return cls(k=data["k"], n=data["n"], L=data["L"], p1=from_dict(data["p1"]), pR=from_dict(data["pR"]),
                   child=child, d=from_dict(data["d"]), theta=from_dict(data["theta"]), M=data["M"],
                   tau=data["tau"], m=data["m"], gamma=data["gamma"], vartheta=data["vartheta"],
                   zeta=None if data["zeta"] is None else from_dict(data["zeta"]),
                   phi=None if data["phi"] is None else from_dict(data["phi"]),
                   phi_info=dict(data.get("phi_info", {})))


def _dense(t0: float, t1: float, n: int = 201, extra=()) -> np.ndarray:
    return np.unique(np.concatenate([np.linspace(t0, t1, n), np.asarray(extra, dtype=float)]))


def synth_level2(sys: TriangularSystem, env: EnvelopeSet, L: float, t0: float, horizon: float) -> GainLevel:
    """Closed-form level acting on the last two coordinates.

    ``p_R = -theta L^((m+1)/2) (n + sigma) / (vartheta w g^((m-1)/2))`` with a
    smoothstep ``theta`` of width ``tau = min(1/M, 1)`` (``tau = 1`` when
    ``M = max sigma`` over the first half unit is 0), the rate ``d`` ramping
    from ``-M`` to ``n``, and ``p_1 = p_R^2/(L-1) + L``.
    """
    if not L > 1:
        raise SynthesisError(f"L must exceed 1, got {L}", 2)
    n = sys.n
    tt = _dense(t0, t0 + 0.5, 201, env.knots[(env.knots >= t0) & (env.knots <= t0 + 0.5)])
    M = float(np.max(env.sigma(tt)))
    tau = 1.0 if M == 0 else min(1.0 / M, 1.0)
    theta = smoothstep(t0, tau)
    m = sys.m[n - 2]
    vth = vartheta(m)
    g = env.g
    e = (m - 1) // 2
    gpow = g ** e if e else Constant(1.0)
    pR = -(theta * (L ** ((m + 1) / 2.0)) * (n + env.sigma)) / (vth * env.w * gpow)
    ramp = smoothstep(t0 + tau / 2.0, tau)
    # blended form avoids -M + (n + M) cancelling when M is huge
    d = (1.0 - ramp) * (-M) + ramp * n
    p1 = pR * pR / (L - 1.0) + L
    level = GainLevel(k=2, n=n, L=float(L), p1=p1, pR=pR, child=None, d=d, theta=theta, M=M, tau=tau,
                      m=m, gamma=(m + 1) / 2.0, vartheta=vth)
    grid = _dense(t0, horizon, 401)
    _check_magnitude(p1(grid), "p1", 2, grid)
    return level


def make_dbar(d: TimeFunction, c1: float, c2: float, t0: float) -> TimeFunction:
    """Final decay rate: ``d - c`` on ``[t0, t0+1]`` and ``max(c1, d - c)`` afterwards.

    ``c = min(d(t0+1) - c1, c2)`` keeps the function continuous at ``t0 + 1``.
    """
    d1 = float(d(t0 + 1.0))
    if not d1 > c1:
        raise SynthesisError(f"rate at t0+1 is {d1:g}, must exceed c1={c1:g}")
    c = min(d1 - c1, c2)
    return ShiftClamp(d, c, c1, t0 + 1.0)


def _level_times(level: GainLevel, t0: float, horizon: float, spacing: float) -> np.ndarray:
    pts = [np.linspace(t0, horizon, max(2, int(np.ceil((horizon - t0) / spacing)) + 1))]
    fracs = np.array([1 / 64, 1 / 32, 1 / 16, 1 / 8, 3 / 16, 1 / 4, 5 / 16, 3 / 8, 7 / 16, 1 / 2,
                      9 / 16, 5 / 8, 3 / 4, 7 / 8, 1.0, 1.25, 1.5, 2.0, 3.0, 4.0])
    for lvl in level.chain():
        pts.append(t0 + lvl.tau * fracs)
        # geometric knots bridge very short ramps to the unit scale
        pts.append(t0 + np.geomspace(lvl.tau, 1.0, max(2, int(np.ceil(np.log2(1.0 / lvl.tau))) + 1)))
    pts.append(t0 + np.array([1e-3, 3e-3, 1e-2, 0.03, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.05, 1.25]))
    t = np.concatenate(pts)
    return np.unique(t[(t >= t0) & (t <= horizon)])


def _unit_dirs(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        a = np.linspace(0, 2 * np.pi, count, endpoint=False)
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    v = rng.normal(size=(count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _graded(base: np.ndarray, grades: np.ndarray) -> np.ndarray:
    """Perturb each base direction toward every other axis of its frame by tiny amounts."""
    dim = base.shape[1]
    out = []
    for b in base:
        for j in range(dim):
            ej = np.zeros(dim)
            ej[j] = 1.0
            if abs(abs(b @ ej) - 1.0) < 1e-15:
                continue
            for s in (1.0, -1.0):
                v = b[None, :] + s * grades[:, None] * ej[None, :]
                out.append(v / np.linalg.norm(v, axis=1, keepdims=True))
    return np.concatenate(out) if out else np.empty((0, dim))


class _Requirement:
    """Evaluates the knot-wise bound of a level's injection requirement."""

    def __init__(self, level: GainLevel, env: EnvelopeSet, dbar: TimeFunction, grids: SynthesisGrids,
                 seed: int = 0):
        self.level = level
        self.env = env
        self.dbar = dbar
        self.grids = grids
        self.sys = env.sys
        self.mask = level.qmask()
        self.mvec = level.mvec(self.sys)
        rng = np.random.default_rng(seed)
        dim = level.k - 1
        self.dim = dim
        self.grades = 10.0 ** -np.linspace(1, 40, grids.graded)
        if dim == 1:
            self.base_dirs = np.array([[1.0], [-1.0]])
        else:
            uni = _unit_dirs(dim, grids.n_dir, rng)
            axes = np.concatenate([np.eye(dim), -np.eye(dim)])
            self.base_dirs = np.concatenate([uni, axes, _graded(axes, self.grades)])

    def inputs(self, times) -> list[dict]:
        """Kernel arguments at each time (time functions evaluated in one batch)."""
        lvl, env = self.level, self.env
        times = np.atleast_1d(np.asarray(times, dtype=float))
        P, D = lvl.matrices(times)
        hw = env.y_halfwidth(times)
        idx = range(lvl.offset, lvl.n - 1)
        ahi = np.stack([env.a_hi[i](times) for i in idx], axis=1)
        w = env.w(times)
        dbar, sigma, g = self.dbar(times), env.sigma(times), env.g(times)
        return [dict(P=P[j], H=0.5 * D[j], dbar=float(dbar[j]), sigma=float(sigma[j]), g=float(g[j]),
                     xi=env.xi, qmask=self.mask, alo=np.full(ahi.shape[1], float(w[j])), ahi=ahi[j],
                     xhw=float(hw[j]), mvec=self.mvec) for j in range(len(times))]

    def tails(self, inp) -> np.ndarray:
        P = inp["P"]
        Ph = P[1:, 1:]
        dirs = self.base_dirs
        if self.dim > 1:
            # directions aligned with the tail block's eigenvectors, graded around them
            _, V = np.linalg.eigh(Ph)
            eig = np.concatenate([V.T, -V.T])
            dirs = np.concatenate([dirs, eig, _graded(eig, self.grades)])
        quad = np.einsum("ni,ij,nj->n", dirs, Ph, dirs)
        rstar = np.sqrt(inp["g"] / np.maximum(quad, 1e-300))
        xi = inp["xi"]
        lo = np.minimum(np.minimum(rstar, inp["xhw"]) * 1e-3, xi * 1e-6)
        frac = np.linspace(0.0, 1.0, self.grids.n_mag)
        mags = np.exp(np.log(lo)[:, None] + frac[None, :] * (np.log(xi * (1 - 1e-9)) - np.log(lo))[:, None])
        near = rstar[:, None] * np.array([0.5, 0.8, 0.95, 1.0, 1.05, 1.25, 2.0])[None, :]
        edge = inp["xhw"] * np.array([1.0, 2.0, 4.0])[None, :] * np.ones((len(dirs), 1))
        # the bound grows with |e|, so resolve the outer shell and the sphere |e| = xi, where the
        # tail xi sqrt(1 - delta^2) leaves room for |e1| up to xi delta
        delta = np.geomspace(1e-9, 0.999, self.grids.n_shell)
        shell = np.concatenate([xi * np.geomspace(0.01, 1 - 1e-9, self.grids.n_shell), xi * np.sqrt(1 - delta ** 2)])
        mags = np.concatenate([mags, near, edge, np.broadcast_to(shell, (len(dirs), shell.size))], axis=1)
        mags = np.where(mags < xi, mags, np.nan)
        E = (dirs[:, None, :] * mags[:, :, None]).reshape(-1, self.dim)
        E = E[np.all(np.isfinite(E), axis=1)]
        return np.concatenate([np.zeros((1, self.dim)), E])

    def bound_at(self, inp, tails=None):
        """Bound for one set of kernel inputs; ``nan`` flags a value beyond the float range.

        The bound is homogeneous under ``(P, H, g) -> c (P, H, g)``, so it is
        evaluated with ``P`` normalised by an exact power of two, which keeps
        the kernel's intermediate products finite, and scaled back afterwards.
        """
        if tails is None:
            tails = self.tails(inp)
        expo = math.frexp(float(np.max(np.abs(inp["P"]))))[1]
        c = math.ldexp(1.0, -expo)
        scaled = dict(inp, P=inp["P"] * c, H=inp["H"] * c, g=inp["g"] * c)
        small, arg = kernels.phi_sup(E=tails, **scaled)
        best = small
        if np.isfinite(small):
            with np.errstate(over="ignore"):
                best = float(np.float64(small) / c)
            if not np.isfinite(best):
                best = np.nan
        return best, tails[arg] if len(tails) else None

    def bound(self, t):
        return self.bound_at(self.inputs([t])[0])


def _checked_bounds(req: _Requirement, times, k: int) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    out = np.empty(len(times))
    for j, inp in enumerate(req.inputs(times)):
        best, arg = req.bound_at(inp)
        t = times[j]
        if np.isnan(best):
            raise GainOverflowError(f"injection gain exceeds {OVERFLOW_LIMIT:g} near t={t:.6g}", k,
                                    {"t": float(t), "quantity": "phi"})
        if best == np.inf:
            raise SynthesisError("injection requirement is unbounded near the output kernel "
                                 f"(t={t:.6g}); the level's kernel inequality does not hold",
                                 k, {"t": float(t), "tail": None if arg is None else arg.tolist()})
        out[j] = best
    return out


def _subgrid(knots: np.ndarray, fracs: np.ndarray) -> np.ndarray:
    return (knots[:-1, None] + (knots[1:] - knots[:-1])[:, None] * fracs[None, :]).ravel()


def synth_phi(level: GainLevel, env: EnvelopeSet, dbar: TimeFunction, t0: float, horizon: float,
              grids: SynthesisGrids | None = None, seed: int = 0) -> TimeFunction:
    """Injection gain for ``level`` with decay rate ``dbar``.

    The closed-form bound is sampled at the knots and at
    ``interval_samples - 1`` interior points of every knot interval.  Each
    knot value is ``safety`` times the largest sample over its two adjacent
    intervals (floored at ``phi_floor``), so the monotone log-space
    interpolant dominates every sample of both intervals.  Re-validation
    evaluates the bound on a separate, offset grid of ``validate_factor``
    points per interval and doubles the gain at the bracketing knots
    wherever it falls short, for at most ``rounds`` rounds.

    Raises
    ------
    GainOverflowError
        If the gain leaves the representable range.
    SynthesisError
        If the bound is unbounded (the level's own kernel inequality fails)
        or re-validation still fails after all rounds.
    """
    grids = grids or SynthesisGrids()
    started = time.perf_counter()
    req = _Requirement(level, env, dbar, grids, seed)
    knots = _level_times(level, t0, horizon, grids.knot_spacing)
    ns = max(1, grids.interval_samples)
    at_knots = _checked_bounds(req, knots, level.k)
    inner = _checked_bounds(req, _subgrid(knots, np.arange(1, ns) / ns), level.k).reshape(len(knots) - 1, ns - 1)
    per_interval = np.maximum(np.maximum(at_knots[:-1], at_knots[1:]),
                              inner.max(axis=1) if ns > 1 else -np.inf)
    cover = np.full(len(knots), -np.inf)
    cover[:-1] = per_interval
    cover[1:] = np.maximum(cover[1:], per_interval)
    vals = np.maximum(grids.safety * cover, grids.phi_floor)
    _check_magnitude(vals, "phi", level.k, knots)
    phi = Hermite(knots, vals, log=True)

    nsub = grids.validate_factor
    sub = _subgrid(knots, (np.arange(nsub) + 0.5) / nsub)
    need = _checked_bounds(req, sub, level.k)
    rounds_used = 0
    for rnd in range(grids.rounds + 1):
        have = phi(sub)
        short = need > have
        ratio = need / have
        worst_ratio = float(np.max(ratio))
        if not np.any(short):
            break
        if rnd == grids.rounds:
            i = int(np.argmax(ratio))
            raise SynthesisError(f"injection gain fails re-validation after {grids.rounds} doubling rounds",
                                 level.k, {"t": float(sub[i]), "need": float(need[i]), "have": float(have[i])})
        rounds_used += 1
        for b in np.unique(np.flatnonzero(short) // nsub):
            vals[b] *= 2.0
            vals[b + 1] *= 2.0
        _check_magnitude(vals, "phi", level.k, knots)
        phi = Hermite(knots, vals, log=True)

    level.phi_info = {"knots": int(len(knots)), "doubling_rounds": rounds_used,
                      "validation_points": int(len(sub)), "worst_need_over_have": worst_ratio,
                      "seconds": time.perf_counter() - started,
                      "phi_max": float(vals.max()), "phi_min": float(vals.min())}
    return phi


def extend_level(level: GainLevel, phi: TimeFunction, sys: TriangularSystem, env: EnvelopeSet, L: float,
                 xi: float, t0: float, horizon: float) -> GainLevel:
    """Border ``level`` with one more coordinate.

    Uses ``dbar_k = d_k - 1/2``, ``M = |max (-dbar_k + phi xi^2 / g + 1/4)|``
    over ``[t0, t0 + 1/2]``, ``tau = min(1/(4M), 1/2)``, the rate blending
    from ``-M`` to ``dbar_k - 1/4``, ``zeta = theta / (gamma (g/4)^(gamma-1))``
    and ``p_R = -zeta phi^gamma / (vartheta w)``.
    """
    k = level.k + 1
    n = sys.n
    if k > n:
        raise SynthesisError("cannot extend beyond the state dimension", k)
    dbar_k = level.dbar
    g = env.g
    tt = _dense(t0, t0 + 0.5, 401, phi.x[(phi.x >= t0) & (phi.x <= t0 + 0.5)] if isinstance(phi, Hermite) else ())
    vals = -dbar_k(tt) + phi(tt) * xi * xi / g(tt) + 0.25
    _check_magnitude(vals, "M", k, tt)
    M = abs(float(np.max(vals)))
    tau = min(1.0 / (4.0 * M), 0.5)
    if t0 + tau / 64.0 == t0:
        raise SynthesisError(f"ramp width {tau:.3g} is below the time resolution at t0={t0:g}", k,
                             {"M": M, "tau": tau})
    theta = smoothstep(t0, tau)
    m = sys.m[n - k]
    gamma = (m + 1) // 2
    vth = vartheta(m)
    zeta = theta / (gamma * (g * 0.25) ** (gamma - 1)) if gamma > 1 else theta
    pR = -(zeta * phi ** gamma) / (vth * env.w)
    ramp = smoothstep(t0 + tau / 2.0, tau)
    d = (1.0 - ramp) * (-M) + ramp * (dbar_k - 0.25)
    # bordering keeps det(P - I) = (L-1)^k given det(P_{k-1} - I) = (L-1)^(k-1)
    p1 = pR * pR / (L - 1.0) + L
    new = GainLevel(k=k, n=n, L=float(L), p1=p1, pR=pR, child=level, d=d, theta=theta, M=M, tau=tau,
                    m=m, gamma=float(gamma), vartheta=vth, zeta=zeta)
    grid = _dense(t0, horizon, 401, t0 + tau * np.array([0.25, 0.5, 1.0]))
    _check_magnitude(p1(grid), "p1", k, grid)
    return new


@dataclass
class GainSchedule:
    """All synthesised objects for one radius ``R`` and start time ``t0``."""

    sys: TriangularSystem
    env: EnvelopeSet
    levels: list[GainLevel]
    dbar_R: TimeFunction
    phi_R: TimeFunction
    L: float
    c1: float
    c2: float
    xi: float
    R: float
    t0: float
    horizon: float
    grids: SynthesisGrids = field(default_factory=SynthesisGrids)
    seed: int = 0
    timings: dict = field(default_factory=dict)

    @property
    def final(self) -> GainLevel:
        return self.levels[-1]

    @property
    def d_R(self) -> TimeFunction:
        return self.final.d

    def P_R(self, t):
        return self.final.P(t)

    def breakpoints(self) -> np.ndarray:
        """Sorted non-smooth points of the injection gain within the domain."""
        pts = np.array(sorted(self.final.breakpoints() | self.phi_R.breakpoints()))
        return pts[(pts > self.t0) & (pts < self.horizon)]

    def injection(self, t) -> np.ndarray:
        """Output-injection gains ``phi_R(t) P_R(t)^{-1} H'`` with shape ``(..., n)``.

        Solved through a Cholesky factorisation of ``P_R(t)``.
        """
        t = np.asarray(t, dtype=float)
        P = self.final.P(t)
        Lc = np.linalg.cholesky(P)
        rhs = np.zeros(P.shape[:-1])
        rhs[..., 0] = 1.0
        y = np.linalg.solve(Lc, rhs[..., None])[..., 0]
        v = np.linalg.solve(np.swapaxes(Lc, -1, -2), y[..., None])[..., 0]
        return self.phi_R(t)[..., None] * v

    def to_dict(self) -> dict:
        sys = self.sys
        return {
            "format": SCHEDULE_FORMAT,
            "system": {"name": sys.name, "n": sys.n, "m": list(sys.m), "f": [f.source for f in sys.f],
                       "a": [a.source for a in sys.a], "beta": sys.beta.source, "note": sys.note},
            "constants": {"L": self.L, "c1": self.c1, "c2": self.c2, "xi": self.xi, "R": self.R,
                          "t0": self.t0, "horizon": self.horizon, "seed": self.seed},
            "grids": self.grids.to_dict(),
            "envelopes": self.env.to_dict(),
            "levels": [lvl.to_dict() for lvl in self.levels],
            "dbar_R": self.dbar_R.to_dict(),
            "phi_R": self.phi_R.to_dict(),
            "samples": self._samples(),
        }

    def _samples(self) -> dict:
        t = np.linspace(self.t0, self.horizon, 11)
        return {"t": t.tolist(), "P_R": self.final.P(t).tolist(), "phi_R": self.phi_R(t).tolist(),
                "dbar_R": self.dbar_R(t).tolist()}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "GainSchedule":
        if data.get("format") != SCHEDULE_FORMAT:
            raise ValueError(f"unsupported schedule format {data.get('format')!r}")
        s = data["system"]
        sys = TriangularSystem.from_strings(s["f"], s["a"], s["m"], s["beta"], name=s["name"], note=s["note"])
        c = data["constants"]
        e = data["envelopes"]
        env = EnvelopeSet(sys=sys, g_field=ScalarField.from_text(e["g"], ("t",), "g"), R=e["R"], xi=e["xi"],
                          t0=e["t0"], horizon=e["horizon"], sigma=from_dict(e["sigma"]), w=from_dict(e["w"]),
                          a_hi=tuple(from_dict(h) for h in e["a_hi"]), knots=np.asarray(e["knots"], float))
        levels, child = [], None
        for ld in data["levels"]:
            child = GainLevel.from_dict(ld, child)
            levels.append(child)
        return cls(sys=sys, env=env, levels=levels, dbar_R=from_dict(data["dbar_R"]),
                   phi_R=from_dict(data["phi_R"]), L=c["L"], c1=c["c1"], c2=c["c2"], xi=c["xi"], R=c["R"],
                   t0=c["t0"], horizon=c["horizon"], grids=SynthesisGrids(**data["grids"]), seed=c["seed"])

    @classmethod
    def loads(cls, text: str) -> "GainSchedule":
        return cls.from_dict(json.loads(text))


def synth_schedule(sys: TriangularSystem, R: float, xi: float, t0: float, horizon: float,
                   g: ScalarField | None = None, L: float = 2.0, c1: float = 1.0, c2: float | None = None,
                   grids: SynthesisGrids | None = None, seed: int = 0,
                   env: EnvelopeSet | None = None) -> GainSchedule:
    """Run the full induction and the final injection-gain synthesis.

    Level 2 in closed form, then ``synth_phi``/``extend_level`` up to
    ``k = n``, then ``dbar_R = make_dbar(d_n)`` and the final ``phi_R``.
    """
    from .envelopes import DEFAULT_G

    if xi < 1:
        raise SynthesisError(f"xi must be >= 1, got {xi}")
    grids = grids or SynthesisGrids()
    c2 = float(sys.n) if c2 is None else float(c2)
    g = g or ScalarField.from_text(DEFAULT_G, ("t",), "g")
    timings = {}
    tic = time.perf_counter()
    if env is None:
        env = build_envelopes(sys, g, R, xi, t0, horizon, spacing=grids.envelope_spacing,
                              grid=grids.envelope_grid)
    timings["envelopes"] = time.perf_counter() - tic
    level = synth_level2(sys, env, L, t0, horizon)
    levels = [level]
    for k in range(2, sys.n):
        tic = time.perf_counter()
        level.phi = synth_phi(level, env, level.dbar, t0, horizon, grids, seed=seed + k)
        timings[f"phi_{k}"] = time.perf_counter() - tic
        level = extend_level(level, level.phi, sys, env, L, xi, t0, horizon)
        levels.append(level)
    dbar_R = make_dbar(level.d, c1, c2, t0)
    tic = time.perf_counter()
    phi_R = synth_phi(level, env, dbar_R, t0, horizon, grids, seed=seed + sys.n)
    level.phi = phi_R
    timings["phi_R"] = time.perf_counter() - tic
    return GainSchedule(sys=sys, env=env, levels=levels, dbar_R=dbar_R, phi_R=phi_R, L=float(L), c1=float(c1),
                        c2=c2, xi=float(xi), R=float(R), t0=float(t0), horizon=float(horizon), grids=grids,
                        seed=seed, timings=timings)


def gain_magnitudes(schedule: GainSchedule, t) -> dict:
    """log10 magnitudes of the border gains and injection gain (diagnostics)."""
    t = np.asarray(t, dtype=float)
    out = {}
    for lvl in schedule.levels:
        with np.errstate(divide="ignore"):
            out[f"pR_{lvl.k}"] = np.log10(np.abs(lvl.pR(t)) + 1e-300)
    out["phi_R"] = np.log10(schedule.phi_R(t))
    return out

