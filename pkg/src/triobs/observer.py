"""Luenberger-type observers built from gain schedules.

The fixed-ball observer is ``z' = F(t, z, y) + phi(t) P(t)^{-1} H' (y - z1)``
with ``z(t0) = 0``.  The switching observer runs one such copy per segment
``k`` on ``[t_{k-1}, t_{k+1}]`` (radius ``R = k``), scales its field down to
zero between ``|z| = zeta_k`` and ``2 zeta_k``, and the estimate ``Z(t)`` is
``z_k(t)`` on ``[t_k, t_{k+1})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .exprlang import ScalarField
from .ode import Trajectory
from .synthesis import GainSchedule, SynthesisError, SynthesisGrids, synth_schedule
from .system import TriangularSystem, eval_F

__all__ = [
    "SwitchPlan",
    "xi_bound",
    "injection_gain",
    "luenberger_rhs",
    "switch_times_closed_form",
    "switch_time_bisect",
    "switch_plan",
    "saturation_factor",
    "switched_rhs",
    "assemble_Z",
]


def xi_bound(L: float, c2: float, beta_value: float) -> float:
    """``sqrt(L) exp(2 c2) beta_value``: the admissible error radius.

    Raises
    ------
    ValueError
        On non-positive arguments or ``L <= 1``.
    OverflowError
        If the result is not finite.
    """
    if not (L > 1 and c2 > 0 and beta_value > 0):
        raise ValueError(f"need L > 1, c2 > 0, beta_value > 0; got {L}, {c2}, {beta_value}")
    out = math.sqrt(L) * math.exp(2.0 * c2) * beta_value
    if not math.isfinite(out):
        raise OverflowError("xi overflows")
    return out


def injection_gain(schedule: GainSchedule, t: float) -> np.ndarray:
    """``phi_R(t) P_R(t)^{-1} H'`` via a Cholesky solve."""
    return schedule.injection(np.array([t]))[0]


def luenberger_rhs(schedule: GainSchedule, t: float, z, y: float) -> np.ndarray:
    """Observer field ``F(t, z, y) + K(t) (y - z1)``."""
    z = np.asarray(z, dtype=float)
    if not schedule.t0 <= t <= schedule.horizon:
        raise ValueError(f"t={t} outside the schedule domain [{schedule.t0}, {schedule.horizon}]")
    return eval_F(schedule.sys, t, z, y) + injection_gain(schedule, t) * (y - z[0])


def _default_g_crossing(i: int) -> float:
    # sqrt(g(t)) <= 1/i with g = exp(-t)/2  <=>  t >= ln(i^2 / 2)
    return math.log(i * i / 2.0)


def switch_times_closed_form(prev: float, i: int, xi_i: float) -> float:
    """Next switching time for ``g = exp(-t)/2`` and ``c1 = 1``.

    Both envelope terms decrease, so the earliest admissible time is the
    later of the two crossings, and at least ``prev + 1``.
    """
    return max(prev + 1.0, prev + 1.0 + math.log(i * xi_i), _default_g_crossing(i))


def switch_time_bisect(prev: float, i: int, xi_i: float, g: ScalarField, c1: float = 1.0,
                       tol: float = 1e-12, reach: float = 1e4) -> float:
    """Earliest ``tau >= prev + 1`` with ``max(xi e^{-c1 (t - prev - 1)}, sqrt g(t)) <= 1/i`` for ``t >= tau``.

    ``g`` must be nonincreasing from ``tau`` on (the decay envelope), which
    makes the condition monotone in ``t`` and each crossing a root.
    """
    target = 1.0 / i
    start = prev + 1.0

    def cond(t):
        return max(xi_i * math.exp(-c1 * (t - start)), math.sqrt(g(t))) - target

    if cond(start) <= 0:
        return start
    hi = start + 1.0
    while cond(hi) > 0:
        hi = start + 2 * (hi - start)
        if hi - start > reach:
            raise SynthesisError(f"no switching time within {reach} of {start} for i={i}")
    return brentq(cond, start, hi, xtol=tol, rtol=4 * np.finfo(float).eps)


@dataclass
class SwitchPlan:
    """Switching times, radii and lazily synthesised segment schedules.

    ``t[0]`` is ``t_1 = t0``; entry ``i - 1`` holds ``t_i``.  ``xi[k - 1]``
    and ``zeta[k - 1]`` belong to segment ``k``, which runs on
    ``[t_{k-1}, t_{k+1}]`` (with ``t_0 := t_1``).
    """

    sys: TriangularSystem
    g: ScalarField
    L: float
    c1: float
    c2: float
    t: list[float]
    xi: list[float]
    zeta: list[float]
    horizon: float
    grids: SynthesisGrids = field(default_factory=SynthesisGrids)
    seed: int = 0
    truncated_at: int | None = None
    truncation_reason: str = ""
    _segments: dict = field(default_factory=dict, repr=False)

    def t_index(self, i: int) -> float:
        """``t_i`` for ``i >= 0`` with ``t_0 := t_1``."""
        return self.t[max(i, 1) - 1]

    def window(self, k: int) -> tuple[float, float]:
        return self.t_index(k - 1), self.t_index(k + 1)

    @property
    def n_segments(self) -> int:
        """Segments whose window is fully planned."""
        return len(self.t) - 1

    def segments_needed(self, horizon: float | None = None) -> list[int]:
        """Segments started by ``horizon`` (segment ``k`` starts at ``t_{k-1}``)."""
        horizon = self.horizon if horizon is None else horizon
        return [k for k in range(1, self.n_segments + 1) if self.t_index(k - 1) <= horizon]

    def segment(self, k: int) -> GainSchedule:
        """Schedule for segment ``k`` (radius ``k``), synthesised on first use.

        The schedule stops at the plan horizon when the window reaches past it.
        """
        if k not in self._segments:
            if not 1 <= k <= self.n_segments:
                raise ValueError(f"segment {k} not in plan (1..{self.n_segments})")
            a, b = self.window(k)
            b = min(b, max(self.horizon, a + 1.0))
            self._segments[k] = synth_schedule(self.sys, float(k), self.xi[k - 1], a, b, g=self.g, L=self.L,
                                               c1=self.c1, c2=self.c2, grids=self.grids, seed=self.seed + k)
        return self._segments[k]

    def summary(self) -> dict:
        return {"t": list(self.t), "xi": list(self.xi), "zeta": list(self.zeta), "L": self.L, "c1": self.c1,
                "c2": self.c2, "truncated_at": self.truncated_at, "truncation_reason": self.truncation_reason}


def switch_plan(sys: TriangularSystem, g: ScalarField, L: float, c1: float, c2: float, t0: float,
                horizon: float, grids: SynthesisGrids | None = None, seed: int = 0,
                closed_form: bool | None = None, max_segments: int = 64) -> SwitchPlan:
    """Switching times ``t_i``, gains ``xi_i`` and saturation radii ``zeta_k``.

    Times are added until they pass ``horizon`` by one extra index, so every
    segment started before ``horizon`` has a complete window.  With the
    default ``g = exp(-t)/2`` and ``c1 = 1`` the closed form is used,
    otherwise bisection.
    """
    from .envelopes import DEFAULT_G

    if closed_form is None:
        closed_form = g.source.replace(" ", "") in (DEFAULT_G.replace(" ", ""), "exp(-t)/2") and c1 == 1.0
    beta = sys.beta
    ts = [float(t0)]
    xis = []
    i = 1
    while True:
        prev_t = ts[max(i - 1, 1) - 1]
        xi_i = xi_bound(L, c2, beta(prev_t, i + 1.0))
        xis.append(xi_i)
        if i >= 2:
            nxt = switch_times_closed_form(ts[-1], i, xi_i) if closed_form else \
                switch_time_bisect(ts[-1], i, xi_i, g, c1)
            ts.append(nxt)
        # t_{k+1} for the last segment started before the horizon must exist
        if len(ts) >= 2 and ts[-2] > horizon:
            break
        if i >= max_segments:
            break
        i += 1
    nseg = len(ts) - 1
    # zeta_k = beta(t_{k+1}, k) + xi_k with t_{k+1} = ts[k]
    zetas = [beta(ts[k], float(k)) + xis[k - 1] for k in range(1, nseg + 1)]
    return SwitchPlan(sys=sys, g=g, L=float(L), c1=float(c1), c2=float(c2), t=ts, xi=xis[:nseg], zeta=zetas,
                      horizon=float(horizon), grids=grids or SynthesisGrids(), seed=seed)


def saturation_factor(zeta: float, znorm: float) -> float:
    """1 inside ``zeta``, linear to 0 on ``[zeta, 2 zeta]``, 0 beyond."""
    if znorm <= zeta:
        return 1.0
    if znorm >= 2 * zeta:
        return 0.0
    return (2 * zeta - znorm) / zeta


def switched_rhs(plan: SwitchPlan, k: int, t: float, z, y: float) -> np.ndarray:
    """Saturated observer field of segment ``k``."""
    a, b = plan.window(k)
    if not a <= t <= b:
        raise ValueError(f"t={t} outside segment {k} window [{a}, {b}]")
    z = np.asarray(z, dtype=float)
    s = saturation_factor(plan.zeta[k - 1], float(np.linalg.norm(z)))
    if s == 0.0:
        return np.zeros_like(z)
    return s * luenberger_rhs(plan.segment(k), t, z, y)


def assemble_Z(plan: SwitchPlan, segments: dict[int, Trajectory], horizon: float | None = None) -> Trajectory:
    """Piecewise estimate ``Z = z_k`` on ``[t_k, t_{k+1})``.

    Samples are taken from each segment's own grid; at ``t_k`` the sample of
    segment ``k`` wins, so jumps appear only there.

    Raises
    ------
    ValueError
        If a needed segment is missing or does not cover its interval.
    """
    horizon = plan.horizon if horizon is None else horizon
    ts, xs, dxs = [], [], []
    jumps = {}
    k = 1
    while True:
        lo = plan.t_index(k)
        hi = plan.t_index(k + 1)
        if lo > horizon or k > plan.n_segments:
            break
        seg = segments.get(k)
        if seg is None:
            raise ValueError(f"segment {k} missing; coverage gap at t={lo}")
        end = min(hi, horizon)
        if seg.t[0] > lo + 1e-12 or seg.t[-1] < end - 1e-12:
            raise ValueError(f"segment {k} covers [{seg.t[0]}, {seg.t[-1]}], needs [{lo}, {end}]")
        last = end >= horizon
        sel = (seg.t >= lo) & ((seg.t <= end) if last else (seg.t < end))
        if ts and k - 1 in segments:
            prev = segments[k - 1]
            jumps[k] = float(np.linalg.norm(seg(lo) - prev(lo)))
        ts.append(seg.t[sel])
        xs.append(seg.x[sel])
        dxs.append(seg.dx[sel])
        if last:
            break
        k += 1
    t = np.concatenate(ts)
    keep = np.concatenate([[True], np.diff(t) > 0])
    return Trajectory(t[keep], np.concatenate(xs)[keep], np.concatenate(dxs)[keep], label="Z",
                      meta={"jumps": jumps})

