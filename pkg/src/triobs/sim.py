"""Co-simulation of plant and observer, envelope verdicts and trace output.

The plant is integrated with fixed-step RK4.  The observer is carried in
error coordinates ``e = x - z``:

    e' = [F(t, x, y) - F(t, x - e, y)] - K(t) e1          (unsaturated)
    e' = F(t, x, y) - s(|z|) [F(t, z, y) + K(t) e1]        (saturated)

and advanced on the same uniform grid with the linearly implicit Euler
step, extrapolated once from two half steps.  The gains ``K = phi P^{-1} H'``
make the observer extremely stiff and ramp up over times far below the
grid step, so steps are bisected wherever the gain or the local error
estimate demands it.  Forming ``y - z1`` directly would cancel
catastrophically; the divided-difference form of the field difference
avoids that.  A stability probe reruns every integration at half the step
and halves the step (up to four times) until both agree.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .envelopes import DEFAULT_G
from .exprlang import ScalarField
from .ode import DIVERGENCE_LIMIT, IntegrationError, Trajectory, integrate
from .observer import SwitchPlan, assemble_Z, saturation_factor, switch_plan, xi_bound
from .synthesis import GainSchedule, SynthesisGrids, synth_schedule
from .system import TriangularSystem, delta_F, eval_F, eval_plant_rhs, jacobian_F

__all__ = [
    "RunReport",
    "grid_times",
    "integrate_plant",
    "integrate_error",
    "run_odp",
    "run_sodp",
    "lyapunov_trace",
    "write_trace_csv",
    "envelope_bound",
]

PROBE_RTOL = 1e-4
PROBE_HALVINGS = 4


def grid_times(t0: float, t1: float, h: float) -> np.ndarray:
    """Uniform grid with step ``h``; the last step is shortened to end at ``t1``."""
    n = int(np.ceil((t1 - t0) / h - 1e-9))
    ts = t0 + h * np.arange(n + 1)
    ts[-1] = t1
    return ts


def integrate_plant(sys: TriangularSystem, t0: float, x0, t1: float, h: float) -> Trajectory:
    """RK4 plant trajectory on ``grid_times(t0, t1, h)``."""
    return integrate(lambda t, x: eval_plant_rhs(sys, t, x), t0, np.asarray(x0, float), t1, h, label="plant")


class _ErrorField:
    """Error-coordinate observer field and its Jacobian."""

    def __init__(self, sys: TriangularSystem, zeta: float | None):
        self.sys = sys
        self.zeta = zeta

    def sat(self, z):
        if self.zeta is None:
            return 1.0, 0.0
        r = float(np.linalg.norm(z))
        s = saturation_factor(self.zeta, r)
        ds = -1.0 / self.zeta if self.zeta < r < 2 * self.zeta else 0.0
        return s, ds

    def __call__(self, t, x, e, K):
        y = x[0]
        z = x - e
        s, _ = self.sat(z)
        out = delta_F(self.sys, t, x, e, y)
        if s == 1.0:
            return out - K * e[0]
        # F(x) - s (F(z) + K e1) = dF + (1 - s) F(z) - s K e1
        return out + (1.0 - s) * eval_F(self.sys, t, z, y) - s * K * e[0]

    def linearize(self, t, x, e, K):
        """Jacobian ``J`` and residual ``G(e) - J e``.

        The gain terms cancel analytically in the residual, so it carries no
        quantity of the gain's size and a step can solve for the new state
        directly instead of adding a tiny increment found by cancellation.
        """
        y = x[0]
        z = x - e
        Fz = jacobian_F(self.sys, t, z, y)
        res = delta_F(self.sys, t, x, e, y) - Fz @ e
        J = Fz.copy()
        J[:, 0] -= K
        s, ds = self.sat(z)
        if s == 1.0:
            return J, res
        r = float(np.linalg.norm(z))
        Fv = eval_F(self.sys, t, z, y)
        N = Fv + K * e[0]
        res = res + Fz @ e + (1.0 - s) * Fv - s * (Fz @ e)
        if ds:
            res = res - ds * N * float(z @ e) / r
            return s * J + ds * np.outer(N, z / r), res
        return s * J, res

    def jac(self, t, x, e, K):
        y = x[0]
        z = x - e
        base = jacobian_F(self.sys, t, z, y)
        base[:, 0] -= K
        s, ds = self.sat(z)
        if s == 1.0:
            return base
        r = float(np.linalg.norm(z))
        N = eval_F(self.sys, t, z, y) + K * e[0]
        # d/de of -s(|z|) N(z) with dz/de = -I
        return s * base + ds * np.outer(N, z / r)


SUBSTEP_RATIO = 2.0
SUBSTEP_TURN = 0.05
SUBSTEP_DEPTH = 400
LOCAL_TOL = 1e-6
CHEB_DEGREE = 8


def _norm(K: np.ndarray) -> np.ndarray:
    """Row norms without overflow for entries beyond ``1e154``."""
    peak = np.max(np.abs(K), axis=-1)
    safe = np.where(peak > 0, peak, 1.0)
    return peak * np.linalg.norm(K / safe[..., None], axis=-1)


def _gain_jumps(Ka: np.ndarray, Kb: np.ndarray) -> np.ndarray:
    """Per-row norm ratio of two gain arrays, ``inf`` where the direction turns by more than ``SUBSTEP_TURN``."""
    na = _norm(Ka)
    nb = _norm(Kb)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(na / nb, nb / na)
        turn = np.linalg.norm(Ka / na[..., None] - Kb / nb[..., None], axis=-1)
    ratio = np.where((na == 0) & (nb == 0), 1.0, ratio)
    ratio = np.where((na == 0) ^ (nb == 0), np.inf, ratio)
    return np.where(turn > SUBSTEP_TURN, np.inf, ratio)


_CHEB = np.cos(np.pi * np.arange(CHEB_DEGREE + 1) / CHEB_DEGREE)[::-1]
_CHEB_W = (-1.0) ** np.arange(CHEB_DEGREE + 1)
_CHEB_W[[0, -1]] *= 0.5


class GainTable:
    """Injection gains resolved on a grid for the stiff error integration.

    Every grid step is cut at the gain's non-smooth points and then bisected
    (one vectorised gain evaluation per level) until across each piece the
    gain norm changes by at most ``SUBSTEP_RATIO`` and its direction by at
    most ``SUBSTEP_TURN``.  Each piece carries a degree ``CHEB_DEGREE``
    Chebyshev interpolant of the gain, which supplies the gain at the
    error-driven substeps without further evaluations.

    Attributes
    ----------
    a, b : (N,) arrays
        Piece end points, sorted.
    nodes, values : (N, D+1) and (N, D+1, n) arrays
        Chebyshev nodes and the gains there; the first and last node are
        the piece ends.
    first : (len(grid),) int array
        Index of the first piece of each grid step.
    """

    def __init__(self, gains, grid: np.ndarray, breakpoints=()):
        grid = np.asarray(grid, dtype=float)
        bp = np.asarray(sorted(breakpoints), dtype=float)
        bp = bp[(bp > grid[0]) & (bp < grid[-1])]
        pts = np.unique(np.concatenate([grid, bp]))
        Kp = gains(pts)
        A, B, KA, KB = pts[:-1], pts[1:], Kp[:-1], Kp[1:]
        depth = 0
        done = []
        self.levels = 0
        while len(A):
            mid = 0.5 * (A + B)
            split = (_gain_jumps(KA, KB) > SUBSTEP_RATIO) & (A < mid) & (mid < B) & (depth < SUBSTEP_DEPTH)
            done.append((A[~split], B[~split], KA[~split], KB[~split]))
            if not split.any():
                break
            A, B, KA, KB, mid = A[split], B[split], KA[split], KB[split], mid[split]
            Km = gains(mid)
            A, B = np.concatenate([A, mid]), np.concatenate([mid, B])
            KA, KB = np.concatenate([KA, Km]), np.concatenate([Km, KB])
            depth += 1
        self.levels = depth
        a = np.concatenate([d[0] for d in done])
        order = np.argsort(a, kind="stable")
        self.a = a[order]
        self.b = np.concatenate([d[1] for d in done])[order]
        Ka = np.concatenate([d[2] for d in done])[order]
        Kb = np.concatenate([d[3] for d in done])[order]
        half = 0.5 * (self.b - self.a)
        nodes = 0.5 * (self.a + self.b)[:, None] + half[:, None] * _CHEB[None, :]
        nodes[:, 0], nodes[:, -1] = self.a, self.b
        inner = nodes[:, 1:-1]
        Ki = gains(inner.ravel()).reshape(inner.shape + (Ka.shape[-1],))
        self.nodes = nodes
        self.values = np.concatenate([Ka[:, None], Ki, Kb[:, None]], axis=1)
        self.grid = grid
        self.first = np.searchsorted(self.a, grid, side="left")

    def __len__(self) -> int:
        return len(self.a)

    def pieces(self, j: int) -> range:
        """Pieces covering grid step ``j``."""
        return range(self.first[j], self.first[j + 1])

    def at(self, i: int, t: float) -> np.ndarray:
        """Gain at ``t`` inside piece ``i`` (exact at the nodes)."""
        x = self.nodes[i]
        diff = t - x
        hit = np.flatnonzero(diff == 0)
        if hit.size:
            return self.values[i, hit[0]]
        w = _CHEB_W / diff
        return w @ self.values[i] / w.sum()


class _GainSource:
    """Gains of one schedule with grid tables cached for repeated runs."""

    def __init__(self, schedule: GainSchedule):
        self.schedule = schedule
        self.breakpoints = schedule.breakpoints()
        self.tables: dict[tuple, GainTable] = {}

    def __call__(self, t):
        return self.schedule.injection(t)

    def table(self, grid: np.ndarray) -> GainTable:
        key = (float(grid[0]), float(grid[-1]), len(grid))
        if key not in self.tables:
            self.tables[key] = GainTable(self, grid, self.breakpoints)
        return self.tables[key]


def _source(schedule: GainSchedule) -> _GainSource:
    src = schedule.__dict__.get("_gain_source")
    if src is None:
        src = _GainSource(schedule)
        schedule.__dict__["_gain_source"] = src
    return src


def integrate_error(sys: TriangularSystem, plant: Trajectory, gains, e0, zeta: float | None = None,
                    limit: float = DIVERGENCE_LIMIT, local_tol: float = LOCAL_TOL) -> Trajectory:
    """Integrate the observer error on the plant's grid.

    Each step is the linearly implicit Euler step, with the field and its
    Jacobian both taken at the step end, extrapolated once from two half
    steps (second order, stability function vanishing at infinity).  The
    grid steps are first cut into the pieces of a :class:`GainTable`, which
    resolve gain ramps far shorter than the step, and a piece is bisected
    further while the half-step/full-step difference exceeds
    ``local_tol (1 + |z|)``.  The splitting depends only on the data, so
    runs are deterministic.  Only grid samples are stored.

    ``gains`` is a :class:`GainTable` for the plant's grid, or a callable
    ``gains(t) -> (..., n)`` from which one is built.

    Raises
    ------
    IntegrationError
        On a non-finite error state or when ``|z|`` exceeds ``limit``.
    """
    field_ = _ErrorField(sys, zeta)
    ts, X = plant.t, plant.x
    table = gains if isinstance(gains, GainTable) else GainTable(gains, ts)
    if len(table.grid) != len(ts) or not np.array_equal(table.grid, ts):
        raise ValueError("gain table grid does not match the plant grid")
    n = X.shape[1]
    eye = np.eye(n)
    stats = {"pieces": len(table), "gain_levels": table.levels, "substeps": 0, "max_depth": 0}

    def euler(ta, tb, xb, e, Kb):
        # (I - h J) e_new = e + h (G(e) - J e)
        h = tb - ta
        J, res = field_.linearize(tb, xb, e, Kb)
        try:
            return np.linalg.solve(eye - h * J, e + h * res)
        except np.linalg.LinAlgError as exc:
            raise IntegrationError(f"singular W-matrix at t={ta:.6g}: {exc}", (ta, e.copy())) from exc

    def advance(i, ta, tb, xa, xb, e, Kb, depth, full=None):
        # ``full`` may carry the single Euler step over [ta, tb] already taken by the parent
        tm = 0.5 * (ta + tb)
        if full is None:
            full = euler(ta, tb, xb, e, Kb)
        if not ta < tm < tb:
            stats["substeps"] += 1
            return full
        Km = table.at(i, tm)
        xm = plant(tm)
        first = euler(ta, tm, xm, e, Km)
        half = euler(tm, tb, xb, first, Kb)
        est = float(np.max(np.abs(half - full) / (1.0 + np.abs(xb - half))))
        if est > local_tol and depth < SUBSTEP_DEPTH:
            e = advance(i, ta, tm, xa, xm, e, Km, depth + 1, first)
            return advance(i, tm, tb, xm, xb, e, Kb, depth + 1)
        stats["substeps"] += 1
        stats["max_depth"] = max(stats["max_depth"], depth)
        return 2.0 * half - full

    e = np.asarray(e0, dtype=float).copy()
    E = np.empty_like(X)
    dE = np.empty_like(X)
    E[0] = e
    dE[0] = field_(ts[0], X[0], e, table.values[0, 0])
    for j in range(len(ts) - 1):
        for i in table.pieces(j):
            ta, tb = table.a[i], table.b[i]
            xa = X[j] if ta == ts[j] else plant(ta)
            xb = X[j + 1] if tb == ts[j + 1] else plant(tb)
            e_new = advance(i, ta, tb, xa, xb, e, table.values[i, -1], 0)
            if not np.all(np.isfinite(e_new)):
                raise IntegrationError(f"non-finite observer error at t={tb:.6g}", (ta, e.copy()))
            e = e_new
        if np.max(np.abs(X[j + 1] - e)) > limit:
            raise IntegrationError(f"divergence guard: |z| > {limit:g} at t={ts[j + 1]:.6g}", (ts[j], E[j].copy()))
        E[j + 1] = e
        dE[j + 1] = field_(ts[j + 1], X[j + 1], e, table.values[table.first[j + 1] - 1, -1])
    return Trajectory(ts, E, dE, label="error", meta=stats)


def _observer_run(sys, t0, x0, t1, h, gains, zeta=None):
    """Plant plus error integration with the stability probe.

    ``gains(ts)`` returns the injection gains on a grid.  Returns the plant,
    the error, the step used and probe diagnostics.
    """
    if hasattr(gains, "table"):
        table = gains.table
    else:
        def table(grid):
            return GainTable(gains, grid)
    probe = []
    step = h
    for _ in range(PROBE_HALVINGS + 1):
        plant = integrate_plant(sys, t0, x0, t1, step)
        err = integrate_error(sys, plant, table(plant.t), plant.x[0], zeta)
        fine_plant = integrate_plant(sys, t0, x0, t1, step / 2)
        fine = integrate_error(sys, fine_plant, table(fine_plant.t), fine_plant.x[0], zeta)
        # compare on the coarse grid (every second fine sample, plus the end point)
        idx = np.searchsorted(fine_plant.t, plant.t)
        idx = np.minimum(idx, len(fine_plant.t) - 1)
        zc = plant.x - err.x
        zf = fine_plant.x[idx] - fine.x[idx]
        dev = max(float(np.max(np.abs(plant.x - fine_plant.x[idx]) / (1 + np.abs(fine_plant.x[idx])))),
                  float(np.max(np.abs(zc - zf) / (1 + np.abs(zf)))))
        probe.append({"h": step, "deviation": dev})
        if dev <= PROBE_RTOL:
            return plant, err, step, probe
        step /= 2
    raise IntegrationError(f"stability probe failed after {PROBE_HALVINGS} halvings "
                           f"(deviation {probe[-1]['deviation']:.3g} at h={probe[-1]['h']:.3g})",
                           (t0, np.asarray(x0, float)))


def lyapunov_trace(schedule: GainSchedule, t: np.ndarray, E: np.ndarray,
                   scaled: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """``V = e'P e`` directly and through the Cholesky factor of ``P``.

    With ``scaled`` each row of ``E`` is first divided by a power of two
    near its largest entry, so both values are free of underflow and their
    relative difference is that of the unscaled pair.
    """
    E = np.asarray(E, dtype=float)
    if scaled:
        peak = np.max(np.abs(E), axis=1)
        expo = np.frexp(np.where(peak > 0, peak, 1.0))[1]
        E = np.ldexp(E, -expo[:, None])
    P = schedule.final.P(t)
    direct = np.einsum("ni,nij,nj->n", E, P, E)
    Lc = np.linalg.cholesky(P)
    w = np.einsum("nji,nj->ni", Lc, E)
    return direct, np.sum(w * w, axis=1)


def envelope_bound(t, xi: float, c1: float, t0: float, g: ScalarField) -> np.ndarray:
    """``xi`` before ``t0 + 1``, ``max(xi exp(-c1 (t - t0 - 1)), sqrt g)`` afterwards."""
    t = np.asarray(t, dtype=float)
    tail = np.maximum(xi * np.exp(-c1 * (t - (t0 + 1.0))), np.sqrt(g.vectorized(t)))
    return np.where(t >= t0 + 1.0, tail, xi)


@dataclass
class RunReport:
    """Trajectories, verdicts with witnesses, and timings of one run."""

    mode: str
    passed: bool
    verdicts: dict
    plant: Trajectory
    observer: Trajectory
    error: Trajectory
    V: np.ndarray | None = None
    envelope: np.ndarray | None = None
    g_values: np.ndarray | None = None
    step: float = 0.0
    constants: dict = field(default_factory=dict)
    segments: dict = field(default_factory=dict)
    plan: dict | None = None
    partial: bool = False
    probe: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    scenario: dict | None = None
    schedule: GainSchedule | None = None
    segment_errors: dict = field(default_factory=dict)
    segment_trajectories: dict = field(default_factory=dict)
    jumps: dict = field(default_factory=dict)

    def summary(self) -> dict:
        """JSON-ready summary without the bulk trajectories."""
        out = {"mode": self.mode, "passed": self.passed, "verdicts": self.verdicts, "step": self.step,
               "constants": self.constants, "partial": self.partial, "probe": self.probe,
               "timings": self.timings, "samples": int(len(self.plant.t)),
               "terminal": {"t": float(self.error.t[-1]), "abs_e": float(np.linalg.norm(self.error.x[-1]))}}
        if self.plan is not None:
            out["plan"] = self.plan
        if self.segments:
            out["segments"] = {str(k): v for k, v in self.segments.items() if isinstance(v, dict)}
        if self.scenario is not None:
            out["scenario"] = self.scenario
        return out


def _verdict(name, ok, **info):
    return {"name": name, "passed": bool(ok), **info}


def _envelope_verdicts(t, e_norm, xi, c1, t0, g, atol):
    out = {}
    i = int(np.argmax(e_norm))
    out["bound_xi"] = _verdict("|e| < xi at every sample", e_norm[i] < xi, worst=float(e_norm[i]),
                               t=float(t[i]), xi=xi)
    tail = t >= t0 + 1.0
    env = envelope_bound(t, xi, c1, t0, g)
    margin = env - e_norm
    if np.any(tail):
        j = int(np.flatnonzero(tail)[np.argmin(margin[tail])])
        out["decay_envelope"] = _verdict("|e| <= max(xi exp(-c1 (t - t0 - 1)), sqrt g) for t >= t0 + 1",
                                         margin[j] >= 0, worst_margin=float(margin[j]), t=float(t[j]),
                                         abs_e=float(e_norm[j]), bound=float(env[j]))
    sg = math.sqrt(g(float(t[-1])))
    out["terminal"] = _verdict("terminal |e| <= sqrt g(horizon) + atol", e_norm[-1] <= sg + atol,
                               abs_e=float(e_norm[-1]), sqrt_g=sg, atol=atol)
    return out, env


def run_odp(sys: TriangularSystem, R: float, x0, t0: float = 0.0, horizon: float = 20.0, h: float = 0.01,
            g: ScalarField | None = None, L: float = 2.0, c1: float = 1.0, c2: float | None = None,
            grids: SynthesisGrids | None = None, seed: int = 0, schedule: GainSchedule | None = None,
            atol: float = 1e-4) -> RunReport:
    """Fixed-ball observer run: synthesise (unless given), co-integrate, judge envelopes.

    Raises
    ------
    ValueError
        If ``|x0| > R``.
    SynthesisError, IntegrationError
        Propagated from the sub-steps.
    """
    started = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise ValueError(f"x0 must have length {sys.n}")
    if np.linalg.norm(x0) > R:
        raise ValueError(f"|x0| = {np.linalg.norm(x0):.6g} exceeds R = {R}")
    g = g or ScalarField.from_text(DEFAULT_G, ("t",), "g")
    c2 = float(sys.n) if c2 is None else float(c2)
    xi = xi_bound(L, c2, sys.beta(t0, R + 1.0))
    timings = {}
    if schedule is None:
        tic = time.perf_counter()
        schedule = synth_schedule(sys, R, xi, t0, horizon, g=g, L=L, c1=c1, c2=c2, grids=grids, seed=seed)
        timings["synthesis"] = time.perf_counter() - tic
    tic = time.perf_counter()
    plant, err, step, probe = _observer_run(sys, t0, x0, horizon, h, _source(schedule))
    timings["integration"] = time.perf_counter() - tic
    z = Trajectory(plant.t, plant.x - err.x, plant.dx - err.dx, label="observer")
    e_norm = err.norms()
    V, V_chol = lyapunov_trace(schedule, plant.t, err.x)
    verdicts, env = _envelope_verdicts(plant.t, e_norm, xi, c1, t0, g, atol)
    vmax = L * math.exp(4 * c2) * sys.beta(t0, R + 1.0) ** 2
    iv = int(np.argmax(V))
    verdicts["V_bound"] = _verdict("V < L exp(4 c2) beta(t0, R+1)^2", V[iv] < vmax, worst=float(V[iv]),
                                   t=float(plant.t[iv]), bound=vmax)
    Vs, Vs_chol = lyapunov_trace(schedule, plant.t, err.x, scaled=True)
    scale = np.maximum(np.abs(Vs), np.abs(Vs_chol))
    rel = np.abs(Vs - Vs_chol) / np.where(scale > 0, scale, 1.0)
    ir = int(np.argmax(rel))
    verdicts["V_consistency"] = _verdict("V direct vs Cholesky", rel[ir] <= 1e-10, worst_rel=float(rel[ir]),
                                         t=float(plant.t[ir]))
    bounds = sys.beta.vectorized(plant.t, np.full(len(plant.t), float(np.linalg.norm(x0))))
    fm = bounds - plant.norms()
    ib = int(np.argmin(fm))
    verdicts["forward_bound"] = _verdict("|x(t)| <= beta(t, |x0|)", fm[ib] >= 0, worst_margin=float(fm[ib]),
                                         t=float(plant.t[ib]))
    timings["total"] = time.perf_counter() - started
    gvals = g.vectorized(plant.t)
    return RunReport(mode="odp", passed=all(v["passed"] for v in verdicts.values()), verdicts=verdicts,
                     plant=plant, observer=z, error=err, V=V, envelope=env, g_values=gvals, step=step,
                     constants={"R": R, "xi": xi, "L": L, "c1": c1, "c2": c2, "t0": t0, "horizon": horizon,
                                "x0": x0.tolist(), "seed": seed},
                     probe=probe, timings=timings, schedule=schedule)


def run_sodp(sys: TriangularSystem, x0, t0: float = 0.0, horizon: float = 50.2, h: float = 0.01,
             g: ScalarField | None = None, L: float = 2.0, c1: float = 1.0, c2: float | None = None,
             grids: SynthesisGrids | None = None, seed: int = 0, plan: SwitchPlan | None = None,
             atol: float = 1e-4) -> RunReport:
    """Switching observer run over every segment started before ``horizon``.

    Each segment ``k`` is integrated from ``z_k(t_{k-1}) = 0`` on
    ``[t_{k-1}, min(t_{k+1}, horizon)]``.  Verdicts: saturation never active
    for ``k >= k0`` and ``|e_k| <= 1/k`` on ``[t_k, t_{k+1}]`` for the
    segments whose decay window lies inside the horizon.
    """
    started = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise ValueError(f"x0 must have length {sys.n}")
    g = g or ScalarField.from_text(DEFAULT_G, ("t",), "g")
    c2 = float(sys.n) if c2 is None else float(c2)
    if plan is None:
        plan = switch_plan(sys, g, L, c1, c2, t0, horizon, grids=grids, seed=seed)
    k0 = max(1, int(math.ceil(float(np.linalg.norm(x0)) - 1e-12)))
    plant = integrate_plant(sys, t0, x0, horizon, h)
    timings = {"synthesis": 0.0, "integration": 0.0}
    seg_traj, seg_err, seg_info = {}, {}, {}
    verdicts = {}
    probes = []
    for k in plan.segments_needed(horizon):
        a, b = plan.window(k)
        end = min(b, horizon)
        tic = time.perf_counter()
        sched = plan.segment(k)
        timings["synthesis"] += time.perf_counter() - tic
        tic = time.perf_counter()
        xa = _state_at(sys, t0, x0, a, h)
        seg_plant, err, step, probe = _observer_run(sys, a, xa, end, h, _source(sched), zeta=plan.zeta[k - 1])
        timings["integration"] += time.perf_counter() - tic
        probes.append({"segment": k, "probe": probe})
        zk = Trajectory(seg_plant.t, seg_plant.x - err.x, seg_plant.dx - err.dx, label=f"z{k}")
        seg_traj[k] = zk
        seg_err[k] = err
        znorm = zk.norms()
        iz = int(np.argmax(znorm))
        info = {"window": [a, b], "integrated_to": end, "step": step, "max_abs_z": float(znorm[iz]),
                "t_max_abs_z": float(zk.t[iz]), "zeta": plan.zeta[k - 1], "xi": plan.xi[k - 1],
                "saturation_active": bool(znorm[iz] > plan.zeta[k - 1])}
        lo, hi = plan.t_index(k), plan.t_index(k + 1)
        if k >= k0:
            verdicts[f"saturation_{k}"] = _verdict(f"|z_{k}| < zeta_{k} on the segment", znorm[iz] < plan.zeta[k - 1],
                                                   worst=float(znorm[iz]), t=float(zk.t[iz]),
                                                   zeta=plan.zeta[k - 1])
            if k >= 2 and hi <= horizon + 1e-12:
                sel = (err.t >= lo - 1e-12) & (err.t <= hi + 1e-12)
                en = err.norms()[sel]
                j = int(np.argmax(en))
                verdicts[f"decay_{k}"] = _verdict(f"|e_{k}| <= 1/{k} on [t_{k}, t_{k + 1}]", en[j] <= 1.0 / k + atol,
                                                  worst=float(en[j]), t=float(err.t[sel][j]), bound=1.0 / k,
                                                  atol=atol)
                info["decay_max_abs_e"] = float(en[j])
        seg_info[k] = info
    Z = assemble_Z(plan, seg_traj, horizon)
    xz = plant(Z.t)
    e = Trajectory(Z.t, xz - Z.x, np.zeros_like(Z.x), label="error")
    partial = horizon < plan.t_index(2)
    timings["total"] = time.perf_counter() - started
    passed = all(v["passed"] for v in verdicts.values())
    g_at = g.vectorized(Z.t)
    plant_z = Trajectory(Z.t, xz, np.array([eval_plant_rhs(sys, t, x) for t, x in zip(Z.t, xz)]), label="plant")
    return RunReport(mode="sodp", passed=passed, verdicts=verdicts, plant=plant_z, observer=Z, error=e,
                     g_values=g_at, step=h,
                     constants={"L": L, "c1": c1, "c2": c2, "t0": t0, "horizon": horizon, "x0": x0.tolist(),
                                "k0": k0, "seed": seed},
                     segments=seg_info, plan=plan.summary(), partial=partial, probe=probes, timings=timings,
                     segment_errors=seg_err, segment_trajectories=seg_traj, jumps=Z.meta.get("jumps", {}))


def _state_at(sys, t0, x0, t, h):
    if t <= t0:
        return np.asarray(x0, float)
    return integrate_plant(sys, t0, x0, t, h).final


def write_trace_csv(report: RunReport, path_or_buffer=None) -> str:
    """Trace CSV with columns ``t, x1..xn, z1..zn, e1..en, y, V, envelope, g``.

    Floats are written with 17 significant digits, so identical runs give
    byte-identical files.  ``V`` and ``envelope`` are empty where undefined.
    """
    n = report.plant.x.shape[1]
    header = (["t"] + [f"x{i}" for i in range(1, n + 1)] + [f"z{i}" for i in range(1, n + 1)]
              + [f"e{i}" for i in range(1, n + 1)] + ["y", "V", "envelope", "g"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    fmt = "{:.17g}".format
    t = report.observer.t
    X = report.plant.x
    Z = report.observer.x
    E = report.error.x
    for j in range(len(t)):
        row = [fmt(t[j])] + [fmt(v) for v in X[j]] + [fmt(v) for v in Z[j]] + [fmt(v) for v in E[j]]
        row.append(fmt(X[j, 0]))
        row.append(fmt(report.V[j]) if report.V is not None else "")
        row.append(fmt(report.envelope[j]) if report.envelope is not None else "")
        row.append(fmt(report.g_values[j]) if report.g_values is not None else "")
        w.writerow(row)
    text = buf.getvalue()
    if path_or_buffer is not None:
        if hasattr(path_or_buffer, "write"):
            path_or_buffer.write(text)
        else:
            with open(path_or_buffer, "w", newline="") as fh:
                fh.write(text)
    return text
