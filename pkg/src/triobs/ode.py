"""Fixed-step integrators and the trajectory container."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["IntegrationError", "Trajectory", "rk4_step", "integrate", "DIVERGENCE_LIMIT"]

DIVERGENCE_LIMIT = 1e12


class IntegrationError(RuntimeError):
    """Non-finite state or divergence guard trip; ``last_good`` is ``(t, x)``."""

    def __init__(self, message: str, last_good: tuple[float, np.ndarray] | None = None):
        self.last_good = last_good
        super().__init__(message)


@dataclass
class Trajectory:
    """Time-ordered samples with derivatives and cubic Hermite interpolation.

    Attributes
    ----------
    t : (N,) array
        Strictly increasing sample times.
    x : (N, d) array
    dx : (N, d) array
        Derivative at each sample.
    label : str
        Which signal this is (``plant``, ``observer``, ``error``...).
    """

    t: np.ndarray
    x: np.ndarray
    dx: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.dx = np.asarray(self.dx, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
            self.dx = self.dx[:, None]
        if self.t.ndim != 1 or len(self.t) != len(self.x) or self.x.shape != self.dx.shape:
            raise ValueError("inconsistent trajectory shapes")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def __call__(self, tq) -> np.ndarray:
        """Derivative-matched cubic interpolation; clamps outside the sample range."""
        if isinstance(tq, (float, np.floating)) and len(self.t) > 1:
            return self._at(float(tq))
        tq = np.asarray(tq, dtype=float)
        scalar = tq.ndim == 0
        tq = np.atleast_1d(tq)
        t = self.t
        if len(t) == 1:
            out = np.repeat(self.x, len(tq), axis=0)
            return out[0] if scalar else out
        tc = np.clip(tq, t[0], t[-1])
        i = np.clip(np.searchsorted(t, tc, side="right") - 1, 0, len(t) - 2)
        h = (t[i + 1] - t[i])[:, None]
        s = ((tc - t[i]) / h[:, 0])[:, None]
        s2, s3 = s * s, s * s * s
        out = ((2 * s3 - 3 * s2 + 1) * self.x[i] + (s3 - 2 * s2 + s) * h * self.dx[i]
               + (-2 * s3 + 3 * s2) * self.x[i + 1] + (s3 - s2) * h * self.dx[i + 1])
        return out[0] if scalar else out


    def _at(self, tq: float) -> np.ndarray:
        t = self.t
        tc = min(max(tq, t[0]), t[-1])
        i = min(max(int(np.searchsorted(t, tc, side="right")) - 1, 0), len(t) - 2)
        h = t[i + 1] - t[i]
        s = (tc - t[i]) / h
        s2, s3 = s * s, s * s * s
        return ((2 * s3 - 3 * s2 + 1) * self.x[i] + (s3 - 2 * s2 + s) * h * self.dx[i]
                + (-2 * s3 + 3 * s2) * self.x[i + 1] + (s3 - s2) * h * self.dx[i + 1])


def rk4_step(rhs: Callable, t: float, x: np.ndarray, h: float, k1: np.ndarray | None = None) -> np.ndarray:
    """One classical Runge-Kutta step; ``k1`` may be passed to reuse ``rhs(t, x)``."""
    if k1 is None:
        k1 = rhs(t, x)
    k2 = rhs(t + h / 2, x + h / 2 * k1)
    k3 = rhs(t + h / 2, x + h / 2 * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(rhs: Callable, t0: float, x0, t1: float, h: float, label: str = "",
              limit: float = DIVERGENCE_LIMIT) -> Trajectory:
    """Integrate ``x' = rhs(t, x)`` from ``t0`` to ``t1`` with fixed-step RK4.

    The last step is shortened so the trajectory ends exactly at ``t1``.

    Raises
    ------
    IntegrationError
        On a non-finite state or when ``|x|`` exceeds ``limit``.
    """
    if not h > 0:
        raise ValueError("step must be positive")
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    nsteps = int(np.ceil((t1 - t0) / h - 1e-9))
    ts = t0 + h * np.arange(nsteps + 1)
    ts[-1] = t1
    xs = np.empty((nsteps + 1,) + x.shape)
    dxs = np.empty_like(xs)
    xs[0] = x
    f = np.asarray(rhs(t0, x), dtype=float)
    dxs[0] = f
    for j in range(nsteps):
        hj = ts[j + 1] - ts[j]
        x = rk4_step(rhs, ts[j], x, hj, f)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at t={ts[j + 1]:.6g}", (ts[j], xs[j].copy()))
        if np.max(np.abs(x)) > limit:
            raise IntegrationError(f"divergence guard: |x| > {limit:g} at t={ts[j + 1]:.6g}",
                                   (ts[j], xs[j].copy()))
        f = np.asarray(rhs(ts[j + 1], x), dtype=float)
        xs[j + 1] = x
        dxs[j + 1] = f
    if x.ndim == 1:
        return Trajectory(ts, xs, dxs, label)
    return Trajectory(ts, xs.reshape(len(ts), -1), dxs.reshape(len(ts), -1), label)
