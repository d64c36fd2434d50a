"""Flow maps and transition matrices.

Explicit Runge-Kutta integration with either the classical fixed-step RK4
scheme or the Dormand-Prince 5(4) embedded pair with step-size control.
Trajectories keep the derivative at every node so they can be evaluated
between steps by cubic Hermite interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .sysdsl.system import SystemDef


class IntegrationError(RuntimeError):
    """The integrator could not reach the final time."""


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"  # "rk45" (adaptive) | "rk4" (fixed step = max_step)
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = math.inf
    max_steps: int = 100_000

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_steps <= 0 or not self.max_step > 0:
            raise ValueError("max_steps and max_step must be positive")
        if self.method == "rk4" and not math.isfinite(self.max_step):
            raise ValueError("rk4 needs a finite max_step (its fixed step size)")

    def tightened(self, factor: float = 1e-4, max_step: float | None = None) -> "IntegratorConfig":
        return IntegratorConfig(self.method, max(self.rel_tol * factor, 1e-13),
                                max(self.abs_tol * factor, 1e-16),
                                self.max_step if max_step is None else min(max_step, self.max_step),
                                self.max_steps * 10)

    def capped(self, max_step: float) -> "IntegratorConfig":
        return IntegratorConfig(self.method, self.rel_tol, self.abs_tol,
                                min(self.max_step, max_step), self.max_steps)

    def describe(self) -> dict:
        return {"method": self.method, "rel_tol": self.rel_tol, "abs_tol": self.abs_tol,
                "max_step": self.max_step if math.isfinite(self.max_step) else None,
                "max_steps": self.max_steps}


@dataclass
class Trajectory:
    """Solution samples ``y[k] = y(t[k])`` with derivatives ``dy[k]``."""

    t: np.ndarray
    y: np.ndarray
    dy: np.ndarray

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def tf(self) -> float:
        return float(self.t[-1])

    @property
    def final(self) -> np.ndarray:
        return self.y[-1]

    def __call__(self, tq):
        """Cubic Hermite interpolation at scalar or array times."""
        tq_arr = np.atleast_1d(np.asarray(tq, dtype=float))
        if np.any(tq_arr < self.t[0] - 1e-12) or np.any(tq_arr > self.t[-1] + 1e-12):
            raise ValueError("requested time outside the integrated interval")
        if len(self.t) == 1:
            out = np.repeat(self.y[:1], len(tq_arr), axis=0)
        else:
            k = np.clip(np.searchsorted(self.t, tq_arr, side="right") - 1, 0, len(self.t) - 2)
            t0, t1 = self.t[k], self.t[k + 1]
            h = (t1 - t0)[:, None]
            s = ((tq_arr - t0) / (t1 - t0))[:, None]
            s2, s3 = s * s, s * s * s
            h00 = 2 * s3 - 3 * s2 + 1
            h10 = s3 - 2 * s2 + s
            h01 = -2 * s3 + 3 * s2
            h11 = s3 - s2
            out = (h00 * self.y[k] + h10 * h * self.dy[k]
                   + h01 * self.y[k + 1] + h11 * h * self.dy[k + 1])
            exact = tq_arr == self.t[-1]
            out[exact] = self.y[-1]
        return out[0] if np.ndim(tq) == 0 else out

    def restrict(self, lo: int, hi: int) -> "Trajectory":
        """Trajectory of the components ``lo:hi``."""
        return Trajectory(self.t, self.y[:, lo:hi], self.dy[:, lo:hi])


# Dormand-Prince 5(4) tableau
_C = [0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1]
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = _B - np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200,
                    187 / 2100, 1 / 40])


def _error_norm(err, y0, y1, cfg):
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(fun, t0, y0, f0, cfg, span):
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = fun(t0 + h0, y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span, cfg.max_step)


def _dopri(fun, t0, tf, y0, cfg):
    ts, ys, dys = [t0], [y0], []
    t, y = t0, y0
    f = fun(t, y)
    dys.append(f)
    span = tf - t0
    h = _initial_step(fun, t0, y0, f, cfg, span)
    steps = 0
    while t < tf:
        if steps >= cfg.max_steps:
            raise IntegrationError(
                f"step budget of {cfg.max_steps} exhausted at t={t:.6g}; "
                "probable finite-time blowup")
        h = min(h, cfg.max_step)
        last = t + h >= tf or (tf - (t + h)) < 1e-12 * max(1.0, abs(tf))
        if last:
            h = tf - t
        k = np.empty((7, len(y)))
        k[0] = f
        for i in range(1, 7):
            yi = y + h * (_A[i] @ k[:i])
            k[i] = fun(t + _C[i] * h, yi)
        y_new = yi  # stage 7 evaluates at the 5th-order solution (FSAL)
        err = h * (_E @ k)
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(k[6]))):
            en = math.inf
        else:
            en = _error_norm(err, y, y_new, cfg)
        steps += 1
        if en <= 1.0:
            t = tf if last else t + h
            y, f = y_new, k[6].copy()
            ts.append(t)
            ys.append(y)
            dys.append(f)
            fac = 5.0 if en == 0 else min(5.0, 0.9 * en ** -0.2)
            h *= fac
        else:
            h *= 0.2 if not math.isfinite(en) else max(0.2, 0.9 * en ** -0.2)
        if h < 1e-14 * max(1.0, abs(t)):
            raise IntegrationError(
                f"step size underflow at t={t:.6g}; probable finite-time blowup")
    return ts, ys, dys


def _rk4(fun, t0, tf, y0, cfg):
    nsteps = max(1, math.ceil((tf - t0) / cfg.max_step - 1e-9))
    if nsteps > cfg.max_steps:
        raise IntegrationError(f"rk4 would need {nsteps} steps (> max_steps)")
    h = (tf - t0) / nsteps
    ts, ys, dys = [t0], [y0], []
    y = y0
    for i in range(nsteps):
        t = t0 + i * h
        k1 = fun(t, y)
        dys.append(k1)
        k2 = fun(t + h / 2, y + h / 2 * k1)
        k3 = fun(t + h / 2, y + h / 2 * k2)
        k4 = fun(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at t={t + h:.6g}; probable blowup")
        ts.append(tf if i == nsteps - 1 else t0 + (i + 1) * h)
        ys.append(y)
    dys.append(fun(tf, y))
    return ts, ys, dys


def solve(fun: Callable[[float, np.ndarray], np.ndarray], y0, t0: float, tf: float,
          cfg: IntegratorConfig | None = None) -> Trajectory:
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``tf >= t0``."""
    cfg = cfg or IntegratorConfig()
    y0 = np.array(y0, dtype=float)
    if tf < t0:
        raise ValueError("only forward integration (tf >= t0) is supported")
    if tf == t0:
        f0 = fun(t0, y0)
        return Trajectory(np.array([t0]), y0[None, :], np.asarray(f0)[None, :])
    stepper = _dopri if cfg.method == "rk45" else _rk4
    ts, ys, dys = stepper(fun, float(t0), float(tf), y0, cfg)
    return Trajectory(np.array(ts), np.array(ys), np.array(dys))


def integrate(sys: SystemDef, x0, t0: float, tf: float,
              cfg: IntegratorConfig | None = None) -> Trajectory:
    """Trajectory of ``x' = f(x, t)`` on ``[t0, tf]``."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise ValueError(f"initial state must have dimension {sys.n}")
    return solve(lambda t, x: sys.rhs(x, t), x0, t0, tf, cfg)


def flow_map(sys: SystemDef, x0, t0: float, t: float,
             cfg: IntegratorConfig | None = None) -> np.ndarray:
    """``phi(t; t0, x0)``."""
    if t == t0:
        return np.array(x0, dtype=float)
    return integrate(sys, x0, t0, t, cfg).final.copy()


@dataclass(frozen=True)
class TransitionMatrix:
    phi: np.ndarray
    t0: float
    t: float


def variational_rhs(sys: SystemDef):
    """Right-hand side of the base flow joined with ``X' = J(x, t) X``."""
    n = sys.n

    def fun(t, z):
        f, J = sys.rhs_and_jacobian(z[:n], t)
        return np.concatenate([f, (J @ z[n:].reshape(n, n)).ravel()])

    return fun


def transition_matrix(sys: SystemDef, x0, t0: float, t: float,
                      cfg: IntegratorConfig | None = None) -> TransitionMatrix:
    """``Phi(t, t0)`` of the linearization along ``phi(.; t0, x0)``."""
    n = sys.n
    z0 = np.concatenate([np.asarray(x0, dtype=float), np.eye(n).ravel()])
    traj = solve(variational_rhs(sys), z0, t0, t, cfg)
    return TransitionMatrix(traj.final[n:].reshape(n, n).copy(), t0, t)
