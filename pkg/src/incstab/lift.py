"""Complete lift of a vector field and Lie transport of tangent vectors.

In coordinates ``(x, v)`` the lifted field is ``(f(x, t), J(x, t) v)``; its
flow carries a tangent vector along the base trajectory, which is exactly
``Phi(t, t0) v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .odeflow import IntegratorConfig, Trajectory, solve
from .sysdsl.system import SystemDef


@dataclass(frozen=True)
class TangentPoint:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        v = np.array(self.v, dtype=float).reshape(-1)
        if x.shape != v.shape:
            raise ValueError("base point and tangent vector dimensions differ")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def packed(self) -> np.ndarray:
        return np.concatenate([self.x, self.v])

    @classmethod
    def unpack(cls, z) -> "TangentPoint":
        n = len(z) // 2
        return cls(z[:n], z[n:])

    def scaled(self, a: float) -> "TangentPoint":
        return TangentPoint(self.x, a * self.v)


@dataclass(frozen=True)
class LiftedSystem:
    """Complete lift of ``base`` acting on packed states ``z = (x, v)``."""

    base: SystemDef

    @property
    def dim(self) -> int:
        return 2 * self.base.n

    def rhs(self, z, t: float = 0.0) -> np.ndarray:
        n = self.base.n
        f, J = self.base.rhs_and_jacobian(z[:n], t)
        return np.concatenate([f, J @ z[n:]])

    def __call__(self, t, z):
        return self.rhs(z, t)


def complete_lift(sys: SystemDef) -> LiftedSystem:
    return LiftedSystem(sys)


def lifted_trajectory(sys: SystemDef, tp: TangentPoint, t0: float, tf: float,
                      cfg: IntegratorConfig | None = None) -> Trajectory:
    """Solution of the lifted system from ``tp`` at ``t0``; columns ``(x, v)``."""
    if tp.x.shape != (sys.n,):
        raise ValueError(f"tangent point must have dimension {sys.n}")
    return solve(complete_lift(sys), tp.packed, t0, tf, cfg)


def lie_transport(sys: SystemDef, tp: TangentPoint, t0: float, t: float,
                  cfg: IntegratorConfig | None = None) -> TangentPoint:
    """``(phi(t; t0, x), Phi(t, t0) v)``."""
    if t == t0:
        return TangentPoint(tp.x, tp.v)
    return TangentPoint.unpack(lifted_trajectory(sys, tp, t0, t, cfg).final)


@dataclass
class BoundViolation:
    sample: int
    t: float
    norm: float
    lower: float
    upper: float
    bound: str  # "upper" | "lower"


@dataclass
class TransportBoundReport:
    K: float
    lam: float
    L: float
    tol: float
    grid: np.ndarray
    n_samples: int
    violations: list[BoundViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, bound: str) -> int:
        return sum(1 for v in self.violations if v.bound == bound)


def transport_bound_check(sys: SystemDef, samples: Sequence[TangentPoint], t0: float,
                          horizon: float, K: float, lam: float, L: float,
                          cfg: IntegratorConfig | None = None, grid_points: int = 50,
                          tol: float = 1e-7) -> TransportBoundReport:
    """Check ``|v| e^{-L s} <= |Lie(v)(t0 + s; t0)| <= K e^{-lam s} |v|`` on a grid.

    Norms are taken in the system metric at the respective base points. The
    integration is tightened (100x smaller tolerances, steps no longer than the
    grid spacing) so interpolation error stays well below ``tol``.
    """
    if K < 1 or lam <= 0 or L <= 0:
        raise ValueError("need K >= 1, lam > 0 and L > 0")
    grid = np.linspace(t0, t0 + horizon, grid_points)
    cfg = (cfg or IntegratorConfig()).tightened(1e-2, max_step=horizon / max(grid_points - 1, 1))
    report = TransportBoundReport(K, lam, L, tol, grid, len(samples))
    n = sys.n
    for i, tp in enumerate(samples):
        traj = lifted_trajectory(sys, tp, t0, t0 + horizon, cfg)
        Z = traj(grid)
        norms = sys.metric.norms(Z[:, :n], Z[:, n:])
        v0 = norms[0]
        s = grid - t0
        upper = K * np.exp(-lam * s) * v0
        lower = v0 * np.exp(-L * s)
        for k in np.flatnonzero(norms > upper + tol):
            report.violations.append(
                BoundViolation(i, float(grid[k]), float(norms[k]), float(lower[k]),
                               float(upper[k]), "upper"))
        for k in np.flatnonzero(norms < lower - tol):
            report.violations.append(
                BoundViolation(i, float(grid[k]), float(norms[k]), float(lower[k]),
                               float(upper[k]), "lower"))
    return report
