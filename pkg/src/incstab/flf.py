"""Finsler-Lyapunov functions on the tangent bundle.

Three kinds are supported:

* ``QuadraticFlf``: ``V(x, v) = v^T M(x) v``.
* ``FiniteIntegralFlf``: ``V(t, v) = int_t^{t+delta} |Lie(v)(tau; t)|^p dtau``,
  the converse construction for exponentially contracting systems.
* ``InfiniteIntegralFlf``: ``V(t, x, y) = int_t^inf alpha(|phi_Y(tau; t, x, y)|) dtau``
  truncated at a finite horizon with an explicit tail test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .lift import TangentPoint, lie_transport, lifted_trajectory
from .metricgeo import MetricSpec
from .odeflow import IntegratorConfig, Trajectory
from .sysdsl.system import SystemDef


class FlfDiagnosticError(RuntimeError):
    """Analytic and finite-difference Lie derivatives disagree."""


@dataclass(frozen=True)
class ClassK:
    """``alpha(r) = a r`` (linear) or ``alpha(r) = a r^q`` (power)."""

    kind: str = "linear"
    a: float = 1.0
    q: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "power"):
            raise ValueError(f"unknown class-K kind {self.kind!r}")
        if not (self.a > 0 and self.q > 0):
            raise ValueError("class-K parameters must be positive")

    @classmethod
    def linear(cls, a: float) -> "ClassK":
        return cls("linear", a, 1.0)

    @classmethod
    def power(cls, a: float, q: float) -> "ClassK":
        return cls("power", a, q)

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear" or self.q == 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = self.a * r if self.kind == "linear" else self.a * np.power(r, self.q)
        return float(out) if out.ndim == 0 else out

    def describe(self) -> str:
        return f"linear:{self.a:.12g}" if self.kind == "linear" else f"power:{self.a:.12g},{self.q:.12g}"


@dataclass(frozen=True)
class QuadraticFlf:
    metric: MetricSpec | None = None  # None: use the system metric

    @property
    def p(self) -> float:
        return 2.0

    def describe(self) -> dict:
        return {"kind": "quadratic", "p": 2.0,
                "metric": None if self.metric is None else self.metric.describe()}


@dataclass(frozen=True)
class FiniteIntegralFlf:
    p: float = 2.0
    delta: float = 1.0
    metric: MetricSpec | None = None  # norm |.| ; None: system metric
    quad_rtol: float = 1e-7

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def describe(self) -> dict:
        return {"kind": "integral-finite", "p": self.p, "delta": self.delta}


@dataclass(frozen=True)
class InfiniteIntegralFlf:
    alpha: ClassK = ClassK()
    horizon: float = 20.0
    tail_tol: float = 1e-8
    metric: MetricSpec | None = None
    quad_rtol: float = 1e-7

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def p(self) -> float:
        return self.alpha.q if self.alpha.kind == "power" else 1.0

    def describe(self) -> dict:
        return {"kind": "integral-infinite", "alpha": self.alpha.describe(),
                "horizon": self.horizon, "tail_tol": self.tail_tol}


FlfSpec = Union[QuadraticFlf, FiniteIntegralFlf, InfiniteIntegralFlf]


@dataclass(frozen=True)
class FlfBounds:
    c1: float
    c2: float
    p: float
    k: float
    k_positive: bool

    def describe(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "p": self.p, "k": self.k}


def _metric(sys: SystemDef, spec) -> MetricSpec:
    return spec.metric if spec.metric is not None else sys.metric


# -- quadrature --------------------------------------------------------------

def dense_quadrature(traj: Trajectory, integrand, a: float, b: float,
                     rtol: float = 1e-7, max_level: int = 12) -> float:
    """Integrate ``integrand(times, states)`` over ``[a, b]`` on the dense output.

    Composite Simpson with the integrator's nodes as panel breaks; every panel
    is bisected until two successive levels agree to ``rtol``.
    """
    knots = traj.t[(traj.t > a) & (traj.t < b)]
    breaks = np.concatenate([[a], knots, [b]])
    prev = None
    for level in range(max_level):
        m = 2 ** (level + 1)  # even number of subintervals per panel
        frac = np.linspace(0.0, 1.0, m + 1)
        h = np.diff(breaks)
        ts = (breaks[:-1, None] + h[:, None] * frac[None, :]).ravel()
        vals = integrand(ts, traj(ts)).reshape(len(h), m + 1)
        w = np.ones(m + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        total = float(np.sum(vals @ w * h / (3.0 * m)))
        if prev is not None and abs(total - prev) <= rtol * max(abs(total), 1e-300):
            return total
        prev = total
    return total


def _flf_cfg(cfg: IntegratorConfig | None, span: float, pieces: int) -> IntegratorConfig:
    return (cfg or IntegratorConfig()).capped(span / pieces)


def flf_integral_eval(sys: SystemDef, spec: FiniteIntegralFlf, t: float, tp: TangentPoint,
                      cfg: IntegratorConfig | None = None) -> float:
    """``int_t^{t+delta} |Lie(v)(tau; t)|^p dtau``."""
    if not np.any(tp.v):
        return 0.0
    n = sys.n
    metric = _metric(sys, spec)
    traj = lifted_trajectory(sys, tp, t, t + spec.delta, _flf_cfg(cfg, spec.delta, 64))
    p = spec.p

    def integrand(ts, Z):
        return metric.norms(Z[:, :n], Z[:, n:]) ** p

    return dense_quadrature(traj, integrand, t, t + spec.delta, spec.quad_rtol)


@dataclass(frozen=True)
class UgiasValue:
    value: float
    converged: bool
    tail: float  # integrand at the truncation horizon


def flf_ugias_eval(sys: SystemDef, spec: InfiniteIntegralFlf, t: float, tp: TangentPoint,
                   cfg: IntegratorConfig | None = None) -> UgiasValue:
    """Infinite-horizon integral of ``alpha(|y(tau)|)``, truncated at ``t + horizon``."""
    if not np.any(tp.v):
        return UgiasValue(0.0, True, 0.0)
    n = sys.n
    metric = _metric(sys, spec)
    T = spec.horizon
    traj = lifted_trajectory(sys, tp, t, t + T, _flf_cfg(cfg, T, 400))

    def integrand(ts, Z):
        return np.asarray(spec.alpha(metric.norms(Z[:, :n], Z[:, n:])))

    value = dense_quadrature(traj, integrand, t, t + T, spec.quad_rtol)
    z_end = traj.final
    tail = float(spec.alpha(metric.norms(z_end[None, :n], z_end[None, n:])[0]))
    return UgiasValue(value, tail < spec.tail_tol, tail)


def flf_value(sys: SystemDef, spec: FlfSpec, t: float, tp: TangentPoint,
              cfg: IntegratorConfig | None = None) -> float:
    if isinstance(spec, QuadraticFlf):
        M = _metric(sys, spec).matrix(tp.x)
        return float(tp.v @ M @ tp.v)
    if isinstance(spec, FiniteIntegralFlf):
        return flf_integral_eval(sys, spec, t, tp, cfg)
    if isinstance(spec, InfiniteIntegralFlf):
        return flf_ugias_eval(sys, spec, t, tp, cfg).value
    raise TypeError(f"unknown FLF spec {spec!r}")


# -- constants ----------------------------------------------------------------

def flf_sandwich_constants(L: float, lam: float, K: float, p: float, delta: float) -> FlfBounds:
    """Bounds ``c1 |v|^p <= V <= c2 |v|^p`` and decay rate ``k`` of the finite integral FLF.

    ``c2`` carries the overshoot factor ``K^p`` of the transport bound.
    ``k_positive`` is False when ``delta`` is too short for a decrease guarantee.
    """
    if L <= 0 or lam <= 0:
        raise ValueError("L and lam must be positive")
    if K < 1:
        raise ValueError("K must be >= 1")
    c1 = -math.expm1(-p * L * delta) / (p * L)
    c2 = K ** p * -math.expm1(-p * lam * delta) / (p * lam)
    gap = 1.0 - K ** p * math.exp(-p * lam * delta)
    return FlfBounds(c1, c2, p, gap / c2, gap > 0)


def choose_delta(K: float, lam: float, p: float) -> float:
    """Horizon with ``1 - K^p e^{-p lam delta} >= 1/2``."""
    if K < 1 or lam <= 0:
        raise ValueError("need K >= 1 and lam > 0")
    return max(1.0, math.log(2.0 * K ** p) / (p * lam))


# -- Lie derivatives ----------------------------------------------------------

def flf_lie_derivative_exact(sys: SystemDef, spec: FlfSpec, t: float, tp: TangentPoint,
                             cfg: IntegratorConfig | None = None) -> float:
    """Closed-form rate of change of ``V`` along the lifted flow."""
    metric = _metric(sys, spec)
    if isinstance(spec, FiniteIntegralFlf):
        end = lie_transport(sys, tp, t, t + spec.delta, _flf_cfg(cfg, spec.delta, 64))
        p = spec.p
        return metric.norms(end.x[None], end.v[None])[0] ** p - \
            metric.norms(tp.x[None], tp.v[None])[0] ** p
    if isinstance(spec, QuadraticFlf):
        f, J = sys.rhs_and_jacobian(tp.x, t)
        M = metric.matrix(tp.x)
        Mdot = np.einsum("ijk,k->ij", metric.matrix_derivative(tp.x), f)
        return float(tp.v @ (J.T @ M + M @ J + Mdot) @ tp.v)
    if isinstance(spec, InfiniteIntegralFlf):
        return -float(spec.alpha(metric.norms(tp.x[None], tp.v[None])[0]))
    raise TypeError(f"unknown FLF spec {spec!r}")


def flf_value_and_lie_derivative(sys: SystemDef, spec: FlfSpec, t: float, tp: TangentPoint,
                                 cfg: IntegratorConfig | None = None) -> tuple[float, float]:
    """``(V, LV)`` at ``(t, tp)``; the finite integral kind shares one lifted trajectory."""
    if not isinstance(spec, FiniteIntegralFlf):
        return flf_value(sys, spec, t, tp, cfg), flf_lie_derivative_exact(sys, spec, t, tp, cfg)
    metric = _metric(sys, spec)
    n, p = sys.n, spec.p
    start = metric.norms(tp.x[None], tp.v[None])[0] ** p
    if not np.any(tp.v):
        return 0.0, 0.0
    traj = lifted_trajectory(sys, tp, t, t + spec.delta, _flf_cfg(cfg, spec.delta, 64))

    def integrand(ts, Z):
        return metric.norms(Z[:, :n], Z[:, n:]) ** p

    V = dense_quadrature(traj, integrand, t, t + spec.delta, spec.quad_rtol)
    z = traj.final
    return V, float(metric.norms(z[None, :n], z[None, n:])[0] ** p - start)


def fd_lie_derivative(sys: SystemDef, spec: FlfSpec, t: float, tp: TangentPoint,
                      cfg: IntegratorConfig | None = None, step: float = 1e-4,
                      order: int = 1) -> float:
    """Finite difference of ``s -> V(t + s, Lie(v)(t + s; t))`` at ``s = 0``.

    Each ``V`` is re-evaluated from scratch at the transported point, with
    tightened integration tolerances. ``order=2`` uses the one-sided
    three-point formula.
    """
    base = cfg or IntegratorConfig()
    tight = base.tightened(1e-3)
    spec_t = spec
    if isinstance(spec, FiniteIntegralFlf):
        spec_t = FiniteIntegralFlf(spec.p, spec.delta, spec.metric, quad_rtol=1e-12)
    elif isinstance(spec, InfiniteIntegralFlf):
        spec_t = InfiniteIntegralFlf(spec.alpha, spec.horizon, spec.tail_tol, spec.metric,
                                     quad_rtol=1e-12)

    def V_at(s):
        moved = lie_transport(sys, tp, t, t + s, tight) if s > 0 else tp
        return flf_value(sys, spec_t, t + s, moved, tight)

    v0 = V_at(0.0)
    v1 = V_at(step)
    if order == 1:
        return (v1 - v0) / step
    v2 = V_at(2 * step)
    return (-3.0 * v0 + 4.0 * v1 - v2) / (2.0 * step)


def flf_lie_derivative(sys: SystemDef, spec: FlfSpec, t: float, tp: TangentPoint,
                       cfg: IntegratorConfig | None = None, cross_check: bool = True,
                       fd_step: float = 1e-4, cross_tol: float = 1e-3) -> float:
    """Lie derivative of ``V`` along the complete lift at ``(t, tp)``.

    The exact value is returned; with ``cross_check`` it is compared to a
    forward finite difference and :class:`FlfDiagnosticError` is raised when
    they differ by more than ``cross_tol`` (relative to the scale of ``V``).
    """
    exact = flf_lie_derivative_exact(sys, spec, t, tp, cfg)
    if cross_check:
        fd = fd_lie_derivative(sys, spec, t, tp, cfg, step=fd_step)
        scale = max(1.0, abs(exact))
        if abs(fd - exact) > cross_tol * scale:
            raise FlfDiagnosticError(
                f"Lie derivative mismatch: exact {exact:.12g} vs finite difference {fd:.12g}")
    return exact
