"""Lie brackets, commutation checks and Krasovskii-type Lyapunov functions.

Given an FLF ``V`` and a time-invariant field ``h`` commuting with ``f``, the
function ``W(t, x) = V(t, x, h(x))`` inherits the decrease of ``V`` because
``h(phi(t))`` is the Lie transport of ``h(x0)``. This module evaluates ``W``,
checks the commutation hypothesis and verifies the decrease along sampled
trajectories.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .certify import CertReport, SamplePlan, Violation, _violation
from .flf import FiniteIntegralFlf, FlfSpec, InfiniteIntegralFlf, QuadraticFlf, flf_value
from .lift import TangentPoint, lifted_trajectory
from .metricgeo import MetricSpec
from .odeflow import IntegrationError, IntegratorConfig, integrate
from .sysdsl.errors import EvalDomainError
from .sysdsl.system import SystemDef

log = logging.getLogger(__name__)


class PreconditionError(ValueError):
    """A hypothesis required by the construction does not hold."""


def _h_of(sys: SystemDef):
    """``(h, J_h)`` callables; ``h = f`` for autonomous systems without an explicit h."""
    if sys.has_h:
        return sys.h_value, sys.h_jacobian
    if not sys.is_autonomous:
        raise PreconditionError(
            "time-varying f needs an explicit time-invariant h; h = f is not allowed")
    return (lambda x: sys.rhs(x, 0.0)), (lambda x: sys.jacobian(x, 0.0))


def lie_bracket(sys: SystemDef, x, t: float = 0.0) -> np.ndarray:
    """``[f, h](x, t) = J_f(x, t) h(x) - J_h(x) f(x, t)``."""
    h, Jh = _h_of(sys)
    x = np.asarray(x, dtype=float)
    f, Jf = sys.rhs_and_jacobian(x, t)
    return Jf @ h(x) - Jh(x) @ f


def bracket_of(f_sys: SystemDef, g_sys: SystemDef, x, t: float = 0.0) -> np.ndarray:
    """Bracket of the right-hand sides of two systems on the same state space."""
    f, Jf = f_sys.rhs_and_jacobian(x, t)
    g, Jg = g_sys.rhs_and_jacobian(x, t)
    return Jf @ g - Jg @ f


@dataclass
class BracketReport:
    max_residual: float
    residuals: np.ndarray
    commuting: bool
    tolerance: float

    def to_dict(self) -> dict:
        return {"max_residual": self.max_residual, "commuting": self.commuting}


def commutation_check(sys: SystemDef, plan: SamplePlan, rel_tol: float = 1e-8) -> BracketReport:
    """Metric norm of ``[f, h]`` over sampled ``(x, t)``.

    A sample commutes when its residual is at most ``rel_tol (1 + |f| |h|)``.
    """
    h, _ = _h_of(sys)
    res, tols = [], []
    for s in plan.samples(sys):
        b = lie_bracket(sys, s.x, s.t)
        fx, hx = sys.rhs(s.x, s.t), h(s.x)
        nb, nf, nh = sys.metric.norms(np.stack([s.x] * 3), np.stack([b, fx, hx]))
        res.append(nb)
        tols.append(rel_tol * (1.0 + nf * nh))
    res, tols = np.array(res), np.array(tols)
    return BracketReport(float(res.max()), res, bool(np.all(res <= tols)), float(tols.max()))


def krasovskii_W(sys: SystemDef, spec: FlfSpec, t: float, x,
                 cfg: IntegratorConfig | None = None) -> float:
    """``W(t, x) = V(t, x, h(x))``."""
    h, _ = _h_of(sys)
    x = np.asarray(x, dtype=float)
    return flf_value(sys, spec, t, TangentPoint(x, h(x)), cfg)


@dataclass(frozen=True)
class RadialFit:
    """Empirical ``k1 d^q <= |h(x)| <= k2 d^q`` with ``d = |x - x*|``."""

    k1: float
    k2: float
    q: float

    def describe(self) -> dict:
        return {"k1": self.k1, "k2": self.k2, "q": self.q}


@dataclass
class LyapunovCheck:
    k: float
    positivity_margin: float
    decay_rate: float
    transport_error: float
    radial: RadialFit | None
    n_trajectories: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.positivity_margin > 0 and not self.violations

    def to_dict(self) -> dict:
        return {"k": self.k, "passed": self.passed, "positivity_margin": self.positivity_margin,
                "decay_rate": self.decay_rate, "transport_error": self.transport_error,
                "radial": None if self.radial is None else self.radial.describe(),
                "n_trajectories": self.n_trajectories,
                "violations": [v.to_dict() for v in self.violations]}


def _equilibrium(sys: SystemDef) -> np.ndarray:
    if sys.equilibrium is not None:
        return np.asarray(sys.equilibrium, dtype=float)
    return np.zeros(sys.n)


def radial_fit(sys: SystemDef, plan: SamplePlan, x_star=None) -> RadialFit | None:
    """Fit ``log |h| = log k + q log d`` over the samples and bracket it by ``k1, k2``."""
    h, _ = _h_of(sys)
    x_star = _equilibrium(sys) if x_star is None else np.asarray(x_star, dtype=float)
    X = np.array([s.x for s in plan.samples(sys)])
    d = np.linalg.norm(X - x_star, axis=1)
    H = np.array([h(x) for x in X])
    nh = sys.metric.norms(X, H)
    keep = (d > 1e-8) & (nh > 0)
    if keep.sum() < 2:
        return None
    ld, lh = np.log(d[keep]), np.log(nh[keep])
    if np.ptp(ld) == 0:
        return None
    q = float(np.polyfit(ld, lh, 1)[0])
    ratio = nh[keep] / d[keep] ** q
    return RadialFit(float(ratio.min()), float(ratio.max()), q)


def _fine_cfg(cfg: IntegratorConfig | None) -> IntegratorConfig:
    return (cfg or IntegratorConfig()).tightened(1e-2, max_step=0.05)


def _flf_fine(spec: FlfSpec) -> FlfSpec:
    if isinstance(spec, FiniteIntegralFlf):
        return FiniteIntegralFlf(spec.p, spec.delta, spec.metric, quad_rtol=1e-11)
    if isinstance(spec, InfiniteIntegralFlf):
        return InfiniteIntegralFlf(spec.alpha, spec.horizon, spec.tail_tol, spec.metric,
                                   quad_rtol=1e-11)
    return spec


def _decay_along(W_of, traj, grid, eps, k, rate_tol, floor):
    """Central differences of ``W`` along a trajectory; returns (min rate, violations)."""
    rates, bad = [], []
    for tau in grid:
        w0 = W_of(tau, traj(tau))
        if w0 <= floor:
            continue
        wp = W_of(tau + eps, traj(tau + eps))
        wm = W_of(tau - eps, traj(tau - eps))
        wdot = (wp - wm) / (2 * eps)
        rates.append(-wdot / w0)
        slack = wdot + k * w0
        if slack > rate_tol * w0:
            bad.append((tau, slack / w0))
    return (min(rates) if rates else math.inf), bad


def krasovskii_verify(sys: SystemDef, spec: FlfSpec, k: float, plan: SamplePlan,
                      cfg: IntegratorConfig | None = None, rate_tol: float = 1e-3,
                      horizon: float | None = None, grid_points: int = 20,
                      transport_tol: float = 1e-5, exclusion: float = 0.05) -> LyapunovCheck:
    """Verify that ``W = V(., ., h)`` is a Lyapunov function with decay rate ``k``.

    Runs three checks on trajectories started at the plan's state samples:
    the transport of ``h(x0)`` equals ``h`` along the trajectory, the central
    difference of ``W`` satisfies ``dW/dt <= -(k - rate_tol) W``, and ``W`` is
    positive at samples farther than ``exclusion`` (relative to the box size)
    from the equilibrium. Raises :class:`PreconditionError` if ``[f, h] != 0``.
    """
    bracket = commutation_check(sys, plan)
    if not bracket.commuting:
        raise PreconditionError(
            f"f and h do not commute (max bracket residual {bracket.max_residual:.3g})")
    h, _ = _h_of(sys)
    n = sys.n
    T = horizon if horizon is not None else (plan.T if plan.T > 0 else 10.0)
    fine = _fine_cfg(cfg)
    spec_f = _flf_fine(spec)
    eps = 1e-3
    states = plan.samples(sys)[:: plan.n_tangents * plan.n_times]
    x_star = _equilibrium(sys)
    lo, hi = plan.box(sys)
    r_ex = exclusion * float(np.linalg.norm(hi - lo))

    def W_of(tau, x):
        return flf_value(sys, spec_f, tau, TangentPoint(x, h(x)), fine)

    violations: list[Violation] = []
    transport_err, k_hat, pos = 0.0, math.inf, math.inf
    grid = np.linspace(plan.t0 + eps, plan.t0 + T - eps, grid_points)
    for s in states:
        x0 = s.x
        t0 = plan.t0
        try:
            lifted = lifted_trajectory(sys, TangentPoint(x0, h(x0)), t0, t0 + T, fine)
        except (IntegrationError, EvalDomainError) as exc:
            violations.append(_violation(t0, x0, None, math.inf))
            log.warning("trajectory from %s failed: %s", x0, exc)
            continue
        Z = lifted(np.linspace(t0, t0 + T, 50))
        err = max(float(np.linalg.norm(z[n:] - h(z[:n]))) for z in Z)
        transport_err = max(transport_err, err)
        if err > transport_tol:
            violations.append(_violation(t0, x0, None, err - transport_tol))
        base = lifted.restrict(0, n)
        w_start = W_of(t0, x0)
        rate, bad = _decay_along(W_of, base, grid, eps, k, rate_tol, 1e-12 * max(w_start, 1e-300))
        k_hat = min(k_hat, rate)
        for tau, sl in bad:
            violations.append(_violation(tau, base(tau), None, sl))
        if np.linalg.norm(x0 - x_star) > r_ex:
            w = W_of(s.t, x0)
            pos = min(pos, w)
            if w <= 0:
                violations.append(_violation(s.t, x0, None, -w))
    return LyapunovCheck(k, pos, k_hat, transport_err, radial_fit(sys, plan, x_star), len(states),
                         violations)


# -- matrix-measure pathway -----------------------------------------------------

_VEC_ORD = {"one": 1, "two": 2, "inf": np.inf}


def matrix_measure_decay(sys: SystemDef, plan: SamplePlan, norm="two",
                         cfg: IntegratorConfig | None = None, horizon: float | None = None,
                         grid_points: int = 40) -> LyapunovCheck:
    """Measured decay rate of ``W = |f(x, t)|`` along sampled trajectories.

    When ``mu(J) <= -c`` in the chosen norm, ``W`` decays at rate at least
    ``c``; for time-varying ``f`` the explicit time dependence of ``f`` also
    enters ``dW/dt``, and it is included here because ``W`` is differenced
    along the actual trajectory.
    """
    if isinstance(norm, str):
        ord_ = _VEC_ORD[norm]

        def vnorm(v):
            return float(np.linalg.norm(v, ord_))
    else:
        half, _ = MetricSpec.constant(norm).sqrt_pair()

        def vnorm(v):
            return float(np.linalg.norm(half @ v))

    T = horizon if horizon is not None else (plan.T if plan.T > 0 else 5.0)
    fine = _fine_cfg(cfg)
    eps = 1e-3

    def W_of(tau, x):
        return vnorm(sys.rhs(x, tau))

    grid = np.linspace(plan.t0 + eps, plan.t0 + T - eps, grid_points)
    states = plan.samples(sys)[:: plan.n_tangents * plan.n_times]
    k_hat, violations = math.inf, []
    for s in states:
        traj = integrate(sys, s.x, plan.t0, plan.t0 + T, fine)
        w0 = W_of(plan.t0, s.x)
        rate, _ = _decay_along(W_of, traj, grid, eps, 0.0, 0.0, 1e-9 * max(w0, 1e-300))
        k_hat = min(k_hat, rate)
    return LyapunovCheck(0.0, math.inf, k_hat, 0.0, None, len(states), violations)


# -- classical Krasovskii -------------------------------------------------------

def classical_krasovskii_check(sys: SystemDef, P, Q, plan: SamplePlan,
                               cfg: IntegratorConfig | None = None, tol: float = 1e-9,
                               verify: bool = True) -> CertReport:
    """Check ``P J + J^T P + Q <= 0`` on samples, then verify ``W = f^T P f``.

    On pass, ``W`` decays at rate ``k = lambda_min(Q) / lambda_max(P)`` and
    the incremental rate ``k / 2`` is reported.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Pm = MetricSpec.constant(P)
    MetricSpec.constant(Q)  # positive-definiteness check
    if P.shape != (sys.n, sys.n) or Q.shape != (sys.n, sys.n):
        raise ValueError(f"P and Q must be {sys.n}x{sys.n}")
    worst, violations = -math.inf, []
    samples = plan.samples(sys)
    for s in samples:
        J = sys.jacobian(s.x, s.t)
        S = P @ J + J.T @ P + Q
        val = float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])
        worst = max(worst, val)
        if val > tol:
            violations.append(_violation(s.t, s.x, None, val))
    k = float(np.linalg.eigvalsh(Q)[0] / np.linalg.eigvalsh(P)[-1])
    config = {"check": "classical-krasovskii", "P": P.tolist(), "Q": Q.tolist(), "tol": tol,
              "plan": plan.describe()}
    details: dict = {"W_rate": k}
    ok = not violations
    bracket = None
    if ok and verify:
        if sys.is_autonomous:
            hf = sys.with_h(None)
            bracket = commutation_check(hf, plan).to_dict()
            chk = krasovskii_verify(hf, QuadraticFlf(metric=Pm), k, plan, cfg)
            details["lyapunov"] = chk.to_dict()
            ok = chk.passed
        else:
            # W = f^T P f with time-varying f is outside the commuting-field construction
            details["lyapunov"] = None
    return CertReport("IES" if ok else "inconclusive", margin=worst,
                      lam=k / 2 if ok else None, violations=violations,
                      n_samples=len(samples), config=config, bracket=bracket, details=details)
