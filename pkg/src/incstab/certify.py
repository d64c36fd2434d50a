"""Sampling-based certification and empirical classification.

Every verdict here means "no violation found on the drawn samples"; reports
carry the sample count, the worst slack and every knob that was used.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .flf import (ClassK, FiniteIntegralFlf, FlfSpec, InfiniteIntegralFlf, QuadraticFlf,
                  flf_lie_derivative, flf_value, flf_value_and_lie_derivative)
from .lift import TangentPoint
from .metricgeo import MetricSpec, geodesic_distance
from .odeflow import IntegrationError, IntegratorConfig, integrate
from .sysdsl.errors import EvalDomainError
from .sysdsl.system import SystemDef

log = logging.getLogger(__name__)

VERDICTS = ("IES", "IAS", "IS", "inconclusive")
RATE_THRESHOLD = 0.01  # smallest rate reported as exponential


@dataclass(frozen=True)
class Sample:
    t: float
    x: np.ndarray
    v: np.ndarray

    @property
    def tangent(self) -> TangentPoint:
        return TangentPoint(self.x, self.v)


@dataclass(frozen=True)
class SamplePlan:
    """Where and how many points to check.

    Each state sample gets its own child generator spawned from ``seed``, so
    results do not depend on evaluation order. ``lower``/``upper`` default to
    the system's domain box; times are drawn from ``[t0, t0 + T]``.
    """

    seed: int = 0
    n_states: int = 200
    n_tangents: int = 1
    n_times: int = 1
    t0: float = 0.0
    T: float = 0.0
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None

    def __post_init__(self):
        if min(self.n_states, self.n_tangents, self.n_times) <= 0:
            raise ValueError("sample counts must be positive")
        if self.T < 0:
            raise ValueError("time window length must be non-negative")

    def box(self, sys: SystemDef) -> tuple[np.ndarray, np.ndarray]:
        lo = sys.lower if self.lower is None else np.asarray(self.lower, dtype=float)
        hi = sys.upper if self.upper is None else np.asarray(self.upper, dtype=float)
        return lo, hi

    def generators(self, count: int) -> list[np.random.Generator]:
        return [np.random.default_rng(s) for s in np.random.SeedSequence(self.seed).spawn(count)]

    def samples(self, sys: SystemDef, metric: MetricSpec | None = None) -> list[Sample]:
        metric = metric or sys.metric
        lo, hi = self.box(sys)
        out = []
        for rng in self.generators(self.n_states):
            x = lo + (hi - lo) * rng.random(sys.n)
            for _ in range(self.n_times):
                t = self.t0 + self.T * rng.random() if self.T > 0 else self.t0
                for _ in range(self.n_tangents):
                    u = rng.normal(size=sys.n)
                    u /= np.linalg.norm(u)
                    u /= metric.norms(x[None], u[None])[0]
                    out.append(Sample(float(t), x, u))
        return out

    def describe(self) -> dict:
        return {"seed": self.seed, "n_states": self.n_states, "n_tangents": self.n_tangents,
                "n_times": self.n_times, "t0": self.t0, "T": self.T,
                "lower": None if self.lower is None else list(self.lower),
                "upper": None if self.upper is None else list(self.upper)}


@dataclass
class Violation:
    t: float
    x: list[float]
    v: list[float] | None
    slack: float

    def to_dict(self) -> dict:
        return {"t": self.t, "x": self.x, "v": self.v, "slack": self.slack}


@dataclass
class Curve:
    series_id: str
    t: np.ndarray
    value: np.ndarray


@dataclass
class CertReport:
    verdict: str
    margin: float | None = None
    K: float | None = None
    lam: float | None = None
    r_squared: float | None = None
    violations: list[Violation] = field(default_factory=list)
    n_samples: int = 0
    n_failed: int = 0
    config: dict = field(default_factory=dict)
    bracket: dict | None = None
    flf: dict | None = None
    details: dict = field(default_factory=dict)
    curves: list[Curve] = field(default_factory=list)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")

    @property
    def passed(self) -> bool:
        return self.verdict != "inconclusive"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "rate_estimate": {"K": self.K, "lambda": self.lam, "r_squared": self.r_squared},
            "margin": self.margin,
            "violations": [v.to_dict() for v in self.violations],
            "bracket": self.bracket,
            "flf": self.flf,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "details": self.details,
            "config": self.config,
        }


def _violation(t, x, v, slack) -> Violation:
    return Violation(float(t), [float(a) for a in x],
                     None if v is None else [float(a) for a in v], float(slack))


# -- matrix measures -----------------------------------------------------------

def matrix_measure(A, norm="two") -> float:
    """Logarithmic norm of ``A`` for the 1-, 2-, inf- or a weighted 2-norm.

    ``norm`` may be ``"one"``, ``"two"``, ``"inf"`` or a positive-definite
    matrix ``P`` meaning ``|x| = sqrt(x^T P x)``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix measure needs a square matrix")
    if isinstance(norm, str):
        if norm == "two":
            return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])
        off = np.abs(A)
        np.fill_diagonal(off, 0.0)
        if norm == "one":
            return float(np.max(np.diag(A) + off.sum(axis=0)))
        if norm == "inf":
            return float(np.max(np.diag(A) + off.sum(axis=1)))
        raise ValueError(f"unknown norm {norm!r}")
    half, inv_half = MetricSpec.constant(norm).sqrt_pair()
    return matrix_measure(half @ A @ inv_half, "two")


def _norm_for(metric: MetricSpec):
    return "two" if metric.kind == "euclidean" else metric.P


def matrix_measure_check(sys: SystemDef, plan: SamplePlan, norm=None,
                         tol: float = 1e-9) -> CertReport:
    """Sup of ``mu(J(x, t))`` over samples; IES with rate ``-sup`` when negative."""
    if norm is None:
        if not sys.metric.is_flat:
            raise ValueError("matrix-measure check needs a flat metric or an explicit norm")
        norm = _norm_for(sys.metric)
    worst = -math.inf
    violations = []
    samples = plan.samples(sys)
    for s in samples:
        mu = matrix_measure(sys.jacobian(s.x, s.t), norm)
        worst = max(worst, mu)
        if mu > tol:
            violations.append(_violation(s.t, s.x, None, mu))
    ok = worst < -RATE_THRESHOLD
    verdict = "IES" if ok else ("IS" if worst <= tol else "inconclusive")
    return CertReport(
        verdict, margin=worst, lam=-worst if ok else None, K=1.0 if ok else None,
        violations=violations, n_samples=len(samples),
        config={"check": "matrix-measure", "norm": norm if isinstance(norm, str) else
                np.asarray(norm).tolist(), "tol": tol, "plan": plan.describe()})


# -- Demidovich ---------------------------------------------------------------

def demidovich_value(sys: SystemDef, M: MetricSpec, lam: float, x, t) -> float:
    """``lambda_max(J^T M + M J + dM/dt along f + 2 lam M)`` at ``(x, t)``."""
    f, J = sys.rhs_and_jacobian(x, t)
    Mx = M.matrix(x)
    Mdot = np.einsum("ijk,k->ij", M.matrix_derivative(x), f)
    S = J.T @ Mx + Mx @ J + Mdot + 2.0 * lam * Mx
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])


def demidovich_check(sys: SystemDef, M: MetricSpec | None, lam: float, plan: SamplePlan,
                     tol: float = 1e-9) -> CertReport:
    """Pointwise differential Lyapunov inequality for ``V = dx^T M(x) dx`` at rate ``lam``."""
    M = M or sys.metric
    samples = plan.samples(sys, M)
    worst = -math.inf
    violations = []
    failed = 0
    for s in samples:
        try:
            val = demidovich_value(sys, M, lam, s.x, s.t)
        except EvalDomainError as exc:
            log.warning("metric evaluation failed at %s: %s", s.x, exc)
            failed += 1
            continue
        worst = max(worst, val)
        if val > tol:
            violations.append(_violation(s.t, s.x, None, val))
    ok = not violations and failed == 0
    verdict = "inconclusive"
    if ok:
        verdict = "IES" if lam > RATE_THRESHOLD else ("IS" if lam >= 0 else "inconclusive")
    return CertReport(
        verdict, margin=worst, lam=lam if ok else None,
        violations=violations, n_samples=len(samples), n_failed=failed,
        config={"check": "demidovich", "rate": lam, "tol": tol, "metric": M.describe(),
                "plan": plan.describe()})


def quadratic_decay_rate(sys: SystemDef, M: MetricSpec, plan: SamplePlan) -> float:
    """Largest ``k`` with ``dV/dt <= -k V`` for ``V = dx^T M dx`` on the samples.

    Computed as ``-max`` of the generalized eigenvalues of ``(J^T M + M J + dM/dt, M)``.
    """
    worst = -math.inf
    for s in plan.samples(sys, M):
        f, J = sys.rhs_and_jacobian(s.x, s.t)
        Mx = M.matrix(s.x)
        Mdot = np.einsum("ijk,k->ij", M.matrix_derivative(s.x), f)
        S = J.T @ Mx + Mx @ J + Mdot
        L = np.linalg.cholesky(Mx)
        Li = np.linalg.inv(L)
        worst = max(worst, float(np.linalg.eigvalsh(Li @ (0.5 * (S + S.T)) @ Li.T)[-1]))
    return -worst


# -- FLF decrease -------------------------------------------------------------

def _verdict_for_alpha(alpha: ClassK | None) -> str:
    if alpha is None:
        return "IS"
    return "IES" if alpha.is_linear else "IAS"


def flf_decrease_certify(sys: SystemDef, spec: FlfSpec, alpha: ClassK | None,
                         plan: SamplePlan, cfg: IntegratorConfig | None = None,
                         tol: float = 1e-6, cross_check: bool = False) -> CertReport:
    """Check ``L V + alpha(V) <= tol`` on samples; ``alpha=None`` means zero.

    Passing maps to IS (zero), IAS (class K) or IES (linear); any violation or
    failed sample gives ``inconclusive``.
    """
    cfg = cfg or IntegratorConfig()
    samples = plan.samples(sys, getattr(spec, "metric", None))
    violations, failed, worst = [], 0, -math.inf
    for s in samples:
        tp = s.tangent
        try:
            if cross_check:
                V = flf_value(sys, spec, s.t, tp, cfg)
                LV = flf_lie_derivative(sys, spec, s.t, tp, cfg, cross_check=True)
            else:
                V, LV = flf_value_and_lie_derivative(sys, spec, s.t, tp, cfg)
        except (IntegrationError, EvalDomainError) as exc:
            log.warning("sample at t=%g x=%s skipped: %s", s.t, s.x, exc)
            failed += 1
            continue
        residual = LV + (alpha(V) if alpha is not None else 0.0)
        worst = max(worst, residual)
        if residual > tol:
            violations.append(_violation(s.t, s.x, s.v, residual))
    ok = not violations and failed == 0
    verdict = _verdict_for_alpha(alpha) if ok else "inconclusive"
    lam = None
    if ok and verdict == "IES":
        lam = alpha.a / spec.p
        if lam <= RATE_THRESHOLD:
            verdict, lam = "IS", None
    return CertReport(
        verdict, margin=worst, lam=lam, violations=violations, n_samples=len(samples),
        n_failed=failed, flf=spec.describe(),
        config={"check": "flf-decrease", "alpha": None if alpha is None else alpha.describe(),
                "tol": tol, "cross_check": cross_check, "integrator": cfg.describe(),
                "plan": plan.describe()})


# -- empirical rates ----------------------------------------------------------

@dataclass(frozen=True)
class RateThresholds:
    rate: float = 0.01
    r_squared: float = 0.95
    ias_ratio: float = 0.1
    k_max: float = 10.0
    error_margin: float = 100.0  # keep distances above this multiple of the integration error

    def describe(self) -> dict:
        return {"rate": self.rate, "r_squared": self.r_squared, "ias_ratio": self.ias_ratio,
                "k_max": self.k_max, "error_margin": self.error_margin}


def fit_log_linear(t: np.ndarray, log_r: np.ndarray) -> tuple[float, float, float, float]:
    """Least-squares fit ``log r = log K - lam t``; returns ``(K, lam, R^2, stderr(lam))``."""
    A = np.column_stack([np.ones_like(t), -t])
    coef, *_ = np.linalg.lstsq(A, log_r, rcond=None)
    resid = log_r - A @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((log_r - log_r.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 1e-24 else 1.0
    dof = max(len(t) - 2, 1)
    var_t = float(np.sum((t - t.mean()) ** 2))
    se = math.sqrt(ss_res / dof / var_t) if var_t > 0 else math.inf
    return math.exp(coef[0]), float(coef[1]), r2, se


def incremental_rate_estimate(sys: SystemDef, plan: SamplePlan,
                              cfg: IntegratorConfig | None = None, n_pairs: int = 20,
                              grid_points: int = 50,
                              thresholds: RateThresholds = RateThresholds()) -> CertReport:
    """Fit ``d(t)/d(0) ~ K e^{-lam (t - t0)}`` over sampled trajectory pairs.

    Pairs are drawn in the plan's box and integrated over ``[t0, t0 + T]``;
    distance ratios from all pairs are pooled in one log-linear regression.
    """
    if n_pairs < 10:
        raise ValueError("need at least 10 trajectory pairs")
    if plan.T <= 0:
        raise ValueError("empirical rate estimation needs a positive time window T")
    cfg = cfg or IntegratorConfig()
    lo, hi = plan.box(sys)
    grid = np.linspace(plan.t0, plan.t0 + plan.T, grid_points)
    ts, logs, curves = [], [], []
    sup_r, final_r, failed = 0.0, 0.0, 0
    for i, rng in enumerate(plan.generators(n_pairs)):
        x1 = lo + (hi - lo) * rng.random(sys.n)
        x2 = lo + (hi - lo) * rng.random(sys.n)
        try:
            X1 = integrate(sys, x1, plan.t0, plan.t0 + plan.T, cfg)(grid)
            X2 = integrate(sys, x2, plan.t0, plan.t0 + plan.T, cfg)(grid)
            d = np.array([geodesic_distance(sys.metric, p, q).distance for p, q in zip(X1, X2)])
        except (IntegrationError, EvalDomainError) as exc:
            log.warning("pair %d dropped: %s", i, exc)
            failed += 1
            continue
        if d[0] <= 0:
            failed += 1
            continue
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(X1), np.abs(X2)).max(axis=1)
        keep = d > thresholds.error_margin * scale
        r = d / d[0]
        curves.append(Curve(f"pair{i}", grid.copy(), d))
        sup_r = max(sup_r, float(r.max()))
        final_r = max(final_r, float(r[-1]))
        ts.append(grid[keep] - plan.t0)
        logs.append(np.log(r[keep]))
    n_ok = n_pairs - failed
    config = {"check": "empirical-rate", "n_pairs": n_pairs, "grid_points": grid_points,
              "thresholds": thresholds.describe(), "integrator": cfg.describe(),
              "plan": plan.describe()}
    if n_ok < 3:
        return CertReport("inconclusive", n_samples=n_pairs, n_failed=failed, config=config,
                          curves=curves)
    t_all, log_all = np.concatenate(ts), np.concatenate(logs)
    K, lam, r2, se = fit_log_linear(t_all, log_all)
    th = thresholds
    if lam >= th.rate and r2 >= th.r_squared:
        verdict = "IES"
    elif sup_r <= th.k_max and abs(lam) < th.rate:
        verdict = "IS"
    elif final_r < th.ias_ratio:
        verdict = "IAS"
    else:
        verdict = "inconclusive"
    return CertReport(
        verdict, margin=None, K=K, lam=lam, r_squared=r2, n_samples=n_pairs, n_failed=failed,
        config=config, curves=curves,
        details={"lambda_stderr": se, "sup_ratio": sup_r, "final_ratio": final_r,
                 "points": int(len(t_all))})
