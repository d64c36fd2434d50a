"""Riemannian metrics in a single global chart.

Norms, geodesic distances (closed form for flat metrics, discrete path-energy
minimization otherwise) and Lipschitz-constant estimates for vector fields.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .sysdsl.errors import EvalDomainError
from .sysdsl.evaluate import CompiledVector
from .sysdsl.expr import ExprNode, references_time

log = logging.getLogger(__name__)

METRIC_KINDS = ("euclidean", "constant", "expr")


class MetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MetricSpec:
    """Metric tensor field ``M(x)``.

    ``euclidean`` is the identity, ``constant`` a fixed SPD matrix ``P`` and
    ``expr`` a diagonal matrix whose entries ``m_i(x)`` are expressions.
    """

    kind: str = "euclidean"
    P: np.ndarray | None = None
    m: tuple[ExprNode, ...] | None = None
    n: int | None = None
    _m_fn: CompiledVector | None = field(default=None, init=False, repr=False)
    _sqrt: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise MetricError(f"unknown metric kind {self.kind!r}")
        if self.kind == "constant":
            P = np.array(self.P, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1]:
                raise MetricError("constant metric P must be a square matrix")
            if not np.allclose(P, P.T, rtol=1e-12, atol=1e-12):
                raise MetricError("constant metric P must be symmetric")
            w, U = np.linalg.eigh(P)
            if w.min() <= 0:
                raise MetricError(
                    f"constant metric P is not positive definite (eigenvalue {w.min():.12g})")
            P.setflags(write=False)
            object.__setattr__(self, "P", P)
            object.__setattr__(self, "n", P.shape[0])
            half = (U * np.sqrt(w)) @ U.T
            inv_half = (U / np.sqrt(w)) @ U.T
            object.__setattr__(self, "_sqrt", (half, inv_half))
        elif self.kind == "expr":
            if not self.m:
                raise MetricError("expr metric needs diagonal expressions m")
            m = tuple(self.m)
            if any(references_time(e) for e in m):
                raise MetricError("metric expressions must not depend on t")
            object.__setattr__(self, "m", m)
            n = self.n if self.n is not None else len(m)
            if n != len(m):
                raise MetricError("number of metric entries does not match dimension")
            object.__setattr__(self, "n", n)
            object.__setattr__(self, "_m_fn", CompiledVector(m, n))

    @classmethod
    def euclidean(cls, n: int | None = None) -> "MetricSpec":
        return cls("euclidean", n=n)

    @classmethod
    def constant(cls, P) -> "MetricSpec":
        return cls("constant", P=P)

    @classmethod
    def diagonal(cls, m: Sequence[ExprNode], n: int | None = None) -> "MetricSpec":
        return cls("expr", m=tuple(m), n=n)

    @property
    def is_flat(self) -> bool:
        return self.kind != "expr"

    def matrix(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "euclidean":
            return np.eye(len(x))
        if self.kind == "constant":
            return np.array(self.P)
        d = self.diagonal_values(x)
        return np.diag(d)

    def diagonal_values(self, x) -> np.ndarray:
        """Entries ``m_i(x)``; ``x`` may be batched with shape (n, K)."""
        d = self._m_fn.value(x)
        if np.any(~(d > 0)):
            raise EvalDomainError("metric entry is not positive")
        return d

    def matrix_derivative(self, x) -> np.ndarray:
        """``dM/dx_k`` stacked as an (n, n, n) array indexed ``[i, j, k]``."""
        x = np.asarray(x, dtype=float)
        n = len(x)
        out = np.zeros((n, n, n))
        if self.kind == "expr":
            _, jac = self._m_fn.value_and_jacobian(x)
            for i in range(n):
                out[i, i, :] = jac[i]
        return out

    def sqrt_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """``(P^{1/2}, P^{-1/2})`` for flat metrics."""
        if self.kind == "constant":
            return self._sqrt
        if self.kind == "euclidean":
            raise MetricError("euclidean metric has no fixed dimension; use numpy.eye")
        raise MetricError("matrix square root is only defined for flat metrics")

    def fields(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Metric matrices and their derivatives at points ``X`` of shape (K, n).

        Returns ``M`` of shape (K, n, n) and ``dM`` of shape (K, n, n, n) with
        ``dM[k, i, j, l] = d M_ij / d x_l`` at point ``k``.
        """
        K, n = X.shape
        dM = np.zeros((K, n, n, n))
        if self.kind == "euclidean":
            return np.broadcast_to(np.eye(n), (K, n, n)).copy(), dM
        if self.kind == "constant":
            return np.broadcast_to(self.P, (K, n, n)).copy(), dM
        vals, jac = self._m_fn.value_and_jacobian(X.T)
        if np.any(~(vals > 0)):
            raise EvalDomainError("metric entry is not positive")
        M = np.zeros((K, n, n))
        idx = np.arange(n)
        M[:, idx, idx] = vals.T
        dM[:, idx, idx, :] = np.transpose(jac, (2, 0, 1))
        return M, dM

    def norms(self, X: np.ndarray, V: np.ndarray) -> np.ndarray:
        """Row-wise norms ``|V[k]|`` measured at base points ``X[k]``."""
        X = np.atleast_2d(X)
        V = np.atleast_2d(V)
        if self.kind == "euclidean":
            return np.sqrt(np.einsum("ki,ki->k", V, V))
        if self.kind == "constant":
            return np.sqrt(np.maximum(np.einsum("ki,ij,kj->k", V, self.P, V), 0.0))
        d = self.diagonal_values(X.T)
        return np.sqrt(np.einsum("ik,ki->k", d, V * V))

    def describe(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "P": self.P.tolist()}
        if self.kind == "expr":
            return {"kind": "expr", "m": [str(e) for e in self.m]}
        return {"kind": "euclidean"}


def metric_norm(m: MetricSpec, x, v) -> float:
    """Length ``sqrt(v^T M(x) v)`` of the tangent vector ``v`` at ``x``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != v.shape:
        raise ValueError("base point and tangent vector dimensions differ")
    return float(m.norms(x[None, :], v[None, :])[0])


@dataclass
class GeodesicResult:
    distance: float
    polyline: np.ndarray
    converged: bool
    iterations: int
    energy: float = float("nan")


def _segments(metric: MetricSpec, X: np.ndarray, ds: float, with_grad: bool):
    D = X[1:] - X[:-1]
    M, dM = metric.fields(0.5 * (X[1:] + X[:-1]))
    q = np.maximum(np.einsum("ki,kij,kj->k", D, M, D), 0.0)
    energy = q.sum() / ds
    if not with_grad:
        return energy, q, None
    MD = np.einsum("kij,kj->ki", M, D)
    g = np.einsum("ki,kijl,kj->kl", D, dM, D)
    G = np.zeros_like(X)
    G[1:] += 2.0 * MD + 0.5 * g
    G[:-1] += -2.0 * MD + 0.5 * g
    return energy, q, G[1:-1] / ds


def _energy_or_inf(metric, X, ds):
    try:
        return _segments(metric, X, ds, False)[0]
    except EvalDomainError:
        return np.inf


def minimize_path_energy(metric: MetricSpec, a, b, nodes: int = 64, max_iter: int = 500,
                         energy_tol: float = 1e-10) -> GeodesicResult:
    """Discrete geodesic between ``a`` and ``b`` by descent on the path energy.

    The polyline has ``nodes`` interior points, starts on the straight segment
    and is updated along the energy gradient smoothed by the inverse discrete
    Laplacian (a Sobolev gradient, so the iteration count does not grow with
    ``nodes``), with Armijo backtracking by step halving.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = np.linspace(0.0, 1.0, nodes + 2)[:, None]
    X = (1 - s) * a + s * b
    ds = 1.0 / (nodes + 1)
    lap = (2.0 / ds) * (2 * np.eye(nodes) - np.eye(nodes, k=1) - np.eye(nodes, k=-1))
    lap_inv = np.linalg.inv(lap)
    energy, _, G = _segments(metric, X, ds, True)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        direction = -lap_inv @ G
        slope = float(np.sum(G * direction))
        if slope >= 0 or not np.isfinite(slope):
            converged = True
            break
        step = 1.0
        for _ in range(60):
            trial = X.copy()
            trial[1:-1] += step * direction
            e_new = _energy_or_inf(metric, trial, ds)
            if e_new <= energy + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            converged = True  # no descent possible at machine precision
            break
        improvement = energy - e_new
        X = trial
        energy, _, G = _segments(metric, X, ds, True)
        if improvement < energy_tol * max(energy, 1e-300):
            converged = True
            break
    _, q, _ = _segments(metric, X, ds, False)
    dist = float(np.sqrt(q).sum())
    if not converged:
        log.warning("geodesic energy minimization hit the iteration cap (%d)", max_iter)
    return GeodesicResult(dist, X, converged, it, float(energy))


def geodesic_distance(m: MetricSpec, a, b, nodes: int = 64, max_iter: int = 500,
                      force_optimize: bool = False) -> GeodesicResult:
    """Riemannian distance between ``a`` and ``b``.

    Flat metrics use the closed form ``sqrt((a-b)^T P (a-b))`` unless
    ``force_optimize`` is set.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("endpoint dimensions differ")
    if np.max(np.abs(a - b), initial=0.0) <= 1e-12:
        return GeodesicResult(0.0, np.empty((0, len(a))), True, 0, 0.0)
    if m.is_flat and not force_optimize:
        d = b - a
        P = m.P if m.kind == "constant" else np.eye(len(a))
        dist = float(np.sqrt(d @ P @ d))
        return GeodesicResult(dist, np.stack([a, b]), True, 0, dist ** 2)
    return minimize_path_energy(m, a, b, nodes=nodes, max_iter=max_iter)


@dataclass
class LipschitzEstimate:
    value: float
    heuristic: bool
    samples: int
    method: str


def _box_samples(lower, upper, count, rng, vertices=True) -> np.ndarray:
    n = len(lower)
    pts = lower + (upper - lower) * rng.random((count, n))
    if vertices and n <= 10:
        corners = np.array(np.meshgrid(*[[lo, hi] for lo, hi in zip(lower, upper)],
                                       indexing="ij")).reshape(n, -1).T
        pts = np.vstack([corners, pts])
    return pts


def lipschitz_estimate(sys, t_grid=None, sample_count: int = 1000,
                       seed: int = 0) -> LipschitzEstimate:
    """Sampled Lipschitz constant of ``f`` over the domain box.

    For flat metrics this is the largest ``||P^{1/2} J P^{-1/2}||_2`` over the
    samples (box vertices included); time-varying fields without ``t_grid``
    are sampled at 21 times in ``[0, 10]``. State-dependent metrics fall back to a
    pairwise growth-ratio estimator, flagged ``heuristic``.
    """
    rng = np.random.default_rng(seed)
    if sys.is_autonomous:
        times = [0.0]
    elif t_grid is None:
        times = list(np.linspace(0.0, 10.0, 21))
    else:
        times = list(np.atleast_1d(t_grid))
    pts = _box_samples(sys.lower, sys.upper, sample_count, rng)
    metric = sys.metric
    best = 0.0
    if metric.is_flat:
        if metric.kind == "constant":
            half, inv_half = metric.sqrt_pair()
        for t in times:
            for x in pts:
                J = sys.jacobian(x, t)
                if metric.kind == "constant":
                    J = half @ J @ inv_half
                best = max(best, float(np.linalg.norm(J, 2)))
        return LipschitzEstimate(best, False, len(pts) * len(times), "jacobian-operator-norm")
    log.warning("Lipschitz estimate for a state-dependent metric is heuristic")
    eps = 1e-4 * float(np.linalg.norm(sys.upper - sys.lower))
    for t in times:
        for x in pts:
            u = rng.normal(size=sys.n)
            y = x + eps * u / np.linalg.norm(u)
            num = metric_norm(metric, x, sys.rhs(y, t) - sys.rhs(x, t))
            den = metric_norm(metric, x, y - x)
            best = max(best, num / den)
    return LipschitzEstimate(best, True, len(pts) * len(times), "pairwise-growth")


@dataclass
class FlowDistanceViolation:
    pair: int
    t: float
    distance: float
    lower: float
    upper: float


def flow_distance_check(sys, L: float, pairs, t0: float, horizon: float, cfg=None,
                        grid_points: int = 20, tol: float = 1e-7) -> list[FlowDistanceViolation]:
    """Check ``d0 e^{-L s} <= d(phi(t0+s; x1), phi(t0+s; x2)) <= d0 e^{L s}``."""
    from .odeflow import IntegratorConfig, integrate

    grid = np.linspace(t0, t0 + horizon, grid_points)
    cfg = (cfg or IntegratorConfig()).tightened(1e-2, max_step=horizon / max(grid_points - 1, 1))
    out = []
    for i, (x1, x2) in enumerate(pairs):
        X1 = integrate(sys, x1, t0, t0 + horizon, cfg)(grid)
        X2 = integrate(sys, x2, t0, t0 + horizon, cfg)(grid)
        d = np.array([geodesic_distance(sys.metric, p, q).distance for p, q in zip(X1, X2)])
        s = grid - t0
        lo, hi = d[0] * np.exp(-L * s), d[0] * np.exp(L * s)
        for k in np.flatnonzero((d < lo - tol) | (d > hi + tol)):
            out.append(FlowDistanceViolation(i, float(grid[k]), float(d[k]),
                                             float(lo[k]), float(hi[k])))
    return out
