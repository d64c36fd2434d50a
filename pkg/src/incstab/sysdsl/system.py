"""System definitions and the line-oriented system file format.

Example file::

    name = "damped"
    state = ["x1", "x2"]
    f = ["x2", "-x1 - 2*x2"]
    metric.kind = "constant"
    metric.P = [[2, 0], [0, 1]]
    domain.lower = [-2, -2]
    domain.upper = [2, 2]

Values are JSON literals; an array may continue over several lines until its
brackets balance. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..metricgeo import MetricError, MetricSpec
from .errors import EvalDomainError, ParseError, SystemFileError
from .evaluate import CompiledVector
from .expr import ExprNode, parse_expression, references_time

KNOWN_KEYS = (
    "name", "state", "f", "h", "metric.kind", "metric.P", "metric.m",
    "domain.lower", "domain.upper", "equilibrium",
)


@dataclass(frozen=True, eq=False)
class SystemDef:
    """Vector field ``f(x, t)`` with optional companion field ``h(x)``."""

    name: str
    state: tuple[str, ...]
    f: tuple[ExprNode, ...]
    h: tuple[ExprNode, ...] | None = None
    metric: MetricSpec = field(default_factory=MetricSpec)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    equilibrium: np.ndarray | None = None
    _f: CompiledVector = field(init=False, repr=False)
    _h: CompiledVector | None = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.state)
        if n == 0:
            raise SystemFileError("state dimension must be positive")
        if len(self.f) != n:
            raise SystemFileError(f"f has {len(self.f)} entries but the state has {n}")
        if self.h is not None:
            if len(self.h) != n:
                raise SystemFileError(f"h has {len(self.h)} entries but the state has {n}")
            if any(references_time(e) for e in self.h):
                raise SystemFileError("h must be time invariant")
        if self.metric.n is not None and self.metric.n != n:
            raise SystemFileError("metric dimension does not match the state dimension")
        lower = np.full(n, -1.0) if self.lower is None else np.array(self.lower, dtype=float)
        upper = np.full(n, 1.0) if self.upper is None else np.array(self.upper, dtype=float)
        if lower.shape != (n,) or upper.shape != (n,):
            raise SystemFileError("domain bounds must have one entry per state")
        if not np.all(lower < upper):
            raise SystemFileError("domain.lower must be strictly below domain.upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.equilibrium is not None:
            eq = np.array(self.equilibrium, dtype=float)
            if eq.shape != (n,):
                raise SystemFileError("equilibrium must have one entry per state")
            object.__setattr__(self, "equilibrium", eq)
        for arr in (lower, upper, self.equilibrium):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "_f", CompiledVector(self.f, n))
        object.__setattr__(self, "_h", CompiledVector(self.h, n) if self.h else None)
        if self.metric.kind == "expr":
            _check_metric_positive(self.metric, lower, upper)

    @classmethod
    def from_strings(cls, f: Sequence[str], h: Sequence[str] | None = None,
                     metric: MetricSpec | None = None, lower=None, upper=None,
                     state: Sequence[str] | None = None, name: str = "system",
                     equilibrium=None) -> "SystemDef":
        n = len(f)
        names = tuple(state) if state else tuple(f"x{i + 1}" for i in range(n))
        fx = tuple(parse_expression(s, n, names) for s in f)
        hx = tuple(parse_expression(s, n, names, allow_time=False) for s in h) if h else None
        return cls(name, names, fx, hx, metric or MetricSpec(), lower, upper, equilibrium)

    @property
    def n(self) -> int:
        return len(self.state)

    @property
    def is_autonomous(self) -> bool:
        return not any(references_time(e) for e in self.f)

    @property
    def has_h(self) -> bool:
        return self.h is not None

    def rhs(self, x, t: float = 0.0) -> np.ndarray:
        return self._f.value(x, t)

    def jacobian(self, x, t: float = 0.0) -> np.ndarray:
        return self._f.jacobian(x, t)

    def rhs_and_jacobian(self, x, t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        return self._f.value_and_jacobian(x, t)

    def h_value(self, x) -> np.ndarray:
        if self._h is None:
            raise ValueError(f"system {self.name!r} defines no h field")
        return self._h.value(x)

    def h_jacobian(self, x) -> np.ndarray:
        if self._h is None:
            raise ValueError(f"system {self.name!r} defines no h field")
        return self._h.jacobian(x)

    def with_h(self, h: Sequence[ExprNode] | None) -> "SystemDef":
        return SystemDef(self.name, self.state, self.f, tuple(h) if h else None,
                         self.metric, self.lower, self.upper, self.equilibrium)

    def with_metric(self, metric: MetricSpec) -> "SystemDef":
        return SystemDef(self.name, self.state, self.f, self.h, metric,
                         self.lower, self.upper, self.equilibrium)

    def with_domain(self, lower, upper) -> "SystemDef":
        return SystemDef(self.name, self.state, self.f, self.h, self.metric,
                         lower, upper, self.equilibrium)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "state": list(self.state),
            "f": [str(e) for e in self.f],
            "h": [str(e) for e in self.h] if self.h else None,
            "metric": self.metric.describe(),
            "domain": {"lower": self.lower.tolist(), "upper": self.upper.tolist()},
            "equilibrium": None if self.equilibrium is None else self.equilibrium.tolist(),
        }


def _check_metric_positive(metric: MetricSpec, lower, upper, samples: int = 256):
    rng = np.random.default_rng(0)
    n = len(lower)
    pts = lower[:, None] + (upper - lower)[:, None] * rng.random((n, samples))
    try:
        metric.diagonal_values(pts)
    except EvalDomainError as exc:
        raise SystemFileError(f"metric expression is not positive on the domain: {exc}")


def _logical_lines(text: str):
    """Yield (line number, key, raw value) with bracket continuation."""
    buf, start, depth = "", 0, 0
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not buf and (not stripped or stripped.startswith("#")):
            continue
        if not buf:
            start = no
        buf = f"{buf} {stripped}" if buf else stripped
        depth = _bracket_depth(buf)
        if depth <= 0:
            yield start, buf
            buf = ""
    if buf:
        raise SystemFileError("unterminated array", start)


def _bracket_depth(s: str) -> int:
    depth, in_str, esc = 0, False, False
    for ch in s:
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
    return depth


def _raw_entries(text: str) -> dict[str, tuple[int, object]]:
    entries: dict[str, tuple[int, object]] = {}
    for no, line in _logical_lines(text):
        if "=" not in line:
            raise SystemFileError("expected 'key = value'", no)
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise SystemFileError(f"unknown key {key!r}", no)
        if key in entries:
            raise SystemFileError(f"duplicate key {key!r}", no)
        try:
            value = json.loads(raw.strip())
        except json.JSONDecodeError as exc:
            raise SystemFileError(f"malformed value for {key!r}: {exc.msg}", no) from None
        entries[key] = (no, value)
    return entries


def _string_list(entries, key, required=False) -> tuple[int, list[str]] | None:
    if key not in entries:
        if required:
            raise SystemFileError(f"missing required key {key!r}")
        return None
    no, value = entries[key]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SystemFileError(f"{key!r} must be an array of strings", no)
    return no, value


def _number_array(entries, key, ndim=1):
    if key not in entries:
        return None
    no, value = entries[key]
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise SystemFileError(f"{key!r} must be a numeric array", no) from None
    if arr.ndim != ndim:
        raise SystemFileError(f"{key!r} must be a {ndim}-D numeric array", no)
    return arr


def _parse_exprs(entries, key, n, names, allow_time=True):
    got = _string_list(entries, key, required=(key == "f"))
    if got is None:
        return None
    no, srcs = got
    out = []
    for i, src in enumerate(srcs):
        try:
            out.append(parse_expression(src, n, names, allow_time=allow_time))
        except ParseError as exc:
            raise SystemFileError(f"{key}[{i}]: {exc}", no) from None
    return tuple(out)


def parse_system_text(text: str) -> SystemDef:
    """Parse and validate the contents of a system file."""
    entries = _raw_entries(text)
    name = entries.get("name", (0, "system"))[1]
    if not isinstance(name, str):
        raise SystemFileError("'name' must be a string", entries["name"][0])
    _, names = _string_list(entries, "state", required=True)
    if not names or len(set(names)) != len(names):
        raise SystemFileError("'state' must list distinct names", entries["state"][0])
    n = len(names)
    f = _parse_exprs(entries, "f", n, names)
    h = _parse_exprs(entries, "h", n, names, allow_time=False)

    kind = entries.get("metric.kind", (0, "euclidean"))[1]
    try:
        if kind == "euclidean":
            metric = MetricSpec.euclidean(n)
        elif kind == "constant":
            P = _number_array(entries, "metric.P", ndim=2)
            if P is None:
                raise SystemFileError("metric.kind = constant requires metric.P")
            if P.shape != (n, n):
                raise SystemFileError(f"metric.P must be {n}x{n}", entries["metric.P"][0])
            metric = MetricSpec.constant(P)
        elif kind == "expr":
            m = _parse_exprs(entries, "metric.m", n, names, allow_time=False)
            if m is None:
                raise SystemFileError("metric.kind = expr requires metric.m")
            if len(m) != n:
                raise SystemFileError(f"metric.m must have {n} entries", entries["metric.m"][0])
            metric = MetricSpec.diagonal(m, n)
        else:
            raise SystemFileError(f"unknown metric kind {kind!r}", entries["metric.kind"][0])
    except MetricError as exc:
        raise SystemFileError(str(exc)) from None

    lower = _number_array(entries, "domain.lower")
    upper = _number_array(entries, "domain.upper")
    eq = _number_array(entries, "equilibrium")
    return SystemDef(name, tuple(names), f, h, metric, lower, upper, eq)


def parse_system_file(src: str | os.PathLike) -> SystemDef:
    """Load a system from a path, or parse it directly if given file text."""
    if isinstance(src, os.PathLike) or ("\n" not in src and "=" not in src):
        path = Path(src)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise SystemFileError(f"cannot read {path}: {exc.strerror}") from None
        return parse_system_text(text)
    return parse_system_text(src)
