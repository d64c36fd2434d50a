"""Evaluation of expression trees and their exact Jacobians.

Trees are translated once into Python source and compiled; the generated
code only uses operator overloading and the helpers below, so the same
function evaluates floats, numpy arrays (many points at once) and
:class:`~incstab.sysdsl.dual.DualScalar` arguments.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import dual
from .dual import DualScalar, value_of
from .errors import EvalDomainError
from .expr import BinOp, Call, Const, ExprNode, Neg, Time, Var


def _any(cond) -> bool:
    return bool(np.any(cond))


def _div(a, b, pos):
    if _any(value_of(b) == 0):
        raise EvalDomainError("division by zero", pos)
    return a / b


def _log(a, pos):
    if _any(value_of(a) <= 0):
        raise EvalDomainError("log of non-positive value", pos)
    return dual.log(a)


def _sqrt(a, pos):
    v = value_of(a)
    if _any(v < 0):
        raise EvalDomainError("sqrt of negative value", pos)
    if isinstance(a, DualScalar) and _any(v == 0):
        raise EvalDomainError("sqrt is not differentiable at 0", pos)
    return dual.sqrt(a)


def _pow(a, b, pos):
    if _any(value_of(a) <= 0):
        raise EvalDomainError("non-integer power of non-positive base", pos)
    return dual.rpow(a, b)


_NAMESPACE = {
    "_div": _div,
    "_log": _log,
    "_sqrt": _sqrt,
    "_pow": _pow,
    "_ipow": dual.ipow,
    **{f"_{name}": getattr(dual, name)
       for name in ("sin", "cos", "tan", "exp", "tanh", "sinh", "cosh", "atan")},
}


def _integer_exponent(node: ExprNode) -> int | None:
    if isinstance(node, Const) and node.value >= 0 and float(node.value).is_integer():
        return int(node.value)
    return None


def _codegen(node: ExprNode) -> str:
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x[{node.index - 1}]"
    if isinstance(node, Time):
        return "t"
    if isinstance(node, Neg):
        return f"(-{_codegen(node.arg)})"
    if isinstance(node, Call):
        if node.func in ("log", "sqrt"):
            return f"_{node.func}({_codegen(node.arg)}, {node.pos})"
        return f"_{node.func}({_codegen(node.arg)})"
    if isinstance(node, BinOp):
        a, b = _codegen(node.left), _codegen(node.right)
        if node.op == "/":
            return f"_div({a}, {b}, {node.pos})"
        if node.op == "^":
            k = _integer_exponent(node.right)
            if k is not None:
                return f"_ipow({a}, {k})"
            return f"_pow({a}, {b}, {node.pos})"
        return f"({a} {node.op} {b})"
    raise TypeError(f"not an expression node: {node!r}")


class CompiledVector:
    """A vector of expressions compiled into one Python function of ``(x, t)``."""

    def __init__(self, exprs: Sequence[ExprNode], n: int):
        self.exprs = tuple(exprs)
        self.n = n
        body = ", ".join(_codegen(e) for e in self.exprs)
        src = f"def _fn(x, t):\n    return ({body}{',' if len(self.exprs) == 1 else ''})\n"
        scope = dict(_NAMESPACE)
        exec(compile(src, "<incstab-expr>", "exec"), scope)
        self._fn = scope["_fn"]

    def __len__(self):
        return len(self.exprs)

    def raw(self, x, t: float = 0.0, batched: bool = False):
        if not batched:
            return self._fn(x, t)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return self._fn(x, t)

    def value(self, x, t: float = 0.0) -> np.ndarray:
        """Evaluate at one point (``x`` of shape (n,)) or many (shape (n, K))."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            out = self.raw(x.tolist(), t)
            return np.array(out, dtype=float)
        out = self.raw(list(x), t, batched=True)
        return np.array([np.broadcast_to(o, x.shape[1:]) for o in out], dtype=float)

    def value_and_jacobian(self, x, t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Values and Jacobian by ``n`` forward passes, one seed direction each.

        For batched ``x`` of shape (n, K) the Jacobian has shape (m, n, K).
        """
        x = np.asarray(x, dtype=float)
        m, n = len(self.exprs), self.n
        batched = x.ndim > 1
        xs = list(x) if batched else x.tolist()
        shape = (m, n) + (x.shape[1:] if batched else ())
        jac = np.zeros(shape)
        values = None
        for j in range(n):
            out = self.raw(dual.seed(xs, j), t, batched)
            if values is None:
                values = [value_of(o) for o in out]
            for i, o in enumerate(out):
                if isinstance(o, DualScalar):
                    jac[i, j] = o.partials[0]
        if n == 0:
            values = list(self.raw(xs, t, batched))
        if batched:
            vals = np.array([np.broadcast_to(v, x.shape[1:]) for v in values], dtype=float)
        else:
            vals = np.array(values, dtype=float)
        return vals, jac

    def jacobian(self, x, t: float = 0.0) -> np.ndarray:
        return self.value_and_jacobian(x, t)[1]


def eval_expr(e: ExprNode, x, t: float = 0.0) -> float:
    """Evaluate a single expression at state ``x`` and time ``t``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(CompiledVector([e], len(x)).value(x, t)[0])


def jacobian_ad(f: Sequence[ExprNode], x, t: float = 0.0) -> np.ndarray:
    """Exact Jacobian ``d f_i / d x_j`` at ``(x, t)`` by dual-number seeding."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return CompiledVector(f, len(x)).jacobian(x, t)
