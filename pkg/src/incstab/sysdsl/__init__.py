"""System-definition DSL: expressions, dual-number Jacobians, system files."""

from .dual import DualScalar
from .errors import DslError, EvalDomainError, ParseError, SystemFileError
from .evaluate import CompiledVector, eval_expr, jacobian_ad
from .expr import (BinOp, Call, Const, ExprNode, Neg, Time, Var, parse_expression,
                   to_source)
from .system import SystemDef, parse_system_file, parse_system_text

__all__ = [
    "BinOp", "Call", "CompiledVector", "Const", "DslError", "DualScalar",
    "EvalDomainError", "ExprNode", "Neg", "ParseError", "SystemDef",
    "SystemFileError", "Time", "Var", "eval_expr", "jacobian_ad",
    "parse_expression", "parse_system_file", "parse_system_text", "to_source",
]
