"""Scalar expression AST, recursive-descent parser and pretty-printer.

Grammar (``^`` binds tighter than unary minus, and is right-associative)::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | power
    power  := atom ("^" factor)?
    atom   := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"

Identifiers are the state names (``x1 .. xn`` by default), ``t`` for time and
the constant ``pi``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Sequence

from .errors import ParseError

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "sinh", "cosh", "atan")
BINARY_OPS = ("+", "-", "*", "/", "^")


class ExprNode:
    """Base class of expression nodes. Nodes are immutable and hashable."""

    __slots__ = ()

    def children(self) -> tuple["ExprNode", ...]:
        return ()

    def walk(self) -> Iterator["ExprNode"]:
        yield self
        for c in self.children():
            yield from c.walk()

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True, eq=True)
class Const(ExprNode):
    value: float
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True, eq=True)
class Var(ExprNode):
    index: int  # 1-based state index
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True, eq=True)
class Time(ExprNode):
    pos: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True, eq=True)
class Neg(ExprNode):
    arg: ExprNode
    pos: int = field(default=-1, compare=False, repr=False)

    def children(self):
        return (self.arg,)


@dataclass(frozen=True, eq=True)
class BinOp(ExprNode):
    op: str
    left: ExprNode
    right: ExprNode
    pos: int = field(default=-1, compare=False, repr=False)

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary operator {self.op!r}")

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, eq=True)
class Call(ExprNode):
    func: str
    arg: ExprNode
    pos: int = field(default=-1, compare=False, repr=False)

    def __post_init__(self):
        if self.func not in FUNCTIONS:
            raise ValueError(f"unknown function {self.func!r}")

    def children(self):
        return (self.arg,)


def references_time(node: ExprNode) -> bool:
    return any(isinstance(n, Time) for n in node.walk())


def max_var_index(node: ExprNode) -> int:
    return max((n.index for n in node.walk() if isinstance(n, Var)), default=0)


# -- tokenizer ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "ident" | "op" | "end"
    text: str
    offset: int  # byte offset


def _tokenize(src: str) -> list[_Token]:
    tokens = []
    i = 0
    byte = 0
    while i < len(src):
        m = _TOKEN_RE.match(src, i)
        if m is None:
            raise ParseError(f"unexpected character {src[i]!r}", byte, src)
        kind = m.lastgroup
        text = m.group()
        if kind != "ws":
            tokens.append(_Token(kind, text, byte))
        byte += len(text.encode("utf-8"))
        i = m.end()
    tokens.append(_Token("end", "", byte))
    return tokens


_DEFAULT_VAR = re.compile(r"x([1-9]\d*)$")


class _Parser:
    def __init__(self, src: str, n: int, names: Sequence[str] | None, allow_time: bool):
        self.src = src
        self.n = n
        self.names = {name: i + 1 for i, name in enumerate(names)} if names else None
        self.allow_time = allow_time
        self.tokens = _tokenize(src)
        self.k = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.k]

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.tok
        return ParseError(message, tok.offset, self.src)

    def accept(self, text: str) -> _Token | None:
        if self.tok.kind == "op" and self.tok.text == text:
            tok = self.tok
            self.k += 1
            return tok
        return None

    def expect(self, text: str) -> _Token:
        tok = self.accept(text)
        if tok is None:
            found = repr(self.tok.text) if self.tok.kind != "end" else "end of input"
            raise self.error(f"expected {text!r}, found {found}")
        return tok

    def parse(self) -> ExprNode:
        node = self.expr()
        if self.tok.kind != "end":
            raise self.error(f"unexpected token {self.tok.text!r}")
        return node

    def expr(self) -> ExprNode:
        node = self.term()
        while True:
            tok = self.accept("+") or self.accept("-")
            if tok is None:
                return node
            node = BinOp(tok.text, node, self.term(), pos=tok.offset)

    def term(self) -> ExprNode:
        node = self.factor()
        while True:
            tok = self.accept("*") or self.accept("/")
            if tok is None:
                return node
            node = BinOp(tok.text, node, self.factor(), pos=tok.offset)

    def factor(self) -> ExprNode:
        tok = self.accept("-")
        if tok is not None:
            return Neg(self.factor(), pos=tok.offset)
        return self.power()

    def power(self) -> ExprNode:
        base = self.atom()
        tok = self.accept("^")
        if tok is not None:
            return BinOp("^", base, self.factor(), pos=tok.offset)
        return base

    def atom(self) -> ExprNode:
        tok = self.tok
        if tok.kind == "num":
            self.k += 1
            return Const(float(tok.text), pos=tok.offset)
        if tok.kind == "ident":
            self.k += 1
            if self.tok.kind == "op" and self.tok.text == "(":
                if tok.text not in FUNCTIONS:
                    raise self.error(f"unknown function {tok.text!r}", tok)
                self.k += 1
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg, pos=tok.offset)
            return self.identifier(tok)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "end":
            raise self.error("unexpected end of input")
        raise self.error(f"unexpected token {tok.text!r}")

    def identifier(self, tok: _Token) -> ExprNode:
        name = tok.text
        if name in FUNCTIONS:
            raise self.error(f"function {name!r} requires an argument", tok)
        if self.names is not None and name in self.names:
            return Var(self.names[name], pos=tok.offset)
        if name == "t":
            if not self.allow_time:
                raise self.error("time variable 't' is not allowed here", tok)
            return Time(pos=tok.offset)
        if name == "pi":
            return Const(math.pi, pos=tok.offset)
        if self.names is None:
            m = _DEFAULT_VAR.match(name)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= self.n:
                    raise self.error(
                        f"variable index {idx} out of range [1, {self.n}]", tok)
                return Var(idx, pos=tok.offset)
        raise self.error(f"unknown identifier {name!r}", tok)


def parse_expression(src: str, n: int, names: Sequence[str] | None = None,
                     allow_time: bool = True) -> ExprNode:
    """Parse ``src`` into an expression tree over ``n`` state variables.

    ``names`` overrides the default ``x1 .. xn`` state names.
    Raises :class:`ParseError` carrying the byte offset of the problem.
    """
    if names is not None and len(names) != n:
        raise ValueError("number of state names must equal n")
    return _Parser(src, n, names, allow_time).parse()


# -- pretty printer ----------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_FACTOR, _ATOM = 3, 5


def _prec(node: ExprNode) -> int:
    if isinstance(node, BinOp):
        return 4 if node.op == "^" else _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    if isinstance(node, Const) and (node.value < 0 or math.copysign(1, node.value) < 0):
        return 0
    return _ATOM


def to_source(node: ExprNode, names: Sequence[str] | None = None) -> str:
    """Render ``node`` with the minimum parentheses needed to re-parse it."""

    def wrap(child: ExprNode, need: int) -> str:
        s = go(child)
        return f"({s})" if _prec(child) < need else s

    def go(e: ExprNode) -> str:
        if isinstance(e, Const):
            return repr(float(e.value))
        if isinstance(e, Var):
            return names[e.index - 1] if names else f"x{e.index}"
        if isinstance(e, Time):
            return "t"
        if isinstance(e, Neg):
            return "-" + wrap(e.arg, _FACTOR)
        if isinstance(e, Call):
            return f"{e.func}({go(e.arg)})"
        if isinstance(e, BinOp):
            if e.op == "^":
                return f"{wrap(e.left, _ATOM)}^{wrap(e.right, _FACTOR)}"
            p = _PREC[e.op]
            return f"{wrap(e.left, p)} {e.op} {wrap(e.right, p + 1)}"
        raise TypeError(f"not an expression node: {e!r}")

    return go(node)
