"""Small mathematical expression language with exact first and second derivatives.

Grammar (infix, standard precedence, ``^`` binds tightest and is
right-associative)::

    expr    := term  { ("+" | "-") term }
    term    := factor { ("*" | "/") factor }
    factor  := "-" factor | power
    power   := atom [ "^" factor ]
    atom    := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"

NUMBER is a real literal with optional exponent (``2``, ``0.5``, ``.5``,
``1e-3``).  IDENT is either a declared variable, one of the named constants
``pi``/``e``, or one of the supported functions ``sin``, ``cos``, ``exp``,
``log``, ``sqrt``, ``abs``, ``tanh``.

Derivatives are propagated with second-order forward-mode dual numbers
(value, gradient, dense Hessian), never finite differences.  Dimensions are
expected to be small, so the dense Hessian is both the simplest and the
exact choice.  Evaluation is pure and deterministic; Expressions are
immutable after parsing and safe to share across threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Expression",
    "JetValue",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "ExprDomainError",
    "NonFiniteError",
    "parse",
]


class ExprError(Exception):
    """Base class for expression-language errors."""


class ExprSyntaxError(ExprError):
    """Malformed source text; carries the 0-based character offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"syntax error at offset {offset}: {message}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    """An identifier that is neither a declared variable, constant, nor function."""

    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier '{name}' at offset {offset}")
        self.name = name
        self.offset = offset


class ExprDomainError(ExprError):
    """Evaluation left the real domain (log of a non-positive value, etc.)."""

    def __init__(self, message: str, subexpression: str):
        super().__init__(f"{message} in subexpression '{subexpression}'")
        self.subexpression = subexpression


class NonFiniteError(ExprError):
    """Evaluation produced an infinity or NaN."""

    def __init__(self, subexpression: str):
        super().__init__(f"non-finite result in subexpression '{subexpression}'")
        self.subexpression = subexpression


CONSTANTS = {"pi": math.pi, "e": math.e}

# name -> (f, f', f'') on floats; domains guarded in _eval_func
_FUNCTIONS = {
    "sin": (math.sin, math.cos, lambda v: -math.sin(v)),
    "cos": (math.cos, lambda v: -math.sin(v), lambda v: -math.cos(v)),
    "exp": (math.exp, math.exp, math.exp),
    "log": (math.log, lambda v: 1.0 / v, lambda v: -1.0 / (v * v)),
    "sqrt": (math.sqrt, lambda v: 0.5 / math.sqrt(v), lambda v: -0.25 / math.sqrt(v) ** 3),
    "abs": (abs, None, None),  # piecewise; handled explicitly
    "tanh": (
        math.tanh,
        lambda v: 1.0 - math.tanh(v) ** 2,
        lambda v: -2.0 * math.tanh(v) * (1.0 - math.tanh(v) ** 2),
    ),
}

FUNCTIONS = frozenset(_FUNCTIONS)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Node:
    pos: int = field(repr=False)


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    name: str
    index: int


@dataclass(frozen=True)
class Const(Node):
    name: str
    value: float


@dataclass(frozen=True)
class Neg(Node):
    operand: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str  # one of + - * / ^
    left: Node
    right: Node


@dataclass(frozen=True)
class Func(Node):
    name: str
    arg: Node


def _render(node: Node) -> str:
    """Fully parenthesized text form; reparsing yields an identical tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_render(node.operand)})"
    if isinstance(node, BinOp):
        return f"({_render(node.left)} {node.op} {_render(node.right)})"
    if isinstance(node, Func):
        return f"{node.name}({_render(node.arg)})"
    raise TypeError(f"unexpected node {node!r}")


def _contains_var(node: Node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Neg):
        return _contains_var(node.operand)
    if isinstance(node, BinOp):
        return _contains_var(node.left) or _contains_var(node.right)
    if isinstance(node, Func):
        return _contains_var(node.arg)
    return False


# ---------------------------------------------------------------------------
# Second-order forward-mode duals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JetValue:
    """Value, gradient and dense symmetric Hessian at a point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


class _Jet:
    """Internal (value, grad, hess) triple with exact propagation rules.

    All rules are written so the Hessian stays bit-exactly symmetric:
    scalar multiples of symmetric matrices and ``outer(a,b) + outer(b,a)``
    are symmetric in floating point, not just in exact arithmetic.
    """

    __slots__ = ("v", "g", "h")

    def __init__(self, v: float, g: np.ndarray, h: np.ndarray):
        self.v = v
        self.g = g
        self.h = h

    @staticmethod
    def constant(v: float, n: int) -> "_Jet":
        return _Jet(v, np.zeros(n), np.zeros((n, n)))

    @staticmethod
    def variable(v: float, i: int, n: int) -> "_Jet":
        g = np.zeros(n)
        g[i] = 1.0
        return _Jet(v, g, np.zeros((n, n)))

    def __add__(self, o: "_Jet") -> "_Jet":
        return _Jet(self.v + o.v, self.g + o.g, self.h + o.h)

    def __sub__(self, o: "_Jet") -> "_Jet":
        return _Jet(self.v - o.v, self.g - o.g, self.h - o.h)

    def __neg__(self) -> "_Jet":
        return _Jet(-self.v, -self.g, -self.h)

    def __mul__(self, o: "_Jet") -> "_Jet":
        cross = np.outer(self.g, o.g)
        return _Jet(
            self.v * o.v,
            self.v * o.g + o.v * self.g,
            self.v * o.h + o.v * self.h + cross + cross.T,
        )

    def reciprocal(self) -> "_Jet":
        inv = 1.0 / self.v
        return self.lift(inv, -inv * inv, 2.0 * inv * inv * inv)

    def lift(self, fv: float, d1: float, d2: float) -> "_Jet":
        """Chain rule through a scalar function with derivatives d1, d2 at self.v."""
        return _Jet(fv, d1 * self.g, d1 * self.h + d2 * np.outer(self.g, self.g))


# ---------------------------------------------------------------------------
# Expression object
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expression:
    """Parsed, immutable expression over an ordered list of variables."""

    root: Node
    variables: tuple[str, ...]
    source: str

    @property
    def n(self) -> int:
        return len(self.variables)

    def to_text(self) -> str:
        """Render back to source text (fully parenthesized, round-trippable)."""
        return _render(self.root)

    def value(self, point: Sequence[float]) -> float:
        """Evaluate the plain value at point (no derivative domain restrictions)."""
        pt = self._check_point(point)
        return _eval_value(self.root, pt)

    def jet(self, point: Sequence[float]) -> JetValue:
        """Evaluate value, gradient and Hessian at point via forward-mode duals."""
        pt = self._check_point(point)
        n = len(pt)
        jet = _eval_jet(self.root, pt, n)
        if not (
            np.isfinite(jet.v) and np.all(np.isfinite(jet.g)) and np.all(np.isfinite(jet.h))
        ):
            raise NonFiniteError(self.to_text())
        assert np.array_equal(jet.h, jet.h.T), "Hessian propagation lost symmetry"
        return JetValue(jet.v, jet.g, jet.h)

    def _check_point(self, point: Sequence[float]) -> np.ndarray:
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        if pt.shape != (len(self.variables),):
            raise ValueError(
                f"point has {pt.size} coordinates, expression has "
                f"{len(self.variables)} variables"
            )
        return pt


def parse(source: str, variables: Sequence[str]) -> Expression:
    """Parse source text over the given ordered variable names.

    Raises ExprSyntaxError (with character offset) on malformed input,
    UnknownIdentifierError for undeclared identifiers, and ValueError for an
    invalid variable declaration (duplicates, non-identifier names, or names
    shadowing built-in functions/constants).
    """
    names = list(variables)
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    seen = set()
    for name in names:
        if not _IDENT_RE.fullmatch(name):
            raise ValueError(f"invalid variable name {name!r}")
        if name in FUNCTIONS or name in CONSTANTS:
            raise ValueError(f"variable name {name!r} collides with a built-in")
        if name in seen:
            raise ValueError(f"duplicate variable name {name!r}")
        seen.add(name)
    tokens = _tokenize(source)
    root = _Parser(tokens, names).parse()
    return Expression(root=root, variables=tuple(names), source=source)


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str  # "num", "ident", "op", "lparen", "rparen", "end"
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    i = 0
    while i < len(source):
        c = source[i]
        if c.isspace():
            i += 1
            continue
        m = _NUMBER_RE.match(source, i)
        if m:
            tokens.append(_Token("num", m.group(), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(source, i)
        if m:
            tokens.append(_Token("ident", m.group(), i))
            i = m.end()
            continue
        if c in "+-*/^":
            tokens.append(_Token("op", c, i))
        elif c == "(":
            tokens.append(_Token("lparen", c, i))
        elif c == ")":
            tokens.append(_Token("rparen", c, i))
        else:
            raise ExprSyntaxError(f"unexpected character {c!r}", i)
        i += 1
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], variables: list[str]):
        self.tokens = tokens
        self.pos = 0
        self.variables = variables

    def parse(self) -> Node:
        node = self._expr()
        tok = self._peek()
        if tok.kind != "end":
            raise ExprSyntaxError(
                f"expected operator or end of input, found {tok.text!r}", tok.pos
            )
        return node

    def _peek(self) -> _Token:
        return self.tokens[self.pos]

    def _advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _expr(self) -> Node:
        node = self._term()
        while self._peek().kind == "op" and self._peek().text in "+-":
            op = self._advance()
            node = BinOp(pos=op.pos, op=op.text, left=node, right=self._term())
        return node

    def _term(self) -> Node:
        node = self._factor()
        while self._peek().kind == "op" and self._peek().text in "*/":
            op = self._advance()
            node = BinOp(pos=op.pos, op=op.text, left=node, right=self._factor())
        return node

    def _factor(self) -> Node:
        tok = self._peek()
        if tok.kind == "op" and tok.text == "-":
            self._advance()
            return Neg(pos=tok.pos, operand=self._factor())
        return self._power()

    def _power(self) -> Node:
        base = self._atom()
        tok = self._peek()
        if tok.kind == "op" and tok.text == "^":
            self._advance()
            # right-associative; the exponent may itself carry a unary minus
            return BinOp(pos=tok.pos, op="^", left=base, right=self._factor())
        return base

    def _atom(self) -> Node:
        tok = self._advance()
        if tok.kind == "num":
            return Num(pos=tok.pos, value=float(tok.text))
        if tok.kind == "ident":
            if self._peek().kind == "lparen":
                if tok.text not in FUNCTIONS:
                    raise UnknownIdentifierError(tok.text, tok.pos)
                self._advance()
                arg = self._expr()
                closing = self._advance()
                if closing.kind != "rparen":
                    raise ExprSyntaxError(
                        f"expected ')', found {closing.text!r}", closing.pos
                    )
                return Func(pos=tok.pos, name=tok.text, arg=arg)
            if tok.text in self.variables:
                return Var(pos=tok.pos, name=tok.text, index=self.variables.index(tok.text))
            if tok.text in CONSTANTS:
                return Const(pos=tok.pos, name=tok.text, value=CONSTANTS[tok.text])
            raise UnknownIdentifierError(tok.text, tok.pos)
        if tok.kind == "lparen":
            node = self._expr()
            closing = self._advance()
            if closing.kind != "rparen":
                raise ExprSyntaxError(f"expected ')', found {closing.text!r}", closing.pos)
            return node
        raise ExprSyntaxError(
            f"expected number, identifier, '(' or unary '-', found "
            f"{tok.text!r or 'end of input'}",
            tok.pos,
        )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _eval_value(node: Node, point: np.ndarray) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(point[node.index])
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Neg):
        return -_eval_value(node.operand, point)
    if isinstance(node, BinOp):
        a = _eval_value(node.left, point)
        if node.op == "^":
            return _pow_value(a, _eval_value(node.right, point), node)
        b = _eval_value(node.right, point)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0.0:
            raise ExprDomainError("division by zero", _render(node))
        return a / b
    if isinstance(node, Func):
        v = _eval_value(node.arg, point)
        if node.name == "log" and v <= 0.0:
            raise ExprDomainError(f"log of non-positive value {v!r}", _render(node))
        if node.name == "sqrt" and v < 0.0:
            raise ExprDomainError(f"sqrt of negative value {v!r}", _render(node))
        out = _FUNCTIONS[node.name][0](v)
        if not math.isfinite(out):
            raise NonFiniteError(_render(node))
        return out
    raise TypeError(f"unexpected node {node!r}")


def _pow_value(base: float, expo: float, node: Node) -> float:
    if base < 0.0 and expo != round(expo):
        raise ExprDomainError(
            f"non-integer power {expo!r} of negative base {base!r}", _render(node)
        )
    if base == 0.0 and expo < 0.0:
        raise ExprDomainError("zero raised to a negative power", _render(node))
    out = base**expo
    if not math.isfinite(out):
        raise NonFiniteError(_render(node))
    return out


def _eval_jet(node: Node, point: np.ndarray, n: int) -> _Jet:
    if isinstance(node, Num):
        return _Jet.constant(node.value, n)
    if isinstance(node, Var):
        return _Jet.variable(float(point[node.index]), node.index, n)
    if isinstance(node, Const):
        return _Jet.constant(node.value, n)
    if isinstance(node, Neg):
        return -_eval_jet(node.operand, point, n)
    if isinstance(node, BinOp):
        left = _eval_jet(node.left, point, n)
        if node.op == "^":
            return _pow_jet(left, node, point, n)
        right = _eval_jet(node.right, point, n)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if right.v == 0.0:
            raise ExprDomainError("division by zero", _render(node))
        return left * right.reciprocal()
    if isinstance(node, Func):
        return _func_jet(node, _eval_jet(node.arg, point, n))
    raise TypeError(f"unexpected node {node!r}")


def _pow_jet(base: _Jet, node: BinOp, point: np.ndarray, n: int) -> _Jet:
    # Constant exponents (no variables in the exponent subtree) keep negative
    # bases legal for integer powers; variable exponents go through
    # exp(e*log(b)) and therefore require a positive base.
    if not _contains_var(node.right):
        c = _eval_value(node.right, point)
        v = base.v
        if c == round(c):
            k = int(round(c))
            if v == 0.0 and k < 0:
                raise ExprDomainError("zero raised to a negative power", _render(node))
            if k == 0:
                return _Jet.constant(1.0, n)
            d1 = k * v ** (k - 1)
            d2 = k * (k - 1) * v ** (k - 2) if k != 1 else 0.0
            return base.lift(float(v**k), float(d1), float(d2))
        if v <= 0.0:
            raise ExprDomainError(
                f"non-integer power {c!r} of non-positive base {v!r}", _render(node)
            )
        fv = v**c
        return base.lift(float(fv), float(c * v ** (c - 1.0)), float(c * (c - 1.0) * v ** (c - 2.0)))
    if base.v <= 0.0:
        raise ExprDomainError(
            f"variable power of non-positive base {base.v!r}", _render(node)
        )
    expo = _eval_jet(node.right, point, n)
    # b^e = exp(e * log b)
    logb = base.lift(math.log(base.v), 1.0 / base.v, -1.0 / (base.v * base.v))
    inner = expo * logb
    return inner.lift(math.exp(inner.v), math.exp(inner.v), math.exp(inner.v))


def _func_jet(node: Func, arg: _Jet) -> _Jet:
    name = node.name
    v = arg.v
    if name == "abs":
        if v == 0.0:
            raise ExprDomainError("abs is not differentiable at 0", _render(node))
        s = 1.0 if v > 0.0 else -1.0
        return arg.lift(abs(v), s, 0.0)
    if name == "log" and v <= 0.0:
        raise ExprDomainError(f"log of non-positive value {v!r}", _render(node))
    if name == "sqrt" and v <= 0.0:
        # v == 0 is excluded too: the derivative diverges there
        raise ExprDomainError(f"sqrt of non-positive value {v!r}", _render(node))
    f, d1, d2 = _FUNCTIONS[name]
    out = arg.lift(f(v), d1(v), d2(v))
    if not math.isfinite(out.v):
        raise NonFiniteError(_render(node))
    return out
