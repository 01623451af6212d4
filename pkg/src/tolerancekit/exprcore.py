"""Scalar expressions in x and y: parsing, evaluation, symbolic partials, printing.

Grammar (whitespace-insensitive)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := primary (("^" | "**") exponent)?
    exponent:= ("-" | "+") exponent | power          # right-associative
    primary := number | "x" | "y" | func "(" expr ")" | "(" expr ")"
             | "{" expr "}" | "\\frac" "{" expr "}" "{" expr "}"
    func    := exp | log | sqrt | abs

So ``-x^2`` is ``-(x^2)`` and ``a^b^c`` is ``a^(b^c)``. Implicit
multiplication is rejected. The LaTeX ``\\frac{..}{..}`` form and brace
grouping are accepted so typeset formulas can be pasted with little editing.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

from .errors import DomainError, ParseError, UnknownIdentifierError

FUNCTIONS = ("exp", "log", "sqrt", "abs")
VARIABLES = ("x", "y")


@dataclass(frozen=True)
class Const:
    value: float

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Neg:
    arg: "Expr"

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"

    def __str__(self) -> str:
        return to_text(self)


Expr = Union[Const, Var, Neg, Bin, Call]


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<frac>\\frac)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(){}])"
    r")"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, name, op, frac, end
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        start = m.start(kind)
        tok_text = m.group(kind)
        if kind == "op" and tok_text == "**":
            tok_text = "^"
        toks.append(_Tok(kind, tok_text, _byte_offset(text, start)))
        pos = m.end()
    toks.append(_Tok("end", "", _byte_offset(text, n)))
    return toks


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _is(self, *ops: str) -> bool:
        t = self.tok
        return t.kind == "op" and t.text in ops

    def _expect(self, op: str) -> None:
        if not self._is(op):
            self._fail((repr(op),))
        self.i += 1

    def _fail(self, expected: tuple[str, ...]):
        t = self.tok
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise ParseError(f"unexpected {what}", t.offset, expected)

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            self._fail(("'+'", "'-'", "'*'", "'/'", "'^'", "end of input"))
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self._is("+", "-"):
            op = self.tok.text
            self.i += 1
            e = Bin(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self._is("*", "/"):
            op = self.tok.text
            self.i += 1
            e = Bin(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self._is("-"):
            self.i += 1
            return Neg(self.unary())
        if self._is("+"):
            self.i += 1
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self._is("^"):
            self.i += 1
            return Bin("^", base, self.exponent())
        return base

    def exponent(self) -> Expr:
        if self._is("-"):
            self.i += 1
            return Neg(self.exponent())
        if self._is("+"):
            self.i += 1
            return self.exponent()
        return self.power()

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Const(float(t.text))
        if t.kind == "frac":
            self.i += 1
            self._expect("{")
            num = self.expr()
            self._expect("}")
            self._expect("{")
            den = self.expr()
            self._expect("}")
            return Bin("/", num, den)
        if t.kind == "name":
            self.i += 1
            if t.text in VARIABLES:
                return Var(t.text)
            if t.text in FUNCTIONS:
                self._expect("(")
                arg = self.expr()
                self._expect(")")
                return Call(t.text, arg)
            raise UnknownIdentifierError(t.text, t.offset)
        if self._is("("):
            self.i += 1
            e = self.expr()
            self._expect(")")
            return e
        if self._is("{"):
            self.i += 1
            e = self.expr()
            self._expect("}")
            return e
        self._fail(("number", "x", "y", "function", "'('", "'-'"))


def parse_expr(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    if not text or not text.strip():
        raise ParseError("empty expression", 0, ("expression",))
    return _Parser(text).parse()


# ---------------------------------------------------------------- evaluation
# The tree-walking evaluator and the compiled closures share these helpers so
# both give bit-identical results.


def _ipow(a: float, n: int) -> float:
    """a**n for integer n by binary exponentiation (repeated multiplication)."""
    if n < 0:
        if a == 0.0:
            raise ZeroDivisionError
        return 1.0 / _ipow(a, -n)
    result = 1.0
    first = True
    base = a
    while n:
        if n & 1:
            result = base if first else result * base
            first = False
        n >>= 1
        if n:
            base = base * base
    return result


def _int_exponent(b: float) -> int | None:
    if b == b and abs(b) <= 1024 and b == int(b):
        return int(b)
    return None


def _pow(a: float, b: float) -> float:
    n = _int_exponent(b)
    if n is not None:
        return _ipow(a, n)
    if a < 0.0:
        raise ValueError("negative base with non-integer exponent")
    if a == 0.0 and b < 0.0:
        raise ZeroDivisionError
    return math.pow(a, b)


def _log(a: float) -> float:
    if a <= 0.0:
        raise ValueError("log of non-positive")
    return math.log(a)


def _sqrt(a: float) -> float:
    if a < 0.0:
        raise ValueError("sqrt of negative")
    return math.sqrt(a)


_FUNC_IMPL: dict[str, Callable[[float], float]] = {
    "exp": math.exp,
    "log": _log,
    "sqrt": _sqrt,
    "abs": abs,
}


def eval_expr(e: Expr, x: float, y: float) -> float:
    """Evaluate ``e`` at (x, y); raises DomainError naming the offending subexpression."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return x if e.name == "x" else y
    if isinstance(e, Neg):
        return -eval_expr(e.arg, x, y)
    if isinstance(e, Call):
        a = eval_expr(e.arg, x, y)
        try:
            return _FUNC_IMPL[e.fn](a)
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"{e.fn}({a!r}) undefined", e) from exc
    a = eval_expr(e.left, x, y)
    b = eval_expr(e.right, x, y)
    op = e.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise DomainError("division by zero", e)
        return a / b
    try:
        return _pow(a, b)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"power {a!r}^{b!r} undefined", e) from exc


def _emit(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_emit(e.arg)})"
    if isinstance(e, Call):
        name = {"exp": "_exp", "log": "_log", "sqrt": "_sqrt", "abs": "abs"}[e.fn]
        return f"{name}({_emit(e.arg)})"
    if e.op == "^":
        if isinstance(e.right, Const):
            n = _int_exponent(e.right.value)
            if n is not None:
                return f"_ipow({_emit(e.left)}, {n})"
        return f"_pow({_emit(e.left)}, {_emit(e.right)})"
    return f"({_emit(e.left)} {e.op} {_emit(e.right)})"


_COMPILE_NS = {"_exp": math.exp, "_log": _log, "_sqrt": _sqrt, "_ipow": _ipow, "_pow": _pow}


def compile_expr(e: Expr) -> Callable[[float, float], float]:
    """Return a fast ``(x, y) -> float`` closure equivalent to :func:`eval_expr`.

    Arithmetic failures are re-run through the tree walker so the raised
    DomainError names the failing subexpression.
    """
    code = compile(f"lambda x, y: {_emit(e)}", "<expr>", "eval")
    raw = eval(code, dict(_COMPILE_NS))

    def fn(x: float, y: float) -> float:
        try:
            return raw(x, y)
        except (ZeroDivisionError, ValueError, OverflowError):
            eval_expr(e, x, y)
            raise DomainError("evaluation failed", e)

    return fn


# ---------------------------------------------------------------- derivatives


def _is_const(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Const) and (v is None or e.value == v)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    return Bin("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    return Bin("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    return Bin("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return Const(0.0)
    return Bin("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return Const(1.0)
    return Bin("^", a, b)


def differentiate(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``var`` ("x" or "y")."""
    if var not in VARIABLES:
        raise ValueError(f"can only differentiate with respect to x or y, not {var!r}")
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.name == var else 0.0)
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, var))
    if isinstance(e, Call):
        a = e.arg
        da = differentiate(a, var)
        if _is_const(da, 0.0):
            return Const(0.0)
        if e.fn == "exp":
            return mul(e, da)
        if e.fn == "log":
            return div(da, a)
        if e.fn == "sqrt":
            return div(da, mul(Const(2.0), e))
        # d|a| = a/|a| * a'
        return mul(div(a, e), da)
    a, b = e.left, e.right
    da = differentiate(a, var)
    db = differentiate(b, var)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, b), mul(a, db))
    if e.op == "/":
        if _is_const(db, 0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
    # power
    if _is_const(db, 0.0):
        if _is_const(da, 0.0):
            return Const(0.0)
        if isinstance(b, Const):
            return mul(mul(b, power(a, Const(b.value - 1.0))), da)
        return mul(mul(b, power(a, sub(b, Const(1.0)))), da)
    # general a^b = exp(b log a)
    return mul(e, add(mul(db, Call("log", a)), div(mul(b, da), a)))


# ---------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _prec(e: Expr) -> int:
    if isinstance(e, Bin):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 3
    return 5


def _num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v)) if v != 0 or math.copysign(1.0, v) > 0 else "-0"
    return repr(v)


def to_text(e: Expr) -> str:
    """Print ``e`` so that ``parse_expr`` rebuilds the same tree."""
    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({to_text(e.arg)})"
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        if _prec(e.arg) < 3:
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[e.op]
    left = to_text(e.left)
    right = to_text(e.right)
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < p:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    if e.op in "+-":
        return f"{left} {e.op} {right}"
    return f"{left}{e.op}{right}"
