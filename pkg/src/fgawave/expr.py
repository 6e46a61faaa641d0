"""A minimal arithmetic expression language over x1..xd.

Expressions are immutable trees.  They can be evaluated on numpy arrays,
differentiated symbolically, printed back to parseable text and turned into
Python source for the compiled kernels.

Grammar::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := '-' unary | power
    power    := atom ('^' unary)?
    atom     := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'

so ``-x1^2`` is ``-(x1^2)`` and ``2^-x1`` is ``2^(-x1)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs")
# internal nodes produced by differentiation of abs; not accepted by the parser
_INTERNAL = ("sign", "kink")
CONSTANTS = {"pi": math.pi}


class ParseError(ValueError):
    """Syntax error with the byte offset and the set of tokens that would fit."""

    def __init__(self, message: str, offset: int, expected: Sequence[str] = ()):
        self.offset = offset
        self.expected = tuple(sorted(set(expected)))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at byte {offset}{detail}")


class DomainError(ArithmeticError):
    """Evaluation hit a point where an analytic derivative is undefined."""


class Expr:
    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)

    def __call__(self, *coords):
        return evaluate(self, *coords)


@dataclass(frozen=True, slots=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expr):
    index: int  # zero based: x1 -> 0

    @property
    def name(self) -> str:
        return f"x{self.index + 1}"


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class BinOp(Expr):
    op: str  # one of + - * /
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exponent: Expr


@dataclass(frozen=True, slots=True)
class Call(Expr):
    func: str
    arg: Expr


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    raw = src.encode("utf-8")
    # offsets are reported in bytes; map character index -> byte index
    char_to_byte = np.cumsum([0] + [len(ch.encode("utf-8")) for ch in src]).tolist()
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            stripped = len(src[pos:]) - len(src[pos:].lstrip())
            at = pos + stripped
            raise ParseError(f"unexpected character {src[at]!r}", char_to_byte[at],
                             ("number", "identifier", "operator"))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), char_to_byte[start]))
        pos = m.end()
    tokens.append(("end", "", len(raw)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ParseError(f"unexpected {text or 'end of input'!r}", off, (repr(op),))
        self.take()

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {text!r}", off, ("'+'", "'-'", "'*'", "'/'", "'^'", "end of input"))
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                e = BinOp(text, e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                e = BinOp(text, e, self.unary())
            else:
                return e

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            return Pow(base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                if text not in FUNCTIONS:
                    raise ParseError(f"unknown function {text!r}", off, FUNCTIONS)
                self.take()
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect_op(")")
                if len(args) != 1:
                    raise ParseError(f"function {text!r} takes 1 argument, got {len(args)}", off)
                return Call(text, args[0])
            m = re.fullmatch(r"x([1-9]\d*)", text)
            if m:
                return Var(int(m.group(1)) - 1)
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            if text in FUNCTIONS:
                raise ParseError(f"function {text!r} needs an argument list", off, ("'('",))
            raise ParseError(f"unknown identifier {text!r}", off, ("x1..xd", *CONSTANTS, *FUNCTIONS))
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected {text or 'end of input'!r}", off,
                         ("number", "identifier", "'('", "'-'"))


def parse_expression(src: str) -> Expr:
    """Parse ``src`` into an expression tree."""
    return _Parser(src).parse()


def max_variable(e: Expr) -> int:
    """Largest variable index used in ``e`` (-1 if constant)."""
    if isinstance(e, Var):
        return e.index
    if isinstance(e, Num):
        return -1
    if isinstance(e, (Neg, Call)):
        return max_variable(e.arg)
    if isinstance(e, BinOp):
        return max(max_variable(e.left), max_variable(e.right))
    if isinstance(e, Pow):
        return max(max_variable(e.base), max_variable(e.exponent))
    raise TypeError(e)


def uses_function(e: Expr, name: str) -> bool:
    if isinstance(e, Call):
        return e.func == name or uses_function(e.arg, name)
    if isinstance(e, Neg):
        return uses_function(e.arg, name)
    if isinstance(e, BinOp):
        return uses_function(e.left, name) or uses_function(e.right, name)
    if isinstance(e, Pow):
        return uses_function(e.base, name) or uses_function(e.exponent, name)
    return False


# ---------------------------------------------------------------------------
# smart constructors with constant folding

def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Num) and e.value == v


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(b, Neg):
        return BinOp("-", a, b.arg)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return Num(0.0)
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        raise ZeroDivisionError("division by constant zero")
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value / b.value)
    if _is(a, 0.0):
        return Num(0.0)
    if _is(b, 1.0):
        return a
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value ** b.value)
    if _is(b, 0.0):
        return Num(1.0)
    if _is(b, 1.0):
        return a
    return Pow(a, b)


def call(f: str, a: Expr) -> Expr:
    if isinstance(a, Num) and f not in _INTERNAL:
        return Num(float(_SCALAR_FUNCS[f](a.value)))
    return Call(f, a)


_SCALAR_FUNCS = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "sqrt": math.sqrt, "abs": abs}


# ---------------------------------------------------------------------------
# differentiation

def differentiate(e: Expr, var: int) -> Expr:
    """Exact derivative of ``e`` with respect to ``x{var+1}``.

    The derivative of ``abs(u)`` is ``sign(u) u'``; evaluating it where
    ``u == 0`` raises :class:`DomainError` instead of returning a value.
    """
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0 if e.index == var else 0.0)
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, var))
    if isinstance(e, BinOp):
        da = differentiate(e.left, var)
        db = differentiate(e.right, var)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, e.right), mul(e.left, db))
        # quotient rule
        return div(sub(mul(da, e.right), mul(e.left, db)), power(e.right, Num(2.0)))
    if isinstance(e, Pow):
        db_exp = differentiate(e.exponent, var)
        da = differentiate(e.base, var)
        if isinstance(db_exp, Num) and db_exp.value == 0.0:
            n = e.exponent
            return mul(mul(n, power(e.base, sub(n, Num(1.0)))), da)
        # general case: d(a^b) = a^b (b' ln a + b a'/a); ln is not in the grammar,
        # so only constant positive bases are supported here
        if isinstance(e.base, Num) and e.base.value > 0:
            return mul(mul(e, Num(math.log(e.base.value))), db_exp)
        raise DomainError("power with variable exponent and non-constant base is not differentiable here")
    if isinstance(e, Call):
        u = e.arg
        du = differentiate(u, var)
        if _is(du, 0.0):
            return Num(0.0)
        f = e.func
        if f == "sin":
            outer = call("cos", u)
        elif f == "cos":
            outer = neg(call("sin", u))
        elif f == "exp":
            outer = e
        elif f == "sqrt":
            outer = div(Num(0.5), e)
        elif f == "abs":
            outer = call("sign", u)
        elif f == "sign":
            outer = call("kink", u)
        elif f == "kink":
            outer = call("kink", u)
        else:  # pragma: no cover
            raise TypeError(f)
        return mul(outer, du)
    raise TypeError(e)


def gradient(e: Expr, d: int) -> list[Expr]:
    return [differentiate(e, i) for i in range(d)]


def hessian(e: Expr, d: int) -> list[list[Expr]]:
    g = gradient(e, d)
    return [[differentiate(g[i], j) for j in range(d)] for i in range(d)]


# ---------------------------------------------------------------------------
# evaluation

def evaluate(e: Expr, *coords):
    """Evaluate on broadcastable arrays (or scalars) ``x1, x2, ...``.

    Raises :class:`DomainError` at kinks of ``abs`` inside derivatives and for
    ``sqrt`` of negative numbers.
    """
    coords = tuple(np.asarray(c, dtype=float) for c in coords)
    with np.errstate(all="ignore"):
        out = _eval(e, coords)
    return out


def _eval(e: Expr, xs):
    if isinstance(e, Num):
        return np.float64(e.value) if not xs else np.full(np.broadcast(*xs).shape, e.value)
    if isinstance(e, Var):
        if e.index >= len(xs):
            raise IndexError(f"expression uses {e.name} but only {len(xs)} coordinates given")
        return xs[e.index] + 0.0 * np.zeros(np.broadcast(*xs).shape)
    if isinstance(e, Neg):
        return -_eval(e.arg, xs)
    if isinstance(e, BinOp):
        a = _eval(e.left, xs)
        b = _eval(e.right, xs)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return a / b
    if isinstance(e, Pow):
        a = _eval(e.base, xs)
        b = _eval(e.exponent, xs)
        if isinstance(e.exponent, Num) and float(e.exponent.value).is_integer():
            return a ** int(e.exponent.value)
        return np.power(a, b)
    if isinstance(e, Call):
        u = _eval(e.arg, xs)
        f = e.func
        if f == "sin":
            return np.sin(u)
        if f == "cos":
            return np.cos(u)
        if f == "exp":
            return np.exp(u)
        if f == "sqrt":
            if np.any(u < 0):
                raise DomainError("sqrt of a negative argument")
            return np.sqrt(u)
        if f == "abs":
            return np.abs(u)
        if f == "sign":
            if np.any(u == 0):
                raise DomainError("derivative of abs evaluated at its kink")
            return np.sign(u)
        if f == "kink":
            if np.any(u == 0):
                raise DomainError("derivative of abs evaluated at its kink")
            return np.zeros_like(u)
    raise TypeError(e)


# ---------------------------------------------------------------------------
# printing and code generation

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e: Expr) -> float:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg) or (isinstance(e, Num) and math.copysign(1.0, e.value) < 0):
        return 3
    if isinstance(e, Pow):
        return 4
    return 5


def to_text(e: Expr) -> str:
    """Print ``e`` in the input grammar; ``parse_expression(to_text(e))`` is equivalent."""
    return _print(e, 0, "text")


def to_source(e: Expr) -> str:
    """Python/numpy source for ``e``; variables are named ``x1, x2, ...``."""
    return _print(e, 0, "py")


def _print(e: Expr, need: float, mode: str) -> str:
    s = _print_bare(e, mode)
    return f"({s})" if _prec(e) < need else s


def _print_bare(e: Expr, mode: str) -> str:
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return "-" + _print(e.arg, 3, mode)
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        # same-precedence right operands keep their parentheses so the tree,
        # and hence floating point evaluation order, survives a round trip
        left = _print(e.left, p, mode)
        right = _print(e.right, p + 0.5, mode)
        return f"{left} {e.op} {right}" if p == 1 else f"{left}{e.op}{right}"
    if isinstance(e, Pow):
        op = "^" if mode == "text" else "**"
        base = _print(e.base, 4.5, mode)
        ex = e.exponent
        if mode == "py" and isinstance(ex, Num) and float(ex.value).is_integer():
            exps = str(int(ex.value)) if ex.value >= 0 else f"({int(ex.value)})"
        else:
            exps = _print(ex, 3, mode)
        return f"{base}{op}{exps}"
    if isinstance(e, Call):
        inner = _print(e.arg, 0, mode)
        if mode == "text":
            return f"{e.func}({inner})"
        if e.func == "kink":
            return f"(0.0*{inner})"
        return f"np.{e.func}({inner})"
    raise TypeError(e)


@dataclass(frozen=True)
class ComplexExpr:
    """A complex field given as a pair of real expressions."""

    re: Expr
    im: Expr

    @classmethod
    def parse(cls, re_src: str, im_src: str = "0") -> "ComplexExpr":
        return cls(parse_expression(re_src), parse_expression(im_src))

    def __call__(self, *coords) -> np.ndarray:
        return evaluate(self.re, *coords) + 1j * evaluate(self.im, *coords)

    def scaled(self, lam: complex) -> "ComplexExpr":
        lam = complex(lam)
        re_ = sub(mul(Num(lam.real), self.re), mul(Num(lam.imag), self.im))
        im_ = add(mul(Num(lam.real), self.im), mul(Num(lam.imag), self.re))
        return ComplexExpr(re_, im_)
