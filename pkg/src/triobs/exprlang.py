"""Scalar expression mini-language.

Users describe the plant nonlinearities, the completeness bound and the
decay envelope as short infix formulas such as ``"1/(1+x1^2)"``.  This module
parses them into an immutable tree, evaluates them (scalar, vectorised or in
arbitrary precision), differentiates them symbolically and bounds them on
axis-aligned boxes.

Grammar
-------
::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' INTEGER)?
    atom   := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

``FUNC`` is one of ``exp, ln, sin, cos, sqrt, abs, sign`` (``log`` is accepted
as an alias of ``ln``).  A minus sign written directly in front of a numeric
literal is folded into the constant, so ``"-2"`` parses to ``Const(-2.0)``
while ``"-(2)"`` parses to a negation node.  ``sign`` exists so that the
derivative of ``abs`` can be written down; ``abs`` differentiates to
``sign(u)*u'`` and ``sign(0) = 0``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "ExpressionError",
    "ExpressionSyntaxError",
    "ExpressionDomainError",
    "Expression",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Power",
    "ScalarField",
    "parse",
    "to_source",
    "evaluate",
    "differentiate",
    "extremum_on_box",
]

FUNCTIONS = ("exp", "ln", "sin", "cos", "sqrt", "abs", "sign")
_ALIASES = {"log": "ln"}


class ExpressionError(ValueError):
    """Base class for expression problems."""


class ExpressionSyntaxError(ExpressionError):
    """Malformed source text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} (at offset {offset})")


class ExpressionDomainError(ExpressionError):
    """Evaluation left the domain of an operation (e.g. ``ln`` of 0)."""

    def __init__(self, message: str, offset: int = -1):
        self.offset = offset
        where = f" (node at offset {offset})" if offset >= 0 else ""
        super().__init__(message + where)


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Expression:
    """Base node.  ``pos`` is the source offset and does not take part in equality."""

    def variables(self) -> set[str]:
        raise NotImplementedError


@dataclass(frozen=True)
class Const(Expression):
    value: float
    pos: int = field(default=-1, compare=False, repr=False)

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v):
            raise ExpressionError(f"non-finite constant {self.value!r}")
        object.__setattr__(self, "value", v)

    def variables(self) -> set[str]:
        return set()


@dataclass(frozen=True)
class Var(Expression):
    name: str
    pos: int = field(default=-1, compare=False, repr=False)

    def variables(self) -> set[str]:
        return {self.name}


@dataclass(frozen=True)
class Unary(Expression):
    op: str  # 'neg' or one of FUNCTIONS
    arg: Expression
    pos: int = field(default=-1, compare=False, repr=False)

    def variables(self) -> set[str]:
        return self.arg.variables()


@dataclass(frozen=True)
class Binary(Expression):
    op: str  # '+', '-', '*', '/'
    left: Expression
    right: Expression
    pos: int = field(default=-1, compare=False, repr=False)

    def variables(self) -> set[str]:
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True)
class Power(Expression):
    base: Expression
    exponent: int
    pos: int = field(default=-1, compare=False, repr=False)

    def __post_init__(self):
        if int(self.exponent) != self.exponent or self.exponent < 0:
            raise ExpressionError(f"exponent must be a non-negative integer, got {self.exponent!r}")
        object.__setattr__(self, "exponent", int(self.exponent))

    def variables(self) -> set[str]:
        return self.base.variables()


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            off = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {text[off]!r}", off, text)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Sequence[str] | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = None if variables is None else set(variables)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ExpressionSyntaxError(f"expected {value!r}, found {found}", pos, self.text)

    def parse(self) -> Expression:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {val!r}", pos, self.text)
        return node

    def expr(self) -> Expression:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, pos = self.take()
            node = Binary(op, node, self.term(), pos=pos)
        return node

    def term(self) -> Expression:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, pos = self.take()
            node = Binary(op, node, self.unary(), pos=pos)
        return node

    def unary(self) -> Expression:
        kind, val, pos = self.peek()
        if kind == "op" and val == "-":
            self.take()
            nk, nv, npos = self.peek()
            if nk == "num":
                # literal folding: "-2" is the constant -2, "-2^2" is -(2^2)
                atom = self.power()
                if isinstance(atom, Const):
                    return Const(-atom.value, pos=pos)
                return Unary("neg", atom, pos=pos)
            return Unary("neg", self.unary(), pos=pos)
        if kind == "op" and val == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            _, _, pos = self.take()
            kind, val, epos = self.take()
            paren = False
            if kind == "op" and val == "(":
                paren = True
                kind, val, epos = self.take()
            if kind == "op" and val == "-":
                raise ExpressionSyntaxError("negative exponent not allowed", epos, self.text)
            if kind != "num":
                raise ExpressionSyntaxError("exponent must be an integer literal", epos, self.text)
            if not re.fullmatch(r"\d+", val):
                raise ExpressionSyntaxError(f"non-integer exponent {val!r}", epos, self.text)
            if paren:
                self.expect(")")
            return Power(base, int(val), pos=pos)
        return base

    def atom(self) -> Expression:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val), pos=pos)
        if kind == "name":
            fname = _ALIASES.get(val, val)
            if fname in FUNCTIONS and self.peek()[1] == "(":
                self.take()
                arg = self.expr()
                self.expect(")")
                return Unary(fname, arg, pos=pos)
            if fname in FUNCTIONS:
                raise ExpressionSyntaxError(f"function {val!r} needs an argument", pos, self.text)
            if self.variables is not None and val not in self.variables:
                raise ExpressionSyntaxError(
                    f"unknown identifier {val!r} (declared: {', '.join(sorted(self.variables))})",
                    pos, self.text)
            return Var(val, pos=pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExpressionSyntaxError(f"unexpected {found}", pos, self.text)


def parse(text: str, variables: Sequence[str] | None = None) -> Expression:
    """Parse ``text`` into an expression tree.

    Parameters
    ----------
    text : str
        Source in the mini-grammar described in the module docstring.
    variables : sequence of str, optional
        Declared variable names.  When given, any other identifier is an error.

    Returns
    -------
    Expression

    Raises
    ------
    ExpressionSyntaxError
        On malformed input, unknown identifiers or non-integer exponents.
    """
    if not isinstance(text, str):
        raise ExpressionSyntaxError(f"expression must be a string, got {type(text).__name__}", 0)
    return _Parser(text, variables).parse()


# ---------------------------------------------------------------------------
# Printing and code generation
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(node: Expression) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return 3
    if isinstance(node, Const) and (node.value < 0 or (node.value == 0 and math.copysign(1, node.value) < 0)):
        return 3
    if isinstance(node, Power):
        return 4
    return 5


def _fmt_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v)) if not (v == 0 and math.copysign(1, v) < 0) else "-0"
    return repr(v)


def to_source(node: Expression) -> str:
    """Print ``node`` back into the mini-grammar with minimal parentheses.

    ``parse(to_source(e)) == e`` holds for every tree built by this module.
    """

    def wrap(child: Expression, min_prec: int) -> str:
        s = to_source(child)
        return f"({s})" if _prec(child) < min_prec else s

    if isinstance(node, Const):
        return _fmt_const(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            arg = node.arg
            # "-2" would fold into a constant; keep the negation node explicit
            if isinstance(arg, Const) and _prec(arg) == 5:
                return f"-({to_source(arg)})"
            if isinstance(arg, Power) and isinstance(arg.base, Const) and _prec(arg.base) == 5:
                return f"-({to_source(arg)})"
            return "-" + wrap(arg, 3)
        return f"{node.op}({to_source(node.arg)})"
    if isinstance(node, Binary):
        p = _PREC[node.op]
        return f"{wrap(node.left, p)}{node.op}{wrap(node.right, p + 1)}"
    if isinstance(node, Power):
        return f"{wrap(node.base, 5)}^{node.exponent}"
    raise TypeError(f"unknown node {node!r}")


_BACKENDS = {
    "math": {
        "exp": "math.exp", "ln": "math.log", "sin": "math.sin", "cos": "math.cos",
        "sqrt": "math.sqrt", "abs": "abs", "sign": "_sign",
    },
    "numpy": {
        "exp": "np.exp", "ln": "np.log", "sin": "np.sin", "cos": "np.cos",
        "sqrt": "np.sqrt", "abs": "np.abs", "sign": "np.sign",
    },
    "mpmath": {
        "exp": "mp.exp", "ln": "mp.log", "sin": "mp.sin", "cos": "mp.cos",
        "sqrt": "mp.sqrt", "abs": "abs", "sign": "mp.sign",
    },
}


def _sign(v: float) -> float:
    return (v > 0) - (v < 0)


def _codegen(node: Expression, fmap: Mapping[str, str]) -> str:
    if isinstance(node, Const):
        return f"({node.value!r})"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        inner = _codegen(node.arg, fmap)
        if node.op == "neg":
            return f"(-{inner})"
        return f"{fmap[node.op]}({inner})"
    if isinstance(node, Binary):
        return f"({_codegen(node.left, fmap)}{node.op}{_codegen(node.right, fmap)})"
    if isinstance(node, Power):
        return f"({_codegen(node.base, fmap)}**{node.exponent})"
    raise TypeError(f"unknown node {node!r}")


def _compile(node: Expression, variables: Sequence[str], backend: str) -> Callable:
    import mpmath

    src = f"lambda {', '.join(variables)}: {_codegen(node, _BACKENDS[backend])}"
    namespace = {"math": math, "np": np, "mp": mpmath, "_sign": _sign}
    return eval(compile(src, f"<expr:{backend}>", "eval"), namespace)  # noqa: S307


# ---------------------------------------------------------------------------
# ScalarField
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarField:
    """An expression together with its ordered argument list.

    Calling the field evaluates it with positional arguments in the order of
    ``variables`` using compiled double-precision code.
    """

    expression: Expression
    variables: tuple[str, ...]
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        if len(set(self.variables)) != len(self.variables):
            raise ExpressionError(f"duplicate variable names in {self.variables}")
        unknown = self.expression.variables() - set(self.variables)
        if unknown:
            raise ExpressionError(
                f"expression uses undeclared variables {sorted(unknown)}; declared {list(self.variables)}")

    @classmethod
    def from_text(cls, text: str, variables: Sequence[str], description: str = "") -> "ScalarField":
        return cls(parse(text, variables), tuple(variables), description or text)

    @classmethod
    def constant(cls, value: float, variables: Sequence[str]) -> "ScalarField":
        return cls(Const(value), tuple(variables), _fmt_const(float(value)))

    def __reduce__(self):
        return (ScalarField, (self.expression, self.variables, self.description))

    @property
    def source(self) -> str:
        return to_source(self.expression)

    @property
    def is_constant(self) -> bool:
        return isinstance(self.expression, Const)

    @cached_property
    def _fn_math(self) -> Callable:
        return _compile(self.expression, self.variables, "math")

    @cached_property
    def _fn_numpy(self) -> Callable:
        return _compile(self.expression, self.variables, "numpy")

    @cached_property
    def _fn_mpmath(self) -> Callable:
        return _compile(self.expression, self.variables, "mpmath")

    def __call__(self, *args: float) -> float:
        return self._fn_math(*args)

    def vectorized(self, *arrays) -> np.ndarray:
        """Evaluate on broadcastable numpy arrays; the result has the broadcast shape."""
        arrays = [np.asarray(a, dtype=float) for a in arrays]
        shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
        with np.errstate(all="ignore"):
            out = self._fn_numpy(*arrays)
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    def mp(self, *args):
        """Evaluate with mpmath at the current working precision."""
        return self._fn_mpmath(*args)

    def diff(self, var: str) -> "ScalarField":
        return differentiate(self, var)


def evaluate(f: ScalarField, bindings: Mapping[str, float]) -> float:
    """Evaluate ``f`` with named bindings, reporting domain errors with node offsets.

    Raises
    ------
    ExpressionError
        If a variable is unbound.
    ExpressionDomainError
        On division by zero, ``ln``/``sqrt`` outside their domain, or overflow.
    """
    missing = [v for v in f.variables if v not in bindings]
    if missing:
        raise ExpressionError(f"unbound variable(s): {', '.join(missing)}")
    env = {k: float(bindings[k]) for k in f.variables}
    return _eval_node(f.expression, env)


def _eval_node(node: Expression, env: Mapping[str, float]) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Unary):
        v = _eval_node(node.arg, env)
        op = node.op
        if op == "neg":
            return -v
        if op == "ln":
            if v <= 0:
                raise ExpressionDomainError(f"ln of non-positive value {v!r}", node.pos)
            return math.log(v)
        if op == "sqrt":
            if v < 0:
                raise ExpressionDomainError(f"sqrt of negative value {v!r}", node.pos)
            return math.sqrt(v)
        if op == "exp":
            try:
                return math.exp(v)
            except OverflowError:
                raise ExpressionDomainError(f"exp overflow at argument {v!r}", node.pos) from None
        if op == "sin":
            return math.sin(v)
        if op == "cos":
            return math.cos(v)
        if op == "abs":
            return abs(v)
        if op == "sign":
            return float(_sign(v))
        raise ExpressionError(f"unknown function {op}")
    if isinstance(node, Binary):
        a = _eval_node(node.left, env)
        b = _eval_node(node.right, env)
        if node.op == "+":
            r = a + b
        elif node.op == "-":
            r = a - b
        elif node.op == "*":
            r = a * b
        else:
            if b == 0:
                raise ExpressionDomainError("division by zero", node.pos)
            r = a / b
        if not math.isfinite(r):
            raise ExpressionDomainError(f"non-finite result of {node.op!r}", node.pos)
        return r
    if isinstance(node, Power):
        b = _eval_node(node.base, env)
        try:
            return float(b ** node.exponent)
        except OverflowError:
            raise ExpressionDomainError("power overflow", node.pos) from None
    raise TypeError(f"unknown node {node!r}")


# ---------------------------------------------------------------------------
# Symbolic differentiation
# ---------------------------------------------------------------------------

_ZERO = Const(0.0)
_ONE = Const(1.0)


def _is_const(n: Expression, v: float | None = None) -> bool:
    return isinstance(n, Const) and (v is None or n.value == v)


def _neg(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    if isinstance(a, Binary) and a.op in ("*", "/") and isinstance(a.left, Const):
        return Binary(a.op, Const(-a.left.value), a.right)
    return Unary("neg", a)


def _add(a: Expression, b: Expression) -> Expression:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(b, Unary) and b.op == "neg":
        return Binary("-", a, b.arg)
    return Binary("+", a, b)


def _sub(a: Expression, b: Expression) -> Expression:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    return Binary("-", a, b)


def _mul(a: Expression, b: Expression) -> Expression:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return _neg(b)
    if _is_const(b, -1.0):
        return _neg(a)
    if _is_const(b) and not _is_const(a):
        a, b = b, a
    if _is_const(a) and isinstance(b, Binary) and b.op == "*" and _is_const(b.left):
        return _mul(Const(a.value * b.left.value), b.right)
    return Binary("*", a, b)


def _div(a: Expression, b: Expression) -> Expression:
    if _is_const(a, 0.0):
        return _ZERO
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b) and b.value != 0:
        return Const(a.value / b.value)
    if isinstance(a, Unary) and a.op == "neg":
        return _neg(_div(a.arg, b))
    return Binary("/", a, b)


def _pow(a: Expression, k: int) -> Expression:
    if k == 0:
        return _ONE
    if k == 1:
        return a
    if _is_const(a):
        return Const(a.value ** k)
    return Power(a, k)


def _d(node: Expression, var: str) -> Expression:
    if isinstance(node, Const):
        return _ZERO
    if isinstance(node, Var):
        return _ONE if node.name == var else _ZERO
    if var not in node.variables():
        return _ZERO
    if isinstance(node, Unary):
        u = node.arg
        du = _d(u, var)
        op = node.op
        if op == "neg":
            return _neg(du)
        if op == "exp":
            return _mul(du, node) if not _is_const(du, 1.0) else node
        if op == "ln":
            return _div(du, u)
        if op == "sin":
            return _mul(du, Unary("cos", u))
        if op == "cos":
            return _neg(_mul(du, Unary("sin", u)))
        if op == "sqrt":
            return _div(du, _mul(Const(2.0), node))
        if op == "abs":
            # subgradient choice: sign(0) = 0
            return _mul(du, Unary("sign", u))
        if op == "sign":
            return _ZERO
        raise ExpressionError(f"cannot differentiate {op}")
    if isinstance(node, Binary):
        a, b = node.left, node.right
        da, db = _d(a, var), _d(b, var)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        # quotient rule, with the constant-numerator shortcut
        if _is_const(da, 0.0):
            return _div(_neg(_mul(a, db)), _pow(b, 2))
        return _div(_sub(_mul(da, b), _mul(a, db)), _pow(b, 2))
    if isinstance(node, Power):
        k = node.exponent
        du = _d(node.base, var)
        return _mul(_mul(Const(float(k)), _pow(node.base, k - 1)), du)
    raise TypeError(f"unknown node {node!r}")


def differentiate(f: ScalarField, var: str) -> ScalarField:
    """Exact symbolic partial derivative of ``f`` with respect to ``var``.

    The result keeps the argument list of ``f``.  ``abs`` differentiates to
    ``sign(u)*u'`` which is 0 at ``u = 0`` (subgradient choice).
    """
    if var not in f.variables:
        raise ExpressionError(f"{var!r} is not a variable of this field ({list(f.variables)})")
    expr = _d(f.expression, var)
    return ScalarField(expr, f.variables, f"d({f.description})/d{var}")


# ---------------------------------------------------------------------------
# Box extrema
# ---------------------------------------------------------------------------

_MODES = ("max_abs", "min_abs", "max", "min")
_MAX_POINTS_PER_CHUNK = 2_000_000


def extremum_on_box(f: ScalarField, box: Mapping[str, tuple[float, float]], mode: str = "max_abs",
                    grid: int = 21, safety: float = 1.0) -> float:
    """Grid-based extremum of ``f`` over an axis-aligned box.

    Parameters
    ----------
    f : ScalarField
    box : mapping of variable name to ``(lo, hi)``
        Every variable of ``f`` must appear.  Degenerate intervals are sampled once.
    mode : {'max_abs', 'min_abs', 'max', 'min'}
    grid : int
        Points per non-degenerate axis (>= 3).
    safety : float
        Multiplicative margin >= 1 applied in the conservative direction:
        maxima are inflated, minima deflated.

    Returns
    -------
    float

    Raises
    ------
    ExpressionDomainError
        If a non-finite value appears on the grid.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    if grid < 3:
        raise ValueError("grid must be >= 3 points per axis")
    if safety < 1:
        raise ValueError("safety must be >= 1")
    missing = [v for v in f.variables if v not in box]
    if missing:
        raise ValueError(f"box lacks intervals for {missing}")
    axes = []
    for v in f.variables:
        lo, hi = (float(b) for b in box[v])
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise ValueError(f"invalid interval for {v}: {box[v]}")
        axes.append(np.array([lo]) if hi == lo else np.linspace(lo, hi, grid))

    best = None
    reduce_max = mode in ("max_abs", "max")
    # chunk along the first axis so huge grids stay memory-bounded
    sizes = [len(a) for a in axes]
    rest = int(np.prod(sizes[1:])) if len(sizes) > 1 else 1
    step = max(1, _MAX_POINTS_PER_CHUNK // max(rest, 1))
    first = axes[0] if axes else np.array([0.0])
    for start in range(0, len(first), step):
        chunk = [first[start:start + step]] + axes[1:] if axes else []
        mesh = [a.reshape([-1 if i == j else 1 for j in range(len(chunk))]) for i, a in enumerate(chunk)]
        vals = f.vectorized(*mesh) if mesh else np.asarray(f())
        if not np.all(np.isfinite(vals)):
            raise ExpressionDomainError(f"non-finite value of {f.description!r} on the grid")
        if mode.endswith("abs"):
            vals = np.abs(vals)
        v = float(vals.max() if reduce_max else vals.min())
        best = v if best is None else (max(best, v) if reduce_max else min(best, v))

    if reduce_max:
        return best * safety if best >= 0 else best / safety
    return best / safety if best >= 0 else best * safety
