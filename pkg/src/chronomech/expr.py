"""
Scalar expressions over named coordinates.

Expressions are parsed from an infix grammar (``^`` for powers, function-call
syntax for ``sin cos exp log sqrt abs``), evaluated in IEEE doubles and
differentiated exactly.  No algebraic simplification is attempted beyond
constant folding and the trivial identities ``0 + a``, ``1 * a``, ``a ^ 1``.

Evaluation goes through a small code generator: every node is emitted once as
a temporary in a straight-line Python function, so shared subtrees (which
differentiation produces in abundance) are computed a single time.
"""

from __future__ import annotations

import math
import re
from typing import Callable, Iterable, Mapping, Sequence

__all__ = [
    "Expression",
    "ExpressionError",
    "ExpressionSyntaxError",
    "UnknownSymbolError",
    "DomainError",
    "MissingBindingError",
    "parse",
    "evaluate",
    "partial",
    "const",
    "symbol",
    "as_expression",
    "FUNCTIONS",
]


class ExpressionError(Exception):
    """Base class of all expression errors."""


class ExpressionSyntaxError(ExpressionError, ValueError):
    """Malformed expression text; ``offset`` is the 0-based character position."""

    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


class UnknownSymbolError(ExpressionError, ValueError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown symbol {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class DomainError(ExpressionError, ArithmeticError):
    """Evaluation hit an analytic singularity (division by 0, log of x <= 0, ...)."""


class MissingBindingError(ExpressionError, KeyError):
    pass


# runtime helpers used by generated code ------------------------------------


def _div(a: float, b: float) -> float:
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


def _pow(a: float, b: float) -> float:
    if a < 0.0 and b != int(b):
        raise DomainError(f"non-integer power {b!r} of negative base {a!r}")
    if a == 0.0 and b < 0.0:
        raise DomainError("negative power of zero")
    try:
        return a**b
    except OverflowError as exc:
        raise DomainError(str(exc)) from None


def _log(a: float) -> float:
    if a <= 0.0:
        raise DomainError(f"log of non-positive value {a!r}")
    return math.log(a)


def _sqrt(a: float) -> float:
    if a < 0.0:
        raise DomainError(f"sqrt of negative value {a!r}")
    return math.sqrt(a)


def _exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError as exc:
        raise DomainError(str(exc)) from None


def _sign(a: float) -> float:
    return (a > 0.0) - (a < 0.0)


_RUNTIME = {
    "_div": _div,
    "_pow": _pow,
    "_log": _log,
    "_sqrt": _sqrt,
    "_exp": _exp,
    "_sign": _sign,
    "_sin": math.sin,
    "_cos": math.cos,
    "_abs": abs,
}

#: function name -> runtime helper used in generated code
FUNCTIONS = {
    "sin": "_sin",
    "cos": "_cos",
    "exp": "_exp",
    "log": "_log",
    "sqrt": "_sqrt",
    "abs": "_abs",
    "sign": "_sign",
}

_CONSTANTS = {"pi": math.pi, "e": math.e}


# nodes ---------------------------------------------------------------------


class Expression:
    """Immutable expression tree node.

    Build expressions with :func:`parse` or by combining nodes with the usual
    arithmetic operators (``+ - * / **``); plain numbers are promoted.
    """

    __slots__ = ("_symbols", "_fn", "_fn_names", "_dcache", "__weakref__")

    def __init__(self) -> None:
        self._symbols = None
        self._fn = None
        self._fn_names = None
        self._dcache = None

    # structure -------------------------------------------------------------
    def children(self) -> tuple[Expression, ...]:
        return ()

    @property
    def symbols(self) -> frozenset[str]:
        """Names of all coordinate symbols occurring in the expression."""
        if self._symbols is None:
            out: set[str] = set()
            seen: set[int] = set()
            stack: list[Expression] = [self]
            while stack:
                node = stack.pop()
                if id(node) in seen:
                    continue
                seen.add(id(node))
                if isinstance(node, Symbol):
                    out.add(node.name)
                stack.extend(node.children())
            self._symbols = frozenset(out)
        return self._symbols

    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0.0

    def is_one(self) -> bool:
        return isinstance(self, Const) and self.value == 1.0

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, as_expression(other))

    def __radd__(self, other):
        return add(as_expression(other), self)

    def __sub__(self, other):
        return sub(self, as_expression(other))

    def __rsub__(self, other):
        return sub(as_expression(other), self)

    def __mul__(self, other):
        return mul(self, as_expression(other))

    def __rmul__(self, other):
        return mul(as_expression(other), self)

    def __truediv__(self, other):
        return div(self, as_expression(other))

    def __rtruediv__(self, other):
        return div(as_expression(other), self)

    def __pow__(self, other):
        return power(self, as_expression(other))

    def __rpow__(self, other):
        return power(as_expression(other), self)

    def __neg__(self):
        return neg(self)

    def __pos__(self):
        return self

    # evaluation ------------------------------------------------------------
    def compile(self, names: Sequence[str]) -> Callable[..., float]:
        """Return ``f(*values)`` evaluating the expression with positional
        arguments bound to ``names``."""
        names = tuple(names)
        missing = self.symbols - set(names)
        if missing:
            raise MissingBindingError(f"no binding for {sorted(missing)}")
        return _codegen([self], names, single=True)

    def evaluate(self, binding: Mapping[str, float]) -> float:
        """Evaluate at a point given as a ``name -> value`` mapping."""
        if self._fn is None:
            self._fn_names = tuple(sorted(self.symbols))
            self._fn = _codegen([self], self._fn_names, single=True)
        try:
            args = [float(binding[name]) for name in self._fn_names]
        except KeyError as exc:
            raise MissingBindingError(f"no binding for {exc.args[0]!r}") from None
        return self._fn(*args)

    def __call__(self, **binding: float) -> float:
        return self.evaluate(binding)

    # differentiation -------------------------------------------------------
    def partial(self, name: str) -> Expression:
        """Exact partial derivative with respect to the symbol ``name``."""
        if name not in self.symbols:
            return ZERO
        if self._dcache is None:
            self._dcache = {}
        cached = self._dcache.get(name)
        if cached is None:
            cached = _differentiate(self, name, {})
            self._dcache[name] = cached
        return cached

    # printing --------------------------------------------------------------
    _prec = 100

    def __str__(self) -> str:
        return _to_text(self)

    def __repr__(self) -> str:
        return f"Expression({_to_text(self)!r})"

    def count_nodes(self) -> int:
        seen: set[int] = set()
        stack: list[Expression] = [self]
        while stack:
            node = stack.pop()
            if id(node) not in seen:
                seen.add(id(node))
                stack.extend(node.children())
        return len(seen)


class Const(Expression):
    __slots__ = ("value",)

    def __init__(self, value: float):
        super().__init__()
        self.value = float(value)


class Symbol(Expression):
    __slots__ = ("name",)

    def __init__(self, name: str):
        super().__init__()
        self.name = name


class _Binary(Expression):
    __slots__ = ("a", "b")
    op = "?"

    def __init__(self, a: Expression, b: Expression):
        super().__init__()
        self.a = a
        self.b = b

    def children(self):
        return (self.a, self.b)


class Add(_Binary):
    __slots__ = ()
    op = "+"
    _prec = 10


class Sub(_Binary):
    __slots__ = ()
    op = "-"
    _prec = 10


class Mul(_Binary):
    __slots__ = ()
    op = "*"
    _prec = 20


class Div(_Binary):
    __slots__ = ()
    op = "/"
    _prec = 20


class Pow(_Binary):
    __slots__ = ()
    op = "^"
    _prec = 40


class Neg(Expression):
    __slots__ = ("a",)
    _prec = 30

    def __init__(self, a: Expression):
        super().__init__()
        self.a = a

    def children(self):
        return (self.a,)


class Call(Expression):
    __slots__ = ("func", "a")

    def __init__(self, func: str, a: Expression):
        super().__init__()
        if func not in FUNCTIONS:
            raise ValueError(f"unknown function {func!r}")
        self.func = func
        self.a = a

    def children(self):
        return (self.a,)


ZERO = Const(0.0)
ONE = Const(1.0)
TWO = Const(2.0)


def const(value: float) -> Expression:
    value = float(value)
    if value == 0.0:
        return ZERO
    if value == 1.0:
        return ONE
    return Const(value)


def symbol(name: str) -> Expression:
    return Symbol(name)


def as_expression(value) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float)):
        return const(value)
    raise TypeError(f"cannot convert {type(value).__name__} to Expression")


# folding constructors --------------------------------------------------------


def add(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return const(a.value + b.value)
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    if isinstance(b, Neg):
        return Sub(a, b.a)
    return Add(a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return const(a.value - b.value)
    if b.is_zero():
        return a
    if a.is_zero():
        return neg(b)
    if a is b:
        return ZERO
    if isinstance(b, Neg):
        return Add(a, b.a)
    return Sub(a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return const(a.value * b.value)
    if a.is_zero() or b.is_zero():
        return ZERO
    if a.is_one():
        return b
    if b.is_one():
        return a
    if isinstance(a, Const) and a.value == -1.0:
        return neg(b)
    if isinstance(b, Const) and b.value == -1.0:
        return neg(a)
    return Mul(a, b)


def div(a: Expression, b: Expression) -> Expression:
    if isinstance(b, Const):
        if b.value == 0.0:
            return Div(a, b)  # singular; reported at evaluation
        if isinstance(a, Const):
            return const(a.value / b.value)
        if b.is_one():
            return a
    if a.is_zero():
        return ZERO
    return Div(a, b)


def power(a: Expression, b: Expression) -> Expression:
    if isinstance(b, Const):
        if b.value == 0.0:
            return ONE
        if b.value == 1.0:
            return a
        if isinstance(a, Const):
            try:
                return const(_pow(a.value, b.value))
            except DomainError:
                pass
    return Pow(a, b)


def neg(a: Expression) -> Expression:
    if isinstance(a, Const):
        return const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def call(func: str, a: Expression) -> Expression:
    if isinstance(a, Const):
        try:
            return const(_RUNTIME[FUNCTIONS[func]](a.value))
        except (DomainError, ValueError, OverflowError):
            pass
    return Call(func, a)


# differentiation ---------------------------------------------------------------


def _differentiate(node: Expression, name: str, memo: dict[int, Expression]) -> Expression:
    key = id(node)
    if key in memo:
        return memo[key]
    if name not in node.symbols:
        out: Expression = ZERO
    elif isinstance(node, Symbol):
        out = ONE
    elif isinstance(node, Add):
        out = add(_differentiate(node.a, name, memo), _differentiate(node.b, name, memo))
    elif isinstance(node, Sub):
        out = sub(_differentiate(node.a, name, memo), _differentiate(node.b, name, memo))
    elif isinstance(node, Neg):
        out = neg(_differentiate(node.a, name, memo))
    elif isinstance(node, Mul):
        da = _differentiate(node.a, name, memo)
        db = _differentiate(node.b, name, memo)
        out = add(mul(da, node.b), mul(node.a, db))
    elif isinstance(node, Div):
        da = _differentiate(node.a, name, memo)
        db = _differentiate(node.b, name, memo)
        out = sub(div(da, node.b), div(mul(node.a, db), mul(node.b, node.b)))
    elif isinstance(node, Pow):
        base, expo = node.a, node.b
        if name not in expo.symbols:
            dbase = _differentiate(base, name, memo)
            out = mul(mul(expo, power(base, sub(expo, ONE))), dbase)
        else:
            dbase = _differentiate(base, name, memo)
            dexpo = _differentiate(expo, name, memo)
            inner = add(mul(dexpo, call("log", base)), div(mul(expo, dbase), base))
            out = mul(node, inner)
    elif isinstance(node, Call):
        da = _differentiate(node.a, name, memo)
        f, a = node.func, node.a
        if f == "sin":
            out = mul(call("cos", a), da)
        elif f == "cos":
            out = neg(mul(call("sin", a), da))
        elif f == "exp":
            out = mul(node, da)
        elif f == "log":
            out = div(da, a)
        elif f == "sqrt":
            out = div(da, mul(TWO, node))
        elif f == "abs":
            out = mul(call("sign", a), da)
        elif f == "sign":
            out = ZERO
        else:  # pragma: no cover - guarded by Call.__init__
            raise ValueError(f)
    else:  # pragma: no cover
        raise TypeError(type(node).__name__)
    memo[key] = out
    return out


# code generation -----------------------------------------------------------------


def _codegen(exprs: Sequence[Expression], names: Sequence[str], single: bool = False):
    """Emit one straight-line function evaluating all ``exprs``."""
    lines: list[str] = []
    index: dict[int, str] = {}
    consts: dict[str, float] = {}
    argmap = {name: f"a{i}" for i, name in enumerate(names)}

    def emit(root: Expression) -> str:
        # iterative post-order so deep trees do not hit the recursion limit
        stack: list[tuple[Expression, bool]] = [(root, False)]
        while stack:
            node, ready = stack.pop()
            if id(node) in index:
                continue
            if isinstance(node, Const):
                cname = f"c{len(consts)}"
                consts[cname] = node.value
                index[id(node)] = cname
                continue
            if isinstance(node, Symbol):
                index[id(node)] = argmap[node.name]
                continue
            if not ready:
                stack.append((node, True))
                for child in node.children():
                    if id(child) not in index:
                        stack.append((child, False))
                continue
            var = f"t{len(lines)}"
            if isinstance(node, (Add, Sub, Mul)):
                rhs = f"{index[id(node.a)]} {node.op} {index[id(node.b)]}"
            elif isinstance(node, Div):
                rhs = f"_div({index[id(node.a)]}, {index[id(node.b)]})"
            elif isinstance(node, Pow):
                rhs = f"_pow({index[id(node.a)]}, {index[id(node.b)]})"
            elif isinstance(node, Neg):
                rhs = f"-{index[id(node.a)]}"
            elif isinstance(node, Call):
                rhs = f"{FUNCTIONS[node.func]}({index[id(node.a)]})"
            else:  # pragma: no cover
                raise TypeError(type(node).__name__)
            lines.append(f"    {var} = {rhs}")
            index[id(node)] = var
        return index[id(root)]

    results = [emit(e) for e in exprs]
    args = ", ".join(argmap[n] for n in names)
    if single:
        ret = results[0]
    else:
        ret = "(" + ", ".join(results) + ("," if len(results) == 1 else "") + ")"
    source = f"def _f({args}):\n" + "\n".join(lines + [f"    return {ret}"]) + "\n"
    namespace = dict(_RUNTIME)
    namespace.update(consts)
    exec(compile(source, "<expression>", "exec"), namespace)
    raw = namespace["_f"]

    def fn(*values):
        try:
            return raw(*values)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            if isinstance(exc, ExpressionError):
                raise
            raise DomainError(str(exc)) from None

    fn.source = source  # type: ignore[attr-defined]
    return fn


def compile_many(exprs: Iterable[Expression], names: Sequence[str]) -> Callable[..., tuple]:
    """Compile several expressions into one function returning a tuple.

    Common subtrees between the expressions are evaluated once.
    """
    exprs = [as_expression(e) for e in exprs]
    names = tuple(names)
    used = frozenset().union(*(e.symbols for e in exprs)) if exprs else frozenset()
    missing = used - set(names)
    if missing:
        raise MissingBindingError(f"no binding for {sorted(missing)}")
    if not exprs:
        return lambda *values: ()
    return _codegen(exprs, names)


# printing -------------------------------------------------------------------------


def _fmt_const(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _to_text(root: Expression) -> str:
    memo: dict[int, str] = {}

    def wrap(child: Expression, threshold: int, strict: bool) -> str:
        text = memo[id(child)]
        prec = child._prec
        if isinstance(child, Const) and child.value < 0:
            prec = Neg._prec
        if prec < threshold or (strict and prec == threshold):
            return f"({text})"
        return text

    stack: list[tuple[Expression, bool]] = [(root, False)]
    while stack:
        node, ready = stack.pop()
        if id(node) in memo:
            continue
        if not ready and node.children():
            stack.append((node, True))
            stack.extend((c, False) for c in node.children() if id(c) not in memo)
            continue
        if isinstance(node, Const):
            text = _fmt_const(node.value)
        elif isinstance(node, Symbol):
            text = node.name
        elif isinstance(node, Call):
            text = f"{node.func}({memo[id(node.a)]})"
        elif isinstance(node, Neg):
            text = "-" + wrap(node.a, Neg._prec, False)
        elif isinstance(node, Pow):
            # right associative
            text = f"{wrap(node.a, Pow._prec, True)}^{wrap(node.b, Pow._prec, False)}"
        else:
            strict = isinstance(node, (Sub, Div))
            text = f"{wrap(node.a, node._prec, False)} {node.op} {wrap(node.b, node._prec, strict)}"
        memo[id(node)] = text
    return memo[id(root)]


# parsing --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


class _Parser:
    def __init__(self, text: str, coords: Sequence[str]):
        self.text = text
        self.coords = set(coords)
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
                raise ExpressionSyntaxError(f"unexpected character {text[start]!r}", start, text)
            kind = m.lastgroup
            value = m.group(kind)
            self.tokens.append((kind, value, m.start(kind)))
            pos = m.end()
        self.end = len(text)
        self.i = 0

    def peek(self):
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("end", "", self.end)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            what = "end of input" if kind == "end" else repr(val)
            raise ExpressionSyntaxError(f"expected {value!r}, found {what}", pos, self.text)

    def parse(self) -> Expression:
        if not self.tokens:
            raise ExpressionSyntaxError("empty expression", 0, self.text)
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected {val!r}", pos, self.text)
        return node

    def expr(self) -> Expression:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, _ = self.take()
            rhs = self.term()
            node = add(node, rhs) if op == "+" else sub(node, rhs)
        return node

    def term(self) -> Expression:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, _ = self.take()
            rhs = self.unary()
            node = mul(node, rhs) if op == "*" else div(node, rhs)
        return node

    def unary(self) -> Expression:
        kind, val, _ = self.peek()
        if kind == "op" and val in ("-", "+"):
            self.take()
            operand = self.unary()
            return neg(operand) if val == "-" else operand
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val in ("^", "**"):
            self.take()
            return power(base, self.unary())
        return base

    def atom(self) -> Expression:
        kind, val, pos = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in FUNCTIONS:
                    raise UnknownSymbolError(val, pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return call(val, arg)
            if val in self.coords:
                return Symbol(val)
            if val in _CONSTANTS:
                return const(_CONSTANTS[val])
            raise UnknownSymbolError(val, pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(val)
        raise ExpressionSyntaxError(f"unexpected {what}", pos, self.text)


def parse(text: str, coords: Sequence[str]) -> Expression:
    """Parse ``text`` into an :class:`Expression` over the names in ``coords``.

    >>> parse("r^2", ["r"]).evaluate({"r": 3.0})
    9.0
    """
    if not isinstance(text, str):
        raise TypeError("expression text must be a string")
    return _Parser(text, coords).parse()


def evaluate(e: Expression, binding: Mapping[str, float]) -> float:
    return e.evaluate(binding)


def partial(e: Expression, coord: str) -> Expression:
    return e.partial(coord)
