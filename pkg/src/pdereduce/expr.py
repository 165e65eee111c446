"""Immutable symbolic expression trees.

Nodes are frozen dataclasses; every operation in this package treats them as
values.  Coefficients are exact rationals (`fractions.Fraction`); floating
point enters only through :func:`evaluate`.

Elementary one-argument functions (sin, cos, exp, ln) carry differentiation
and evaluation rules.  Any other function name is *opaque*: it normalizes and
evaluates (through a caller-supplied callable) but cannot be differentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Union

from .errors import (
    DivisionByZeroAt,
    EvaluationError,
    UnboundSymbolError,
    ZeroDenominatorError,
)

NumberLike = Union[int, Fraction]

ELEMENTARY_FUNCTIONS = ("sin", "cos", "exp", "ln")

_MATH_IMPL: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "ln": math.log,
}


class Expression:
    """Base class for all symbolic nodes.  Immutable and hashable."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), neg(self))

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return render(self)


@dataclass(frozen=True, slots=True)
class Const(Expression):
    value: Fraction

    def __repr__(self):
        return f"Const({self.value})"


@dataclass(frozen=True, slots=True)
class Sym(Expression):
    """A coordinate or parameter symbol."""

    name: str

    def __repr__(self):
        return f"Sym({self.name})"


@dataclass(frozen=True, slots=True)
class DerivativeAtom(Expression):
    """A partial derivative of an unknown field, identified by a multi-index.

    ``orders`` is a tuple of (coordinate, positive order) pairs sorted by
    coordinate name, so mixed partials in any order compare equal.  The empty
    multi-index denotes the field value itself.
    """

    field: str
    orders: tuple[tuple[str, int], ...] = ()

    def order_in(self, coord: str) -> int:
        for c, k in self.orders:
            if c == coord:
                return k
        return 0

    def total_order(self) -> int:
        return sum(k for _, k in self.orders)

    def bump(self, coord: str, by: int = 1) -> "DerivativeAtom":
        d = dict(self.orders)
        d[coord] = d.get(coord, 0) + by
        return DerivativeAtom(self.field, _sorted_orders(d))

    def drop(self, coord: str, by: int = 1) -> "DerivativeAtom":
        d = dict(self.orders)
        if d.get(coord, 0) < by:
            raise ValueError(f"cannot drop {by} order(s) of {coord} from {self!r}")
        d[coord] -= by
        return DerivativeAtom(self.field, _sorted_orders(d))

    def __repr__(self):
        return f"DerivativeAtom({render(self)})"


@dataclass(frozen=True, slots=True)
class Add(Expression):
    terms: tuple[Expression, ...]


@dataclass(frozen=True, slots=True)
class Mul(Expression):
    factors: tuple[Expression, ...]


@dataclass(frozen=True, slots=True)
class Div(Expression):
    num: Expression
    den: Expression


@dataclass(frozen=True, slots=True)
class Pow(Expression):
    base: Expression
    exponent: int


@dataclass(frozen=True, slots=True)
class Func(Expression):
    """A named function application; elementary names have calculus rules."""

    name: str
    args: tuple[Expression, ...]


def _sorted_orders(d: Mapping[str, int]) -> tuple[tuple[str, int], ...]:
    return tuple(sorted((c, k) for c, k in d.items() if k > 0))


def _coerce(value) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, Fraction)):
        return Const(Fraction(value))
    raise TypeError(f"cannot interpret {value!r} as an expression")


# ---------------------------------------------------------------------------
# constructors (light local folding only; `normalize` does the real work)
# ---------------------------------------------------------------------------

ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


def const(value: NumberLike) -> Const:
    return Const(Fraction(value))


def sym(name: str) -> Sym:
    return Sym(name)


def atom(field: str, **orders: int) -> DerivativeAtom:
    """Build a derivative atom, e.g. ``atom("H", t=2, x=1)``."""
    return DerivativeAtom(field, _sorted_orders(orders))


def datom(field: str, orders: Mapping[str, int]) -> DerivativeAtom:
    return DerivativeAtom(field, _sorted_orders(orders))


def add(*terms) -> Expression:
    flat: list[Expression] = []
    constant = Fraction(0)
    for t in terms:
        t = _coerce(t)
        if isinstance(t, Add):
            flat.extend(t.terms)
        elif isinstance(t, Const):
            constant += t.value
        else:
            flat.append(t)
    # re-fold constants swallowed from nested Adds
    rest: list[Expression] = []
    for t in flat:
        if isinstance(t, Const):
            constant += t.value
        else:
            rest.append(t)
    if constant != 0:
        rest.append(Const(constant))
    if not rest:
        return ZERO
    if len(rest) == 1:
        return rest[0]
    return Add(tuple(rest))


def mul(*factors) -> Expression:
    flat: list[Expression] = []
    constant = Fraction(1)
    for f in factors:
        f = _coerce(f)
        if isinstance(f, Mul):
            flat.extend(f.factors)
        elif isinstance(f, Const):
            constant *= f.value
        else:
            flat.append(f)
    rest: list[Expression] = []
    for f in flat:
        if isinstance(f, Const):
            constant *= f.value
        else:
            rest.append(f)
    if constant == 0:
        return ZERO
    if not rest:
        return Const(constant)
    if constant != 1:
        rest.insert(0, Const(constant))
    if len(rest) == 1:
        return rest[0]
    return Mul(tuple(rest))


def div(num, den) -> Expression:
    num = _coerce(num)
    den = _coerce(den)
    if isinstance(den, Const):
        if den.value == 0:
            raise ZeroDenominatorError(f"quotient with zero denominator: {render(num)} / 0")
        if isinstance(num, Const):
            return Const(num.value / den.value)
        return mul(Const(1 / den.value), num)
    if isinstance(num, Const) and num.value == 0:
        return ZERO
    return Div(num, den)


def pow_(base, exponent: int) -> Expression:
    base = _coerce(base)
    if not isinstance(exponent, int):
        if isinstance(exponent, Fraction) and exponent.denominator == 1:
            exponent = int(exponent)
        else:
            raise TypeError("only integer powers are supported")
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        if exponent < 0 and base.value == 0:
            raise ZeroDenominatorError("0 raised to a negative power")
        return Const(base.value ** exponent)
    if exponent < 0:
        return div(ONE, pow_(base, -exponent))
    return Pow(base, exponent)


def neg(e) -> Expression:
    return mul(Const(Fraction(-1)), _coerce(e))


def sub(a, b) -> Expression:
    return add(a, neg(b))


def func(name: str, *args) -> Expression:
    return Func(name, tuple(_coerce(a) for a in args))


def sin(e) -> Expression:
    return func("sin", e)


def cos(e) -> Expression:
    return func("cos", e)


def exp(e) -> Expression:
    return func("exp", e)


def ln(e) -> Expression:
    return func("ln", e)


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------

def children(e: Expression) -> tuple[Expression, ...]:
    if isinstance(e, Add):
        return e.terms
    if isinstance(e, Mul):
        return e.factors
    if isinstance(e, Div):
        return (e.num, e.den)
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, Func):
        return e.args
    return ()


def walk(e: Expression) -> Iterable[Expression]:
    """Yield every node of the tree (pre-order)."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(children(node))


def free_symbols(e: Expression) -> set[str]:
    return {n.name for n in walk(e) if isinstance(n, Sym)}


def derivative_atoms(e: Expression) -> set[DerivativeAtom]:
    return {n for n in walk(e) if isinstance(n, DerivativeAtom)}


def atoms_of_field(e: Expression, field: str) -> set[DerivativeAtom]:
    return {a for a in derivative_atoms(e) if a.field == field}


def function_names(e: Expression) -> set[str]:
    return {n.name for n in walk(e) if isinstance(n, Func)}


def contains(e: Expression, target: Expression) -> bool:
    return any(node == target for node in walk(e))


# ---------------------------------------------------------------------------
# numeric evaluation
# ---------------------------------------------------------------------------

Binding = Mapping[Union[str, DerivativeAtom], float]


def evaluate(
    e: Expression,
    binding: Binding,
    functions: Mapping[str, Callable[..., float]] | None = None,
) -> float:
    """Evaluate with IEEE double semantics.

    ``binding`` maps symbol names and derivative atoms to scalars; callables
    for opaque function names go in ``functions``.
    """
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Sym):
        try:
            return float(binding[e.name])
        except KeyError:
            raise UnboundSymbolError(f"symbol '{e.name}' is not bound") from None
    if isinstance(e, DerivativeAtom):
        try:
            return float(binding[e])
        except KeyError:
            raise UnboundSymbolError(f"derivative atom '{render(e)}' is not bound") from None
    if isinstance(e, Add):
        return sum(evaluate(t, binding, functions) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= evaluate(f, binding, functions)
        return out
    if isinstance(e, Div):
        den = evaluate(e.den, binding, functions)
        if den == 0.0:
            raise DivisionByZeroAt(render(e.den))
        return evaluate(e.num, binding, functions) / den
    if isinstance(e, Pow):
        base = evaluate(e.base, binding, functions)
        if base == 0.0 and e.exponent < 0:
            raise DivisionByZeroAt(render(e.base))
        return base ** e.exponent
    if isinstance(e, Func):
        vals = [evaluate(a, binding, functions) for a in e.args]
        impl = _MATH_IMPL.get(e.name)
        if impl is not None:
            if len(vals) != 1:
                raise EvaluationError(f"{e.name} takes one argument")
            try:
                return impl(vals[0])
            except ValueError as exc:
                raise EvaluationError(f"{e.name}({vals[0]}): {exc}") from None
        if functions and e.name in functions:
            return float(functions[e.name](*vals))
        raise UnboundSymbolError(f"no callable bound for function '{e.name}'")
    raise TypeError(f"unknown node {e!r}")


# ---------------------------------------------------------------------------
# text rendering (round-trips through the DSL expression grammar)
# ---------------------------------------------------------------------------

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_POW = 3
_PREC_ATOM = 4


def render(e: Expression) -> str:
    return _render(e, 0)


def _render(e: Expression, parent_prec: int) -> str:
    text, prec = _render_prec(e)
    if prec < parent_prec:
        return f"({text})"
    return text


def _split_sign(e: Expression) -> tuple[int, Expression]:
    """Peel a leading minus sign off a term for pretty Add rendering."""
    if isinstance(e, Const) and e.value < 0:
        return -1, Const(-e.value)
    if isinstance(e, Mul) and e.factors and isinstance(e.factors[0], Const):
        c = e.factors[0].value
        if c < 0:
            rest = (Const(-c),) + e.factors[1:]
            if len(rest) == 1:
                return -1, rest[0]
            if rest[0] == ONE:
                return -1, rest[1] if len(rest) == 2 else Mul(rest[1:])
            return -1, Mul(rest)
    return 1, e


def _render_prec(e: Expression) -> tuple[str, int]:
    if isinstance(e, Const):
        v = e.value
        if v.denominator == 1:
            text = str(v.numerator)
        else:
            text = f"{v.numerator}/{v.denominator}"
        if v < 0:
            return text, _PREC_ADD  # force parens inside products/powers
        if v.denominator != 1:
            return text, _PREC_MUL
        return text, _PREC_ATOM
    if isinstance(e, Sym):
        return e.name, _PREC_ATOM
    if isinstance(e, DerivativeAtom):
        text = e.field
        for coord, k in sorted(e.orders, reverse=True):
            for _ in range(k):
                text = f"d{coord}({text})"
        return text, _PREC_ATOM
    if isinstance(e, Add):
        parts: list[str] = []
        for i, t in enumerate(e.terms):
            sign, body = _split_sign(t)
            rendered = _render(body, _PREC_ADD + 1 if False else _PREC_ADD)
            if i == 0:
                parts.append(rendered if sign > 0 else f"-{_render(body, _PREC_MUL)}")
            else:
                parts.append(f" + {rendered}" if sign > 0 else f" - {_render(body, _PREC_MUL)}")
        return "".join(parts), _PREC_ADD
    if isinstance(e, Mul):
        sign, body = _split_sign(e)
        if sign < 0:
            return f"-{_render(body, _PREC_MUL)}", _PREC_ADD
        parts = [_render(f, _PREC_MUL) for f in e.factors]
        return "*".join(parts), _PREC_MUL
    if isinstance(e, Div):
        num = _render(e.num, _PREC_MUL)
        den = _render(e.den, _PREC_POW)
        return f"{num}/{den}", _PREC_MUL
    if isinstance(e, Pow):
        base = _render(e.base, _PREC_ATOM)
        return f"{base}^{e.exponent}", _PREC_POW
    if isinstance(e, Func):
        args = ", ".join(_render(a, 0) for a in e.args)
        return f"{e.name}({args})", _PREC_ATOM
    raise TypeError(f"unknown node {e!r}")
