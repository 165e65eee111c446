"""Differentiation and substitution on expression trees.

`differentiate` is a *total* derivative: every derivative atom of a field is
treated as a function of the field's coordinates, so differentiating in a
coordinate bumps the atom's multi-index.  When ``deps`` is given, fields only
respond to coordinates they are declared on; without it every field is
assumed to depend on every coordinate.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .errors import OpaqueDerivativeError, SelfReferenceError, UnboundSymbolError
from .expr import (
    Add,
    Const,
    DerivativeAtom,
    Div,
    Expression,
    Func,
    Mul,
    ONE,
    Pow,
    Sym,
    ZERO,
    add,
    atoms_of_field,
    derivative_atoms,
    div,
    mul,
    neg,
    pow_,
)
from . import ratform

Deps = Mapping[str, Sequence[str]]

_ELEMENTARY_DERIVATIVE = {
    "sin": lambda u: Func("cos", (u,)),
    "cos": lambda u: neg(Func("sin", (u,))),
    "exp": lambda u: Func("exp", (u,)),
    "ln": lambda u: div(ONE, u),
}


def differentiate(e: Expression, coord: str, deps: Deps | None = None) -> Expression:
    """Total derivative of ``e`` with respect to the coordinate ``coord``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Sym):
        return ONE if e.name == coord else ZERO
    if isinstance(e, DerivativeAtom):
        if deps is not None:
            if e.field not in deps:
                raise UnboundSymbolError(f"field '{e.field}' has no declared coordinates")
            if coord not in deps[e.field]:
                return ZERO
        return e.bump(coord)
    if isinstance(e, Add):
        return add(*(differentiate(t, coord, deps) for t in e.terms))
    if isinstance(e, Mul):
        parts = []
        factors = e.factors
        for i, f in enumerate(factors):
            df = differentiate(f, coord, deps)
            if df == ZERO:
                continue
            parts.append(mul(*factors[:i], df, *factors[i + 1:]))
        return add(*parts)
    if isinstance(e, Div):
        dn = differentiate(e.num, coord, deps)
        dd = differentiate(e.den, coord, deps)
        if dd == ZERO:
            return div(dn, e.den)
        return div(add(mul(dn, e.den), neg(mul(e.num, dd))), pow_(e.den, 2))
    if isinstance(e, Pow):
        db = differentiate(e.base, coord, deps)
        if db == ZERO:
            return ZERO
        return mul(e.exponent, pow_(e.base, e.exponent - 1), db)
    if isinstance(e, Func):
        darg = [differentiate(a, coord, deps) for a in e.args]
        rule = _ELEMENTARY_DERIVATIVE.get(e.name)
        if rule is not None:
            return mul(rule(e.args[0]), darg[0])
        if all(d == ZERO for d in darg):
            return ZERO
        raise OpaqueDerivativeError(
            f"cannot differentiate opaque function '{e.name}' with varying arguments"
        )
    raise TypeError(f"unknown node {e!r}")


def differentiate_multi(e: Expression, orders: Mapping[str, int], deps: Deps | None = None) -> Expression:
    """Apply d/d(coord) repeatedly per a multi-index (coordinate order is immaterial)."""
    out = e
    for coord, k in sorted(orders.items()):
        for _ in range(k):
            out = differentiate(out, coord, deps)
    return out


def subs_atoms(e: Expression, mapping: Mapping[DerivativeAtom, Expression]) -> Expression:
    """Simultaneously replace exact derivative atoms (no normalization)."""
    if not mapping:
        return e
    return _subs(e, mapping)


def _subs(e: Expression, mapping: Mapping[DerivativeAtom, Expression]) -> Expression:
    if isinstance(e, DerivativeAtom):
        return mapping.get(e, e)
    if isinstance(e, (Const, Sym)):
        return e
    if isinstance(e, Add):
        return add(*(_subs(t, mapping) for t in e.terms))
    if isinstance(e, Mul):
        return mul(*(_subs(f, mapping) for f in e.factors))
    if isinstance(e, Div):
        return div(_subs(e.num, mapping), _subs(e.den, mapping))
    if isinstance(e, Pow):
        return pow_(_subs(e.base, mapping), e.exponent)
    if isinstance(e, Func):
        return Func(e.name, tuple(_subs(a, mapping) for a in e.args))
    raise TypeError(f"unknown node {e!r}")


def substitute(e: Expression, target: DerivativeAtom, replacement: Expression) -> Expression:
    """Replace every exact occurrence of ``target`` and re-normalize.

    Atoms with different multi-indices (higher derivatives of the same field)
    are left untouched; eliminate those by substituting the appropriately
    differentiated replacement for each of them.
    """
    if target in derivative_atoms(replacement):
        raise SelfReferenceError(f"replacement for {target!r} contains the target itself")
    return ratform.normalize(subs_atoms(e, {target: replacement}))


def substitute_field(
    e: Expression,
    field: str,
    replacement: Expression,
    deps: Deps | None = None,
) -> Expression:
    """Eliminate a field entirely: every atom of ``field`` (any multi-index)
    is replaced by the matching total derivative of ``replacement``."""
    if any(a.field == field for a in derivative_atoms(replacement)):
        raise SelfReferenceError(f"replacement for field '{field}' contains the field itself")
    mapping: dict[DerivativeAtom, Expression] = {}
    for a in atoms_of_field(e, field):
        mapping[a] = differentiate_multi(replacement, dict(a.orders), deps)
    return ratform.normalize(subs_atoms(e, mapping))


def subs_symbol(e: Expression, name: str, value: Expression) -> Expression:
    """Replace a coordinate/parameter symbol by an expression (no normalization)."""
    if isinstance(e, Sym):
        return value if e.name == name else e
    if isinstance(e, (Const, DerivativeAtom)):
        return e
    if isinstance(e, Add):
        return add(*(subs_symbol(t, name, value) for t in e.terms))
    if isinstance(e, Mul):
        return mul(*(subs_symbol(f, name, value) for f in e.factors))
    if isinstance(e, Div):
        return div(subs_symbol(e.num, name, value), subs_symbol(e.den, name, value))
    if isinstance(e, Pow):
        return pow_(subs_symbol(e.base, name, value), e.exponent)
    if isinstance(e, Func):
        return Func(e.name, tuple(subs_symbol(a, name, value) for a in e.args))
    raise TypeError(f"unknown node {e!r}")


def diff_wrt_atom(e: Expression, target: DerivativeAtom) -> Expression:
    """Partial derivative of ``e`` with respect to one derivative atom,
    holding all other atoms and symbols fixed."""
    if isinstance(e, DerivativeAtom):
        return ONE if e == target else ZERO
    if isinstance(e, (Const, Sym)):
        return ZERO
    if isinstance(e, Add):
        return add(*(diff_wrt_atom(t, target) for t in e.terms))
    if isinstance(e, Mul):
        parts = []
        for i, f in enumerate(e.factors):
            df = diff_wrt_atom(f, target)
            if df == ZERO:
                continue
            parts.append(mul(*e.factors[:i], df, *e.factors[i + 1:]))
        return add(*parts)
    if isinstance(e, Div):
        dn = diff_wrt_atom(e.num, target)
        dd = diff_wrt_atom(e.den, target)
        if dd == ZERO:
            return div(dn, e.den)
        return div(add(mul(dn, e.den), neg(mul(e.num, dd))), pow_(e.den, 2))
    if isinstance(e, Pow):
        db = diff_wrt_atom(e.base, target)
        if db == ZERO:
            return ZERO
        return mul(e.exponent, pow_(e.base, e.exponent - 1), db)
    if isinstance(e, Func):
        rule = _ELEMENTARY_DERIVATIVE.get(e.name)
        dargs = [diff_wrt_atom(a, target) for a in e.args]
        if rule is not None:
            return mul(rule(e.args[0]), dargs[0])
        if all(d == ZERO for d in dargs):
            return ZERO
        raise OpaqueDerivativeError(
            f"cannot differentiate opaque function '{e.name}' with varying arguments"
        )
    raise TypeError(f"unknown node {e!r}")
