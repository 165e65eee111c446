"""Canonical rational normal form.

`normalize` rewrites an expression as a single quotient of two expanded
multivariate polynomials over the expression's *generators* (symbols,
derivative atoms, and opaque/elementary function applications), with

  * exact rational coefficients,
  * like terms collected under a graded-lexicographic monomial order over a
    global generator order,
  * the joint integer content removed,
  * common polynomial factors of numerator and denominator cancelled
    (multivariate GCD via a primitive pseudo-remainder sequence), and
  * the denominator's leading coefficient made positive.

The result is deterministic and idempotent: two expressions denoting the same
rational function normalize to identical trees (provided the GCD size guard
is not hit, which only very large polynomials reach).
"""

from __future__ import annotations

from fractions import Fraction
from math import gcd as _igcd
from typing import Sequence

from .errors import NonAffineError, ZeroDenominatorError
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
    mul,
    pow_,
    render,
)

# Above this many combined terms the num/den GCD step is skipped (the form is
# still deterministic, expanded, content- and sign-normalized).
GCD_TERM_LIMIT = 4000


def generator_key(g: Expression):
    if isinstance(g, Sym):
        return (0, g.name)
    if isinstance(g, DerivativeAtom):
        return (1, g.field, g.orders)
    if isinstance(g, Func):
        return (2, g.name, tuple(render(a) for a in g.args))
    raise TypeError(f"not a generator: {g!r}")


class Poly:
    """Sparse multivariate polynomial over an ordered generator tuple."""

    __slots__ = ("gens", "terms")

    def __init__(self, gens: tuple[Expression, ...], terms: dict[tuple[int, ...], Fraction]):
        self.gens = gens
        self.terms = terms

    def is_zero(self) -> bool:
        return not self.terms

    def is_const(self) -> bool:
        return not self.gens

    def const_value(self) -> Fraction:
        return self.terms.get((), Fraction(0))

    def __eq__(self, other) -> bool:
        return isinstance(other, Poly) and self.gens == other.gens and self.terms == other.terms

    def __hash__(self):
        return hash((self.gens, tuple(sorted(self.terms.items()))))

    def __repr__(self):
        return f"Poly({render(poly_to_expression(self))})"


def _make(gens: tuple[Expression, ...], terms: dict[tuple[int, ...], Fraction]) -> Poly:
    """Drop zero coefficients and unused generators."""
    terms = {m: c for m, c in terms.items() if c != 0}
    if not terms:
        return Poly((), {})
    used = [i for i in range(len(gens)) if any(m[i] for m in terms)]
    if len(used) != len(gens):
        gens = tuple(gens[i] for i in used)
        terms = {tuple(m[i] for i in used): c for m, c in terms.items()}
    return Poly(gens, terms)


P_ZERO = Poly((), {})
P_ONE = Poly((), {(): Fraction(1)})


def poly_const(c: Fraction | int) -> Poly:
    c = Fraction(c)
    return Poly((), {(): c}) if c != 0 else P_ZERO


def poly_gen(g: Expression) -> Poly:
    return Poly((g,), {(1,): Fraction(1)})


def _align(a: Poly, b: Poly):
    """Remap both polynomials onto the union of their generators."""
    if a.gens == b.gens:
        return a.gens, a.terms, b.terms
    union = sorted(set(a.gens) | set(b.gens), key=generator_key)
    gens = tuple(union)
    idx = {g: i for i, g in enumerate(gens)}

    def remap(p: Poly):
        pos = [idx[g] for g in p.gens]
        out: dict[tuple[int, ...], Fraction] = {}
        for m, c in p.terms.items():
            vec = [0] * len(gens)
            for i, e in zip(pos, m):
                vec[i] = e
            out[tuple(vec)] = c
        return out

    return gens, remap(a), remap(b)


def poly_add(a: Poly, b: Poly) -> Poly:
    gens, ta, tb = _align(a, b)
    out = dict(ta)
    for m, c in tb.items():
        s = out.get(m, Fraction(0)) + c
        if s:
            out[m] = s
        else:
            out.pop(m, None)
    return _make(gens, out)


def poly_neg(a: Poly) -> Poly:
    return Poly(a.gens, {m: -c for m, c in a.terms.items()})


def poly_sub(a: Poly, b: Poly) -> Poly:
    return poly_add(a, poly_neg(b))


def poly_mul(a: Poly, b: Poly) -> Poly:
    if a.is_zero() or b.is_zero():
        return P_ZERO
    if a.is_const():
        c = a.const_value()
        return _make(b.gens, {m: k * c for m, k in b.terms.items()})
    if b.is_const():
        c = b.const_value()
        return _make(a.gens, {m: k * c for m, k in a.terms.items()})
    gens, ta, tb = _align(a, b)
    out: dict[tuple[int, ...], Fraction] = {}
    for m1, c1 in ta.items():
        for m2, c2 in tb.items():
            m = tuple(x + y for x, y in zip(m1, m2))
            s = out.get(m, Fraction(0)) + c1 * c2
            if s:
                out[m] = s
            else:
                out.pop(m, None)
    return _make(gens, out)


def poly_pow(a: Poly, n: int) -> Poly:
    out = P_ONE
    base = a
    while n:
        if n & 1:
            out = poly_mul(out, base)
        base = poly_mul(base, base) if n > 1 else base
        n >>= 1
    return out


def _mono_key(m: tuple[int, ...]):
    return (sum(m), m)


def poly_leading(p: Poly) -> tuple[tuple[int, ...], Fraction]:
    m = max(p.terms, key=_mono_key)
    return m, p.terms[m]


def poly_to_expression(p: Poly) -> Expression:
    if p.is_zero():
        return ZERO
    parts = []
    for m in sorted(p.terms, key=_mono_key, reverse=True):
        c = p.terms[m]
        factors: list[Expression] = []
        for g, e in zip(p.gens, m):
            if e:
                factors.append(pow_(g, e) if e > 1 else g)
        parts.append(mul(Const(c), *factors))
    return add(*parts)


# ---------------------------------------------------------------------------
# integer content / primitive parts / multivariate gcd
# ---------------------------------------------------------------------------

def _denominator_lcm(p: Poly) -> int:
    out = 1
    for c in p.terms.values():
        d = c.denominator
        out = out * d // _igcd(out, d)
    return out


def _clear_denominators(p: Poly) -> Poly:
    lam = _denominator_lcm(p)
    if lam == 1:
        return p
    return Poly(p.gens, {m: c * lam for m, c in p.terms.items()})


def int_content(p: Poly) -> int:
    out = 0
    for c in p.terms.values():
        out = _igcd(out, abs(c.numerator))
    return out


def _scale(p: Poly, factor: Fraction) -> Poly:
    if factor == 1:
        return p
    return Poly(p.gens, {m: c * factor for m, c in p.terms.items()})


def _pos_primitive(p: Poly) -> Poly:
    """Integer-primitive form with positive leading coefficient."""
    if p.is_zero():
        return p
    p = _clear_denominators(p)
    c = int_content(p)
    if c > 1:
        p = _scale(p, Fraction(1, c))
    _, lead = poly_leading(p)
    if lead < 0:
        p = poly_neg(p)
    return p


def degree_in(p: Poly, g: Expression) -> int:
    if g not in p.gens:
        return 0
    i = p.gens.index(g)
    return max(m[i] for m in p.terms)


def _split_var(p: Poly, g: Expression) -> dict[int, Poly]:
    """View p as a univariate polynomial in g with Poly coefficients."""
    i = p.gens.index(g)
    rest = p.gens[:i] + p.gens[i + 1:]
    buckets: dict[int, dict[tuple[int, ...], Fraction]] = {}
    for m, c in p.terms.items():
        d = m[i]
        rm = m[:i] + m[i + 1:]
        buckets.setdefault(d, {})[rm] = c
    return {d: _make(rest, t) for d, t in buckets.items()}


def _join_var(coeffs: dict[int, Poly], g: Expression) -> Poly:
    out = P_ZERO
    gp = poly_gen(g)
    for d, c in coeffs.items():
        out = poly_add(out, poly_mul(c, poly_pow(gp, d)))
    return out


def divexact(a: Poly, b: Poly) -> Poly:
    """Exact multivariate division; raises if the division does not come out even."""
    if b.is_zero():
        raise ZeroDivisionError("polynomial division by zero")
    if b.is_const():
        return _scale(a, 1 / b.const_value())
    gens, ta, tb = _align(a, b)
    rem = dict(ta)
    bl_m = max(tb, key=_mono_key)
    bl_c = tb[bl_m]
    quo: dict[tuple[int, ...], Fraction] = {}
    while rem:
        rl_m = max(rem, key=_mono_key)
        rl_c = rem[rl_m]
        qm = tuple(x - y for x, y in zip(rl_m, bl_m))
        if any(e < 0 for e in qm):
            raise ArithmeticError("inexact polynomial division")
        qc = rl_c / bl_c
        quo[qm] = quo.get(qm, Fraction(0)) + qc
        for m, c in tb.items():
            mm = tuple(x + y for x, y in zip(qm, m))
            s = rem.get(mm, Fraction(0)) - qc * c
            if s:
                rem[mm] = s
            else:
                rem.pop(mm, None)
    return _make(gens, quo)


def _prem(f: Poly, g: Poly, v: Expression) -> Poly:
    """Pseudo-remainder of f by g with respect to v."""
    fc = _split_var(f, v) if v in f.gens else {0: f}
    gc = _split_var(g, v)
    dg = max(gc)
    lc_g = gc[dg]
    r = dict(fc)
    steps = max(r) - dg + 1 if r else 0
    e = steps
    while r and max(r) >= dg:
        dr = max(r)
        lc_r = r[dr]
        # r = r*lc_g - g * lc_r * v^(dr-dg)
        new: dict[int, Poly] = {}
        for d, c in r.items():
            new[d] = poly_mul(c, lc_g)
        for d, c in gc.items():
            dd = d + dr - dg
            term = poly_mul(c, lc_r)
            new[dd] = poly_sub(new.get(dd, P_ZERO), term)
        r = {d: c for d, c in new.items() if not c.is_zero()}
        e -= 1
    out = _join_var(r, v) if r else P_ZERO
    if e > 0 and not out.is_zero():
        out = poly_mul(out, poly_pow(lc_g, e))
    return out


def _content_in(p: Poly, v: Expression) -> Poly:
    coeffs = list(_split_var(p, v).values())
    out = P_ZERO
    for c in coeffs:
        out = poly_gcd(out, c)
        if out.is_const() and not out.is_zero():
            break
    return out


def poly_gcd(a: Poly, b: Poly) -> Poly:
    """Primitive positive GCD of two polynomials (integer content 1)."""
    a = _clear_denominators(a)
    b = _clear_denominators(b)
    if a.is_zero():
        return _pos_primitive(b)
    if b.is_zero():
        return _pos_primitive(a)
    if a.is_const() or b.is_const():
        return P_ONE
    shared = sorted(set(a.gens) | set(b.gens), key=generator_key)
    v = shared[0]
    da, db = degree_in(a, v), degree_in(b, v)
    if da == 0:
        return poly_gcd(a, _content_in(b, v))
    if db == 0:
        return poly_gcd(_content_in(a, v), b)
    cont_a = _content_in(a, v)
    cont_b = _content_in(b, v)
    pp_a = divexact(a, cont_a)
    pp_b = divexact(b, cont_b)
    c = poly_gcd(cont_a, cont_b)
    f, g = (pp_a, pp_b) if da >= db else (pp_b, pp_a)
    while True:
        r = _prem(f, g, v)
        if r.is_zero():
            core = divexact(g, _content_in(g, v)) if degree_in(g, v) > 0 else P_ONE
            break
        if degree_in(r, v) == 0:
            core = P_ONE
            break
        f, g = g, divexact(r, _content_in(r, v))
    return _pos_primitive(poly_mul(c, core))


# ---------------------------------------------------------------------------
# rational forms
# ---------------------------------------------------------------------------

class RatForm:
    __slots__ = ("num", "den")

    def __init__(self, num: Poly, den: Poly):
        if den.is_zero():
            raise ZeroDenominatorError("denominator normalizes to zero")
        self.num = num
        self.den = den

    def __repr__(self):
        return f"RatForm({poly_to_expression(self.num)!r} / {poly_to_expression(self.den)!r})"


RF_ZERO = RatForm(P_ZERO, P_ONE)


def rf_const(c) -> RatForm:
    return RatForm(poly_const(c), P_ONE)


def rf_add(a: RatForm, b: RatForm) -> RatForm:
    if a.den == b.den:
        return RatForm(poly_add(a.num, b.num), a.den)
    return RatForm(
        poly_add(poly_mul(a.num, b.den), poly_mul(b.num, a.den)),
        poly_mul(a.den, b.den),
    )


def rf_neg(a: RatForm) -> RatForm:
    return RatForm(poly_neg(a.num), a.den)


def rf_mul(a: RatForm, b: RatForm) -> RatForm:
    # cheap cross-cancellation of syntactically equal num/den pairs
    if a.num == b.den and not a.num.is_zero():
        return RatForm(b.num, a.den)
    if b.num == a.den and not b.num.is_zero():
        return RatForm(a.num, b.den)
    return RatForm(poly_mul(a.num, b.num), poly_mul(a.den, b.den))


def rf_div(a: RatForm, b: RatForm) -> RatForm:
    if b.num.is_zero():
        raise ZeroDenominatorError("denominator normalizes to zero")
    if a.den == b.den:
        return RatForm(a.num, b.num)
    return RatForm(poly_mul(a.num, b.den), poly_mul(a.den, b.num))


def rf_pow(a: RatForm, n: int) -> RatForm:
    if n == 0:
        return rf_const(1)
    if n < 0:
        return rf_div(rf_const(1), rf_pow(a, -n))
    return RatForm(poly_pow(a.num, n), poly_pow(a.den, n))


def rf_reduce(a: RatForm) -> RatForm:
    """Canonicalize: cleared, content-free, GCD-reduced, sign-fixed."""
    num, den = a.num, a.den
    if num.is_zero():
        return RatForm(P_ZERO, P_ONE)
    lam = _denominator_lcm(num) * _denominator_lcm(den)
    if lam != 1:
        num = _scale(num, lam)
        den = _scale(den, lam)
        num = _clear_denominators(num) if _denominator_lcm(num) != 1 else num
        den = _clear_denominators(den) if _denominator_lcm(den) != 1 else den
    c = _igcd(int_content(num), int_content(den))
    if c > 1:
        num = _scale(num, Fraction(1, c))
        den = _scale(den, Fraction(1, c))
    if not den.is_const() and len(num.terms) + len(den.terms) <= GCD_TERM_LIMIT:
        g = poly_gcd(num, den)
        if not (g.is_const() or g.is_zero()):
            num = divexact(num, g)
            den = divexact(den, g)
    if den.is_const():
        num = _scale(num, 1 / den.const_value())
        den = P_ONE
    else:
        _, lead = poly_leading(den)
        if lead < 0:
            num = poly_neg(num)
            den = poly_neg(den)
    return RatForm(num, den)


def rf_to_expression(a: RatForm) -> Expression:
    num = poly_to_expression(a.num)
    if a.den == P_ONE:
        return num
    if a.num.is_zero():
        return ZERO
    return Div(num, poly_to_expression(a.den))


def to_ratform(e: Expression) -> RatForm:
    if isinstance(e, Const):
        return rf_const(e.value)
    if isinstance(e, (Sym, DerivativeAtom)):
        return RatForm(poly_gen(e), P_ONE)
    if isinstance(e, Func):
        canon = Func(e.name, tuple(normalize(a) for a in e.args))
        return RatForm(poly_gen(canon), P_ONE)
    if isinstance(e, Add):
        out = RF_ZERO
        for t in e.terms:
            out = rf_add(out, to_ratform(t))
        return out
    if isinstance(e, Mul):
        out = rf_const(1)
        for f in e.factors:
            out = rf_mul(out, to_ratform(f))
        return out
    if isinstance(e, Div):
        return rf_div(to_ratform(e.num), to_ratform(e.den))
    if isinstance(e, Pow):
        return rf_pow(to_ratform(e.base), e.exponent)
    raise TypeError(f"unknown node {e!r}")


def normalize(e: Expression) -> Expression:
    """Canonical rational normal form of ``e`` (idempotent)."""
    return rf_to_expression(rf_reduce(to_ratform(e)))


def is_zero_expr(e: Expression) -> bool:
    return normalize(e) == ZERO


def equivalent(a: Expression, b: Expression) -> bool:
    """Exact rational-function equality via cross multiplication."""
    ra = rf_reduce(to_ratform(a))
    rb = rf_reduce(to_ratform(b))
    return poly_sub(poly_mul(ra.num, rb.den), poly_mul(rb.num, ra.den)).is_zero()


# ---------------------------------------------------------------------------
# affine structure over derivative atoms
# ---------------------------------------------------------------------------

def affine_poly_parts(
    e: Expression, unknowns: Sequence[DerivativeAtom]
) -> tuple[list[Poly], Poly, Poly]:
    """Split a denominator-cleared equation into affine pieces.

    Returns (coefficient polys per unknown, constant poly, cleared denominator).
    Raises NonAffineError if ``e`` is not affine in the unknown atoms or a
    denominator depends on them.
    """
    rf = rf_reduce(to_ratform(e))
    unknown_set = set(unknowns)
    if any(g in unknown_set for g in rf.den.gens):
        raise NonAffineError(
            f"denominator depends on unknowns: {render(poly_to_expression(rf.den))}"
        )
    idx = {g: i for i, g in enumerate(rf.num.gens)}
    positions = [idx.get(u) for u in unknowns]
    coeff_terms: list[dict[tuple[int, ...], Fraction]] = [{} for _ in unknowns]
    const_terms: dict[tuple[int, ...], Fraction] = {}
    for m, c in rf.num.terms.items():
        tot = sum(m[p] for p in positions if p is not None)
        if tot == 0:
            const_terms[m] = c
        elif tot == 1:
            for k, p in enumerate(positions):
                if p is not None and m[p] == 1:
                    mm = tuple(x if i != p else 0 for i, x in enumerate(m))
                    coeff_terms[k][mm] = c
                    break
        else:
            raise NonAffineError(
                f"expression is not affine in {', '.join(render(u) for u in unknowns)}"
            )
    gens = rf.num.gens
    coeffs = [_make(gens, t) for t in coeff_terms]
    const = _make(gens, const_terms)
    return coeffs, const, rf.den


def affine_in(
    e: Expression, unknowns: Sequence[DerivativeAtom]
) -> tuple[list[Expression], Expression]:
    """Affine coefficients and constant part of ``e`` as reduced expressions."""
    coeffs, const, den = affine_poly_parts(e, unknowns)
    out = [rf_to_expression(rf_reduce(RatForm(c, den))) for c in coeffs]
    rest = rf_to_expression(rf_reduce(RatForm(const, den)))
    return out, rest
