"""The dimension-reduction engine.

Given a system of p determined equations plus one over-determining equation,
all written on a surface with designated normal direction:

  1. eliminate normal derivatives from the extra equation (seed of the chain),
  2. repeatedly differentiate along the normal and eliminate again, p times,
  3. differentiate the l-th chain equation (p - l) times in time,
  4. read off the leading matrix of the highest time derivatives,
  5. if its determinant is not identically zero, solve for those derivatives
     (the evolution form of the surface system).

Also provided: the fixed-point closure loop (freeze the non-time coordinates
and mine ordinary-differential relations), the moving-surface augmentation,
and a stabilization probe for chains that close early.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field as dataclass_field
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import (
    IncompleteNormalFormError,
    NonAffineClosureError,
    NonAffineError,
    ReductionError,
    SingularPointError,
    StructuralSingularityError,
    ZeroDenominatorError,
)
from .expr import (
    Const,
    DerivativeAtom,
    Div,
    Expression,
    Func,
    Sym,
    ZERO,
    atom,
    derivative_atoms,
    evaluate,
    free_symbols,
    render,
    walk,
)
from .calculus import (
    differentiate,
    differentiate_multi,
    subs_atoms,
    subs_symbol,
)
from .latex import to_latex
from .linsolve import solve_linear_symbolic
from .model import NormalForm, PdeSystem, count_balance, solve_normal_form
from .ratform import (
    affine_in,
    normalize,
    rf_add,
    rf_mul,
    rf_neg,
    rf_reduce,
    rf_to_expression,
    to_ratform,
)


# --------------------------------------------------------------------------
# normal-derivative elimination
# --------------------------------------------------------------------------

def eliminate_normal_derivatives(
    e: Expression, sys: PdeSystem, nf: NormalForm
) -> Expression:
    """Rewrite ``e`` without normal derivatives of any unknown field.

    Atoms with normal order k >= 1 are replaced by the (multi-index minus one
    normal order) total derivative of the solved normal form; repeated until
    clean.  Each pass strictly lowers the maximal normal order, so this
    terminates.
    """
    n = sys.frame.normal
    deps = sys.deps
    unknown_names = {f.name for f in sys.unknowns}
    current = e
    while True:
        targets = [
            a
            for a in derivative_atoms(current)
            if a.field in unknown_names and a.order_in(n) >= 1
        ]
        if not targets:
            return normalize(current)
        mapping: dict[DerivativeAtom, Expression] = {}
        for a in targets:
            if a.field not in nf.by_field:
                raise IncompleteNormalFormError(
                    f"no normal form entry for field '{a.field}' "
                    f"(residual normal derivative {render(a)})"
                )
            rest = dict(a.orders)
            rest[n] -= 1
            mapping[a] = differentiate_multi(nf.by_field[a.field], rest, deps)
        current = subs_atoms(current, mapping)


@dataclass(frozen=True)
class ReductionChain:
    system: PdeSystem
    over_index: int
    normal_form: NormalForm
    elements: tuple[Expression, ...]

    def __len__(self):
        return len(self.elements)


def eliminate_normal(sys: PdeSystem, nf: NormalForm, over_index: int = 0) -> Expression:
    """First chain element: the over-determining equation with all normal
    derivatives eliminated."""
    if not (0 <= over_index < len(sys.over)):
        raise ReductionError(
            f"over-determining equation index {over_index} out of range "
            f"(system has {len(sys.over)})"
        )
    return eliminate_normal_derivatives(sys.over[over_index], sys, nf)


def extend_chain(chain: ReductionChain, nf: NormalForm | None = None) -> ReductionChain:
    """Differentiate the last element along the normal and eliminate."""
    if not chain.elements:
        raise ReductionError("cannot extend an empty chain")
    nf = nf or chain.normal_form
    sys = chain.system
    g = differentiate(chain.elements[-1], sys.frame.normal, sys.deps)
    g = eliminate_normal_derivatives(g, sys, nf)
    return ReductionChain(sys, chain.over_index, nf, chain.elements + (g,))


def build_chain(
    sys: PdeSystem,
    nf: NormalForm,
    over_index: int = 0,
    depth: int | None = None,
) -> ReductionChain:
    """Chain of the requested depth (default: one element per unknown)."""
    p = depth if depth is not None else len(sys.unknowns)
    if p < 1:
        raise ReductionError("chain depth must be at least 1")
    chain = ReductionChain(sys, over_index, nf, (eliminate_normal(sys, nf, over_index),))
    while len(chain) < p:
        chain = extend_chain(chain)
    return chain


def check_chain_purity(chain: ReductionChain) -> None:
    n = chain.system.frame.normal
    unknown_names = {f.name for f in chain.system.unknowns}
    for i, g in enumerate(chain.elements):
        bad = [
            a
            for a in derivative_atoms(g)
            if a.field in unknown_names and a.order_in(n) >= 1
        ]
        if bad:
            raise ReductionError(
                f"chain element {i + 1} contains normal derivatives: "
                + ", ".join(render(a) for a in bad)
            )


# --------------------------------------------------------------------------
# time-differentiated system, leading matrix, evolution form
# --------------------------------------------------------------------------

def time_differentiated_system(chain: ReductionChain) -> tuple[Expression, ...]:
    """Differentiate the l-th chain equation (p - l) times in time."""
    sys = chain.system
    p = len(chain.elements)
    t = sys.frame.time
    out = []
    for l, g in enumerate(chain.elements, start=1):
        e = g
        for _ in range(p - l):
            e = differentiate(e, t, sys.deps)
        out.append(normalize(e))
    return tuple(out)


def _top_atoms(sys: PdeSystem, p: int) -> list[DerivativeAtom]:
    t = sys.frame.time
    return [atom(f.name, **{t: p}) for f in sys.unknowns]


def _first_atoms(sys: PdeSystem) -> list[DerivativeAtom]:
    t = sys.frame.time
    return [atom(f.name, **{t: 1}) for f in sys.unknowns]


@dataclass(frozen=True)
class LeadingMatrix:
    """Coefficients of the highest time derivatives in the time-differentiated
    chain, cross-computed two ways (direct extraction and the product of
    first-order sensitivities) which must agree."""

    unknown_order: tuple[str, ...]
    rows: tuple[tuple[Expression, ...], ...]
    determinant: Expression


def _expr_matrix_det(rows: Sequence[Sequence[Expression]]) -> Expression:
    rfs = [[to_ratform(e) for e in row] for row in rows]

    def det(mat):
        if len(mat) == 1:
            return mat[0][0]
        out = None
        for j in range(len(mat)):
            minor = [r[:j] + r[j + 1:] for r in mat[1:]]
            term = rf_mul(mat[0][j], det(minor))
            if j % 2:
                term = rf_neg(term)
            out = term if out is None else rf_add(out, term)
        return out

    return normalize(rf_to_expression(rf_reduce(det(rfs))))


def leading_matrix(chain: ReductionChain) -> LeadingMatrix:
    sys = chain.system
    p = len(chain.elements)
    tops = _top_atoms(sys, p)
    rows_sys = time_differentiated_system(chain)

    extracted: list[tuple[Expression, ...]] = []
    for row in rows_sys:
        coeffs, _rest = affine_in(row, tops)
        extracted.append(tuple(coeffs))

    firsts = _first_atoms(sys)
    from .calculus import diff_wrt_atom

    g1 = chain.elements[0]
    g_row = [normalize(diff_wrt_atom(g1, a)) for a in firsts]
    sens = [
        [normalize(diff_wrt_atom(chain.normal_form.by_field[f.name], a)) for a in firsts]
        for f in sys.unknowns
    ]
    product_rows: list[list[Expression]] = [list(g_row)]
    for _ in range(p - 1):
        prev = product_rows[-1]
        nxt = []
        for i in range(len(firsts)):
            acc = ZERO
            for v in range(len(firsts)):
                acc = acc + prev[v] * sens[v][i]
            nxt.append(normalize(acc))
        product_rows.append(nxt)

    for j in range(p):
        for i in range(len(tops)):
            if extracted[j][i] != product_rows[j][i]:
                raise ReductionError(
                    f"leading-matrix cross-check failed at row {j + 1}, column {i + 1}: "
                    f"extracted {render(extracted[j][i])} vs product form "
                    f"{render(product_rows[j][i])}"
                )

    det = _expr_matrix_det(extracted)
    return LeadingMatrix(
        unknown_order=tuple(f.name for f in sys.unknowns),
        rows=tuple(extracted),
        determinant=det,
    )


@dataclass(frozen=True)
class SolvabilityReport:
    identically_zero: bool
    determinant: Expression
    vanishing_hints: tuple[dict[str, float], ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "identically_zero": self.identically_zero,
            "determinant": render(self.determinant),
            "vanishing_hints": [dict(sorted(h.items())) for h in self.vanishing_hints],
        }


def check_solvability(
    m: LeadingMatrix,
    box: Mapping[str, tuple[float, float]] | None = None,
    seed: int = 0,
    samples: int = 1000,
) -> SolvabilityReport:
    """Report whether the determinant is the zero polynomial; if not, hunt
    for numeric zeros by sampling (plus a short Newton polish)."""
    det = m.determinant
    if det == ZERO:
        return SolvabilityReport(True, det)
    names = sorted(free_symbols(det))
    det_atoms = sorted(derivative_atoms(det), key=render)
    keys: list = names + det_atoms
    if not keys:
        return SolvabilityReport(False, det)
    rng = random.Random(seed)
    box = dict(box or {})
    spans = []
    for k in keys:
        label = k if isinstance(k, str) else render(k)
        spans.append(box.get(label, (-3.0, 3.0)))

    def f(vec):
        binding = {k: v for k, v in zip(keys, vec)}
        return evaluate(det, binding)

    best: list[tuple[float, list[float]]] = []
    max_seen = 0.0
    for _ in range(samples):
        vec = [rng.uniform(lo, hi) for lo, hi in spans]
        try:
            val = abs(f(vec))
        except ZeroDivisionError:
            continue
        max_seen = max(max_seen, val)
        best.append((val, vec))
    best.sort(key=lambda t: t[0])
    hints: list[dict[str, float]] = []
    scale = max(max_seen, 1.0)
    for val, vec in best[:5]:
        if val > 1e-3 * scale:
            break
        polished = _newton_polish(f, vec, spans)
        if polished is None:
            continue
        binding = {
            (k if isinstance(k, str) else render(k)): round(v, 9)
            for k, v in zip(keys, polished)
        }
        if any(_hint_close(binding, h) for h in hints):
            continue
        hints.append(binding)
    return SolvabilityReport(False, det, tuple(hints))


def _hint_close(a: dict, b: dict, tol: float = 1e-4) -> bool:
    return all(abs(a[k] - b[k]) < tol for k in a)


def _newton_polish(f, vec, spans, iters: int = 60, tol: float = 1e-9):
    x = list(vec)
    h = 1e-6
    for _ in range(iters):
        fx = f(x)
        if abs(fx) < tol:
            return x
        grad = []
        for i in range(len(x)):
            xp = list(x)
            xm = list(x)
            xp[i] += h
            xm[i] -= h
            grad.append((f(xp) - f(xm)) / (2 * h))
        norm2 = sum(g * g for g in grad)
        if norm2 < 1e-18:
            return None
        step = fx / norm2
        x = [xi - step * gi for xi, gi in zip(x, grad)]
    return x if abs(f(x)) < tol else None


@dataclass(frozen=True)
class CauchyForm:
    """The chain solved for the highest time derivatives."""

    order: int
    rhs: dict[DerivativeAtom, Expression]


def cauchy_form(chain: ReductionChain, m: LeadingMatrix | None = None) -> CauchyForm:
    sys = chain.system
    p = len(chain.elements)
    m = m or leading_matrix(chain)
    if m.determinant == ZERO:
        raise StructuralSingularityError("leading determinant is identically zero")
    tops = _top_atoms(sys, p)
    rows = time_differentiated_system(chain)
    sol = solve_linear_symbolic(rows, tops)
    n = sys.frame.normal
    unknown_names = {f.name for f in sys.unknowns}
    for target, q in sol.solution.items():
        for a in derivative_atoms(q):
            if a in tops:
                raise ReductionError(
                    f"evolution right-hand side for {render(target)} still contains {render(a)}"
                )
            if a.field in unknown_names and a.order_in(n) >= 1:
                raise ReductionError(
                    f"evolution right-hand side for {render(target)} contains a "
                    f"normal derivative {render(a)}"
                )
    return CauchyForm(order=p, rhs=dict(sol.solution))


# --------------------------------------------------------------------------
# fixed-point closure
# --------------------------------------------------------------------------

AffineForm = tuple[dict[DerivativeAtom, Fraction], Fraction]


def _freeze(e: Expression, point: Mapping[str, Fraction]) -> Expression:
    out = e
    for name, value in point.items():
        out = subs_symbol(out, name, Const(Fraction(value)))
    return out


def _scan_zero_denominators(e: Expression, point: Mapping[str, Fraction]) -> str | None:
    binding = {k: float(v) for k, v in point.items()}
    for node in walk(e):
        if isinstance(node, Div):
            den = node.den
            if derivative_atoms(den):
                continue
            if not free_symbols(den) <= set(point):
                continue
            try:
                if evaluate(den, binding) == 0.0:
                    return render(den)
            except ZeroDivisionError:
                return render(den)
    return None


def _affine_of(e: Expression, label: str) -> AffineForm:
    atoms = sorted(derivative_atoms(e), key=render)
    coeff_exprs, const_expr = affine_in(e, atoms)
    coeffs: dict[DerivativeAtom, Fraction] = {}
    for a, c in zip(atoms, coeff_exprs):
        if not isinstance(c, Const):
            raise NonAffineClosureError(
                f"{label}: coefficient of {render(a)} is not constant at the point: {render(c)}"
            )
        if c.value != 0:
            coeffs[a] = c.value
    if not isinstance(const_expr, Const):
        raise NonAffineClosureError(f"{label}: constant part is not constant at the point")
    return coeffs, const_expr.value


def _affine_sub(form: AffineForm, target: DerivativeAtom, rule: AffineForm) -> AffineForm:
    coeffs, const = form
    if target not in coeffs:
        return form
    factor = coeffs[target]
    out = {a: c for a, c in coeffs.items() if a != target}
    rc, rk = rule
    for a, c in rc.items():
        out[a] = out.get(a, Fraction(0)) + factor * c
        if out[a] == 0:
            del out[a]
    return out, const + factor * rk


def _affine_dt(form: AffineForm, tname: str) -> AffineForm:
    coeffs, _const = form
    out: dict[DerivativeAtom, Fraction] = {}
    for a, c in coeffs.items():
        b = a.bump(tname)
        out[b] = out.get(b, Fraction(0)) + c
    return out, Fraction(0)


def _affine_render(form: AffineForm, tname: str) -> Expression:
    coeffs, const = form
    expr = Const(const) if const != 0 else ZERO
    for a in sorted(coeffs, key=lambda a: (-a.order_in(tname), render(a))):
        expr = expr + Const(coeffs[a]) * a
    return normalize(expr)


class _RuleSet:
    """Triangular rewriting system: high time derivatives -> lower ones."""

    def __init__(self, tname: str):
        self.tname = tname
        self.base: dict[DerivativeAtom, AffineForm] = {}
        self.derived: dict[DerivativeAtom, AffineForm] = {}
        self.base_order: dict[str, int] = {}

    def reduce(self, form: AffineForm) -> AffineForm:
        while True:
            coeffs, _ = form
            target = None
            for a in sorted(coeffs, key=lambda a: (-a.order_in(self.tname), render(a))):
                if self.rule_for(a) is not None:
                    target = a
                    break
            if target is None:
                return form
            form = _affine_sub(form, target, self.rule_for(target))

    def rule_for(self, a: DerivativeAtom) -> AffineForm | None:
        if a in self.base:
            return self.base[a]
        if a in self.derived:
            return self.derived[a]
        j0 = self.base_order.get(a.field)
        j = a.order_in(self.tname)
        if j0 is None or j <= j0 - 1 or a.total_order() != j:
            return None
        base_atom = atom(a.field, **{self.tname: j0})
        form = self.base[base_atom]
        for k in range(j0 + 1, j + 1):
            form = self.reduce(_affine_dt(form, self.tname))
            self.derived[atom(a.field, **{self.tname: k})] = form
        return form

    def add(self, leading: DerivativeAtom, form: AffineForm) -> None:
        self.base[leading] = form
        self.base_order[leading.field] = leading.order_in(self.tname)
        self.derived.clear()
        # keep older rules fully reduced
        for key in list(self.base):
            if key != leading:
                self.base[key] = self.reduce(self.base[key])


@dataclass
class ClosureReport:
    point: dict[str, Fraction]
    frozen_chain: list[Expression]
    rules: dict[DerivativeAtom, Expression]
    relations: list[Expression]
    basis: list[DerivativeAtom]
    matrix: list[list[Fraction]]
    constants: list[Fraction]
    rank: int
    verdict: str | None
    dependent_relations: int = 0

    def to_json_dict(self) -> dict:
        return {
            "point": {k: str(v) for k, v in sorted(self.point.items())},
            "frozen_chain": [render(e) for e in self.frozen_chain],
            "rules": {render(a): render(e) for a, e in sorted(self.rules.items(), key=lambda kv: render(kv[0]))},
            "relations": [render(e) for e in self.relations],
            "basis": [render(a) for a in self.basis],
            "rank": self.rank,
            "verdict": self.verdict,
            "dependent_relations": self.dependent_relations,
        }


def _fraction_rank(matrix: list[list[Fraction]]) -> int:
    m = [row[:] for row in matrix]
    rank = 0
    cols = len(m[0]) if m else 0
    row = 0
    for col in range(cols):
        pivot = None
        for r in range(row, len(m)):
            if m[r][col] != 0:
                pivot = r
                break
        if pivot is None:
            continue
        m[row], m[pivot] = m[pivot], m[row]
        pv = m[row][col]
        m[row] = [v / pv for v in m[row]]
        for r in range(len(m)):
            if r != row and m[r][col] != 0:
                f = m[r][col]
                m[r] = [a - f * b for a, b in zip(m[r], m[row])]
        row += 1
        rank += 1
        if row == len(m):
            break
    return rank


def _as_fraction(v) -> Fraction:
    if isinstance(v, float):
        return Fraction(str(v))
    return Fraction(v)


def fixed_point_closure(
    chain: ReductionChain,
    point: Mapping[str, object],
    max_extra: int = 4,
) -> ClosureReport:
    """Freeze the non-time coordinates and mine ordinary relations.

    The frozen chain is triangularized into rewriting rules (each relation
    solved for its highest time derivative).  Extra relations come from one
    further normal differentiation of the chain and then repeated time
    differentiation, each reduced modulo the rules.  The report carries the
    relations, the surviving low-order atoms, the exact rank, and the
    trivial-solution verdict when the relations pin everything to zero.
    """
    sys = chain.system
    tname = sys.frame.time
    pt = {k: _as_fraction(v) for k, v in point.items()}
    needed = [c for c in sys.frame.order if c != tname]
    missing = [c for c in needed if c not in pt]
    if missing:
        raise ReductionError(f"point must bind the non-time coordinates; missing {missing}")

    p = len(chain.elements)
    tangential_banned = set(sys.frame.order) - {tname}
    for g in chain.elements:
        for a in derivative_atoms(g):
            if any(a.order_in(c) for c in tangential_banned):
                raise NonAffineClosureError(
                    "closure needs a chain whose atoms are pure time derivatives; "
                    f"found {render(a)}"
                )

    frozen: list[Expression] = []
    for i, g in enumerate(chain.elements, start=1):
        bad = _scan_zero_denominators(g, pt)
        if bad is not None:
            raise SingularPointError(bad)
        try:
            frozen.append(normalize(_freeze(g, pt)))
        except ZeroDenominatorError as exc:
            raise SingularPointError(str(exc)) from exc

    rules = _RuleSet(tname)
    dependent = 0
    for i, (rel, g) in enumerate(zip(frozen, chain.elements), start=1):
        form = rules.reduce(_affine_of(rel, f"chain element {i}"))
        coeffs, const = form
        if not coeffs and const == 0:
            dependent += 1
            continue
        if not coeffs:
            raise ReductionError(f"chain element {i} froze to the contradiction {const} = 0")
        leading = max(
            coeffs,
            key=lambda a: (a.order_in(tname), -_field_index(sys, a.field)),
        )
        top_sym = max(a.order_in(tname) for a in derivative_atoms(g))
        if leading.order_in(tname) < top_sym:
            # the symbolic top-order coefficient vanished at this point: the
            # rule this relation should provide would divide by zero
            raise SingularPointError(_top_coefficient_name(g, sys, top_sym))
        c = coeffs[leading]
        rest = {a: -(v / c) for a, v in coeffs.items() if a != leading}
        rules.add(leading, (rest, -(const / c)))

    extras: list[AffineForm] = []
    if max_extra > 0:
        ext_chain = extend_chain(chain)
        ext = ext_chain.elements[-1]
        bad = _scan_zero_denominators(ext, pt)
        if bad is not None:
            raise SingularPointError(bad)
        try:
            frozen_ext = normalize(_freeze(ext, pt))
        except ZeroDenominatorError as exc:
            raise SingularPointError(str(exc)) from exc
        form = rules.reduce(_affine_of(frozen_ext, "extended chain element"))
        extras.append(form)
        for _ in range(max_extra - 1):
            form = rules.reduce(_affine_dt(form, tname))
            extras.append(form)

    nontrivial = [f for f in extras if f[0] or f[1] != 0]
    dependent += len(extras) - len(nontrivial)

    basis: list[DerivativeAtom] = []
    for f in sys.unknowns:
        threshold = rules.base_order.get(f.name, p)
        for j in range(threshold):
            basis.append(atom(f.name, **{tname: j}) if j else atom(f.name))
    basis.sort(key=lambda a: (a.order_in(tname), _field_index(sys, a.field)))

    matrix = [[form[0].get(a, Fraction(0)) for a in basis] for form in nontrivial]
    constants = [form[1] for form in nontrivial]
    rank = _fraction_rank(matrix) if matrix else 0
    homogeneous = all(c == 0 for c in constants)
    verdict = "trivial_only" if (basis and rank == len(basis) and homogeneous) else None

    return ClosureReport(
        point=pt,
        frozen_chain=frozen,
        rules={a: _affine_render(f, tname) for a, f in rules.base.items()},
        relations=[_affine_render(f, tname) for f in nontrivial],
        basis=basis,
        matrix=matrix,
        constants=constants,
        rank=rank,
        verdict=verdict,
        dependent_relations=dependent,
    )


def _field_index(sys: PdeSystem, name: str) -> int:
    for i, f in enumerate(sys.unknowns):
        if f.name == name:
            return i
    return len(sys.unknowns)


def _top_coefficient_name(g: Expression, sys: PdeSystem, top_order: int) -> str:
    from .calculus import diff_wrt_atom

    tname = sys.frame.time
    for a in sorted(
        derivative_atoms(g),
        key=lambda a: _field_index(sys, a.field),
    ):
        if a.order_in(tname) == top_order:
            coeff = normalize(diff_wrt_atom(g, a))
            if coeff != ZERO:
                return render(coeff)
    return "leading coefficient"


# --------------------------------------------------------------------------
# moving surface
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MovingSurfaceSystem:
    """Surface-following system: chain equations plus transport relations.

    The transport relations express the surface-following derivative (the
    opaque marker function ``Dt``) of each time derivative through the next
    one and the solved normal forms; the surface speed stays symbolic as the
    reserved symbol carried in ``speed_symbol``.
    """

    equations: tuple[Expression, ...]
    unknowns: tuple[DerivativeAtom, ...]
    speed_symbol: str
    surface: Expression
    surface_time_derivative: Expression
    surface_gradient: tuple[tuple[str, Expression], ...]

    def counts(self) -> tuple[int, int]:
        return len(self.equations), len(self.unknowns)


def moving_surface_system(
    sys: PdeSystem,
    nf: NormalForm,
    chain: ReductionChain,
    surface: Expression,
) -> MovingSurfaceSystem:
    p = len(chain.elements)
    t = sys.frame.time
    space = [c for c in sys.frame.order if c != t]
    if not free_symbols(surface) <= set(sys.frame.order):
        raise ReductionError("surface function may only use declared coordinates")
    speed = "V"
    taken = set(sys.frame.order) | set(sys.params) | {f.name for f in sys.fields}
    while speed in taken:
        speed += "_"
    vsym = Sym(speed)

    unknowns: list[DerivativeAtom] = []
    for f in sys.unknowns:
        for j in range(p + 1):
            unknowns.append(atom(f.name, **{t: j}) if j else atom(f.name))

    transport: list[Expression] = []
    for f in sys.unknowns:
        fexpr = nf.by_field[f.name]
        for j in range(1, p + 1):
            lower = atom(f.name, **{t: j - 1}) if j > 1 else atom(f.name)
            higher = atom(f.name, **{t: j})
            normal_term = eliminate_normal_derivatives(
                differentiate_multi(fexpr, {t: j - 1}, sys.deps), sys, nf
            )
            eq = Func("Dt", (lower,)) - higher + vsym * normal_term
            transport.append(eq)

    equations = tuple(chain.elements) + tuple(transport)
    grad = tuple((c, normalize(differentiate(surface, c, sys.deps))) for c in space)
    return MovingSurfaceSystem(
        equations=equations,
        unknowns=tuple(unknowns),
        speed_symbol=speed,
        surface=normalize(surface),
        surface_time_derivative=normalize(differentiate(surface, t, sys.deps)),
        surface_gradient=grad,
    )


# --------------------------------------------------------------------------
# chain stabilization probe (does one more step add information?)
# --------------------------------------------------------------------------

def probe_extension(chain: ReductionChain) -> tuple[str, Expression | None]:
    """Check whether one more chain step yields a new constraint.

    Returns ("stabilized", None) when the extended element reduces to zero
    modulo the chain (no further reduction possible), ("new_constraint", e)
    with the reduced residual otherwise, or ("skipped", None) when the chain
    is not affine in its time-derivative atoms.
    """
    sys = chain.system
    tname = sys.frame.time
    try:
        ext = extend_chain(chain).elements[-1]
        rules: dict[DerivativeAtom, Expression] = {}
        order_of: dict[str, int] = {}
        for rel in chain.elements:
            current = _apply_symbolic_rules(rel, rules, order_of, sys)
            atoms = sorted(
                derivative_atoms(current),
                key=lambda a: (-a.order_in(tname), _field_index(sys, a.field)),
            )
            if not atoms:
                continue
            coeff_exprs, _ = affine_in(current, atoms)
            leading = None
            for a, c in zip(atoms, coeff_exprs):
                if c != ZERO:
                    leading = (a, c)
                    break
            if leading is None:
                continue
            a, c = leading
            rest = normalize(current - c * a)
            rules[a] = normalize((ZERO - rest) / c)
            order_of[a.field] = a.order_in(tname)
        residual = _apply_symbolic_rules(ext, rules, order_of, sys)
        if residual == ZERO:
            return "stabilized", None
        return "new_constraint", residual
    except (NonAffineError, ZeroDenominatorError, IncompleteNormalFormError):
        return "skipped", None


def _apply_symbolic_rules(
    e: Expression,
    rules: dict[DerivativeAtom, Expression],
    order_of: dict[str, int],
    sys: PdeSystem,
) -> Expression:
    tname = sys.frame.time
    current = normalize(e)
    for _ in range(64):
        target = None
        for a in sorted(
            derivative_atoms(current),
            key=lambda a: (-a.order_in(tname), render(a)),
        ):
            if a in rules:
                target = (a, rules[a])
                break
            j0 = order_of.get(a.field)
            j = a.order_in(tname)
            if j0 is not None and j > j0 and a.total_order() == j:
                base = atom(a.field, **{tname: j0})
                rule = rules[base]
                for k in range(j0 + 1, j + 1):
                    rule = normalize(differentiate(rule, tname, sys.deps))
                    bumped = atom(a.field, **{tname: k})
                    rule = _apply_symbolic_rules(rule, rules, order_of, sys) if k < j else rule
                    rules[bumped] = rule
                target = (atom(a.field, **{tname: j}), rules[atom(a.field, **{tname: j})])
                break
        if target is None:
            return current
        a, replacement = target
        current = normalize(subs_atoms(current, {a: replacement}))
    raise ReductionError("symbolic rule application did not terminate")


# --------------------------------------------------------------------------
# one-shot driver + emission
# --------------------------------------------------------------------------

@dataclass
class ReductionResult:
    system: PdeSystem
    over_index: int
    chain: ReductionChain
    matrix: LeadingMatrix
    solvability: SolvabilityReport
    cauchy: CauchyForm | None
    probe: tuple[str, Expression | None]

    def to_json_dict(self) -> dict:
        eqs, unks = count_balance(self.system)
        status, residual = self.probe
        return {
            "system": self.system.name,
            "over_index": self.over_index,
            "chain": [render(g) for g in self.chain.elements],
            "unknown_order": list(self.matrix.unknown_order),
            "leading_matrix": [[render(e) for e in row] for row in self.matrix.rows],
            "determinant": render(self.matrix.determinant),
            "identically_zero": self.solvability.identically_zero,
            "vanishing_hints": [dict(sorted(h.items())) for h in self.solvability.vanishing_hints],
            "cauchy": (
                {render(a): render(e) for a, e in sorted(self.cauchy.rhs.items(), key=lambda kv: render(kv[0]))}
                if self.cauchy is not None
                else None
            ),
            "counts": {"equations": eqs, "unknowns": unks},
            "extension_probe": {
                "status": status,
                "residual": render(residual) if residual is not None else None,
                "note": "no further reduction" if status == "stabilized" else None,
            },
        }

    def to_latex(self) -> str:
        lines = ["\\begin{align*}"]
        for i, g in enumerate(self.chain.elements, start=1):
            lines.append(f"G^{{({i})}} &: {to_latex(g)} = 0 \\\\")
        rows = " \\\\\n".join(
            " & ".join(to_latex(e) for e in row) for row in self.matrix.rows
        )
        lines.append(f"a &= \\begin{{pmatrix}} {rows} \\end{{pmatrix}} \\\\")
        lines.append(f"\\det a &= {to_latex(self.matrix.determinant)} \\\\")
        if self.cauchy:
            for a, e in sorted(self.cauchy.rhs.items(), key=lambda kv: render(kv[0])):
                lines.append(f"{to_latex(a)} &= {to_latex(e)} \\\\")
        lines.append("\\end{align*}")
        return "\n".join(lines)


def reduce_system(
    sys: PdeSystem,
    over_index: int = 0,
    depth: int | None = None,
    box: Mapping[str, tuple[float, float]] | None = None,
    seed: int = 0,
) -> ReductionResult:
    nf = solve_normal_form(sys)
    chain = build_chain(sys, nf, over_index, depth)
    check_chain_purity(chain)
    m = leading_matrix(chain)
    solv = check_solvability(m, box=box, seed=seed)
    cf = None
    if not solv.identically_zero:
        cf = cauchy_form(chain, m)
    probe = probe_extension(chain)
    return ReductionResult(sys, over_index, chain, m, solv, cf, probe)
