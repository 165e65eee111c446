"""Declarations of coordinate frames, fields, and PDE systems.

A system holds p determined equations plus one or more over-determining
equations, all understood as "expression == 0".  Equations are normalized
lazily (first access) so that loading a large catalog entry stays cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ModelError, NormalFormError, NonAffineError, StructuralSingularityError
from .expr import DerivativeAtom, Expression, ZERO, atom, derivative_atoms, render
from .calculus import subs_atoms
from .linsolve import solve_linear_symbolic
from .ratform import normalize


@dataclass(frozen=True)
class CoordinateFrame:
    """Time/normal/tangential designation over an ordered coordinate list."""

    order: tuple[str, ...]
    time: str
    normal: str
    tangential: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.order)) != len(self.order):
            raise ModelError("coordinate names must be distinct")
        for s in (self.time, self.normal, *self.tangential):
            if s not in self.order:
                raise ModelError(f"'{s}' is not a declared coordinate")
        if self.time == self.normal:
            raise ModelError("time and normal coordinates must differ")

    @property
    def passive(self) -> tuple[str, ...]:
        special = {self.time, self.normal, *self.tangential}
        return tuple(c for c in self.order if c not in special)


@dataclass(frozen=True)
class FieldDecl:
    name: str
    coords: tuple[str, ...]
    given: bool = False  # given data, not an unknown


class PdeSystem:
    """Immutable system declaration.  Treat instances as read-only."""

    def __init__(
        self,
        name: str,
        frame: CoordinateFrame,
        fields: Sequence[FieldDecl],
        params: Sequence[str] = (),
        functions: Sequence[str] = (),
        determined: Sequence[Expression] = (),
        over: Sequence[Expression] = (),
        explicit_normal_form: Mapping[str, Expression] | None = None,
        aux: Mapping[str, Expression] | None = None,
        title: str = "",
    ):
        self.name = name
        self.frame = frame
        self.fields = tuple(fields)
        self.params = tuple(params)
        self.functions = tuple(functions)
        self._determined_raw = tuple(determined)
        self._over_raw = tuple(over)
        self.explicit_normal_form = dict(explicit_normal_form or {})
        self.aux = dict(aux or {})
        self.title = title
        self._validate()
        self._determined_cache: tuple[Expression, ...] | None = None
        self._over_cache: tuple[Expression, ...] | None = None

    def _validate(self):
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ModelError("field names must be unique")
        clashes = set(names) & set(self.params)
        if clashes:
            raise ModelError(f"names declared as both field and parameter: {sorted(clashes)}")
        if not self._determined_raw and not self._over_raw:
            raise ModelError("no equations")
        unknown_count = sum(1 for f in self.fields if not f.given)
        if len(self._determined_raw) != unknown_count:
            raise ModelError(
                f"need one determined equation per unknown field: "
                f"{len(self._determined_raw)} equations for {unknown_count} unknowns"
            )
        for f in self.fields:
            for c in f.coords:
                if c not in self.frame.order:
                    raise ModelError(f"field '{f.name}' uses undeclared coordinate '{c}'")

    # -- derived views -----------------------------------------------------

    @property
    def unknowns(self) -> tuple[FieldDecl, ...]:
        return tuple(f for f in self.fields if not f.given)

    @property
    def deps(self) -> dict[str, tuple[str, ...]]:
        return {f.name: f.coords for f in self.fields}

    @property
    def determined(self) -> tuple[Expression, ...]:
        if self._determined_cache is None:
            self._determined_cache = tuple(normalize(e) for e in self._determined_raw)
        return self._determined_cache

    @property
    def over(self) -> tuple[Expression, ...]:
        if self._over_cache is None:
            self._over_cache = tuple(normalize(e) for e in self._over_raw)
        return self._over_cache

    @property
    def determined_raw(self) -> tuple[Expression, ...]:
        return self._determined_raw

    @property
    def over_raw(self) -> tuple[Expression, ...]:
        return self._over_raw

    def __repr__(self):
        eq, unk = count_balance(self)
        return f"PdeSystem({self.name}: {eq} equations, {unk} unknowns)"


@dataclass(frozen=True)
class NormalForm:
    """Explicit solved map  d(field)/d(normal) -> expression free of normal
    derivatives of any unknown."""

    normal: str
    by_field: dict[str, Expression]

    def atom_map(self) -> dict[DerivativeAtom, Expression]:
        return {atom(f, **{self.normal: 1}): e for f, e in self.by_field.items()}


def count_balance(sys: PdeSystem) -> tuple[int, int]:
    """(scalar equations, scalar unknowns); given fields do not count."""
    return (
        len(sys.determined_raw) + len(sys.over_raw),
        len(sys.unknowns),
    )


def _check_normal_free(nf_map: Mapping[str, Expression], sys: PdeSystem) -> None:
    n = sys.frame.normal
    unknown_names = {f.name for f in sys.unknowns}
    for f, e in nf_map.items():
        for a in derivative_atoms(e):
            if a.field in unknown_names and a.order_in(n) > 0:
                raise NormalFormError(
                    f"normal form for '{f}' still contains normal derivative {render(a)}"
                )


def solve_normal_form(sys: PdeSystem) -> NormalForm:
    """Solve the determined equations for the first normal derivatives.

    Uses an explicit `normal_form` block when the source supplied one;
    otherwise the determined equations must be affine in the normal
    derivatives (quasilinear in the normal direction).
    """
    n = sys.frame.normal
    unknown_fields = [f.name for f in sys.unknowns]
    if sys.explicit_normal_form:
        nf_map = {f: normalize(e) for f, e in sys.explicit_normal_form.items()}
        _check_normal_free(nf_map, sys)
        nf = NormalForm(n, nf_map)
        _check_back_substitution(sys, nf)
        return nf
    targets = [atom(f, **{n: 1}) for f in unknown_fields]
    if len(sys.determined) != len(targets):
        raise NormalFormError(
            f"need {len(targets)} determined equations to solve for the normal "
            f"derivatives, got {len(sys.determined)}"
        )
    try:
        sol = solve_linear_symbolic(sys.determined, targets)
    except NonAffineError as exc:
        raise NormalFormError(
            f"determined equations are not quasilinear in the normal direction: {exc}"
        ) from exc
    except StructuralSingularityError as exc:
        raise NormalFormError(str(exc)) from exc
    nf_map = {t.field: sol.solution[t] for t in targets}
    _check_normal_free(nf_map, sys)
    return NormalForm(n, nf_map)


def _check_back_substitution(sys: PdeSystem, nf: NormalForm) -> None:
    mapping = nf.atom_map()
    for eq in sys.determined:
        residual = normalize(subs_atoms(eq, mapping))
        if residual != ZERO:
            raise NormalFormError(
                f"explicit normal form does not satisfy the determined equations: "
                f"residual {render(residual)}"
            )


def system_to_json(sys: PdeSystem) -> dict:
    eq, unk = count_balance(sys)
    return {
        "name": sys.name,
        "title": sys.title,
        "coords": list(sys.frame.order),
        "time": sys.frame.time,
        "normal": sys.frame.normal,
        "tangential": list(sys.frame.tangential),
        "params": list(sys.params),
        "functions": list(sys.functions),
        "fields": [
            {"name": f.name, "coords": list(f.coords), "given": f.given}
            for f in sys.fields
        ],
        "equations": [render(e) for e in sys.determined_raw],
        "over_determining": [render(e) for e in sys.over_raw],
        "counts": {"equations": eq, "unknowns": unk},
    }
