"""Symbolic linear solving for small dense systems (Cramer's rule).

Equations are expressions understood as "== 0" and must be affine in the
unknown derivative atoms.  Each equation is cleared of its denominator first
(legitimate, since the equation asserts the numerator vanishes), so the
determinant reported is that of the cleared coefficient matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import NonAffineError, StructuralSingularityError
from .expr import DerivativeAtom, Expression, ZERO, render
from .calculus import subs_atoms
from .ratform import (
    Poly,
    RatForm,
    affine_poly_parts,
    normalize,
    poly_add,
    poly_mul,
    poly_neg,
    poly_sub,
    poly_to_expression,
    rf_reduce,
    rf_to_expression,
)


@dataclass(frozen=True)
class LinearSolution:
    unknowns: tuple[DerivativeAtom, ...]
    solution: dict[DerivativeAtom, Expression]
    determinant: Expression


def poly_det(matrix: list[list[Poly]]) -> Poly:
    """Cofactor expansion along the first row."""
    n = len(matrix)
    if n == 1:
        return matrix[0][0]
    if n == 2:
        return poly_sub(
            poly_mul(matrix[0][0], matrix[1][1]),
            poly_mul(matrix[0][1], matrix[1][0]),
        )
    out = None
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in matrix[1:]]
        term = poly_mul(matrix[0][j], poly_det(minor))
        if j % 2:
            term = poly_neg(term)
        out = term if out is None else poly_add(out, term)
    return out


def solve_linear_symbolic(
    equations: Sequence[Expression],
    unknowns: Sequence[DerivativeAtom],
) -> LinearSolution:
    """Solve a square affine system for derivative atoms, symbolically.

    Raises StructuralSingularityError when the determinant is identically
    zero and NonAffineError on nonlinear dependence.  Back-substitution of
    the solution into every input equation is checked to normalize to zero.
    """
    unknowns = tuple(unknowns)
    if len(equations) != len(unknowns):
        raise NonAffineError(
            f"need a square system: {len(equations)} equations, {len(unknowns)} unknowns"
        )
    matrix: list[list[Poly]] = []
    rhs: list[Poly] = []
    for eq in equations:
        coeffs, const, _den = affine_poly_parts(eq, unknowns)
        matrix.append(coeffs)
        rhs.append(poly_neg(const))
    det = poly_det(matrix)
    if det.is_zero():
        raise StructuralSingularityError(
            "coefficient matrix is structurally singular (determinant is the zero polynomial)"
        )
    solution: dict[DerivativeAtom, Expression] = {}
    for i, u in enumerate(unknowns):
        replaced = [
            [rhs[r] if c == i else matrix[r][c] for c in range(len(unknowns))]
            for r in range(len(equations))
        ]
        det_i = poly_det(replaced)
        solution[u] = rf_to_expression(rf_reduce(RatForm(det_i, det)))
    for eq in equations:
        residual = normalize(subs_atoms(eq, solution))
        if residual != ZERO:
            raise StructuralSingularityError(
                f"back-substitution residual is not zero: {render(residual)}"
            )
    return LinearSolution(
        unknowns=unknowns,
        solution=solution,
        determinant=normalize(poly_to_expression(det)),
    )
