"""Exception hierarchy shared across the package."""

from __future__ import annotations


class PdeReduceError(Exception):
    """Base class for every error raised by this package."""


class ExpressionError(PdeReduceError):
    """Problems while building or manipulating symbolic expressions."""


class ZeroDenominatorError(ExpressionError):
    """A quotient whose denominator is the zero polynomial."""


class UnboundSymbolError(ExpressionError):
    """Evaluation hit a symbol or derivative atom missing from the binding."""


class EvaluationError(ExpressionError):
    """Numeric evaluation failed (domain error, overflow, ...)."""


class DivisionByZeroAt(EvaluationError):
    """Numeric division by zero; carries the offending subterm."""

    def __init__(self, subterm: str, where: str = ""):
        self.subterm = subterm
        self.where = where
        msg = f"division by zero in subterm {subterm}"
        if where:
            msg += f" at {where}"
        super().__init__(msg)


class SelfReferenceError(ExpressionError):
    """substitute() called with a replacement that contains its own target."""


class OpaqueDerivativeError(ExpressionError):
    """Attempted symbolic derivative of an opaque (undeclared-rule) function."""


class NonAffineError(ExpressionError):
    """An expression was required to be affine in some atoms but is not."""


class StructuralSingularityError(ExpressionError):
    """A symbolic linear solve met a determinant that is identically zero."""


class ParseError(PdeReduceError):
    """DSL lexical or syntax error with source position."""

    def __init__(self, message: str, line: int, column: int):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class ModelError(PdeReduceError):
    """Invalid system declaration (duplicate fields, missing frame, ...)."""


class NormalFormError(ModelError):
    """The determined equations could not be solved for the normal derivatives."""


class ReductionError(PdeReduceError):
    """Failures inside the reduction engine."""


class IncompleteNormalFormError(ReductionError):
    """A normal-derivative atom survived elimination (normal form incomplete)."""


class SingularPointError(ReductionError):
    """Fixed-point operation at a point where a denominator vanishes."""

    def __init__(self, denominator: str, message: str = ""):
        self.denominator = denominator
        super().__init__(message or f"denominator vanishes at the chosen point: {denominator}")


class NonAffineClosureError(ReductionError):
    """Fixed-point closure needs relations affine in the derivative atoms."""


class VerificationError(PdeReduceError):
    """Numeric verification errors (missing fields, bad grids, ...)."""


class GridError(VerificationError):
    """Grid too small for the requested stencil, or axis missing."""


class CatalogError(PdeReduceError):
    """Unknown catalog entry or inconsistent catalog data."""
