"""LaTeX rendering of expressions (emission only, never parsed back)."""

from __future__ import annotations

from .expr import (
    Add,
    Const,
    DerivativeAtom,
    Div,
    Expression,
    Func,
    Mul,
    Pow,
    Sym,
)

_GREEK = {
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
    "iota", "kappa", "lambda", "mu", "nu", "xi", "pi", "rho", "sigma",
    "tau", "phi", "chi", "psi", "omega",
}

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_POW = 3


def _name_tex(name: str) -> str:
    if name in _GREEK:
        return "\\" + name
    if len(name) > 1 and name[-1].isdigit() and not name[0].isdigit():
        return f"{_name_tex(name[:-1])}_{{{name[-1]}}}"
    return name


def to_latex(e: Expression) -> str:
    return _tex(e, 0)


def _tex(e: Expression, parent: int) -> str:
    text, prec = _tex_prec(e)
    if prec < parent:
        return f"\\left({text}\\right)"
    return text


def _tex_prec(e: Expression) -> tuple[str, int]:
    if isinstance(e, Const):
        v = e.value
        if v.denominator == 1:
            return str(v.numerator), _PREC_MUL if v < 0 else _PREC_POW
        sign = "-" if v < 0 else ""
        return f"{sign}\\frac{{{abs(v.numerator)}}}{{{v.denominator}}}", _PREC_MUL
    if isinstance(e, Sym):
        return _name_tex(e.name), _PREC_POW
    if isinstance(e, DerivativeAtom):
        total = e.total_order()
        if total == 0:
            return _name_tex(e.field), _PREC_POW
        top = f"\\partial^{{{total}}}" if total > 1 else "\\partial"
        bottom = " ".join(
            f"\\partial {_name_tex(c)}" + (f"^{{{k}}}" if k > 1 else "")
            for c, k in e.orders
        )
        return f"\\frac{{{top} {_name_tex(e.field)}}}{{{bottom}}}", _PREC_POW
    if isinstance(e, Add):
        out = []
        for i, t in enumerate(e.terms):
            part = _tex(t, _PREC_ADD)
            if i and not part.startswith("-"):
                out.append("+")
            out.append(part)
        return " ".join(out), _PREC_ADD
    if isinstance(e, Mul):
        parts = [_tex(f, _PREC_MUL) for f in e.factors]
        return " \\, ".join(parts), _PREC_MUL
    if isinstance(e, Div):
        return f"\\frac{{{_tex(e.num, 0)}}}{{{_tex(e.den, 0)}}}", _PREC_POW
    if isinstance(e, Pow):
        return f"{_tex(e.base, _PREC_POW)}^{{{e.exponent}}}", _PREC_POW
    if isinstance(e, Func):
        args = ", ".join(_tex(a, 0) for a in e.args)
        name = e.name
        if name in ("sin", "cos", "exp", "ln"):
            return f"\\{name}\\left({args}\\right)", _PREC_POW
        return f"\\mathrm{{{name}}}\\left({args}\\right)", _PREC_POW
    raise TypeError(f"unknown node {e!r}")
