"""DSL front end for system declarations.

Line-oriented directives (``#`` starts a comment):

    coords <sym>, ...          all coordinates, in order
    time <sym>                 the time coordinate
    normal <sym>               the normal coordinate
    tangent <sym>, ...         tangential coordinates (optional)
    param <sym>, ...           scalar parameters
    field <Name>(<coord>, ...) an unknown field
    given <Name>(<coord>, ...) known data (never counted as an unknown)
    fn <name>, ...             opaque function names (callable, n-ary)
    let <name> = <expression>  local abbreviation, inlined on use
    eq <expression>            determined equation (implicitly "= 0")
    over <expression>          over-determining equation
    aux <name> = <expression>  named auxiliary expression (not an equation)
    normal_form d<coord>(<Field>) = <expression>   explicit solved form

Expression syntax: ``+ - * / ^``, parentheses, integer/decimal literals,
``sin cos exp ln``, opaque calls ``name(arg, ...)``, and the nestable
derivative operator ``d<coord>(<expr>)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field as dataclass_field
from fractions import Fraction
from typing import Mapping

from .errors import ParseError
from .expr import (
    Const,
    DerivativeAtom,
    Expression,
    Func,
    add,
    atom,
    div,
    mul,
    neg,
    pow_,
    render,
)
from .calculus import differentiate
from .model import CoordinateFrame, FieldDecl, PdeSystem, system_to_json

ELEMENTARY = ("sin", "cos", "exp", "ln")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),=]))"
)


@dataclass
class Token:
    kind: str  # number | name | op | end
    text: str
    line: int
    col: int


def _tokenize(text: str, line: int, col_offset: int) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad_at = pos + (len(text[pos:]) - len(stripped))
            raise ParseError(f"unexpected character '{stripped[0]}'", line, col_offset + bad_at + 1)
        pos = m.end()
        for kind in ("number", "name", "op"):
            val = m.group(kind)
            if val is not None:
                tokens.append(Token(kind, val, line, col_offset + m.start(kind) + 1))
                break
    tokens.append(Token("end", "", line, col_offset + len(text) + 1))
    return tokens


@dataclass
class ExprContext:
    """Name-resolution environment for the expression grammar."""

    coords: tuple[str, ...] = ()
    params: tuple[str, ...] = ()
    fields: tuple[str, ...] = ()
    givens: tuple[str, ...] = ()
    fns: tuple[str, ...] = ()
    lets: dict[str, Expression] = dataclass_field(default_factory=dict)
    deps: dict[str, tuple[str, ...]] = dataclass_field(default_factory=dict)

    def reserved_clash(self, name: str) -> str | None:
        if name in ELEMENTARY:
            return f"'{name}' is a built-in function name"
        if len(name) > 1 and name[0] == "d" and name[1:] in self.coords:
            return f"'{name}' collides with the derivative operator d{name[1:]}"
        return None


_PREC_ADD = 10
_PREC_MUL = 20
_PREC_UNARY = 25
_PREC_POW = 30


class _ExprParser:
    def __init__(self, tokens: list[Token], ctx: ExprContext):
        self.tokens = tokens
        self.ctx = ctx
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, text: str) -> Token:
        tok = self.next()
        if tok.kind != "op" or tok.text != text:
            raise ParseError(f"expected '{text}', found '{tok.text or 'end of input'}'", tok.line, tok.col)
        return tok

    def parse(self) -> Expression:
        e = self.expression(0)
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected '{tok.text}'", tok.line, tok.col)
        return e

    def expression(self, rbp: int) -> Expression:
        left = self.nud(self.next())
        while True:
            tok = self.peek()
            lbp = self._lbp(tok)
            if lbp <= rbp:
                break
            self.next()
            left = self.led(tok, left)
        return left

    @staticmethod
    def _lbp(tok: Token) -> int:
        if tok.kind != "op":
            return 0
        return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}.get(tok.text, 0)

    def nud(self, tok: Token) -> Expression:
        if tok.kind == "number":
            return Const(Fraction(tok.text))
        if tok.kind == "op":
            if tok.text == "(":
                e = self.expression(0)
                self.expect_op(")")
                return e
            if tok.text == "-":
                return neg(self.expression(_PREC_UNARY))
            if tok.text == "+":
                return self.expression(_PREC_UNARY)
            raise ParseError(f"unexpected '{tok.text}'", tok.line, tok.col)
        if tok.kind == "name":
            return self._resolve_name(tok)
        raise ParseError("unexpected end of expression", tok.line, tok.col)

    def led(self, tok: Token, left: Expression) -> Expression:
        if tok.text == "+":
            return add(left, self.expression(_PREC_ADD))
        if tok.text == "-":
            return add(left, neg(self.expression(_PREC_ADD)))
        if tok.text == "*":
            return mul(left, self.expression(_PREC_MUL))
        if tok.text == "/":
            return div(left, self.expression(_PREC_MUL))
        if tok.text == "^":
            exp_tok = self.peek()
            exponent = self.expression(_PREC_POW - 1)  # right associative
            if not isinstance(exponent, Const) or exponent.value.denominator != 1:
                raise ParseError("exponent must be an integer literal", exp_tok.line, exp_tok.col)
            return pow_(left, int(exponent.value))
        raise ParseError(f"unexpected '{tok.text}'", tok.line, tok.col)

    def _resolve_name(self, tok: Token) -> Expression:
        name = tok.text
        ctx = self.ctx
        calls = self.peek().kind == "op" and self.peek().text == "("
        if calls:
            if name in ELEMENTARY:
                self.next()
                arg = self.expression(0)
                self.expect_op(")")
                return Func(name, (arg,))
            if name in ctx.fns:
                self.next()
                args = [self.expression(0)]
                while self.peek().kind == "op" and self.peek().text == ",":
                    self.next()
                    args.append(self.expression(0))
                self.expect_op(")")
                return Func(name, tuple(args))
            if len(name) > 1 and name[0] == "d" and name[1:] in ctx.coords:
                coord = name[1:]
                self.next()
                inner = self.expression(0)
                self.expect_op(")")
                return differentiate(inner, coord, ctx.deps or None)
            raise ParseError(f"'{name}' is not a function or derivative operator", tok.line, tok.col)
        if name in ctx.lets:
            return ctx.lets[name]
        if name in ctx.fields or name in ctx.givens:
            return DerivativeAtom(name, ())
        if name in ctx.coords or name in ctx.params:
            from .expr import Sym

            return Sym(name)
        raise ParseError(f"undeclared symbol '{name}'", tok.line, tok.col)


def parse_expression(text: str, ctx: ExprContext, line: int = 1, col_offset: int = 0) -> Expression:
    return _ExprParser(_tokenize(text, line, col_offset), ctx).parse()


# ---------------------------------------------------------------------------
# system-level parsing
# ---------------------------------------------------------------------------

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _split_names(rest: str, line: int, col: int) -> list[str]:
    names = [n.strip() for n in rest.split(",")]
    if not names or any(not n for n in names):
        raise ParseError("expected a comma-separated name list", line, col)
    for n in names:
        if not _NAME_RE.match(n):
            raise ParseError(f"invalid name '{n}'", line, col)
    return names


_FIELD_DECL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*\(([^)]*)\)\s*$")


def parse_system(source: str, name: str = "system") -> PdeSystem:
    coords: list[str] = []
    time: str | None = None
    normal: str | None = None
    tangent: list[str] = []
    params: list[str] = []
    fields: list[FieldDecl] = []
    fns: list[str] = []
    lets: dict[str, Expression] = {}
    determined: list[Expression] = []
    over: list[Expression] = []
    aux: dict[str, Expression] = {}
    normal_form: dict[str, Expression] = {}

    ctx = ExprContext()

    def refresh_ctx():
        ctx.coords = tuple(coords)
        ctx.params = tuple(params)
        ctx.fields = tuple(f.name for f in fields if not f.given)
        ctx.givens = tuple(f.name for f in fields if f.given)
        ctx.fns = tuple(fns)
        ctx.lets = lets
        ctx.deps = {f.name: f.coords for f in fields}

    def declare_name(n: str, lineno: int, col: int):
        clash = ctx.reserved_clash(n)
        if clash:
            raise ParseError(clash, lineno, col)
        known = set(coords) | set(params) | {f.name for f in fields} | set(fns) | set(lets)
        if n in known:
            raise ParseError(f"name '{n}' already declared", lineno, col)

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.lstrip()
        indent = len(line) - len(stripped)
        parts = stripped.split(None, 1)
        directive = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        rest_col = line.index(rest, indent + len(directive)) + 1 if rest else indent + len(directive) + 1

        if directive == "coords":
            coords.extend(_split_names(rest, lineno, rest_col))
            refresh_ctx()
        elif directive == "time":
            time = rest.strip()
        elif directive == "normal":
            normal = rest.strip()
        elif directive == "tangent":
            tangent.extend(_split_names(rest, lineno, rest_col))
        elif directive == "param":
            for n in _split_names(rest, lineno, rest_col):
                declare_name(n, lineno, rest_col)
                params.append(n)
            refresh_ctx()
        elif directive in ("field", "given"):
            m = _FIELD_DECL_RE.match(rest)
            if not m:
                raise ParseError("expected '<Name>(<coord>, ...)'", lineno, rest_col)
            fname = m.group(1)
            declare_name(fname, lineno, rest_col)
            fcoords = _split_names(m.group(2), lineno, rest_col)
            for c in fcoords:
                if c not in coords:
                    raise ParseError(f"'{c}' is not a declared coordinate", lineno, rest_col)
            fields.append(FieldDecl(fname, tuple(fcoords), given=(directive == "given")))
            refresh_ctx()
        elif directive == "fn":
            for n in _split_names(rest, lineno, rest_col):
                declare_name(n, lineno, rest_col)
                fns.append(n)
            refresh_ctx()
        elif directive == "let":
            if "=" not in rest:
                raise ParseError("expected 'let <name> = <expression>'", lineno, rest_col)
            lhs, rhs = rest.split("=", 1)
            lname = lhs.strip()
            if not _NAME_RE.match(lname):
                raise ParseError(f"invalid let name '{lname}'", lineno, rest_col)
            declare_name(lname, lineno, rest_col)
            lets[lname] = parse_expression(rhs, ctx, lineno, line.index(rhs, rest_col - 1))
            refresh_ctx()
        elif directive == "eq":
            determined.append(parse_expression(rest, ctx, lineno, rest_col - 1))
        elif directive == "over":
            over.append(parse_expression(rest, ctx, lineno, rest_col - 1))
        elif directive == "aux":
            if "=" not in rest:
                raise ParseError("expected 'aux <name> = <expression>'", lineno, rest_col)
            lhs, rhs = rest.split("=", 1)
            aname = lhs.strip()
            if not _NAME_RE.match(aname) or aname in aux:
                raise ParseError(f"invalid or duplicate aux name '{aname}'", lineno, rest_col)
            aux[aname] = parse_expression(rhs, ctx, lineno, line.index(rhs, rest_col - 1))
        elif directive == "normal_form":
            if "=" not in rest:
                raise ParseError("expected 'normal_form d<coord>(<Field>) = <expression>'", lineno, rest_col)
            lhs, rhs = rest.split("=", 1)
            m = _FIELD_DECL_RE.match(lhs.strip())
            if not m or not m.group(1).startswith("d"):
                raise ParseError("left side must look like d<coord>(<Field>)", lineno, rest_col)
            coord = m.group(1)[1:]
            fname = m.group(2).strip()
            if coord != (normal or ""):
                raise ParseError(f"normal_form must use the normal coordinate 'd{normal}'", lineno, rest_col)
            if fname not in {f.name for f in fields if not f.given}:
                raise ParseError(f"'{fname}' is not a declared unknown field", lineno, rest_col)
            normal_form[fname] = parse_expression(rhs, ctx, lineno, line.index(rhs, rest_col - 1))
        else:
            raise ParseError(f"unknown directive '{directive}'", lineno, indent + 1)

    if not coords:
        raise ParseError("missing 'coords' declaration", 1, 1)
    if time is None:
        raise ParseError("missing 'time' declaration", 1, 1)
    if normal is None:
        raise ParseError("missing 'normal' declaration", 1, 1)
    if not determined and not over:
        raise ParseError("no equations", 1, 1)

    frame = CoordinateFrame(tuple(coords), time, normal, tuple(tangent))
    return PdeSystem(
        name=name,
        frame=frame,
        fields=fields,
        params=params,
        functions=fns,
        determined=determined,
        over=over,
        explicit_normal_form=normal_form or None,
        aux=aux,
    )


def render_system(sys: PdeSystem) -> str:
    """Emit DSL source that parses back to an equivalent system."""
    lines = [f"coords {', '.join(sys.frame.order)}"]
    lines.append(f"time {sys.frame.time}")
    lines.append(f"normal {sys.frame.normal}")
    if sys.frame.tangential:
        lines.append(f"tangent {', '.join(sys.frame.tangential)}")
    if sys.params:
        lines.append(f"param {', '.join(sys.params)}")
    if sys.functions:
        lines.append(f"fn {', '.join(sys.functions)}")
    for f in sys.fields:
        kind = "given" if f.given else "field"
        lines.append(f"{kind} {f.name}({', '.join(f.coords)})")
    for e in sys.determined:
        lines.append(f"eq {render(e)}")
    for e in sys.over:
        lines.append(f"over {render(e)}")
    for fname, e in sys.explicit_normal_form.items():
        lines.append(f"normal_form d{sys.frame.normal}({fname}) = {render(e)}")
    for aname, e in sys.aux.items():
        lines.append(f"aux {aname} = {render(e)}")
    return "\n".join(lines) + "\n"


__all__ = [
    "ExprContext",
    "parse_expression",
    "parse_system",
    "render_system",
    "system_to_json",
]
