"""Numeric oracle layer: grids, finite differences, residual reports,
fixed-step integration, and manufactured over-determined systems.

Analytic mode differentiates closed-form fields symbolically and samples the
result; finite-difference mode differentiates sampled arrays with centered
second-order stencils.  Keeping both paths separate lets one validate the
equations and the other validate the symbolic kernel.
"""

from __future__ import annotations

import io
import math
import random
from dataclasses import dataclass, field as dataclass_field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import (
    DivisionByZeroAt,
    EvaluationError,
    GridError,
    UnboundSymbolError,
    VerificationError,
)
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
    atom,
    derivative_atoms,
    exp as exp_expr,
    render,
    sym,
)
from .calculus import differentiate_multi, subs_atoms
from .model import CoordinateFrame, FieldDecl, PdeSystem
from .reduction import CauchyForm

_NUMPY_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "ln": np.log}


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < 2 or self.hi <= self.lo:
            raise GridError(f"bad axis {self.name}: [{self.lo}, {self.hi}] with {self.n} points")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)


@dataclass(frozen=True)
class Grid:
    axes: tuple[Axis, ...]

    @classmethod
    def make(cls, spec: Sequence[tuple[str, float, float, int]]) -> "Grid":
        return cls(tuple(Axis(*s) for s in spec))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.n for a in self.axes)

    def axis(self, name: str) -> int:
        for i, a in enumerate(self.axes):
            if a.name == name:
                return i
        raise GridError(f"axis '{name}' not in grid")

    def meshes(self) -> dict[str, np.ndarray]:
        arrays = np.meshgrid(*(a.points() for a in self.axes), indexing="ij")
        return {a.name: arr for a, arr in zip(self.axes, arrays)}

    def locate(self, index: tuple[int, ...]) -> str:
        coords = ", ".join(
            f"{a.name}={a.points()[i]:.6g}" for a, i in zip(self.axes, index)
        )
        return f"({coords})"

    def to_json_dict(self) -> dict:
        return {
            "axes": [
                {"name": a.name, "min": a.lo, "max": a.hi, "points": a.n, "h": a.h}
                for a in self.axes
            ]
        }


@dataclass
class FieldSample:
    name: str
    grid: Grid
    values: np.ndarray
    bands: dict[str, int] = dataclass_field(default_factory=dict)

    def interior_slices(self) -> tuple[slice, ...]:
        out = []
        for a in self.grid.axes:
            b = self.bands.get(a.name, 0)
            out.append(slice(b, a.n - b if b else None))
        return tuple(out)


ArrayBinding = Mapping[str | DerivativeAtom, np.ndarray | float]


def evaluate_array(
    e: Expression,
    binding: ArrayBinding,
    functions: Mapping[str, Callable] | None = None,
    locate: Callable[[tuple[int, ...]], str] | None = None,
):
    """Vectorized evaluation; leaves may be numpy arrays."""

    def where_of(mask) -> str:
        idx = tuple(int(v) for v in np.argwhere(mask)[0])
        return locate(idx) if locate else f"index {idx}"

    def rec(node: Expression):
        if isinstance(node, Const):
            return float(node.value)
        if isinstance(node, Sym):
            try:
                return binding[node.name]
            except KeyError:
                raise UnboundSymbolError(f"symbol '{node.name}' is not bound") from None
        if isinstance(node, DerivativeAtom):
            try:
                return binding[node]
            except KeyError:
                raise UnboundSymbolError(
                    f"derivative atom '{render(node)}' is not bound"
                ) from None
        if isinstance(node, Add):
            out = rec(node.terms[0])
            for t in node.terms[1:]:
                out = out + rec(t)
            return out
        if isinstance(node, Mul):
            out = rec(node.factors[0])
            for f in node.factors[1:]:
                out = out * rec(f)
            return out
        if isinstance(node, Div):
            den = rec(node.den)
            mask = np.asarray(den) == 0.0
            if np.any(mask):
                raise DivisionByZeroAt(render(node.den), where_of(mask))
            return rec(node.num) / den
        if isinstance(node, Pow):
            base = rec(node.base)
            if node.exponent < 0:
                mask = np.asarray(base) == 0.0
                if np.any(mask):
                    raise DivisionByZeroAt(render(node.base), where_of(mask))
            return np.power(base, node.exponent) if not np.isscalar(base) else base ** node.exponent
        if isinstance(node, Func):
            vals = [rec(a) for a in node.args]
            impl = _NUMPY_FUNCS.get(node.name)
            if impl is not None:
                with np.errstate(invalid="raise", divide="raise"):
                    try:
                        return impl(vals[0])
                    except FloatingPointError as exc:
                        raise EvaluationError(f"{node.name}: {exc}") from None
            if functions and node.name in functions:
                return functions[node.name](*vals)
            raise UnboundSymbolError(f"no callable bound for function '{node.name}'")
        raise TypeError(f"unknown node {node!r}")

    return rec(e)


def sample(
    e: Expression,
    grid: Grid,
    params: Mapping[str, float] | None = None,
    functions: Mapping[str, Callable] | None = None,
    name: str = "",
) -> FieldSample:
    """Pointwise evaluation of a closed-form expression on a grid."""
    binding: dict = dict(grid.meshes())
    for k, v in (params or {}).items():
        binding[k] = float(v)
    values = evaluate_array(e, binding, functions, locate=grid.locate)
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        values = np.broadcast_to(values, grid.shape).copy()
    return FieldSample(name or render(e), grid, values)


def fd_derivative(fs: FieldSample, axis: str, order: int) -> FieldSample:
    """Centered second-order finite difference along one grid axis.

    Orders above one are built by composing the three-point first and second
    derivative stencils; every application widens the invalid boundary band
    by one point on each side (values there are NaN).
    """
    if order < 0:
        raise GridError("derivative order must be nonnegative")
    if order == 0:
        return fs
    ai = fs.grid.axis(axis)
    ax = fs.grid.axes[ai]
    if ax.n < 5:
        raise GridError(f"axis '{axis}' needs at least 5 points for differencing, has {ax.n}")
    h = ax.h
    values = fs.values
    bands = dict(fs.bands)
    remaining = order
    while remaining > 0:
        out = np.full_like(values, np.nan)
        src = np.moveaxis(values, ai, 0)
        dst = np.moveaxis(out, ai, 0)
        if remaining >= 2:
            dst[1:-1] = (src[2:] - 2.0 * src[1:-1] + src[:-2]) / (h * h)
            remaining -= 2
        else:
            dst[1:-1] = (src[2:] - src[:-2]) / (2.0 * h)
            remaining -= 1
        bands[axis] = bands.get(axis, 0) + 1
        values = out
    width = bands[axis]
    if 2 * width >= ax.n:
        raise GridError(f"axis '{axis}' too small: stencil consumed every point")
    return FieldSample(f"d{axis}^{order}({fs.name})", fs.grid, values, bands)


@dataclass
class EquationResidual:
    name: str
    max: float
    l2: float

    def to_json_dict(self) -> dict:
        return {"name": self.name, "max": self.max, "l2": self.l2}


@dataclass
class ResidualReport:
    system: str
    mode: str
    grid: Grid
    per_equation: list[EquationResidual]
    excluded_points: int = 0
    orders: list[dict] | None = None

    def max_residual(self) -> float:
        return max((e.max for e in self.per_equation), default=0.0)

    def to_json_dict(self) -> dict:
        return {
            "system": self.system,
            "mode": self.mode,
            "grid": self.grid.to_json_dict(),
            "per_equation": [e.to_json_dict() for e in self.per_equation],
            "excluded_points": self.excluded_points,
            "orders": self.orders,
        }


def _norms(values: np.ndarray, interior: tuple[slice, ...]) -> tuple[float, float]:
    region = values[interior]
    region = region[np.isfinite(region)]
    if region.size == 0:
        raise GridError("no interior points left after stencil exclusion")
    return float(np.max(np.abs(region))), float(math.sqrt(float(np.mean(region * region))))


def residual(
    equations: PdeSystem | Sequence[tuple[str, Expression]],
    fields: Mapping[str, Expression | FieldSample],
    grid: Grid,
    params: Mapping[str, float] | None = None,
    mode: str = "analytic",
    functions: Mapping[str, Callable] | None = None,
    deps: Mapping[str, tuple[str, ...]] | None = None,
    system_name: str = "",
) -> ResidualReport:
    """Per-equation residual norms of the supplied fields on a grid.

    Fields given as expressions are differentiated symbolically (analytic
    mode) or sampled and differenced (fd mode).  Orders along coordinates
    that are not grid axes always come from the closed form; bind such
    coordinates in ``params``.
    """
    if isinstance(equations, PdeSystem):
        deps = equations.deps
        system_name = system_name or equations.name
        named = [(f"eq{i + 1}", e) for i, e in enumerate(equations.determined)]
        named += [(f"over{i + 1}", e) for i, e in enumerate(equations.over)]
    else:
        named = list(equations)
    if mode not in ("analytic", "fd"):
        raise VerificationError(f"unknown mode '{mode}'")

    meshes = grid.meshes()
    base_binding: dict = dict(meshes)
    for k, v in (params or {}).items():
        base_binding.setdefault(k, float(v))

    per_eq: list[EquationResidual] = []
    excluded = 0
    sample_cache: dict[str, FieldSample] = {}
    fd_cache: dict[DerivativeAtom, FieldSample] = {}

    def field_expr(name: str) -> Expression:
        f = fields[name]
        if not isinstance(f, Expression):
            raise VerificationError(
                f"field '{name}' must be a closed form for this operation"
            )
        return f

    for eq_name, eq in named:
        atoms = sorted(derivative_atoms(eq), key=render)
        missing = [a.field for a in atoms if a.field not in fields]
        if missing:
            raise VerificationError(f"missing field(s): {sorted(set(missing))}")
        binding = dict(base_binding)
        bands: dict[str, int] = {}
        if mode == "analytic":
            mapping = {
                a: differentiate_multi(field_expr(a.field), dict(a.orders), deps)
                for a in atoms
            }
            expr = subs_atoms(eq, mapping)
            values = evaluate_array(expr, binding, functions, locate=grid.locate)
        else:
            axis_names = set(grid.names)
            for a in atoms:
                if a in fd_cache:
                    fsample = fd_cache[a]
                else:
                    grid_orders = {c: k for c, k in a.orders if c in axis_names}
                    off_orders = {c: k for c, k in a.orders if c not in axis_names}
                    f = fields[a.field]
                    if off_orders or isinstance(f, Expression):
                        base = sample(
                            differentiate_multi(field_expr(a.field), off_orders, deps),
                            grid,
                            params,
                            functions,
                            name=a.field,
                        )
                    else:
                        base = f
                    fsample = base
                    for c, k in grid_orders.items():
                        fsample = fd_derivative(fsample, c, k)
                    fd_cache[a] = fsample
                binding[a] = fsample.values
                for c, b in fsample.bands.items():
                    bands[c] = max(bands.get(c, 0), b)
            values = evaluate_array(eq, binding, functions, locate=grid.locate)
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            values = np.broadcast_to(values, grid.shape).copy()
        interior = tuple(
            slice(bands.get(a.name, 0), a.n - bands.get(a.name, 0) or None)
            for a in grid.axes
        )
        total = values.size
        kept = values[interior].size
        excluded = max(excluded, total - kept)
        mx, l2 = _norms(values, interior)
        per_eq.append(EquationResidual(eq_name, mx, l2))
    return ResidualReport(system_name or "expressions", mode, grid, per_eq, excluded)


def convergence_order(coarse: ResidualReport, fine: ResidualReport) -> list[dict]:
    """Observed order between a grid and its refinement, per equation.

    Residuals at rounding level on both grids are flagged "exact".
    """
    out = []
    floor = 1e-13
    for c, f in zip(coarse.per_equation, fine.per_equation):
        if c.name != f.name:
            raise VerificationError("reports do not match equation-for-equation")
        if c.max < floor and f.max < floor:
            out.append({"name": c.name, "order": None, "exact": True})
            continue
        if f.max == 0.0:
            out.append({"name": c.name, "order": None, "exact": True})
            continue
        out.append(
            {
                "name": c.name,
                "order": math.log2(c.max / f.max),
                "order_l2": math.log2(c.l2 / f.l2) if f.l2 > 0 else None,
                "exact": False,
            }
        )
    return out


# ---------------------------------------------------------------------------
# fixed-step classical Runge-Kutta
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    names: list[str]
    times: np.ndarray
    values: np.ndarray  # shape (len(times), len(names))

    def final(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values[-1])}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(["t"] + self.names) + "\n")
        for t, row in zip(self.times, self.values):
            buf.write(",".join([f"{t:.12g}"] + [f"{v:.17g}" for v in row]) + "\n")
        return buf.getvalue()


def rk4(f: Callable[[float, np.ndarray], np.ndarray], y0: np.ndarray, t0: float, t1: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    if dt <= 0:
        raise VerificationError("dt must be positive")
    steps = int(round((t1 - t0) / dt))
    times = t0 + dt * np.arange(steps + 1)
    out = np.empty((steps + 1, len(y0)))
    out[0] = y0
    y = np.array(y0, dtype=float)
    for i in range(steps):
        t = times[i]
        k1 = f(t, y)
        k2 = f(t + dt / 2, y + dt / 2 * k1)
        k3 = f(t + dt / 2, y + dt / 2 * k2)
        k4 = f(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise VerificationError(f"state became non-finite at t={t + dt:.6g}")
        out[i + 1] = y
    return times, out


def integrate_ode(
    cf: CauchyForm,
    sys: PdeSystem,
    point: Mapping[str, float],
    initial: Mapping[DerivativeAtom, float],
    t_span: tuple[float, float],
    dt: float,
    params: Mapping[str, float] | None = None,
) -> Trajectory:
    """Integrate the evolution form at a frozen point with classical RK4.

    State atoms are the time derivatives below the top order; the top-order
    right-hand sides come from the Cauchy form.
    """
    tname = sys.frame.time
    p = cf.order
    state_atoms: list[DerivativeAtom] = []
    for f in sys.unknowns:
        for j in range(p):
            state_atoms.append(atom(f.name, **{tname: j}) if j else atom(f.name))
    index = {a: i for i, a in enumerate(state_atoms)}
    tops = {f.name: atom(f.name, **{tname: p}) for f in sys.unknowns}

    fixed: dict = {k: float(v) for k, v in point.items()}
    for k, v in (params or {}).items():
        fixed[k] = float(v)

    def f(t: float, y: np.ndarray) -> np.ndarray:
        binding: dict = dict(fixed)
        binding[tname] = t
        for a, i in index.items():
            binding[a] = y[i]
        dydt = np.empty_like(y)
        for a, i in index.items():
            j = a.order_in(tname)
            if j + 1 < p:
                dydt[i] = y[index[atom(a.field, **{tname: j + 1})]]
            else:
                from .expr import evaluate

                dydt[i] = evaluate(cf.rhs[tops[a.field]], binding)
        return dydt

    y0 = np.array([float(initial[a]) for a in state_atoms])
    times, values = rk4(f, y0, t_span[0], t_span[1], dt)
    return Trajectory([render(a) for a in state_atoms], times, values)


# ---------------------------------------------------------------------------
# manufactured over-determined systems (end-to-end oracle)
# ---------------------------------------------------------------------------

_FRACTION_POOL = [
    Fraction(n, d)
    for d in (1, 2, 3)
    for n in range(-3, 4)
    if n != 0 and abs(Fraction(n, d)) <= 2
]


def manufactured_overdetermined(seed: int):
    """A two-field linear system with constant rational coefficients plus one
    extra equation, built to admit a shared-exponential exact solution pair.

    Returns (system, exact fields, info).  Degenerate draws (identically
    zero leading determinant) are re-seeded deterministically.
    """
    from .model import solve_normal_form
    from .reduction import build_chain, leading_matrix

    for attempt in range(32):
        rng = random.Random(seed * 1009 + attempt)
        pick = lambda: rng.choice(_FRACTION_POOL)
        a, b = pick(), pick()
        amp2 = pick()

        t, x = sym("t"), sym("x")
        S1, S2 = atom("S1"), atom("S2")
        S1t, S2t = atom("S1", t=1), atom("S2", t=1)
        S1x, S2x = atom("S1", x=1), atom("S2", x=1)

        # eq k: dx(Sk) = ck1*S1 + ck2*S2 + ck3*dt(S1) + ck4*dt(S2),
        # with one coefficient solved so exp(a t + b x)*(1, amp2) is exact.
        c12, c13, c14 = pick(), pick(), pick()
        c11 = b - c12 * amp2 - a * c13 - a * c14 * amp2
        c21, c23, c24 = pick(), pick(), pick()
        c22 = (b * amp2 - c21 - a * c23 - a * c24 * amp2) / amp2

        g1, g2, g3 = pick(), pick(), pick()
        g4 = -(g1 * a + g2 * a * amp2 + g3) / amp2

        eq1 = S1x - (Const(c11) * S1 + Const(c12) * S2 + Const(c13) * S1t + Const(c14) * S2t)
        eq2 = S2x - (Const(c21) * S1 + Const(c22) * S2 + Const(c23) * S1t + Const(c24) * S2t)
        over = Const(g1) * S1t + Const(g2) * S2t + Const(g3) * S1 + Const(g4) * S2

        frame = CoordinateFrame(("t", "x"), "t", "x")
        sysm = PdeSystem(
            name=f"manufactured_{seed}",
            frame=frame,
            fields=[FieldDecl("S1", ("t", "x")), FieldDecl("S2", ("t", "x"))],
            determined=[eq1, eq2],
            over=[over],
        )
        phase = exp_expr(Const(a) * t + Const(b) * x)
        exact = {"S1": phase, "S2": Const(amp2) * phase}
        try:
            nf = solve_normal_form(sysm)
            chain = build_chain(sysm, nf, 0)
            m = leading_matrix(chain)
        except Exception:
            continue
        from .expr import ZERO

        if m.determinant == ZERO:
            continue
        info = {"a": a, "b": b, "amp2": amp2, "attempt": attempt}
        return sysm, exact, info
    raise VerificationError(f"could not draw a nondegenerate system for seed {seed}")


# ---------------------------------------------------------------------------
# pointwise least-squares solve for the transport-correction field
# ---------------------------------------------------------------------------

def transport_correction(
    omega: Sequence[Expression],
    rhs: Sequence[Expression],
    coords: Sequence[str],
    grid: Grid,
    params: Mapping[str, float] | None = None,
    deps: Mapping[str, tuple[str, ...]] | None = None,
    cond_limit: float = 1e8,
):
    """Solve, at every grid point, the linear system

        (alpha . grad) omega_i = rhs_i

    for the correction vector alpha by minimum-norm least squares.  Points
    whose gradient matrix has condition number above ``cond_limit`` are
    excluded (returned mask False) and counted.
    """
    ncomp = len(omega)
    nspace = len(coords)
    grads = np.empty((ncomp, nspace) + grid.shape)
    for i, w in enumerate(omega):
        for j, c in enumerate(coords):
            grads[i, j] = sample(
                differentiate_multi(w, {c: 1}, deps), grid, params
            ).values
    rhs_vals = np.empty((ncomp,) + grid.shape)
    for i, r in enumerate(rhs):
        rhs_vals[i] = sample(r, grid, params).values

    shape = grid.shape
    alpha = np.zeros((nspace,) + shape)
    mask = np.zeros(shape, dtype=bool)
    excluded = 0
    flat = int(np.prod(shape))
    g2 = grads.reshape(ncomp, nspace, flat)
    r2 = rhs_vals.reshape(ncomp, flat)
    a2 = alpha.reshape(nspace, flat)
    m2 = mask.reshape(flat)
    for k in range(flat):
        M = g2[:, :, k]
        sv = np.linalg.svd(M, compute_uv=False)
        smax = sv[0] if len(sv) else 0.0
        smin = sv[-1] if len(sv) else 0.0
        # minimum-norm solution is still defined for rank-deficient M; the
        # condition filter uses the smallest *nonzero* singular value
        nonzero = sv[sv > smax * 1e-13]
        if smax == 0.0 or len(nonzero) == 0:
            excluded += 1
            continue
        cond = smax / nonzero[-1]
        if cond > cond_limit and smin > 0 and smax / smin > cond_limit:
            excluded += 1
            continue
        sol, *_ = np.linalg.lstsq(M, r2[:, k], rcond=None)
        a2[:, k] = sol
        m2[k] = True
    return alpha, mask, excluded


def surface_speed(
    surface: Expression,
    tname: str,
    space: Sequence[str],
    binding: Mapping[str, float],
) -> float:
    """Numeric surface speed  F_t / |grad F|  at a point."""
    from .expr import evaluate

    ft = evaluate(differentiate_multi(surface, {tname: 1}), binding)
    grad = [evaluate(differentiate_multi(surface, {c: 1}), binding) for c in space]
    norm = math.sqrt(sum(g * g for g in grad))
    if norm == 0.0:
        raise VerificationError("surface gradient vanishes at the point")
    return ft / norm
