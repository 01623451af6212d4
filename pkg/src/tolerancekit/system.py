"""Planar autonomous systems, fixed points and the builtin examples."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import DomainError, ParseError, SystemDefinitionError
from .exprcore import Expr, compile_expr, differentiate, parse_expr, to_text

Point = tuple[float, float]
Matrix = tuple[tuple[float, float], tuple[float, float]]

# Coefficients kept exactly as published.
BUILTINS: dict[str, tuple[str, str, str]] = {
    "ex2": ("x^2/(1+y) - x", "x^2 - y/2", "inhibition in the whole first quadrant"),
    "ex1": ("(0.5*x - y)*(0.1*x/(1+y) - 1)", "0.4*x - y", "inhibition below a curve"),
    "ex3": ("x*((1+y^2)/(1-y+y^2) - 1.9)", "x - y", "saddle and spiral alongside the node"),
}


class PlanarSystem:
    """A 2D vector field (f, g), defined by expressions or by a 2x2 matrix.

    Instances are immutable; compiled evaluators are built lazily and are not
    pickled, so systems can be shipped to worker processes.
    """

    def __init__(
        self,
        name: str,
        f: Expr | None = None,
        g: Expr | None = None,
        matrix: Sequence[Sequence[float]] | None = None,
    ):
        self.name = name
        if matrix is not None:
            if f is not None or g is not None:
                raise ValueError("give either expressions or a matrix, not both")
            (a, b), (c, d) = matrix
            self.kind = "linear"
            self.A: Matrix | None = ((float(a), float(b)), (float(c), float(d)))
            self.f = self.g = None
            self.partials = None
        else:
            if f is None or g is None:
                raise ValueError("expression systems need both f and g")
            self.kind = "expression"
            self.A = None
            self.f, self.g = f, g
            self.partials = (
                differentiate(f, "x"),
                differentiate(f, "y"),
                differentiate(g, "x"),
                differentiate(g, "y"),
            )
        self._compiled: tuple[Callable, ...] | None = None

    # pickling drops the compiled closures
    def __getstate__(self):
        state = self.__dict__.copy()
        state["_compiled"] = None
        return state

    def __repr__(self) -> str:
        if self.kind == "linear":
            return f"PlanarSystem({self.name!r}, A={self.A})"
        return f"PlanarSystem({self.name!r}, f={to_text(self.f)!r}, g={to_text(self.g)!r})"

    def _fns(self) -> tuple[Callable, ...]:
        if self._compiled is None:
            if self.kind == "linear":
                (a, b), (c, d) = self.A
                self._compiled = (
                    lambda x, y: a * x + b * y,
                    lambda x, y: c * x + d * y,
                    lambda x, y: a,
                    lambda x, y: b,
                    lambda x, y: c,
                    lambda x, y: d,
                )
            else:
                self._compiled = tuple(compile_expr(e) for e in (self.f, self.g, *self.partials))
        return self._compiled

    @property
    def f_fn(self) -> Callable[[float, float], float]:
        return self._fns()[0]

    @property
    def g_fn(self) -> Callable[[float, float], float]:
        return self._fns()[1]

    def field(self, x: float, y: float) -> Point:
        fns = self._fns()
        return fns[0](x, y), fns[1](x, y)

    def f_value(self, x: float, y: float) -> float:
        return self._fns()[0](x, y)

    def g_value(self, x: float, y: float) -> float:
        return self._fns()[1](x, y)

    def f_y(self, x: float, y: float) -> float:
        return self._fns()[3](x, y)

    def jacobian(self, x: float, y: float) -> Matrix:
        fns = self._fns()
        return ((fns[2](x, y), fns[3](x, y)), (fns[4](x, y), fns[5](x, y)))

    def describe(self) -> dict:
        if self.kind == "linear":
            return {"name": self.name, "kind": "linear", "A": [list(r) for r in self.A]}
        return {"name": self.name, "kind": "expression", "f": to_text(self.f), "g": to_text(self.g)}


def from_expressions(name: str, f_text: str, g_text: str) -> PlanarSystem:
    return PlanarSystem(name, parse_expr(f_text), parse_expr(g_text))


def linear(A: Sequence[Sequence[float]], name: str = "linear") -> PlanarSystem:
    return PlanarSystem(name, matrix=A)


def builtin(name: str) -> PlanarSystem:
    try:
        f_text, g_text, _ = BUILTINS[name]
    except KeyError:
        raise SystemDefinitionError(
            f"unknown builtin {name!r}; available: {', '.join(sorted(BUILTINS))}"
        ) from None
    return from_expressions(name, f_text, g_text)


def jacobian_at(sys: PlanarSystem, p: Point) -> Matrix:
    return sys.jacobian(p[0], p[1])


def isocline_value(sys: PlanarSystem, p: Point) -> float:
    """The level C = f(p) of the isocline through p."""
    return sys.f_value(p[0], p[1])


# ---------------------------------------------------------------- eigen analysis


def eigenvalues_2x2(J: Matrix) -> tuple[complex, complex] | tuple[float, float]:
    """Eigenvalues sorted descending when real; (re+im, re-im) when complex."""
    (a, b), (c, d) = J
    tr = a + d
    det = a * d - b * c
    disc = (a - d) * (a - d) + 4.0 * b * c
    if disc >= 0.0:
        s = math.sqrt(disc)
        # avoid cancellation in the smaller-magnitude root
        q = 0.5 * (tr + math.copysign(s, tr))
        r2 = det / q if q != 0.0 else 0.0
        return max(q, r2), min(q, r2)
    s = cmath.sqrt(disc)
    return (0.5 * (tr + s), 0.5 * (tr - s))


@dataclass(frozen=True)
class FixedPointReport:
    location: Point
    eigenvalues: tuple
    classification: str
    satisfies_A1: bool
    residual: float = 0.0

    def to_dict(self) -> dict:
        ev = [
            {"re": e.real, "im": e.imag} if isinstance(e, complex) else e for e in self.eigenvalues
        ]
        return {
            "location": list(self.location),
            "eigenvalues": ev,
            "classification": self.classification,
            "satisfies_A1": self.satisfies_A1,
        }


def classify_fixed_point(J: Matrix, degenerate_tol: float = 1e-9) -> tuple[tuple, str, bool]:
    ev = eigenvalues_2x2(J)
    if isinstance(ev[0], complex):
        re = ev[0].real
        if re < 0:
            label = "stable spiral"
        elif re > 0:
            label = "unstable spiral"
        else:
            label = "degenerate"
        return ev, label, False
    l1, l2 = ev
    a1 = l1 < 0 and l2 < 0
    scale = max(abs(l1), abs(l2))
    if l1 == 0.0 or l2 == 0.0 or abs(l1 - l2) < degenerate_tol * max(scale, 1e-300):
        return ev, "degenerate", a1
    if l1 < 0:
        label = "stable node"
    elif l2 > 0:
        label = "unstable node"
    else:
        label = "saddle"
    return ev, label, a1


def _newton(sys: PlanarSystem, x: float, y: float, max_iter: int = 50) -> tuple[float, float, float] | None:
    def resid(px, py):
        fx, gy = sys.field(px, py)
        return math.hypot(fx, gy), fx, gy

    try:
        r, fv, gv = resid(x, y)
    except DomainError:
        return None
    for _ in range(max_iter):
        if r <= 1e-14:
            break
        try:
            (a, b), (c, d) = sys.jacobian(x, y)
        except DomainError:
            return None
        det = a * d - b * c
        if det == 0.0 or not math.isfinite(det):
            return None
        dx = (d * fv - b * gv) / det
        dy = (-c * fv + a * gv) / det
        lam = 1.0
        while True:
            nx, ny = x - lam * dx, y - lam * dy
            try:
                nr, nf, ng = resid(nx, ny)
            except DomainError:
                nr = math.inf
            if nr < r or lam < 1e-4:
                break
            lam *= 0.5
        if not math.isfinite(nr):
            return None
        if nr >= r and lam < 1e-4:
            break
        x, y, r, fv, gv = nx, ny, nr, nf, ng
    return x, y, r


def find_fixed_points(
    sys: PlanarSystem,
    search_box: tuple[float, float, float, float],
    grid: int = 10,
    dedupe: float = 1e-6,
) -> list[FixedPointReport]:
    """Multi-start damped Newton on (f, g) = 0 from a uniform grid of seeds.

    ``search_box`` is (xmin, xmax, ymin, ymax). Results are sorted by x then y.
    """
    if grid < 2:
        raise ValueError("grid must be at least 2")
    xmin, xmax, ymin, ymax = search_box
    pad = 1e-9 * max(1.0, abs(xmax - xmin), abs(ymax - ymin))
    found: list[tuple[float, float, float]] = []
    for i in range(grid):
        for j in range(grid):
            sx = xmin + (xmax - xmin) * i / (grid - 1)
            sy = ymin + (ymax - ymin) * j / (grid - 1)
            res = _newton(sys, sx, sy)
            if res is None:
                continue
            x, y, r = res
            if r > 1e-10:
                continue
            if not (xmin - pad <= x <= xmax + pad and ymin - pad <= y <= ymax + pad):
                continue
            if any(math.hypot(x - u, y - v) < dedupe for u, v, _ in found):
                continue
            found.append((x, y, r))
    reports = []
    for x, y, r in sorted(found):
        ev, label, a1 = classify_fixed_point(sys.jacobian(x, y))
        reports.append(FixedPointReport((x, y), ev, label, a1, r))
    return reports


def node_report(sys: PlanarSystem, node: Point = (0.0, 0.0)) -> FixedPointReport:
    fx, gy = sys.field(*node)
    ev, label, a1 = classify_fixed_point(sys.jacobian(*node))
    residual = math.hypot(fx, gy)
    if residual > 1e-10:
        return FixedPointReport(node, ev, "not a fixed point", False, residual)
    return FixedPointReport(node, ev, label, a1 and label in ("stable node", "degenerate"), residual)


# ---------------------------------------------------------------- definition files

_KEYS = ("name", "f", "g", "A")


def parse_system_text(text: str, source: str = "<text>") -> PlanarSystem:
    """Parse a system definition.

    One ``key=value`` per line; ``#`` starts a comment. Keys: ``name``, and
    either ``f`` and ``g`` (expressions) or ``A=a11,a12,a21,a22``.
    """
    values: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemDefinitionError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise SystemDefinitionError(f"{source}:{lineno}: unknown key {key!r} (allowed: {', '.join(_KEYS)})")
        if key in values:
            raise SystemDefinitionError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = (value, lineno)

    name = values.get("name", (Path(source).stem or "system", 0))[0]
    if "A" in values:
        if "f" in values or "g" in values:
            raise SystemDefinitionError(f"{source}:{values['A'][1]}: give either A or f/g, not both")
        value, lineno = values["A"]
        try:
            nums = [float(s) for s in value.split(",")]
        except ValueError:
            raise SystemDefinitionError(f"{source}:{lineno}: A must be four comma-separated numbers") from None
        if len(nums) != 4:
            raise SystemDefinitionError(f"{source}:{lineno}: A must be four comma-separated numbers")
        return linear(((nums[0], nums[1]), (nums[2], nums[3])), name=name)
    exprs = {}
    for key in ("f", "g"):
        if key not in values:
            raise SystemDefinitionError(f"{source}: missing key {key!r}")
        value, lineno = values[key]
        try:
            exprs[key] = parse_expr(value)
        except ParseError as exc:
            raise SystemDefinitionError(f"{source}:{lineno}: {exc}") from exc
    return PlanarSystem(name, exprs["f"], exprs["g"])


def load_system(spec: str) -> PlanarSystem:
    """A builtin name or the path of a definition file."""
    if spec in BUILTINS:
        return builtin(spec)
    path = Path(spec)
    if path.is_file():
        return parse_system_text(path.read_text(), str(path))
    raise SystemDefinitionError(
        f"{spec!r} is neither a builtin ({', '.join(sorted(BUILTINS))}) nor a readable file"
    )


__all__ = [
    "BUILTINS",
    "FixedPointReport",
    "PlanarSystem",
    "builtin",
    "classify_fixed_point",
    "eigenvalues_2x2",
    "find_fixed_points",
    "from_expressions",
    "isocline_value",
    "jacobian_at",
    "linear",
    "load_system",
    "node_report",
    "parse_system_text",
]
