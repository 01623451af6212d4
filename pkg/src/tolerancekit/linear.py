"""Closed-form tolerance analysis for linear systems x' = A x with a stable node."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import PreconditionError
from .system import eigenvalues_2x2

Point = tuple[float, float]
Vec = tuple[float, float]

NORMALIZE_EPS = 1e-12
DEGENERATE_EPS = 1e-9


def expm2(A: Sequence[Sequence[float]], t: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """exp(A t) for a real 2x2 matrix, via exp(mu t) [c(t) I + s(t) (A - mu I)]."""
    (a, b), (c, d) = A
    mu = 0.5 * (a + d)
    n11, n22 = a - mu, d - mu
    q = n11 * n11 + b * c  # (A - mu I)^2 = q I
    if q > 0:
        r = math.sqrt(q)
        ch = math.cosh(r * t)
        sh = math.sinh(r * t) / r
    elif q < 0:
        r = math.sqrt(-q)
        ch = math.cos(r * t)
        sh = math.sin(r * t) / r
    else:
        ch, sh = 1.0, t
    e = math.exp(mu * t)
    return (
        (e * (ch + sh * n11), e * sh * b),
        (e * sh * c, e * (ch + sh * n22)),
    )


def _null_vector(a: float, b: float, c: float, d: float) -> Vec:
    """A unit vector spanning the kernel of the (numerically singular) [[a, b], [c, d]]."""
    c1 = (b, -a)
    c2 = (d, -c)
    n1 = math.hypot(*c1)
    n2 = math.hypot(*c2)
    v, n = (c1, n1) if n1 >= n2 else (c2, n2)
    if n == 0.0:
        return (1.0, 0.0)
    return (v[0] / n, v[1] / n)


def _normalize_first(v: Vec) -> tuple[Vec, bool]:
    """Scale so the first component is 1, or return (0, 1) when it vanishes."""
    if abs(v[0]) <= NORMALIZE_EPS * math.hypot(*v):
        return (0.0, 1.0), True
    return (1.0, v[1] / v[0]), False


@dataclass(frozen=True)
class Coefficients:
    first: float
    second: float

    def __iter__(self):
        return iter((self.first, self.second))


@dataclass(frozen=True)
class LinearAnalysis:
    A: tuple[tuple[float, float], tuple[float, float]]
    lam1: float  # weak (slower) eigenvalue
    lam2: float  # strong eigenvalue; equals lam1 when repeated
    v: Vec
    w: Vec | None
    vbar: Vec | None
    case: str
    evc: str
    flags: tuple[str, ...] = ()

    @property
    def basis(self) -> tuple[Vec, Vec]:
        if self.case == "2b":
            return self.v, self.vbar
        return self.v, self.w

    def to_dict(self) -> dict:
        return {
            "A": [list(r) for r in self.A],
            "eigenvalues": [self.lam1, self.lam2],
            "v": list(self.v),
            "w": list(self.w) if self.w is not None else None,
            "vbar": list(self.vbar) if self.vbar is not None else None,
            "case": self.case,
            "evc": self.evc,
            "flags": list(self.flags),
        }


def analyze(A: Sequence[Sequence[float]]) -> LinearAnalysis:
    """Eigenstructure, case label and eigenvector configuration of A."""
    (a, b), (c, d) = ((float(A[0][0]), float(A[0][1])), (float(A[1][0]), float(A[1][1])))
    A = ((a, b), (c, d))
    ev = eigenvalues_2x2(A)
    if isinstance(ev[0], complex):
        raise PreconditionError("A1", f"complex eigenvalues {ev[0]:.6g}, {ev[1]:.6g}")
    lam1, lam2 = ev
    if not (lam1 < 0 and lam2 < 0):
        raise PreconditionError("A1", f"eigenvalues {lam1:.6g}, {lam2:.6g} are not both negative")
    flags: list[str] = []
    scale = max(abs(lam1), abs(lam2))
    if abs(lam1 - lam2) < DEGENERATE_EPS * scale:
        lam = 0.5 * (a + d)
        n11, n12, n21, n22 = a - lam, b, c, d - lam
        if max(abs(n11), abs(n12), abs(n21), abs(n22)) <= DEGENERATE_EPS * abs(lam):
            return LinearAnalysis(A, lam, lam, (1.0, 0.0), (0.0, 1.0), None, "2a", "none", ("scalar",))
        v, v_axis = _normalize_first(_null_vector(n11, n12, n21, n22))
        sol, *_ = np.linalg.lstsq(np.array([[n11, n12], [n21, n22]]), np.array(v), rcond=None)
        if not v_axis:
            # v1 = 1: remove the v-component so the generalized vector has first entry 0
            vbar = (0.0, float(sol[1] - sol[0] * v[1]))
        else:
            vbar = (float(sol[0]), 0.0)
            flags.append("v1=0: outside the stated 2b configuration")
        evc = "d" if (not v_axis and v[1] > 0) else "none"
        return LinearAnalysis(A, lam, lam, v, None, vbar, "2b", evc, tuple(flags))

    v, v_axis = _normalize_first(_null_vector(a - lam1, b, c, d - lam1))
    w, w_axis = _normalize_first(_null_vector(a - lam2, b, c, d - lam2))
    for name, vec in (("v", v), ("w", w)):
        if vec[0] != 0.0 and abs(1.0 / math.hypot(*vec)) < 1e-8:
            flags.append(f"{name} nearly vertical: case boundary sensitive")
    if v_axis:
        case = "1a"
    elif w_axis:
        case = "1b"
    else:
        case = "1c"
    evc = "none"
    if case == "1c" and v[1] > 0:
        if w[1] > v[1]:
            evc = "b"
        elif w[1] > 0:
            evc = "c"
        else:
            evc = "a"
    return LinearAnalysis(A, lam1, lam2, v, w, None, case, evc, tuple(flags))


def decompose_point(an: LinearAnalysis, p: Point) -> Coefficients:
    """Coordinates of p in the case basis (v, w) or (v, vbar)."""
    e1, e2 = an.basis
    det = e1[0] * e2[1] - e2[0] * e1[1]
    c1 = (p[0] * e2[1] - e2[0] * p[1]) / det
    c2 = (e1[0] * p[1] - p[0] * e1[1]) / det
    return Coefficients(c1, c2)


def closed_form(an: LinearAnalysis, p: Point, t: float) -> Point:
    """Exact solution from p at time t."""
    c1, c2 = decompose_point(an, p)
    if an.case == "2a":
        e = math.exp(an.lam1 * t)
        return (p[0] * e, p[1] * e)
    if an.case == "2b":
        e = math.exp(an.lam1 * t)
        v, vb = an.v, an.vbar
        return (
            e * ((c1 + c2 * t) * v[0] + c2 * vb[0]),
            e * ((c1 + c2 * t) * v[1] + c2 * vb[1]),
        )
    e1 = math.exp(an.lam1 * t)
    e2 = math.exp(an.lam2 * t)
    return (
        c1 * e1 * an.v[0] + c2 * e2 * an.w[0],
        c1 * e1 * an.v[1] + c2 * e2 * an.w[1],
    )


def nonnegative_orbit(an: LinearAnalysis, p: Point, eps: float = 1e-12) -> bool:
    """Sampled check that the orbit of p stays in the closed first quadrant."""
    if p[0] < 0 or p[1] < 0:
        return False
    t_end = 50.0 / abs(an.lam1)
    ts = np.concatenate(([0.0], np.logspace(-6, 0, 1000) * t_end))
    scale = max(abs(p[0]), abs(p[1]), 1e-300)
    for t in ts:
        x, y = closed_form(an, p, float(t))
        bound = eps * scale
        if x < -bound or y < -bound:
            return False
    return True


@dataclass(frozen=True)
class LinearVerdict:
    outcome: str  # "No", "YesAfter", "DegenerateTie"
    T: float | None = None
    T_raw: float | None = None
    max_depth: float | None = None
    depth_time: float | None = None
    rule: str = ""
    coefficients: tuple[float, float, float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "T": self.T,
            "T_raw": self.T_raw,
            "max_depth": self.max_depth,
            "depth_time": self.depth_time,
            "licensed_by": self.rule,
            "coefficients": list(self.coefficients) if self.coefficients else None,
        }


def verdict_linear(an: LinearAnalysis, r0: Point, p0: Point, check_a2: bool = True) -> LinearVerdict:
    """Analytic tolerance verdict for the pair (r0, p0)."""
    if p0[0] < r0[0]:
        raise PreconditionError("A3", f"x_p = {p0[0]} is less than x_r = {r0[0]}")
    if check_a2:
        for name, pt in (("reference", r0), ("perturbed", p0)):
            if not nonnegative_orbit(an, pt):
                raise PreconditionError("A2", f"{name} orbit from {pt} leaves the first quadrant")
    c1, c2 = decompose_point(an, r0)
    d1, d2 = decompose_point(an, p0)
    coeffs = (c1, c2, d1, d2)
    if an.case in ("1a", "1b", "2a"):
        return LinearVerdict("No", rule=f"case-{an.case}", coefficients=coeffs)
    if an.case == "1c":
        if c1 > d1 and c2 < d2:
            t_raw = math.log((d2 - c2) / (c1 - d1)) / (an.lam1 - an.lam2)
            return LinearVerdict("YesAfter", max(t_raw, 0.0), t_raw, rule="case-1c", coefficients=coeffs)
        if c1 == d1 and c2 == d2:
            return LinearVerdict("No", rule="identical", coefficients=coeffs)
        return LinearVerdict("No", rule="case-1c", coefficients=coeffs)
    # 2b
    if an.vbar[0] != 0.0:
        return LinearVerdict("No", rule="case-2b-ii", coefficients=coeffs)
    if c1 <= d1 and c2 > d2:
        lam = an.lam1
        t_raw = (d1 - c1) / (c2 - d2)
        depth = (d2 - c2) / (lam * math.e)
        return LinearVerdict(
            "YesAfter", max(t_raw, 0.0), t_raw, depth, -1.0 / lam, "case-2b-i", coeffs
        )
    return LinearVerdict("No", rule="case-2b-i", coefficients=coeffs)


def first_component_gap(an: LinearAnalysis, r0: Point, p0: Point, t: float) -> float:
    """phi_1(t) - psi_1(t) from the closed forms."""
    return closed_form(an, r0, t)[0] - closed_form(an, p0, t)[0]


def depth_bound(an: LinearAnalysis, r0: Point, p0: Point, t: float) -> float:
    """(c2 - d2) t e^{lam t}: the case-2b bound on phi_1 - psi_1 once c1 <= d1."""
    c1, c2 = decompose_point(an, r0)
    d1, d2 = decompose_point(an, p0)
    return (c2 - d2) * t * math.exp(an.lam1 * t)


# ---------------------------------------------------------------- regions


@dataclass(frozen=True)
class HalfPlane:
    """a*x + b*y  (> or >=)  c."""

    a: float
    b: float
    c: float
    closed: bool

    def holds(self, p: Point, tol: float = 0.0) -> bool:
        v = self.a * p[0] + self.b * p[1] - self.c
        return v >= -tol if self.closed else v > tol

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "relation": ">=" if self.closed else ">"}


@dataclass(frozen=True)
class HalfPlaneRegion:
    """Intersection of half-planes; may be unbounded or empty."""

    planes: tuple[HalfPlane, ...]
    label: str = ""
    kind: str = "half-plane-intersection"

    def contains(self, p: Point) -> bool:
        return all(h.holds(p) for h in self.planes)

    def is_empty(self) -> bool:
        """Decided by a small LP maximising the slack of the open constraints."""
        from scipy.optimize import linprog

        # variables (x, y, s); maximise s subject to a.p - c >= s (open) or >= 0 (closed)
        A_ub, b_ub = [], []
        for h in self.planes:
            A_ub.append([-h.a, -h.b, 0.0 if h.closed else 1.0])
            b_ub.append(-h.c)
        res = linprog(
            c=[0.0, 0.0, -1.0],
            A_ub=A_ub,
            b_ub=b_ub,
            bounds=[(None, None), (None, None), (None, 1.0)],
            method="highs",
        )
        if res.status == 2:
            return True
        return res.status == 0 and -res.fun <= 1e-12

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "label": self.label,
            "half_planes": [h.to_dict() for h in self.planes],
            "empty": self.is_empty(),
        }


def region_id(an: LinearAnalysis, r0: Point) -> str:
    """Position of r0 relative to the eigenvector rays, e.g. '2a'."""
    x, y = r0
    if x < 0 or y < 0:
        return "outside"
    sv = an.v[1]
    if an.evc == "a":
        if y == 0:
            return "1a"
        return "2a" if y < sv * x else "3a" if y > sv * x else "on-v"
    if an.evc == "b":
        sw = an.w[1]
        if y == 0:
            return "1b"
        if y < sv * x:
            return "2b"
        if sv * x < y < sw * x:
            return "3b"
        return "on-v" if y == sv * x else "outside"
    if an.evc == "c":
        sw = an.w[1]
        if sw * x < y < sv * x:
            return "1c"
        if y > sv * x:
            return "2c"
        return "on-v" if y == sv * x else "outside"
    if an.evc == "d":
        return "1d" if y > sv * x else "outside"
    return "none"


def tolerance_region(an: LinearAnalysis, r0: Point) -> HalfPlaneRegion:
    """All p0 in the closed first quadrant with x >= x_r that give tolerance with r0.

    Each coefficient inequality is a half-plane bounded by a line through r0
    parallel to one basis vector.
    """
    rid = region_id(an, r0) if an.evc != "none" else "none"
    quadrant = (HalfPlane(1.0, 0.0, r0[0], True), HalfPlane(0.0, 1.0, 0.0, True))
    if an.case in ("1a", "1b", "2a") or (an.case == "2b" and an.vbar[0] != 0.0):
        # no tolerance for any pair: an infeasible constraint encodes the empty set
        return HalfPlaneRegion(quadrant + (HalfPlane(0.0, 0.0, 0.0, False),), f"empty ({an.case})")
    if an.evc == "none":
        raise PreconditionError("A2", "eigenvector configuration cannot host nonnegative dynamics")
    e1, e2 = an.basis
    det = e1[0] * e2[1] - e2[0] * e1[1]
    # d1(p) = (p.x e2y - e2x p.y)/det,  d2(p) = (e1x p.y - p.x e1y)/det
    r1 = (e2[1] / det, -e2[0] / det)
    r2 = (-e1[1] / det, e1[0] / det)
    c1, c2 = decompose_point(an, r0)
    if an.case == "1c":
        planes = (
            HalfPlane(-r1[0], -r1[1], -c1, False),  # d1 < c1
            HalfPlane(r2[0], r2[1], c2, False),  # d2 > c2
        )
    else:
        planes = (
            HalfPlane(r1[0], r1[1], c1, True),  # d1 >= c1
            HalfPlane(-r2[0], -r2[1], -c2, False),  # d2 < c2
        )
    return HalfPlaneRegion(planes + quadrant, rid)
