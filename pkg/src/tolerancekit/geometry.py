"""Region machinery around an excitable reference orbit.

Excitability classification, the guaranteed-tolerance sets T (bounded by the
orbit graph and a vertical segment) and T-hat (the strip above T), inhibition
queries, graph ordering tests, and the three-way candidate prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrationError, PreconditionError
from .integrate import (
    EventSpec,
    IntegrationOptions,
    Trajectory,
    effective_horizon,
    in_basin,
    integrate,
)
from .system import PlanarSystem
from .tolerance import REL_ONLY_ABS_TOL, check_group_property_no_tolerance

Point = tuple[float, float]

BOUNDARY_EPS = 1e-9
INHIBITION_EPS = 1e-10
# equal-x gaps this small are below what the integration resolves
GAP_TOL = 1e-7


# ---------------------------------------------------------------- excitability


@dataclass(frozen=True)
class ExcitabilityReport:
    r0: Point
    n: int
    switch_times: tuple[float, ...]
    t_r: float | None
    M: float
    t_m: float
    t_M: float
    y_at_tM: float
    y_at_tr: float | None
    conditions: dict  # "a", "b", "c" -> bool
    reason: str = ""
    trajectory: Trajectory | None = field(default=None, compare=False, repr=False)

    @property
    def excitable(self) -> bool:
        return self.n >= 1

    def to_dict(self) -> dict:
        return {
            "r0": list(self.r0),
            "n": self.n,
            "switch_times": list(self.switch_times),
            "t_r": self.t_r,
            "M": self.M,
            "t_m": self.t_m,
            "t_M": self.t_M,
            "y_at_tM": self.y_at_tM,
            "y_at_tr": self.y_at_tr,
            "conditions": dict(self.conditions),
            "reason": self.reason,
        }


def _reference_options(sys: PlanarSystem, opts: IntegrationOptions, extra_events=()) -> IntegrationOptions:
    node = opts.node or (0.0, 0.0)
    return opts.with_(
        node=node,
        horizon=effective_horizon(sys, node, opts),
        abs_tol=min(opts.abs_tol, REL_ONLY_ABS_TOL),
        events=tuple(extra_events),
    )


def _first_return(traj: Trajectory, x_r: float, per_step: int = 8) -> float | None:
    """First t > 0 with x(t) = x_r after x has been above x_r."""
    ts, xs, _ = traj.dense_samples(per_step)
    above = xs > x_r
    if not above[1:].any():
        return None
    j0 = int(np.argmax(above[1:])) + 1
    below = np.nonzero(xs[j0:] <= x_r)[0]
    if below.size == 0:
        return None
    k = j0 + int(below[0])
    a, b = float(ts[k - 1]), float(ts[k])
    for _ in range(80):
        m = 0.5 * (a + b)
        if m == a or m == b:
            break
        if traj.at(m)[0] > x_r:
            a = m
        else:
            b = m
    return b


def classify_excitable(
    sys: PlanarSystem, r0: Point, opts: IntegrationOptions | None = None
) -> ExcitabilityReport:
    """n-excitability of the orbit from r0, plus t_r, M, t_m, t_M."""
    opts = opts or IntegrationOptions()
    r0 = (float(r0[0]), float(r0[1]))
    x_r = r0[0]
    o = _reference_options(sys, opts, (EventSpec("f-sign-change"),))
    traj = integrate(sys, r0, o)
    if traj.a2_violation is not None:
        raise PreconditionError("A2", f"reference orbit leaves the first quadrant at t = {traj.a2_violation:.6g}")
    if traj.termination != "entered-origin-ball":
        raise PreconditionError("A2", f"reference orbit from {r0} does not reach the node ({traj.termination})")

    events = traj.events_of("f-sign-change")
    times = [e.time for e in events]
    # x maxima sit where f turns from positive to negative
    maxima = [(e.point[0], e.time) for e in events if e.direction < 0]
    M = max([x_r] + [m[0] for m in maxima])
    at_max = [t for x, t in maxima if x == M]
    t_m = min(at_max) if at_max else 0.0
    t_M = max(at_max) if at_max else 0.0
    y_tM = traj.at(t_M)[1]

    f0 = sys.f_value(*r0)
    k = len(events)
    cond = {"a": False, "b": False, "c": False}
    reason = ""
    if f0 <= 0:
        reason = f"f(r0) = {f0:.6g} is not positive"
    elif k % 2 == 0:
        reason = f"f ends positive after {k} sign changes"
    else:
        cond["c"] = all(e.direction == (-1 if i % 2 == 0 else 1) for i, e in enumerate(events))
        cond["a"] = all(e.point[0] > x_r for e in events)
        t_last = times[-1]
        ts, xs, ys = traj.dense_samples(8)
        keep = ts <= t_last
        g_vals = [sys.g_value(float(x), float(y)) for x, y in zip(xs[keep], ys[keep])]
        g_vals.append(sys.g_value(*events[-1].point))
        cond["b"] = min(g_vals) > 0
        if not cond["c"]:
            reason = "f sign pattern does not alternate"
        elif not cond["a"]:
            reason = "a switch point lies at or left of x_r"
        elif not cond["b"]:
            reason = f"g is not positive up to the last switch (min {min(g_vals):.3g})"

    n = (k + 1) // 2 if all(cond.values()) else 0
    if n == 0:
        return ExcitabilityReport(
            r0, 0, (0.0,), None, M, t_m, t_M, y_tM, None, cond, reason, traj
        )
    t_r = _first_return(traj, x_r)
    if t_r is None:
        raise IntegrationError("no return to x_r detected before the node ball", traj.t_end, traj.end)
    return ExcitabilityReport(
        r0, n, tuple([0.0] + times), t_r, M, t_m, t_M, y_tM, traj.at(t_r)[1], cond, "", traj
    )


# ---------------------------------------------------------------- regions


def _segment_distance(px: float, py: float, ax, ay, bx, by) -> np.ndarray:
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(L2 > 0, ((px - ax) * dx + (py - ay) * dy) / L2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    return np.hypot(ax + u * dx - px, ay + u * dy - py)


@dataclass(frozen=True)
class PolygonRegion:
    """Interior of the closed curve G + L, with G and L themselves included."""

    graph: np.ndarray  # (k, 2) samples of the orbit on [0, t_r]; graph[0] = r0
    start: Point
    label: str = "T"

    @property
    def segment_L(self) -> tuple[Point, Point]:
        return self.start, (float(self.graph[-1, 0]), float(self.graph[-1, 1]))

    def on_graph(self, p: Point, eps: float = BOUNDARY_EPS) -> bool:
        g = self.graph
        d = _segment_distance(p[0], p[1], g[:-1, 0], g[:-1, 1], g[1:, 0], g[1:, 1])
        return bool(d.min() < eps)

    def on_L(self, p: Point, eps: float = BOUNDARY_EPS) -> bool:
        (x0, y0), (_, y1) = self.segment_L
        lo, hi = min(y0, y1), max(y0, y1)
        return abs(p[0] - x0) < eps and lo - eps <= p[1] <= hi + eps

    def contains(self, p: Point) -> bool:
        p = (float(p[0]), float(p[1]))
        if p == self.start:
            return False
        if self.on_graph(p) or self.on_L(p):
            return True
        # even-odd ray cast to +x; the closing edge back to start is L
        g = self.graph
        xa, ya = g[:, 0], g[:, 1]
        xb, yb = np.roll(xa, -1), np.roll(ya, -1)
        straddle = (ya > p[1]) != (yb > p[1])
        with np.errstate(invalid="ignore", divide="ignore"):
            xc = xa + (p[1] - ya) * (xb - xa) / (yb - ya)
        return bool(np.count_nonzero(straddle & (xc > p[0])) % 2 == 1)

    def bounds(self) -> tuple[float, float, float, float]:
        g = self.graph
        return float(g[:, 0].min()), float(g[:, 0].max()), float(g[:, 1].min()), float(g[:, 1].max())

    def to_dict(self) -> dict:
        (x0, y0), (_, y1) = self.segment_L
        return {
            "kind": "closed-curve-bounded",
            "label": self.label,
            "G": {"points": self.graph[1:].tolist(), "included": True},
            "L": {"x": x0, "y_open": y0, "y_closed": y1, "included": True},
            "excluded_point": list(self.start),
        }


def build_region_T(report: ExcitabilityReport, per_step: int = 8) -> PolygonRegion:
    if report.n < 1:
        raise PreconditionError("excitable", f"reference orbit is not excitable: {report.reason}")
    if report.t_r is None or report.trajectory is None:
        raise ValueError("report has no return time t_r")
    ts, xs, ys = report.trajectory.dense_samples(per_step)
    keep = ts < report.t_r
    pts = np.column_stack([xs[keep], ys[keep]])
    end = report.trajectory.at(report.t_r)
    pts = np.vstack([pts, [report.r0[0], end[1]]])  # pin the return point onto x = x_r
    return PolygonRegion(pts, report.r0)


@dataclass(frozen=True)
class StripRegion:
    """(x_r, M) x (y_low, inf) minus T, clipped to the basin of the node."""

    x_lo: float
    x_hi: float
    y_low: float
    T: PolygonRegion
    sys: PlanarSystem = field(compare=False, repr=False)
    opts: IntegrationOptions = field(default_factory=IntegrationOptions, compare=False, repr=False)
    other_attractors: tuple[Point, ...] = ()
    f_nonpositive: bool = False
    grid_checked: int = 0
    grid_y_top: float = 0.0
    violations: tuple[Point, ...] = ()
    label: str = "T-hat"

    def in_strip(self, p: Point) -> bool:
        return self.x_lo < p[0] < self.x_hi and p[1] > self.y_low and not self.T.contains(p)

    def contains(self, p: Point) -> bool:
        if not self.in_strip(p):
            return False
        node = self.opts.node or (0.0, 0.0)
        return in_basin(self.sys, p, node, self.opts, self.other_attractors)

    def to_dict(self) -> dict:
        return {
            "kind": "strip",
            "label": self.label,
            "x_open_interval": [self.x_lo, self.x_hi],
            "y_above": self.y_low,
            "minus": self.T.label,
            "basin_clip": "evaluated per query",
            "f_nonpositive_on_grid": self.f_nonpositive,
            "grid_points_checked": self.grid_checked,
            "grid_y_top": self.grid_y_top,
            "violations": [list(v) for v in self.violations[:20]],
        }


def build_region_hatT(
    sys: PlanarSystem,
    report: ExcitabilityReport,
    opts: IntegrationOptions | None = None,
    grid: int = 100,
    y_top: float | None = None,
    other_attractors=(),
    T: PolygonRegion | None = None,
) -> StripRegion:
    """The strip above T, with the f <= 0 hypothesis checked on a grid.

    The strip is unbounded in y; the grid stops at ``y_top`` (default: the
    strip floor plus twice the height of the reference orbit).
    """
    opts = opts or IntegrationOptions()
    T = T or build_region_T(report)
    x_lo, x_hi, y_low = report.r0[0], report.M, report.y_at_tM
    if y_top is None:
        _, _, gy0, gy1 = T.bounds()
        y_top = max(gy1, y_low) + 2.0 * (gy1 - gy0) + 1.0
    proto = StripRegion(x_lo, x_hi, y_low, T, sys, opts, tuple(other_attractors))
    xs = np.linspace(x_lo, x_hi, grid + 2)[1:-1]
    ys = np.linspace(y_low, y_top, grid + 1)[1:]
    checked = 0
    bad = []
    node = opts.node or (0.0, 0.0)
    for x in xs:
        for y in ys:
            p = (float(x), float(y))
            if not proto.in_strip(p):
                continue
            checked += 1
            try:
                fv = sys.f_value(*p)
            except DomainError:
                fv = math.inf
            # a positive f only matters where the point is in the basin
            if fv > 0 and in_basin(sys, p, node, opts, other_attractors):
                bad.append(p)
    return StripRegion(
        x_lo, x_hi, y_low, T, sys, opts, tuple(other_attractors),
        f_nonpositive=not bad, grid_checked=checked, grid_y_top=float(y_top), violations=tuple(bad),
    )


# ---------------------------------------------------------------- inhibition and order


def inhibition_sign(sys: PlanarSystem, p: Point) -> str:
    fy = sys.f_y(float(p[0]), float(p[1]))
    if fy < -INHIBITION_EPS:
        return "inhibiting"
    if fy > INHIBITION_EPS:
        return "non-inhibiting"
    return "boundary"


def monotone_segments(traj: Trajectory, per_step: int = 4) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the orbit graph into pieces on which x is strictly monotone.

    Each piece is returned with x increasing, ready for interpolation.
    """
    _, xs, ys = traj.dense_samples(per_step)
    dx = np.diff(xs)
    keep = np.concatenate([[True], dx != 0])
    xs, ys = xs[keep], ys[keep]
    if len(xs) < 2:
        return []
    s = np.sign(np.diff(xs))
    cuts = np.nonzero(s[1:] != s[:-1])[0] + 1
    out = []
    start = 0
    for c in list(cuts) + [len(s)]:
        sx, sy = xs[start : c + 1], ys[start : c + 1]
        if sx[0] > sx[-1]:
            sx, sy = sx[::-1], sy[::-1]
        if len(sx) >= 2:
            out.append((sx, sy))
        start = c
    return out


@dataclass(frozen=True)
class OrderResult:
    order: str  # below | above | neither
    min_gap: float
    max_gap: float
    n_pairs: int
    flags: dict = field(default_factory=dict)


def equal_x_pairs(
    traj_phi: Trajectory, traj_psi: Trajectory, samples: int = 512
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(x, y_phi, y_psi) arrays over each overlap of monotone pieces."""
    out = []
    for px, py in monotone_segments(traj_phi):
        for qx, qy in monotone_segments(traj_psi):
            lo, hi = max(px[0], qx[0]), min(px[-1], qx[-1])
            if hi <= lo:
                continue
            x = np.linspace(lo, hi, samples)
            out.append((x, np.interp(x, px, py), np.interp(x, qx, qy)))
    return out


def bounded_order(
    traj_phi: Trajectory, traj_psi: Trajectory, samples: int = 512, gap_tol: float = GAP_TOL
) -> OrderResult:
    """'below' when psi's graph lies above phi's at every shared x (psi
    bounded below by phi), 'above' for the reverse, else 'neither'.

    Near the node both graphs hug the same eigen-line and their gap drops
    under the integration noise; gaps within ``gap_tol`` are treated as
    unresolved rather than as violations.
    """
    pairs = equal_x_pairs(traj_phi, traj_psi, samples)
    if not pairs:
        return OrderResult("neither", math.nan, math.nan, 0, {"empty_overlap": True})
    gaps = np.concatenate([yq - yp for _, yp, yq in pairs])
    lo, hi = float(gaps.min()), float(gaps.max())
    flags = {"unresolved_pairs": int(np.count_nonzero(np.abs(gaps) <= gap_tol))}
    if lo > -gap_tol and hi > gap_tol:
        order = "below"
    elif hi < gap_tol and lo < -gap_tol:
        order = "above"
    else:
        order = "neither"
    return OrderResult(order, lo, hi, int(gaps.size), flags)


def _vertical_inhibited(sys: PlanarSystem, x: float, y0: float, y1: float, k: int) -> bool:
    # raw sign: f_y legitimately shrinks towards 0 near the node
    return any(sys.f_y(x, float(y)) < 0 for y in np.linspace(y0, y1, k))


def co_inhibition(
    sys: PlanarSystem, traj_phi: Trajectory, traj_psi: Trajectory, samples: int = 512, vertical: int = 8
) -> tuple[bool, Point | None]:
    """Whether some equal-x pair could sit in a common region of inhibition.

    A pair is cleared only when f_y >= 0 along the whole vertical segment
    joining the two points and f is strictly larger at the upper point.
    Pairs whose gap is below ``GAP_TOL`` are skipped, as in bounded_order.
    Returns (found, witness x/y of the lower point).
    """
    for x, yp, yq in equal_x_pairs(traj_phi, traj_psi, samples):
        for xi, a, b in zip(x, yp, yq):
            lo, hi = (a, b) if a <= b else (b, a)
            xi, lo, hi = float(xi), float(lo), float(hi)
            if hi - lo <= GAP_TOL:
                continue
            try:
                if _vertical_inhibited(sys, xi, lo, hi, vertical):
                    return True, (xi, lo)
                if not sys.f_value(xi, hi) > sys.f_value(xi, lo):
                    return True, (xi, lo)
            except DomainError:
                return True, (xi, lo)
    return False, None


def entirely_inhibiting(sys: PlanarSystem, traj_phi: Trajectory, traj_psi: Trajectory, samples: int = 512, vertical: int = 8) -> bool:
    """Both orbits, and the vertical segments joining equal-x pairs, lie where f_y < 0."""
    for tr in (traj_phi, traj_psi):
        _, xs, ys = tr.dense_samples(2)
        for x, y in zip(xs, ys):
            if not sys.f_y(float(x), float(y)) < 0:
                return False
    for x, yp, yq in equal_x_pairs(traj_phi, traj_psi, samples):
        for xi, a, b in zip(x, yp, yq):
            for y in np.linspace(min(a, b), max(a, b), vertical):
                if not sys.f_y(float(xi), float(y)) < 0:
                    return False
    return True


# ---------------------------------------------------------------- prediction


@dataclass(frozen=True)
class Prediction:
    kind: str  # Guaranteed | Impossible | Possible
    license: str | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "license": self.license, "details": dict(self.details)}

    def __str__(self) -> str:
        return f"{self.kind}({self.license})" if self.license else self.kind


class CandidateClassifier:
    """Predictions for many candidates against one reference point.

    The reference orbit, T and T-hat are built once.
    """

    def __init__(
        self,
        sys: PlanarSystem,
        r0: Point,
        opts: IntegrationOptions | None = None,
        other_attractors=(),
        samples: int = 512,
        use_group_property: bool = True,
    ):
        self.sys = sys
        self.r0 = (float(r0[0]), float(r0[1]))
        self.opts = opts or IntegrationOptions()
        self.other_attractors = tuple(other_attractors)
        self.samples = samples
        self.use_group_property = use_group_property
        self.report = classify_excitable(sys, self.r0, self.opts)
        self.T = self.hatT = None
        if self.report.excitable:
            self.T = build_region_T(self.report)
            self.hatT = build_region_hatT(
                sys, self.report, self.opts, other_attractors=self.other_attractors, T=self.T
            )
        self._o = _reference_options(sys, self.opts)
        self.phi = integrate(sys, self.r0, self._o)

    def classify(self, p0: Point) -> Prediction:
        p0 = (float(p0[0]), float(p0[1]))
        if p0[0] < self.r0[0]:
            raise PreconditionError("A3", f"x_p = {p0[0]} is less than x_r = {self.r0[0]}")
        if p0[0] < 0 or p0[1] < 0:
            raise PreconditionError("A2", f"perturbed point {p0} is outside the first quadrant")
        info = {"n": self.report.n, "M": self.report.M}
        if self.T is not None and self.T.contains(p0):
            return Prediction("Guaranteed", "excitable-region", info)
        if self.hatT is not None and self.hatT.f_nonpositive and self.hatT.contains(p0):
            return Prediction("Guaranteed", "strip-above", info)
        try:
            psi = integrate(self.sys, p0, self._o)
        except (DomainError, IntegrationError) as exc:
            raise PreconditionError("A2", f"perturbed orbit from {p0} fails: {exc}") from exc
        if psi.a2_violation is not None or psi.termination != "entered-origin-ball":
            raise PreconditionError("A2", f"perturbed orbit from {p0} does not stay in the basin")
        order = bounded_order(self.phi, psi, self.samples)
        info["order"] = order.order
        if order.order == "below":
            found, where = co_inhibition(self.sys, self.phi, psi, self.samples)
            info["co_inhibition"] = found
            if not found:
                info["confidence"] = "sampled"
                return Prediction("Impossible", "inhibition-necessary", info)
            info["co_inhibition_witness"] = list(where)
        if (
            order.order == "above"
            and p0[0] > self.report.M
            and entirely_inhibiting(self.sys, self.phi, psi, self.samples)
        ):
            info["confidence"] = "sampled"
            return Prediction("Impossible", "inhibition-obstructs", info)
        if self.use_group_property and check_group_property_no_tolerance(self.sys, self.r0, p0, self.opts):
            return Prediction("Impossible", "same-orbit", info)
        return Prediction("Possible", None, info)


def classify_candidate(
    sys: PlanarSystem, r0: Point, p0: Point, opts: IntegrationOptions | None = None, **kw
) -> Prediction:
    return CandidateClassifier(sys, r0, opts, **kw).classify(p0)
