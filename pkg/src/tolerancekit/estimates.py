"""Passage-time bounds from isocline speeds, and the closed forms of the
x^2/(1+y) - x example.

The time to travel between two x-values along a graph segment is bracketed
by |dx| / sup|f| and |dx| / inf|f|. Comparing a lower bound for the
reference orbit with an upper bound for the perturbed one gives a
sufficient condition for tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EstimateError
from .exprcore import to_text
from .integrate import EventSpec, IntegrationOptions, Trajectory, effective_horizon, integrate
from .system import BUILTINS, PlanarSystem
from .tolerance import REL_ONLY_ABS_TOL

Point = tuple[float, float]

SPEED_SAMPLES = 1024
_GOLD = (math.sqrt(5) - 1) / 2


def reference_trajectory(sys: PlanarSystem, p0: Point, opts: IntegrationOptions | None = None) -> Trajectory:
    """Forward orbit with f sign changes and y extrema recorded."""
    opts = opts or IntegrationOptions()
    node = opts.node or (0.0, 0.0)
    o = opts.with_(
        node=node,
        horizon=effective_horizon(sys, node, opts),
        abs_tol=min(opts.abs_tol, REL_ONLY_ABS_TOL),
        events=(EventSpec("f-sign-change"), EventSpec("y-extremum")),
    )
    return integrate(sys, p0, o)


def default_x_f(traj: Trajectory) -> tuple[float, float]:
    """(x, y) where the second component peaks."""
    peaks = [e for e in traj.events_of("y-extremum") if e.label == "max"]
    if not peaks:
        raise EstimateError("the orbit has no interior maximum of y; pass x_f explicitly")
    best = max(peaks, key=lambda e: e.point[1])
    return best.point


# ---------------------------------------------------------------- segments


@dataclass(frozen=True)
class SegmentDecomposition:
    breakpoints: tuple[float, ...]  # x_1 .. x_{n+1}
    times: tuple[float, ...]  # t_1 .. t_{n+1}
    sup_speed: tuple[float, ...]
    inf_speed: tuple[float, ...]
    x_f: float
    y_f: float

    @property
    def n(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def dt(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.times, self.times[1:]))

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(abs(b - a) for a, b in zip(self.breakpoints, self.breakpoints[1:]))

    @property
    def passage_time(self) -> float:
        return self.times[-1] - self.times[0]

    def lower_time_bound(self) -> float:
        return sum(d / c for d, c in zip(self.dx, self.sup_speed))

    def upper_time_bound(self) -> float:
        total = 0.0
        for d, c in zip(self.dx, self.inf_speed):
            if c <= 0:
                return math.inf
            total += d / c
        return total

    def to_dict(self) -> dict:
        def num(v):
            return "inf" if math.isinf(v) else v

        return {
            "breakpoints": list(self.breakpoints),
            "times": list(self.times),
            "dt": list(self.dt),
            "sup_speed": list(self.sup_speed),
            "inf_speed": list(self.inf_speed),
            "x_f": self.x_f,
            "y_f": self.y_f,
            "passage_time": self.passage_time,
            "lower_time_bound": self.lower_time_bound(),
            "upper_time_bound": num(self.upper_time_bound()),
        }


def _crossing(traj: Trajectory, x_f: float, t0: float, t1: float, per_step: int = 8) -> float | None:
    """First t in (t0, t1] with x(t) = x_f."""
    ts, xs, _ = traj.dense_samples(per_step)
    lo = np.searchsorted(ts, t0, side="right")
    hi = np.searchsorted(ts, t1, side="right")
    x0 = traj.at(t0)[0]
    s0 = x0 - x_f
    prev_t = t0
    for i in range(lo, hi):
        s = xs[i] - x_f
        if s == 0.0:
            return float(ts[i])
        if s0 != 0.0 and (s > 0) != (s0 > 0):
            a, b = prev_t, float(ts[i])
            for _ in range(80):
                m = 0.5 * (a + b)
                if m == a or m == b:
                    break
                if ((traj.at(m)[0] - x_f) > 0) == (s0 > 0):
                    a = m
                else:
                    b = m
            return b
        if s != 0.0:
            s0 = s
        prev_t = float(ts[i])
    return None


def _golden(fun, a: float, b: float, iters: int = 60) -> tuple[float, float]:
    """Maximize fun on [a, b]; returns (argmax, max)."""
    c1, c2 = b - _GOLD * (b - a), a + _GOLD * (b - a)
    f1, f2 = fun(c1), fun(c2)
    for _ in range(iters):
        if f1 > f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - _GOLD * (b - a)
            f1 = fun(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + _GOLD * (b - a)
            f2 = fun(c2)
    return (c1, f1) if f1 > f2 else (c2, f2)


def _speed_extremes(sys: PlanarSystem, traj: Trajectory, t0: float, t1: float, samples: int) -> tuple[float, float]:
    def speed(t):
        return abs(sys.f_value(*traj.at(t)))

    ts = np.linspace(t0, t1, samples)
    v = np.array([speed(float(t)) for t in ts])
    h = (t1 - t0) / (samples - 1)
    i = int(np.argmax(v))
    sup = max(float(v[i]), _golden(speed, float(max(t0, ts[i] - h)), float(min(t1, ts[i] + h)))[1])
    j = int(np.argmin(v))
    inf = min(
        float(v[j]),
        -_golden(lambda t: -speed(t), float(max(t0, ts[j] - h)), float(min(t1, ts[j] + h)))[1],
    )
    return sup, inf


def decompose_segments(
    sys: PlanarSystem, traj: Trajectory, x_f: float, samples: int = SPEED_SAMPLES
) -> SegmentDecomposition:
    """Split the orbit at the zeros of f until it first reaches x = x_f.

    ``traj`` must have been integrated with f-sign-change events recorded
    (see reference_trajectory).
    """
    t = 0.0
    xs = [traj.p0[0]]
    ts = [0.0]
    for e in traj.events_of("f-sign-change"):
        if _crossing(traj, x_f, t, e.time) is not None:
            break
        xs.append(e.point[0])
        ts.append(e.time)
        t = e.time
    tf = _crossing(traj, x_f, t, traj.t_end)
    if tf is None:
        _, all_x, _ = traj.dense_samples(2)
        raise EstimateError(
            f"x_f = {x_f:.6g} is never reached; the orbit spans x in "
            f"[{all_x.min():.6g}, {all_x.max():.6g}] after t = {t:.6g}"
        )
    xs.append(x_f)
    ts.append(tf)
    sups, infs = [], []
    for a, b in zip(ts, ts[1:]):
        s, i = _speed_extremes(sys, traj, a, b, samples)
        sups.append(s)
        infs.append(i)
    return SegmentDecomposition(tuple(xs), tuple(ts), tuple(sups), tuple(infs), x_f, traj.at(tf)[1])


# ---------------------------------------------------------------- bounds


@dataclass(frozen=True)
class BoundReport:
    lower_t_phi: float
    upper_t_psi: float
    condition: bool
    t_phi: float
    t_psi: float
    C_r: float
    C_f: float
    C_psi: float
    x_M: float
    y_M: float
    x_f: float
    y_f: float
    x_hat_M: float | None = None
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def num(v):
            if v is None:
                return None
            return "inf" if math.isinf(v) else v

        return {
            "lower_t_phi": self.lower_t_phi,
            "upper_t_psi": num(self.upper_t_psi),
            "condition": self.condition,
            "t_phi": self.t_phi,
            "t_psi": self.t_psi,
            "C_r": self.C_r,
            "C_f": self.C_f,
            "C_psi": self.C_psi,
            "x_M": self.x_M,
            "y_M": self.y_M,
            "x_f": self.x_f,
            "y_f": self.y_f,
            "x_hat_M": self.x_hat_M,
            "flags": dict(self.flags),
        }


def passage_time_bounds(
    sys: PlanarSystem, dec_phi: SegmentDecomposition, dec_psi: SegmentDecomposition
) -> BoundReport:
    """Sufficient tolerance test: upper(t_psi) < lower(t_phi)."""
    if abs(dec_phi.x_f - dec_psi.x_f) > 1e-12:
        raise EstimateError(f"decompositions end at different x_f ({dec_phi.x_f} vs {dec_psi.x_f})")
    lower = dec_phi.lower_time_bound()
    upper = dec_psi.upper_time_bound()
    flags = {}
    if math.isinf(upper):
        flags["unbounded_psi"] = "a perturbed segment has zero minimum speed"
    x_r = dec_phi.breakpoints[0]
    x_M = max(dec_phi.breakpoints[:-1])
    i_M = dec_phi.breakpoints.index(x_M)
    C_r = dec_phi.sup_speed[0]
    C_f = abs(sys.f_value(dec_phi.x_f, dec_phi.y_f))
    C_psi = min(dec_psi.inf_speed)
    y_M = math.nan
    report_xhat = None
    if dec_phi.n == 2 and dec_psi.n == 1 and i_M == 1:
        try:
            report_xhat = expanded_bound_xhatM(C_r, C_f, C_psi, x_r, x_M, dec_phi.x_f)
        except EstimateError as exc:
            flags["x_hat_M"] = str(exc)
    return BoundReport(
        lower, upper, upper < lower, dec_phi.passage_time, dec_psi.passage_time,
        C_r, C_f, C_psi, x_M, y_M, dec_phi.x_f, dec_phi.y_f, report_xhat, flags,
    )


def bound_report(
    sys: PlanarSystem,
    r0: Point,
    p0: Point,
    x_f: float | None = None,
    opts: IntegrationOptions | None = None,
) -> BoundReport:
    """Integrate both orbits, decompose at x_f (default: where the reference
    orbit's y peaks) and compare the passage-time bounds."""
    phi = reference_trajectory(sys, r0, opts)
    psi = reference_trajectory(sys, p0, opts)
    if x_f is None:
        x_f = default_x_f(phi)[0]
    dp = decompose_segments(sys, phi, x_f)
    dq = decompose_segments(sys, psi, x_f)
    rep = passage_time_bounds(sys, dp, dq)
    i_M = dp.breakpoints.index(rep.x_M)
    y_M = phi.at(dp.times[i_M])[1]
    return BoundReport(**{**rep.__dict__, "y_M": y_M})


def expanded_bound_xhatM(C_r: float, C_f: float, C_psi: float, x_r: float, x_M: float, x_f: float) -> float:
    """Right end of the x-interval on which the segment bounds still force tolerance."""
    if not (C_r > 0 and C_f > 0 and C_psi > 0):
        raise EstimateError(f"speeds must be positive (C_r={C_r}, C_f={C_f}, C_psi={C_psi})")
    if x_M < x_r:
        raise EstimateError(f"x_M = {x_M} lies left of x_r = {x_r}")
    if not x_M > x_f:
        raise EstimateError(f"x_M = {x_M} must exceed x_f = {x_f}")
    return x_M + (C_psi - C_f) / C_f * (x_M - x_f) + C_psi / C_r * (x_M - x_r)


# ---------------------------------------------------------------- x^2/(1+y) - x closed forms


def delta_fn(w: float, a: float, b: float) -> float:
    """Integral of du / (u^2/(1+w) - u) from a to b, in closed form."""
    if not (a > 0 and b > 0):
        raise EstimateError(f"a and b must be positive (got {a}, {b})")
    k = 1.0 + w
    if k == 0:
        raise EstimateError("w = -1 makes the integrand undefined")
    if min(a, b) <= k <= max(a, b):
        raise EstimateError(f"integrand is singular at u = {k} between {a} and {b}")
    if a == b:
        return 0.0
    return math.log(abs(k - b) / abs(k - a)) + math.log(a / b)


def _is_builtin(sys: PlanarSystem, name: str) -> bool:
    f_text, g_text, _ = BUILTINS[name]
    if sys.kind != "expression":
        return False
    from .exprcore import parse_expr

    return to_text(sys.f) == to_text(parse_expr(f_text)) and to_text(sys.g) == to_text(parse_expr(g_text))


def y_bound(y_f: float, y_p: float, x_p: float, x_f: float) -> float:
    """Lower bound y_b on the effective height of the perturbed orbit."""
    return y_f + (y_p - y_f) * math.exp(-delta_fn(y_f, x_p, x_f) / 2.0)


@dataclass(frozen=True)
class ConditionResult:
    status: str  # holds | fails | inapplicable
    reason: str = ""
    lhs: float | None = None
    rhs: float | None = None
    y_b: float | None = None

    def to_dict(self) -> dict:
        return {"status": self.status, "reason": self.reason, "lhs": self.lhs, "rhs": self.rhs, "y_b": self.y_b}


def example2_condition_available(sys: PlanarSystem) -> bool:
    return _is_builtin(sys, "ex2")


def example2_tolerance_condition(
    sys: PlanarSystem, r0: Point, p0: Point, x_M: float, x_f: float, y_f: float
) -> ConditionResult:
    """Closed-form sufficient condition for the x^2/(1+y) - x system.

    For a non-excitable reference pass x_M = x_r.
    """
    if not _is_builtin(sys, "ex2"):
        raise EstimateError("this condition encodes the algebra of builtin 'ex2' only")
    x_r, y_r = r0
    x_p, y_p = p0
    if not x_p > x_r:
        return ConditionResult("inapplicable", f"needs x_p > x_r (got {x_p} <= {x_r})")
    if not y_p > y_f:
        return ConditionResult("inapplicable", f"needs y_p > y_f (got {y_p} <= {y_f})")
    try:
        yb = y_bound(y_f, y_p, x_p, x_f)
    except EstimateError as exc:
        return ConditionResult("inapplicable", str(exc))
    den = (1 - x_M + y_f) * (x_r - 1 - y_r)
    den_r = 1 + yb - x_p
    if den == 0 or den_r == 0:
        return ConditionResult("inapplicable", "a denominator vanishes", y_b=yb)
    lhs = x_r * (1 - x_f + y_f) * (x_M - 1 - y_r) / den
    rhs = (1 + yb - x_f) * x_p / den_r
    if not (lhs > 0 and rhs > 0):
        return ConditionResult("inapplicable", "both sides must be positive", lhs, rhs, yb)
    return ConditionResult("holds" if lhs > rhs else "fails", "", lhs, rhs, yb)


def example2_constants(sys: PlanarSystem, r0: Point, opts: IntegrationOptions | None = None) -> dict:
    """x_M, y_M, x_f, y_f, C_r and C_f measured on the reference orbit."""
    phi = reference_trajectory(sys, r0, opts)
    maxima = [e for e in phi.events_of("f-sign-change") if e.direction < 0]
    if maxima:
        top = max(maxima, key=lambda e: e.point[0])
        x_M, y_M = top.point
    else:
        x_M, y_M = r0
    x_f, y_f = default_x_f(phi)
    try:
        C_r = abs(sys.f_value(*r0))
        C_f = abs(sys.f_value(x_f, y_f))
    except DomainError as exc:
        raise EstimateError(str(exc)) from exc
    return {"x_M": x_M, "y_M": y_M, "x_f": x_f, "y_f": y_f, "C_r": C_r, "C_f": C_f}
