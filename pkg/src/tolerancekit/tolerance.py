"""Deciding tolerance for a pair of initial conditions.

phi starts at the reference point r0, psi at the perturbed point p0, and
d(t) = psi_1(t) - phi_1(t). Tolerance means d(tau) < 0 for some tau > 0.
Both orbits are integrated until they enter a small ball around the node;
past that point the linearization at the node decides the sign of d for all
later times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrationError, PreconditionError
from .integrate import (
    IntegrationOptions,
    Trajectory,
    effective_horizon,
    integrate,
    integrate_backward_to_axis,
)
from .linear import expm2
from .system import PlanarSystem, eigenvalues_2x2, node_report

Point = tuple[float, float]

EPS_TOL = 1e-7
TIE = 1e-10
REL_ONLY_ABS_TOL = 1e-30


@dataclass(frozen=True)
class ToleranceVerdict:
    outcome: str  # Tolerance | NoTolerance | Inconclusive
    justification: str
    t1: float | None = None
    tau: float | None = None
    t2: float | None = None  # math.inf when the window never closes
    margin: float = 0.0
    horizon: float = 0.0
    assumptions_checked: tuple[str, ...] = ()
    numerics: dict = field(default_factory=dict, compare=False)

    @property
    def is_tolerance(self) -> bool:
        return self.outcome == "Tolerance"

    def to_dict(self) -> dict:
        def num(v):
            if v is None:
                return None
            if math.isinf(v):
                return "inf"
            return v

        return {
            "outcome": self.outcome,
            "t1": num(self.t1),
            "tau": num(self.tau),
            "t2": num(self.t2),
            "margin": self.margin,
            "horizon": self.horizon,
            "justification": self.justification,
            "assumptions_checked": list(self.assumptions_checked),
            "numerics": {k: num(v) if isinstance(v, float) else v for k, v in self.numerics.items()},
        }


class _Path:
    """A trajectory continued past its ball entry by the node's linear flow."""

    def __init__(self, traj: Trajectory, J, node: Point):
        self.traj = traj
        self.J = J
        self.node = node
        self.t_b = traj.t_end
        ex, ey = traj.end
        self.u_b = (ex - node[0], ey - node[1])

    def at(self, t: float) -> Point:
        if t <= self.t_b:
            return self.traj.at(t)
        (a, b), (c, d) = expm2(self.J, t - self.t_b)
        u, v = self.u_b
        return (self.node[0] + a * u + b * v, self.node[1] + c * u + d * v)


class _Tail:
    """First components after the common time, from the linearization.

    For a displacement u from the node, u_1(s) is
    alpha e^{l1 s} + beta e^{l2 s} (l1 the slow eigenvalue), or
    (alpha + beta s) e^{l s} when the eigenvalue is repeated.
    """

    def __init__(self, J, u: Point):
        (a, b), (c, d) = J
        l1, l2 = eigenvalues_2x2(J)
        self.l1, self.l2 = l1, l2
        self.repeated = abs(l1 - l2) < 1e-9 * max(abs(l1), abs(l2))
        if self.repeated:
            lam = 0.5 * (a + d)
            self.l1 = self.l2 = lam
            # e^{Js} = e^{lam s} (I + s N) with N = J - lam I
            self.alpha = u[0]
            self.beta = (a - lam) * u[0] + b * u[1]
        else:
            # spectral projection onto the slow eigenspace: (J - l2 I)/(l1 - l2)
            self.alpha = ((a - l2) * u[0] + b * u[1]) / (l1 - l2)
            self.beta = u[0] - self.alpha

    def value(self, s: float) -> float:
        if self.repeated:
            return (self.alpha + self.beta * s) * math.exp(self.l1 * s)
        return self.alpha * math.exp(self.l1 * s) + self.beta * math.exp(self.l2 * s)

    def minus(self, other: "_Tail") -> "_Tail":
        out = object.__new__(_Tail)
        out.l1, out.l2, out.repeated = self.l1, self.l2, self.repeated
        out.alpha = self.alpha - other.alpha
        out.beta = self.beta - other.beta
        return out

    def roots(self) -> list[float]:
        a, b = self.alpha, self.beta
        out = []
        if self.repeated:
            if b != 0:
                out.append(-a / b)
        elif a != 0 and b != 0 and (a > 0) != (b > 0):
            out.append(math.log(-b / a) / (self.l1 - self.l2))
        return sorted(s for s in out if s > 0)

    def minimum(self) -> tuple[float, float]:
        """(min over s >= 0, where it is attained)."""
        cands = [0.0]
        a, b = self.alpha, self.beta
        if self.repeated:
            if b != 0:
                cands.append(-1.0 / self.l1 - a / b)
        elif a != 0 and b != 0:
            r = -b * self.l2 / (a * self.l1)
            if r > 0:
                cands.append(math.log(r) / (self.l1 - self.l2))
        return min((self.value(s), s) for s in cands if s >= 0)


def _eventual_sign(psi: _Tail, phi: _Tail, tie: float) -> int:
    """Sign of psi_1 - phi_1 as s -> infinity.

    The dominant coefficient is compared first; a relative difference below
    ``tie`` counts as equal and the next coefficient decides.
    """
    if psi.repeated:
        pairs = ((psi.beta, phi.beta), (psi.alpha, phi.alpha))
    else:
        pairs = ((psi.alpha, phi.alpha), (psi.beta, phi.beta))
    for cp, cf in pairs:
        scale = max(abs(cp), abs(cf))
        diff = cp - cf
        if scale > 0 and abs(diff) > tie * scale:
            return 1 if diff > 0 else -1
    return 0


def _check_node(sys: PlanarSystem, node: Point):
    rep = node_report(sys, node)
    if not rep.satisfies_A1:
        raise PreconditionError(
            "A1",
            f"{node} is not a stable node with real negative eigenvalues "
            f"({rep.classification}, eigenvalues {rep.eigenvalues})",
        )
    return rep


def _bisect(fun, a: float, b: float, depth: int = 80) -> tuple[float, float]:
    """Shrink [a, b] with fun(a) >= 0 > fun(b); returns the final bracket."""
    for _ in range(depth):
        m = 0.5 * (a + b)
        if m == a or m == b:
            break
        if fun(m) >= 0:
            a = m
        else:
            b = m
    return a, b


def _bisect_up(fun, a: float, b: float, depth: int = 80) -> tuple[float, float]:
    """Shrink [a, b] with fun(a) < 0 <= fun(b)."""
    for _ in range(depth):
        m = 0.5 * (a + b)
        if m == a or m == b:
            break
        if fun(m) < 0:
            a = m
        else:
            b = m
    return a, b


def detect_tolerance(
    sys: PlanarSystem,
    r0: Point,
    p0: Point,
    opts: IntegrationOptions | None = None,
    eps_tol: float = EPS_TOL,
    tie: float = TIE,
    node: Point | None = None,
    use_group_property: bool = False,
    samples_per_step: int = 4,
) -> ToleranceVerdict:
    """Decide whether psi (from p0) ever dips below phi (from r0) in x."""
    opts = opts or IntegrationOptions()
    node = tuple(node or opts.node or (0.0, 0.0))
    r0 = (float(r0[0]), float(r0[1]))
    p0 = (float(p0[0]), float(p0[1]))
    _check_node(sys, node)
    checked = ["A1"]
    if p0[0] < r0[0]:
        raise PreconditionError("A3", f"x_p = {p0[0]} is less than x_r = {r0[0]}")
    for name, pt in (("reference", r0), ("perturbed", p0)):
        if pt[0] < 0 or pt[1] < 0:
            raise PreconditionError("A2", f"{name} point {pt} is outside the first quadrant")
    horizon = effective_horizon(sys, node, opts)
    numerics = {
        "rel_tol": opts.rel_tol,
        "abs_tol": opts.abs_tol,
        "eps_ball": opts.eps_ball,
        "eps_tol": eps_tol,
        "horizon_limit": horizon,
    }
    if r0 == p0:
        return ToleranceVerdict(
            "NoTolerance", "analytic", margin=0.0, horizon=0.0,
            assumptions_checked=("A1", "A2", "A3"), numerics=numerics,
        )

    # relative error control only: near the node the first components can be
    # far smaller than any fixed absolute tolerance (e.g. x ~ y^2)
    o = opts.with_(
        node=node, horizon=horizon, events=(), abs_tol=min(opts.abs_tol, REL_ONLY_ABS_TOL)
    )
    numerics["abs_tol_used"] = o.abs_tol
    trajs = []
    for name, pt in (("reference", r0), ("perturbed", p0)):
        try:
            tr = integrate(sys, pt, o)
        except DomainError as exc:
            raise PreconditionError("A2", f"{name} orbit from {pt} hits a singularity: {exc}") from exc
        if tr.a2_violation is not None:
            raise PreconditionError(
                "A2", f"{name} orbit from {pt} leaves the first quadrant at t = {tr.a2_violation:.6g}"
            )
        if tr.termination == "left-domain":
            raise PreconditionError("A2", f"{name} orbit from {pt} diverges; not in the basin of {node}")
        trajs.append(tr)
    checked += ["A2", "A3"]
    phi_t, psi_t = trajs
    for name, tr in (("reference", phi_t), ("perturbed", psi_t)):
        if tr.termination != "entered-origin-ball":
            return ToleranceVerdict(
                "Inconclusive",
                f"{name} orbit did not reach the node ball within the horizon {horizon:g}",
                horizon=horizon,
                assumptions_checked=tuple(checked),
                numerics=numerics,
            )

    if use_group_property and check_group_property_no_tolerance(sys, r0, p0, opts):
        return ToleranceVerdict(
            "NoTolerance", "group-property", horizon=horizon,
            assumptions_checked=tuple(checked), numerics=numerics,
        )

    J = sys.jacobian(*node)
    phi = _Path(phi_t, J, node)
    psi = _Path(psi_t, J, node)
    t_c = max(phi.t_b, psi.t_b)
    numerics["t_ball_reference"] = phi.t_b
    numerics["t_ball_perturbed"] = psi.t_b

    grid = np.union1d(
        phi_t.dense_samples(samples_per_step)[0], psi_t.dense_samples(samples_per_step)[0]
    )
    grid = grid[grid <= t_c]

    def dfun(t: float) -> float:
        return psi.at(t)[0] - phi.at(t)[0]

    d = np.array([dfun(float(t)) for t in grid])
    pu = psi.at(t_c)
    fu = phi.at(t_c)
    tail_psi = _Tail(J, (pu[0] - node[0], pu[1] - node[1]))
    tail_phi = _Tail(J, (fu[0] - node[0], fu[1] - node[1]))
    tail = tail_psi.minus(tail_phi)
    sign = _eventual_sign(tail_psi, tail_phi, tie)
    tail_min, tail_min_s = tail.minimum()
    numerics["tail_alpha"] = tail.alpha
    numerics["tail_beta"] = tail.beta
    numerics["tail_sign"] = sign
    margin = float(max(-d.min(), -tail_min))

    def finish(t1, tau, t2, why):
        if d[0] == 0.0 and t1 <= 1e-9:
            t1 = 0.0
        return ToleranceVerdict(
            "Tolerance", why, t1, tau, t2, margin, t_c, tuple(checked), numerics
        )

    def onset_before(j: int) -> float:
        """Last upward crossing of zero before grid index j (d[j] < 0)."""
        nonneg = np.nonzero(d[:j] >= 0)[0]
        i0 = int(nonneg[-1])
        a, b = _bisect(dfun, float(grid[i0]), float(grid[i0 + 1]))
        return a

    deep = np.nonzero(d < -eps_tol)[0]
    if deep.size:
        j = int(deep[0])
        t1 = onset_before(j)
        after = np.nonzero(d[j:] >= 0)[0]
        if after.size:
            k = j + int(after[0])
            a, b = _bisect_up(dfun, float(grid[k - 1]), float(grid[k]))
            t2 = b
            window = slice(j, k)
        else:
            k = len(grid)
            window = slice(j, k)
            if sign < 0 or (tail.value(0.0) < 0 and not tail.roots()):
                t2 = math.inf
            else:
                roots = tail.roots()
                t2 = t_c + roots[0] if roots else t_c
        idx = j + int(np.argmin(d[window]))
        tau = float(grid[idx])
        numerics["window"] = "first"
        return finish(t1, tau, t2, "crossing")

    # no conclusive dip inside the integrated window: the tail decides
    if tail_min < -eps_tol:
        roots = tail.roots()
        if tail.value(0.0) < 0:
            neg = np.nonzero(d < 0)[0]
            t1 = onset_before(int(neg[0])) if neg.size else t_c
            t2 = t_c + roots[0] if roots else math.inf
        else:
            t1 = t_c + roots[0]
            t2 = t_c + roots[1] if len(roots) > 1 else math.inf
        return finish(t1, t_c + tail_min_s, t2, "tail-crossing")

    if sign < 0:
        roots = tail.roots()
        if tail.value(0.0) < 0:
            # negative from somewhere inside the window on
            nonneg = np.nonzero(d >= 0)[0]
            i0 = int(nonneg[-1])
            if i0 + 1 < len(grid):
                t1 = _bisect(dfun, float(grid[i0]), float(grid[i0 + 1]))[0]
            else:
                t1 = t_c
        else:
            t1 = t_c + roots[0] if roots else t_c
        tau = max(t1, t_c) + 1.0 / abs(tail.l1)
        return finish(t1, tau, math.inf, "asymptotic")
    if sign == 0:
        return ToleranceVerdict(
            "Inconclusive", "asymptotic tie in the slow eigen-coordinate",
            margin=margin, horizon=t_c, assumptions_checked=tuple(checked), numerics=numerics,
        )
    if d.min() < 0 or tail_min < 0:
        return ToleranceVerdict(
            "Inconclusive",
            f"shallow crossing: d dips to {min(d.min(), tail_min):.3g}, within eps_tol",
            margin=margin, horizon=t_c, assumptions_checked=tuple(checked), numerics=numerics,
        )
    return ToleranceVerdict(
        "NoTolerance", "horizon+asymptotic", margin=margin, horizon=t_c,
        assumptions_checked=tuple(checked), numerics=numerics,
    )


# ---------------------------------------------------------------- same-orbit check


def backward_orbit_distance(
    sys: PlanarSystem, r0: Point, p0: Point, opts: IntegrationOptions | None = None
) -> tuple[float, float]:
    """(distance from p0 to the backward orbit of r0, backward time of the closest point)."""
    back = integrate_backward_to_axis(sys, r0, opts)
    ts, xs, ys = back.dense_samples(8)
    dist = np.hypot(xs - p0[0], ys - p0[1])
    i = int(np.argmin(dist))
    lo = float(ts[max(i - 1, 0)])
    hi = float(ts[min(i + 1, len(ts) - 1)])

    def dd(t):
        x, y = back.at(t)
        return math.hypot(x - p0[0], y - p0[1])

    # golden-section on the dense output around the closest sample
    g = (math.sqrt(5) - 1) / 2
    a, b = min(lo, hi), max(lo, hi)
    c1, c2 = b - g * (b - a), a + g * (b - a)
    f1, f2 = dd(c1), dd(c2)
    for _ in range(100):
        if f1 < f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - g * (b - a)
            f1 = dd(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + g * (b - a)
            f2 = dd(c2)
    t = 0.5 * (a + b)
    best = min((dd(t), t), (float(dist[i]), float(ts[i])))
    return best


def _monotone_decreasing(sys: PlanarSystem, traj: Trajectory) -> bool:
    _, xs, ys = traj.dense_samples(4)
    if np.any(np.diff(xs) > 0):
        return False
    return all(sys.f_value(float(x), float(y)) <= 0 for x, y in zip(xs, ys))


def check_group_property_no_tolerance(
    sys: PlanarSystem, r0: Point, p0: Point, opts: IntegrationOptions | None = None, dist_tol: float = 1e-6
) -> bool:
    """True when p0 lies on the backward orbit of r0 and both first components
    decrease monotonically, which rules tolerance out."""
    opts = opts or IntegrationOptions()
    if not (r0[0] > 0 and r0[1] > 0):
        return False
    try:
        dist, _ = backward_orbit_distance(sys, r0, p0, opts)
    except (DomainError, IntegrationError, ValueError):
        return False
    if dist >= dist_tol:
        return False
    node = opts.node or (0.0, 0.0)
    o = opts.with_(node=node, horizon=effective_horizon(sys, node, opts), events=())
    try:
        phi = integrate(sys, r0, o)
        psi = integrate(sys, p0, o)
    except (DomainError, IntegrationError):
        return False
    return _monotone_decreasing(sys, phi) and _monotone_decreasing(sys, psi)


# ---------------------------------------------------------------- robustness


@dataclass(frozen=True)
class RobustnessReport:
    radius: float
    fraction: float
    fraction_reference: float
    fraction_perturbed: float
    n_samples: int
    halvings: int
    history: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "fraction": self.fraction,
            "fraction_reference": self.fraction_reference,
            "fraction_perturbed": self.fraction_perturbed,
            "n_samples": self.n_samples,
            "halvings": self.halvings,
            "history": [list(h) for h in self.history],
        }


def _disk_sample(rng: np.random.Generator, center: Point, radius: float) -> Point:
    rr = radius * math.sqrt(rng.random())
    th = 2 * math.pi * rng.random()
    return (center[0] + rr * math.cos(th), center[1] + rr * math.sin(th))


def robustness_balls(
    sys: PlanarSystem,
    r0: Point,
    p0: Point,
    verdict: ToleranceVerdict,
    n_samples: int = 16,
    radius: float = 1e-3,
    seed: int = 0,
    max_halvings: int = 5,
    opts: IntegrationOptions | None = None,
) -> RobustnessReport:
    """Fraction of perturbed pairs that keep tolerance.

    Half of the samples move r0 inside its ball (clipped to the first
    quadrant with x <= x_p), half move p0 (clipped to x >= x_r, y >= 0).
    The radius is halved until every sample keeps tolerance or the halving
    budget is spent.
    """
    if not verdict.is_tolerance:
        raise ValueError("robustness balls only apply to a Tolerance verdict")
    if radius == 0 or n_samples == 0:
        return RobustnessReport(radius, 1.0, 1.0, 1.0, 0, 0, ((radius, 1.0),))
    rng = np.random.default_rng(seed)
    history = []
    r = radius
    for halving in range(max_halvings + 1):
        kept = {"reference": [], "perturbed": []}
        for which in ("reference", "perturbed"):
            done = 0
            tries = 0
            while done < n_samples and tries < 20 * n_samples:
                tries += 1
                if which == "reference":
                    q = _disk_sample(rng, r0, r)
                    if q[0] <= 0 or q[1] < 0 or q[0] > p0[0]:
                        continue
                    pair = (q, p0)
                else:
                    q = _disk_sample(rng, p0, r)
                    if q[0] < r0[0] or q[1] < 0:
                        continue
                    pair = (r0, q)
                try:
                    v = detect_tolerance(sys, pair[0], pair[1], opts)
                except PreconditionError:
                    continue  # outside the basin: not part of the clipped ball
                kept[which].append(v.is_tolerance)
                done += 1
        fr = float(np.mean(kept["reference"])) if kept["reference"] else 1.0
        fp = float(np.mean(kept["perturbed"])) if kept["perturbed"] else 1.0
        frac = min(fr, fp)
        history.append((r, frac))
        if frac == 1.0 or halving == max_halvings:
            return RobustnessReport(r, frac, fr, fp, n_samples, halving, tuple(history))
        r *= 0.5
    raise AssertionError("unreachable")
