import math

import numpy as np
import pytest

from conftest import pair_relative_gap
from tolerancekit.errors import PreconditionError
from tolerancekit.integrate import IntegrationOptions, integrate, integrate_backward_to_axis
from tolerancekit.linear import analyze, nonnegative_orbit, verdict_linear
from tolerancekit.system import builtin, from_expressions, linear
from tolerancekit.tolerance import (
    EPS_TOL,
    backward_orbit_distance,
    check_group_property_no_tolerance,
    detect_tolerance,
    robustness_balls,
)

# verdicts confirmed by the scipy oracle below
PAIRS = [
    ("ex2", (4, 0), (4.5, 5), "Tolerance"),
    ("ex2", (4, 0), (4.5, 20), "Tolerance"),
    ("ex2", (4, 0), (6, 10), "Tolerance"),
    ("ex2", (4, 0), (7, 1), "NoTolerance"),
    ("ex2", (4, 10), (4.2, 2), "NoTolerance"),
    ("ex2", (4, 10), (5, 25), "NoTolerance"),
    ("ex2", (4, 10), (6, 5), "NoTolerance"),
    ("ex1", (2, 0.5), (5, 1), "NoTolerance"),
    ("ex1", (2, 0.5), (2, 0), "Tolerance"),
    ("ex1", (2, 0.5), (2.2, 0.2), "Tolerance"),
    ("ex3", (0.5, 2), (0.7, 4), "Tolerance"),
    ("ex3", (0.5, 2), (0.7, 3), "NoTolerance"),
]


@pytest.mark.parametrize("name, r0, p0, expected", PAIRS)
def test_verdict_matches_independent_oracle(name, r0, p0, expected):
    sys = builtin(name)
    gap, _, _ = pair_relative_gap(sys, r0, p0)
    oracle = "Tolerance" if gap < -1e-9 else "NoTolerance"
    assert oracle == expected
    assert detect_tolerance(sys, r0, p0).outcome == expected


@pytest.mark.parametrize("name, r0, p0, expected", [p for p in PAIRS if p[3] == "Tolerance"])
def test_tolerance_witness_properties(name, r0, p0, expected):
    sys = builtin(name)
    v = detect_tolerance(sys, r0, p0)
    assert v.is_tolerance
    hi = min(v.t2, v.horizon)
    _, _, ref = pair_relative_gap(sys, r0, p0, t_end=hi)
    # re-integrated independently at tighter tolerance, psi_1 < phi_1 - eps at tau
    u = ref(v.tau)
    assert u[2] < u[0] - EPS_TOL
    # at the onset the first components agree and f(psi) <= f(phi)
    if v.t1 > 0:
        u1 = ref(v.t1)
        assert abs(u1[2] - u1[0]) <= 1e-8
        assert sys.f_value(u1[2], u1[3]) <= sys.f_value(u1[0], u1[1]) + 1e-8
    assert v.t1 <= v.tau < v.t2
    # onset consistency: no dip before t1, negative throughout (t1, t2)
    for t in np.linspace(0, v.t1, 50)[:-1]:
        w = ref(t)
        assert w[2] - w[0] >= -EPS_TOL
    for t in np.linspace(v.t1, hi, 200)[1:-1]:
        w = ref(t)
        assert w[2] - w[0] < 0


def test_ex1_onset_time():
    v = detect_tolerance(builtin("ex1"), (2, 0.5), (2.2, 0.2))
    assert v.t1 == pytest.approx(1.2888, abs=1e-3)


def test_tolerance_from_time_zero():
    # equal x, smaller f at the perturbed start: the window opens at once
    v = detect_tolerance(builtin("ex1"), (2, 0.5), (2, 0))
    assert v.is_tolerance and v.t1 == 0.0


def test_identical_pair(ex2):
    v = detect_tolerance(ex2, (4, 0), (4, 0))
    assert v.outcome == "NoTolerance" and v.justification == "analytic"


def test_verdict_json_schema(ex2):
    d = detect_tolerance(ex2, (4, 0), (4.5, 5)).to_dict()
    assert {"outcome", "t1", "tau", "t2", "margin", "horizon", "justification", "assumptions_checked"} <= set(d)
    assert d["t2"] == "inf"
    assert d["assumptions_checked"] == ["A1", "A2", "A3"]


@pytest.mark.parametrize("tighten", [10.0])
@pytest.mark.parametrize("name, r0, p0, expected", PAIRS)
def test_verdict_stable_under_tighter_tolerance(name, r0, p0, expected, tighten):
    opts = IntegrationOptions().tightened(tighten)
    assert detect_tolerance(builtin(name), r0, p0, opts).outcome == expected


@pytest.mark.parametrize("name, r0, p0, expected", [p for p in PAIRS if p[3] == "NoTolerance"])
def test_no_tolerance_tail_in_eigen_coordinates(name, r0, p0, expected):
    v = detect_tolerance(builtin(name), r0, p0)
    assert v.justification == "horizon+asymptotic"
    assert v.numerics["tail_sign"] > 0


def test_precondition_errors(ex2, ex3):
    with pytest.raises(PreconditionError) as info:
        detect_tolerance(ex2, (4, 0), (3, 1))
    assert info.value.assumption == "A3"
    with pytest.raises(PreconditionError) as info:
        detect_tolerance(ex2, (4, 0), (5, -1))
    assert info.value.assumption == "A2"
    spiral = linear(((-1, 2), (-2, -1)))
    with pytest.raises(PreconditionError) as info:
        detect_tolerance(spiral, (1, 1), (2, 1))
    assert info.value.assumption == "A1"


def test_outside_basin_is_not_a_verdict(ex3):
    # (1.5, 1.5) is captured by the spiral at (1.39, 1.39)
    v = None
    try:
        v = detect_tolerance(ex3, (0.5, 0.5), (1.5, 1.5))
    except PreconditionError as exc:
        assert exc.assumption == "A2"
    if v is not None:
        assert v.outcome == "Inconclusive"


def test_shallow_crossing_is_inconclusive():
    # x' = -x, y' = -2y: psi_1 - phi_1 = (x_p - x_r) e^{-t} keeps the sign of x_p - x_r
    sys = linear(((-1, 0), (0, -2)))
    assert detect_tolerance(sys, (1, 1), (1 + 1e-12, 0.5)).outcome in ("NoTolerance", "Inconclusive")


def test_asymptotic_tie_is_inconclusive():
    # repeated eigenvalue, identical x components, only y differs and never feeds x
    sys = linear(((-1, 0), (0, -1)))
    v = detect_tolerance(sys, (1, 1), (1, 2))
    assert v.outcome == "Inconclusive"


def test_group_property_examples(ex1, ex2):
    r0 = (2, 0.5)
    back = integrate(ex1, r0, IntegrationOptions(horizon=0.5, node=None), direction="backward")
    p0 = back.at(-0.5)
    assert p0[0] > r0[0]
    assert backward_orbit_distance(ex1, r0, p0)[0] < 1e-6
    assert check_group_property_no_tolerance(ex1, r0, p0)
    assert detect_tolerance(ex1, r0, p0, use_group_property=True).justification == "group-property"
    assert detect_tolerance(ex1, r0, p0).outcome == "NoTolerance"
    assert not check_group_property_no_tolerance(ex1, r0, (p0[0], p0[1] + 0.1))
    # ex2 from (4, 3): on its own backward orbit but x first rises
    back2 = integrate_backward_to_axis(ex2, (4, 3))
    q = back2.at(back2.t_end / 2)
    assert not check_group_property_no_tolerance(ex2, (4, 3), q)


@pytest.mark.parametrize("p0", [(4.5, 5), (4.5, 20)])
def test_robustness_balls(ex2, p0):
    v = detect_tolerance(ex2, (4, 0), p0)
    rb = robustness_balls(ex2, (4, 0), p0, v, n_samples=6, radius=1e-3, seed=1)
    assert rb.fraction == 1.0
    assert rb.halvings == 0
    again = robustness_balls(ex2, (4, 0), p0, v, n_samples=6, radius=1e-3, seed=1)
    assert again == rb


def test_robustness_radius_zero(ex2):
    v = detect_tolerance(ex2, (4, 0), (4.5, 5))
    assert robustness_balls(ex2, (4, 0), (4.5, 5), v, radius=0.0).fraction == 1.0
    with pytest.raises(ValueError):
        robustness_balls(ex2, (4, 0), (7, 1), detect_tolerance(ex2, (4, 0), (7, 1)))


def _random_case_1c(rng):
    while True:
        l2, l1 = sorted(-rng.uniform(0.2, 3.0, size=2))
        V = rng.normal(size=(2, 2))
        if abs(np.linalg.det(V)) < 0.2 or l1 - l2 < 0.1:
            continue
        A = V @ np.diag([l1, l2]) @ np.linalg.inv(V)
        an = analyze(A.tolist())
        if an.case == "1c":
            return A, an


def test_linear_cross_check():
    rng = np.random.default_rng(12)
    agree = conclusive = 0
    tried = 0
    while conclusive < 120 and tried < 5000:
        tried += 1
        A, an = _random_case_1c(rng)
        r0 = tuple(rng.uniform(0, 3, size=2))
        p0 = (r0[0] + rng.uniform(0, 2), rng.uniform(0, 3))
        if not (nonnegative_orbit(an, r0) and nonnegative_orbit(an, p0)):
            continue
        lv = verdict_linear(an, r0, p0)
        nv = detect_tolerance(linear(A.tolist()), r0, p0)
        if nv.outcome == "Inconclusive" or lv.outcome == "DegenerateTie":
            continue
        conclusive += 1
        if (lv.outcome == "YesAfter") == nv.is_tolerance:
            agree += 1
        if lv.outcome == "YesAfter" and lv.T > 0 and nv.is_tolerance:
            assert abs(nv.t1 - lv.T) / lv.T <= 1e-6
    assert conclusive >= 100
    assert agree == conclusive


def test_numerics_recorded(ex2):
    v = detect_tolerance(ex2, (4, 0), (7, 1))
    for key in ("rel_tol", "abs_tol", "eps_tol", "horizon_limit", "abs_tol_used", "tail_sign"):
        assert key in v.numerics
    assert v.horizon > 0 and math.isfinite(v.horizon)


def test_custom_node():
    # node moved to (1, 1); shift of ex2-like linear dynamics
    sys = from_expressions("shifted", "-(x-1)", "-2*(y-1)")
    v = detect_tolerance(sys, (2, 1), (3, 1), node=(1, 1))
    assert v.outcome == "NoTolerance"
