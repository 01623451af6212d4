import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from tolerancekit.errors import IntegrationError
from tolerancekit.integrate import (
    EventSpec,
    IntegrationOptions,
    basin_status,
    effective_horizon,
    in_basin,
    integrate,
    integrate_backward_to_axis,
)
from tolerancekit.system import from_expressions, linear


def scipy_reference(sys, p0, t_end, sign=1.0):
    sol = solve_ivp(
        lambda t, u: [sign * v for v in sys.field(u[0], u[1])],
        (0, t_end),
        list(p0),
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
        dense_output=True,
    )
    return sol.sol


def test_linear_closed_form():
    sys = linear(((-1, 0), (0, -2)))
    traj = integrate(sys, (1, 1), IntegrationOptions(horizon=10, node=None))
    assert traj.termination == "horizon"
    x, y = traj.at(1.0)
    assert x == pytest.approx(math.exp(-1), rel=1e-6)
    assert y == pytest.approx(math.exp(-2), rel=1e-6)
    for t in np.linspace(0, 10, 41):
        x, y = traj.at(float(t))
        assert x == pytest.approx(math.exp(-t), rel=1e-6)
        assert y == pytest.approx(math.exp(-2 * t), rel=1e-6)


def test_matches_scipy_on_nonlinear(ex2, ex1, ex3):
    for sys, p0 in ((ex2, (4, 0)), (ex2, (6, 10)), (ex1, (2, 0.5)), (ex3, (0.5, 2))):
        traj = integrate(sys, p0, IntegrationOptions(horizon=8, node=None))
        ref = scipy_reference(sys, p0, 8)
        for t in np.linspace(0, 8, 33):
            assert traj.at(float(t)) == pytest.approx(tuple(ref(t)), rel=1e-7, abs=1e-10)


def test_time_monotone_and_exact_at_samples(ex2):
    traj = integrate(ex2, (4, 0))
    ts = traj.times()
    assert all(b > a for a, b in zip(ts, ts[1:]))
    for t, x, y in zip(ts, traj.x, traj.y):
        assert traj.at(t) == (x, y)
    back = integrate(ex2, (4, 3), IntegrationOptions(horizon=0.2, node=None), direction="backward")
    tb = back.times()
    assert all(b < a for a, b in zip(tb, tb[1:]))
    for t, x, y in zip(tb, back.x, back.y):
        assert back.at(t) == (x, y)


def test_terminates_in_origin_ball(ex2):
    opts = IntegrationOptions()
    traj = integrate(ex2, (4, 0), opts)
    assert traj.termination == "entered-origin-ball"
    assert math.hypot(*traj.end) == pytest.approx(opts.eps_ball, rel=1e-6)
    assert traj.a2_violation is None
    assert min(traj.x) >= -opts.eps_neg and min(traj.y) >= -opts.eps_neg


def test_ex2_extremum_events(ex2):
    opts = IntegrationOptions(events=(EventSpec("x-extremum"), EventSpec("y-extremum")))
    traj = integrate(ex2, (4, 0), opts)
    xmax = [e for e in traj.events_of("x-extremum") if e.label == "max"]
    ymax = [e for e in traj.events_of("y-extremum") if e.label == "max"]
    assert len(xmax) == 1 and 4.5 < xmax[0].point[0] < 5
    assert len(ymax) == 1 and 2 < ymax[0].point[0] < 3
    for e in xmax:
        assert abs(ex2.f_value(*e.point)) <= 1e-9
    for e in ymax:
        assert abs(ex2.g_value(*e.point)) <= 1e-9


def test_event_points_satisfy_definitions(ex1):
    specs = (EventSpec("x-equals", 1.5), EventSpec("y-equals", 0.2), EventSpec("f-sign-change"), EventSpec("g-sign-change"))
    traj = integrate(ex1, (2, 0.5), IntegrationOptions(events=specs))
    assert traj.events
    for e in traj.events:
        x, y = e.point
        if e.kind == "x-equals":
            assert abs(x - 1.5) <= 1e-9
        elif e.kind == "y-equals":
            assert abs(y - 0.2) <= 1e-9
        elif e.kind == "f-sign-change":
            assert abs(ex1.f_value(x, y)) <= 1e-9
        else:
            assert abs(ex1.g_value(x, y)) <= 1e-9
        assert traj.at(e.time) == pytest.approx(e.point, abs=1e-12)


def test_terminal_event_stops():
    sys = linear(((-1, 0), (0, -2)))
    traj = integrate(sys, (1, 1), IntegrationOptions(node=None, events=(EventSpec("x-equals", 0.5, True),)))
    assert traj.termination == "event-target"
    assert traj.t_end == pytest.approx(math.log(2), rel=1e-10)


def test_box_exit():
    sys = linear(((1, 0), (0, -1)))
    traj = integrate(sys, (1, 1), IntegrationOptions(node=None, box=(0, 2, 0, 2)))
    assert traj.termination == "left-domain"
    assert traj.end[0] == pytest.approx(2.0, abs=1e-9)
    assert traj.t_end == pytest.approx(math.log(2), rel=1e-8)


def test_a2_violation_reported_not_clamped():
    # the first orbit stays in the quadrant; the second is pushed to x < 0 by the -3y term
    sys = linear(((-1, 1), (0, -1)))
    traj = integrate(sys, (1, 0.5), IntegrationOptions())
    assert traj.a2_violation is None
    sys2 = linear(((-1, -3), (0, -2)))
    bad = integrate(sys2, (0.1, 1), IntegrationOptions())
    assert bad.a2_violation is not None
    assert min(bad.x) < -1e-9


def test_blow_up_flagged():
    sys = from_expressions("blow", "x^2", "-y")
    traj = integrate(sys, (1, 1), IntegrationOptions(node=None, horizon=5))
    assert traj.termination == "left-domain"
    assert traj.flags.get("blow_up")


def test_step_underflow_raises():
    sys = from_expressions("wall", "1/(1-x)", "-y")
    with pytest.raises(IntegrationError) as info:
        integrate(sys, (0, 1), IntegrationOptions(node=None, horizon=5))
    assert info.value.state is not None


@pytest.mark.parametrize(
    "name, p0, x_hat",
    [("ex2", (4, 3), 3.4), ("ex2", (4, 10), 4.0), ("ex1", (2, 0.5), 2.5), ("ex3", (0.5, 0.5), 1.0)],
)
def test_backward_to_axis(name, p0, x_hat, request):
    sys = request.getfixturevalue(name)
    traj = integrate_backward_to_axis(sys, p0)
    assert traj.termination == "axis-crossing"
    assert traj.t_end < 0
    assert abs(traj.end[1]) <= 1e-9
    assert traj.end[0] == pytest.approx(x_hat, abs=0.1)


def test_backward_times_ex1_ex3(ex1, ex3):
    assert integrate_backward_to_axis(ex1, (2, 0.5)).t_end == pytest.approx(-0.85, abs=0.1)
    assert integrate_backward_to_axis(ex3, (0.5, 0.5)).t_end == pytest.approx(-1.75, abs=0.1)


def test_backward_agrees_with_scipy(ex2):
    traj = integrate_backward_to_axis(ex2, (4, 3))
    ref = scipy_reference(ex2, (4, 3), -traj.t_end, sign=-1.0)
    assert traj.end == pytest.approx(tuple(ref(-traj.t_end)), abs=1e-8)


def test_backward_needs_open_quadrant(ex2):
    with pytest.raises(ValueError):
        integrate_backward_to_axis(ex2, (4, 0))


def test_backward_blowup_diagnostic():
    # backward flow of x' = -x^2 - x, y' = -y from (1, 1) escapes before either axis
    sys = from_expressions("esc", "-x - x^2", "-y")
    traj = integrate_backward_to_axis(sys, (1, 1), IntegrationOptions(horizon=50))
    assert traj.termination == "horizon"
    assert "diagnostic" in traj.flags


def test_basin_membership(ex3):
    assert in_basin(ex3, (0.5, 0.5), (0, 0))
    assert not in_basin(ex3, (1.4, 1.4), (0, 0), other_attractors=[(1.3935, 1.3935)])
    assert not in_basin(ex3, (1.4, 1.4), (0, 0))
    assert basin_status(ex3, (0, 0), (0, 0)) == "inside"


def test_effective_horizon_stretches_for_slow_nodes():
    slow = linear(((-0.1, 0), (0, -1)))
    assert effective_horizon(slow, (0, 0), IntegrationOptions()) == pytest.approx(300)
    fast = linear(((-1, 0), (0, -2)))
    assert effective_horizon(fast, (0, 0), IntegrationOptions()) == 100


def test_tolerance_convergence(ex2):
    base = IntegrationOptions(horizon=3, node=None)
    a = integrate(ex2, (4, 0), base).end
    b = integrate(ex2, (4, 0), base.with_(rel_tol=base.rel_tol / 2, abs_tol=base.abs_tol / 2)).end
    assert math.dist(a, b) < 10 * base.rel_tol * max(1.0, math.hypot(*a))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 8), st.floats(0, 20), st.floats(0.2, 2.0))
def test_forward_backward_reversibility(x0, y0, t):
    from tolerancekit.system import builtin

    sys = builtin("ex2")
    fwd = integrate(sys, (x0, y0), IntegrationOptions(horizon=t, node=None))
    back = integrate(sys, fwd.end, IntegrationOptions(horizon=fwd.t_end, node=None), direction="backward")
    assert math.dist(back.end, (x0, y0)) < 1e-6


def test_exports(ex2, tmp_path):
    traj = integrate(ex2, (4, 0), IntegrationOptions(events=(EventSpec("y-extremum"),)))
    traj.write_csv(tmp_path / "t.csv")
    traj.write_events_json(tmp_path / "e.json")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["t", "x", "y"]
    assert len(rows) == len(traj) + 1
    assert float(rows[1][1]) == 4.0
    meta = json.loads((tmp_path / "e.json").read_text())
    assert meta["termination"] == "entered-origin-ball"
    assert meta["events"][0]["extremum"] == "max"


def test_dense_samples_shape(ex2):
    traj = integrate(ex2, (4, 0))
    ts, xs, ys = traj.dense_samples(4)
    assert len(ts) == 4 * (len(traj) - 1) + 1
    assert np.all(np.diff(ts) > 0)
    assert xs[0] == 4.0 and ts[-1] == traj.t_end


@pytest.mark.parametrize("bad", [dict(horizon=0), dict(horizon=-1)])
def test_invalid_options(ex2, bad):
    with pytest.raises(ValueError):
        integrate(ex2, (1, 1), IntegrationOptions(**bad))
    with pytest.raises(ValueError):
        EventSpec("x-equals")
    with pytest.raises(ValueError):
        EventSpec("nonsense")
