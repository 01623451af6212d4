"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (the lines are printed even with output capture on) or as a
script: ``python tests/test_acceptance.py``.
"""

import math
import random
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import expm

sys.path.insert(0, str(Path(__file__).parent))

from conftest import mp_central_difference, random_expr_text  # noqa: E402
from tolerancekit.errors import DomainError, PreconditionError  # noqa: E402
from tolerancekit.estimates import (  # noqa: E402
    bound_report,
    delta_fn,
    example2_constants,
    example2_tolerance_condition,
)
from tolerancekit.exprcore import differentiate, eval_expr, parse_expr  # noqa: E402
from tolerancekit.geometry import CandidateClassifier  # noqa: E402
from tolerancekit.integrate import integrate_backward_to_axis  # noqa: E402
from tolerancekit.linear import analyze, nonnegative_orbit, verdict_linear  # noqa: E402
from tolerancekit.system import builtin, find_fixed_points, linear  # noqa: E402
from tolerancekit.tolerance import detect_tolerance  # noqa: E402

# expected verdicts for the reference pairs, as stated
REFERENCE_PAIRS = [
    ("ex2", (4, 0), (4.5, 5), "Tolerance"),
    ("ex2", (4, 0), (4.5, 20), "Tolerance"),
    ("ex2", (4, 0), (6, 10), "Tolerance"),
    ("ex2", (4, 0), (7, 1), "NoTolerance"),
    ("ex2", (4, 10), (4.2, 2), "NoTolerance"),
    ("ex2", (4, 10), (5, 25), "Tolerance"),
    ("ex2", (4, 10), (6, 5), "NoTolerance"),
    ("ex1", (2, 0.5), (5, 1), "NoTolerance"),
    ("ex1", (2, 0.5), (2, 0), "Tolerance"),
    ("ex1", (2, 0.5), (2.2, 0.2), "NoTolerance"),
    ("ex3", (0.5, 2), (0.7, 4), "Tolerance"),
    ("ex3", (0.5, 2), (0.7, 3), "NoTolerance"),
]


def criterion_1():
    misses = []
    for name, r0, p0, expected in REFERENCE_PAIRS:
        got = detect_tolerance(builtin(name), r0, p0).outcome
        if got != expected:
            misses.append(f"{name} {r0}->{p0}: expected {expected}, got {got}")
    return not misses, f"{len(REFERENCE_PAIRS) - len(misses)}/{len(REFERENCE_PAIRS)} reference verdicts" + (
        "; " + "; ".join(misses) if misses else ""
    )


def criterion_2():
    cases = [("ex2", (4, 3), 3.4), ("ex2", (4, 10), 4.0), ("ex1", (2, 0.5), 2.5), ("ex3", (0.5, 0.5), 1.0)]
    parts, ok = [], True
    for name, p0, target in cases:
        x_hat = integrate_backward_to_axis(builtin(name), p0).end[0]
        ok &= abs(x_hat - target) <= 0.1
        parts.append(f"{name} {p0}: {x_hat:.3f}")
    return ok, "; ".join(parts)


def criterion_3():
    reps = find_fixed_points(builtin("ex3"), (0, 2, 0, 2), 10)
    want = {"stable node": (0, 0), "saddle": (0.72, 0.72), "stable spiral": (1.4, 1.4)}
    got = {r.classification: r.location for r in reps}
    ok = len(reps) == 3 and set(got) == set(want)
    ok = ok and all(max(abs(got[k][0] - v[0]), abs(got[k][1] - v[1])) <= 0.01 for k, v in want.items())
    return ok, ", ".join(f"{k} ({v[0]:.4f}, {v[1]:.4f})" for k, v in sorted(got.items()))


def criterion_4():
    c = example2_constants(builtin("ex2"), (4, 0))
    ok = c["C_r"] == 12.0 and 4.5 < c["x_M"] < 5 and 2 < c["x_f"] < 3 and 1.55 < c["C_f"] < 2.53
    return ok, f"C_r = {c['C_r']}, x_M = {c['x_M']:.4f}, x_f = {c['x_f']:.4f}, C_f = {c['C_f']:.4f}"


def criterion_5(n=500):
    rng = np.random.default_rng(2024)
    conclusive = agree = 0
    worst = 0.0
    admissible = 0
    while admissible < n:
        l1, l2 = -rng.uniform(0.2, 3.0, size=2)
        V = rng.normal(size=(2, 2))
        if abs(np.linalg.det(V)) < 0.2 or abs(l1 - l2) < 0.1:
            continue
        A = (V @ np.diag([l1, l2]) @ np.linalg.inv(V)).tolist()
        an = analyze(A)
        r0 = (float(rng.uniform(0, 3)), float(rng.uniform(0, 3)))
        p0 = (r0[0] + float(rng.uniform(0, 2)), float(rng.uniform(0, 3)))
        if not (nonnegative_orbit(an, r0) and nonnegative_orbit(an, p0)):
            continue
        admissible += 1
        lv = verdict_linear(an, r0, p0)
        nv = detect_tolerance(linear(A), r0, p0)
        if nv.outcome == "Inconclusive" or lv.outcome == "DegenerateTie":
            continue
        conclusive += 1
        if (lv.outcome == "YesAfter") == nv.is_tolerance:
            agree += 1
        if lv.outcome == "YesAfter" and nv.is_tolerance and lv.T > 0:
            worst = max(worst, abs(nv.t1 - lv.T) / lv.T)
    ok = conclusive > 0 and agree == conclusive and worst <= 1e-6
    return ok, f"{agree}/{conclusive} conclusive agree ({admissible} admissible pairs), worst onset rel err {worst:.2e}"


def _sample_inside(rng, box, pred, n):
    out = []
    while len(out) < n:
        p = (float(rng.uniform(box[0], box[1])), float(rng.uniform(box[2], box[3])))
        if pred(p):
            out.append(p)
    return out


def criterion_6(n=200):
    rng = np.random.default_rng(6)
    ex2 = builtin("ex2")
    clf = CandidateClassifier(ex2, (4, 0))
    T, hatT = clf.T, clf.hatT
    x0, x1, y0, y1 = T.bounds()
    in_T = _sample_inside(rng, (x0, x1, y0, y1), T.contains, n // 2)
    strip = (hatT.x_lo, hatT.x_hi, hatT.y_low, hatT.grid_y_top)
    in_hatT = _sample_inside(rng, strip, hatT.contains, n - n // 2) if hatT.f_nonpositive else []
    bad_guaranteed = [p for p in in_T + in_hatT if detect_tolerance(ex2, (4, 0), p).outcome == "NoTolerance"]

    # ex3 reference below y = 1, where f_y > 0 and inhibition is absent
    configs = [(builtin("ex1"), (2, 0.5), (2, 6, 0, 3)), (builtin("ex3"), (0.3, 0.3), (0.3, 0.7, 0, 0.7))]
    impossible = []
    for k, (sys_, r0, box) in enumerate(configs):
        c = CandidateClassifier(sys_, r0)
        want = n // 2 if k == 0 else n - len(impossible)
        tries = 0
        got = 0
        while got < want and tries < 20 * n:
            tries += 1
            p = (float(rng.uniform(box[0], box[1])), float(rng.uniform(box[2], box[3])))
            try:
                if c.classify(p).kind != "Impossible":
                    continue
            except PreconditionError:
                continue
            impossible.append((sys_, r0, p))
            got += 1
    bad_impossible = [p for s, r0, p in impossible if detect_tolerance(s, r0, p).outcome == "Tolerance"]
    ok = len(in_T) + len(in_hatT) == n and len(impossible) == n and not bad_guaranteed and not bad_impossible
    return ok, (
        f"{len(in_T)} from T + {len(in_hatT)} from T-hat, {len(bad_guaranteed)} not Tolerance; "
        f"{len(impossible)} Impossible samples, {len(bad_impossible)} Tolerance"
    )


def criterion_7(n=1000):
    rng = np.random.default_rng(7)
    worst = 0.0
    done = 0
    while done < n:
        w = float(rng.uniform(-0.9, 20))
        a, b = (float(v) for v in rng.uniform(0.05, 25, size=2))
        k = 1 + w
        if min(a, b) - 0.2 <= k <= max(a, b) + 0.2:
            continue
        ref, _ = quad(lambda u: 1.0 / (u * u / k - u), a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
        worst = max(worst, abs(delta_fn(w, a, b) - ref))
        done += 1
    return worst <= 1e-10, f"{n} triples, worst |closed form - quadrature| = {worst:.2e}"


def criterion_8(grid=20, instances=100):
    ex2 = builtin("ex2")
    c = example2_constants(ex2, (4, 0))
    held = fails = 0
    for x in np.linspace(4.02, 7.0, grid):
        for y in np.linspace(c["y_f"] + 0.1, 40.0, grid):
            p0 = (float(x), float(y))
            res = example2_tolerance_condition(ex2, (4, 0), p0, c["x_M"], c["x_f"], c["y_f"])
            if res.status != "holds":
                continue
            held += 1
            if not detect_tolerance(ex2, (4, 0), p0).is_tolerance:
                fails += 1
    rng = np.random.default_rng(8)
    order_bad = cond_bad = 0
    for _ in range(instances):
        p0 = (float(rng.uniform(4.0, 6.5)), float(rng.uniform(0, 30)))
        rep = bound_report(ex2, (4, 0), p0, x_f=c["x_f"])
        if not (rep.lower_t_phi <= rep.t_phi * (1 + 1e-9) and rep.t_psi <= rep.upper_t_psi * (1 + 1e-9)):
            order_bad += 1
        if rep.condition and not detect_tolerance(ex2, (4, 0), p0).is_tolerance:
            cond_bad += 1
    ok = held > 0 and fails == 0 and order_bad == 0 and cond_bad == 0
    return ok, (
        f"condition holds at {held}/{grid * grid} grid points, {fails} not Tolerance; "
        f"bound ordering violated on {order_bad}/{instances}, bound condition unsound on {cond_bad}"
    )


def criterion_9(n=1000):
    rng = random.Random(9)
    worst = 0.0
    checked = 0
    bad = 0
    while checked < n:
        text = random_expr_text(rng)
        x, y = rng.uniform(0.05, 3.0), rng.uniform(0.05, 3.0)
        e = parse_expr(text)
        var = rng.choice("xy")
        try:
            sym = eval_expr(differentiate(e, var), x, y)
        except DomainError:
            continue
        if not math.isfinite(sym):
            continue
        fd = float(mp_central_difference(text, x, y, var))
        err = abs(sym - fd) / max(abs(fd), 1e-6)
        worst = max(worst, err)
        bad += err > 1e-5
        checked += 1
    return bad == 0, f"{n} expressions, worst relative error {worst:.2e}"


def criterion_10():
    A = ((-2, 1), (-1, 0))
    r0, p0 = (1, 2), (1.5, 1.6)
    v = verdict_linear(analyze(A), r0, p0)
    diff0 = np.array(r0, float) - np.array(p0, float)
    gap = lambda t: float((expm(np.array(A, float) * t) @ diff0)[0])  # noqa: E731
    ts = np.linspace(0, 10, 200001)
    vals = np.array([gap(float(t)) for t in ts[::100]])
    i = int(np.argmax(vals))
    # polish the maximum on the fine grid around the coarse peak
    lo, hi = max(0, i * 100 - 100), min(len(ts) - 1, i * 100 + 100)
    fine = np.array([gap(float(t)) for t in ts[lo : hi + 1]])
    j = int(np.argmax(fine))
    t_max, depth = float(ts[lo + j]), float(fine[j])
    onset_ok = v.outcome == "YesAfter" and abs(v.T - 5 / 9) <= 1e-9 and abs(gap(5 / 9)) <= 1e-9
    depth_ok = abs(depth - 0.9 / math.e) <= 1e-9 and abs(t_max - 1.0) <= 1e-3
    return onset_ok and depth_ok, (
        f"T = {v.T:.12f} (5/9 = {5 / 9:.12f}); max of phi_1 - psi_1 = {depth:.6f} at t = {t_max:.4f} "
        f"(expected 0.9/e = {0.9 / math.e:.6f} at t = 1)"
    )


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


def _report(k, fn):
    ok, detail = fn()
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    return ok, line


@pytest.mark.parametrize("k", range(1, 11))
def test_criterion(k, capsys):
    ok, line = _report(k, CRITERIA[k - 1])
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [_report(k, fn) for k, fn in enumerate(CRITERIA, start=1)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
