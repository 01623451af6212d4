"""Shared oracles and generators for the test suite."""

import math
import random

import mpmath
import pytest

from tolerancekit.system import builtin

mpmath.mp.dps = 50

_MP_NS = {
    "exp": mpmath.exp,
    "log": mpmath.log,
    "sqrt": mpmath.sqrt,
    "abs": abs,
}


def random_expr_text(rng: random.Random, depth: int = 4) -> str:
    """A random expression that is smooth almost everywhere in the first quadrant."""
    if depth == 0 or rng.random() < 0.2:
        r = rng.random()
        if r < 0.35:
            return "x"
        if r < 0.7:
            return "y"
        return f"{rng.uniform(0.5, 3.0):.3g}"
    a = random_expr_text(rng, depth - 1)
    b = random_expr_text(rng, depth - 1)
    k = rng.randrange(11)
    if k == 0:
        return f"{a} + {b}"
    if k == 1:
        return f"{a} - {b}"
    if k == 2:
        return f"({a})*({b})"
    if k == 3:
        return f"({a})/(({b})^2 + {rng.uniform(0.5, 2):.3g})"
    if k == 4:
        return f"({a})^{rng.choice((2, 3))}"
    if k == 5:
        return f"exp(({a})/{rng.uniform(4, 8):.3g})"
    if k == 6:
        return f"log(({a})^2 + 1)"
    if k == 7:
        return f"sqrt(({a})^2 + {rng.uniform(0.5, 2):.3g})"
    if k == 8:
        return f"-({a})"
    if k == 9:
        return f"(({a})^2 + 1)^{rng.uniform(0.2, 1.8):.3g}"
    return f"({a})/(1 + y)"


def mp_eval(text: str, x, y):
    """Evaluate expression text with mpmath through Python's own parser.

    Python gives ``**`` the same binding and right-associativity as ``^`` in
    the package grammar, so this is an independent reading of the text.
    """
    return eval(text.replace("^", "**"), {"__builtins__": {}}, {**_MP_NS, "x": x, "y": y})


def mp_central_difference(text: str, x: float, y: float, var: str):
    """Central difference in 50-digit arithmetic; truncation error ~h^2 is negligible."""
    h = mpmath.mpf("1e-18")
    X, Y = mpmath.mpf(x), mpmath.mpf(y)
    if var == "x":
        return (mp_eval(text, X + h, Y) - mp_eval(text, X - h, Y)) / (2 * h)
    return (mp_eval(text, X, Y + h) - mp_eval(text, X, Y - h)) / (2 * h)


def close_rel(a: float, b: float, rel: float, floor: float = 1e-6) -> bool:
    return abs(a - b) <= rel * max(abs(b), floor)


@pytest.fixture(scope="session")
def ex1():
    return builtin("ex1")


@pytest.fixture(scope="session")
def ex2():
    return builtin("ex2")


@pytest.fixture(scope="session")
def ex3():
    return builtin("ex3")


def finite(v) -> bool:
    return isinstance(v, float) and math.isfinite(v)


def pair_relative_gap(sys, r0, p0, t_end=40.0, samples=40001):
    """Independent verdict oracle: scipy DOP853 with relative-only error control.

    Returns (min over t of (psi_1 - phi_1)/max(|phi_1|, |psi_1|), time of the minimum,
    the dense solution). A negative minimum means tolerance.
    """
    import numpy as np
    from scipy.integrate import solve_ivp

    def rhs(t, u):
        a = sys.field(u[0], u[1])
        b = sys.field(u[2], u[3])
        return [a[0], a[1], b[0], b[1]]

    sol = solve_ivp(
        rhs, (0, t_end), [*r0, *p0], method="DOP853",
        rtol=1e-12, atol=1e-300, first_step=1e-4, dense_output=True,
    )
    t = np.linspace(0, t_end, samples)
    u = sol.sol(t)
    scale = np.maximum(np.abs(u[0]), np.abs(u[2]))
    rel = (u[2] - u[0]) / np.where(scale > 0, scale, 1.0)
    i = int(np.argmin(rel))
    return float(rel[i]), float(t[i]), sol.sol
