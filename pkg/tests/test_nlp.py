import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opfdd import nlp
from opfdd.nlp import NlpProblem, minimize_box, projected_gradient, solve

C = math.sqrt(math.log(2) / 2)


def quad(center):
    center = np.asarray(center, float)

    def f(x):
        d = x - center
        return float(d @ d), 2 * d
    return f


def test_clamped_quadratic():
    r = solve(NlpProblem(1, quad([3.0]), [0.0], [1.0]), [0.5])
    assert r.converged
    assert r.x[0] == pytest.approx(1.0)
    assert r.f == pytest.approx(4.0)


def _toy_a():
    def obj(x):
        x1, x2 = x
        return (2 * x1 ** 6 + x2 ** 5 - 2 * x2 ** 2 + 2.5,
                np.array([12 * x1 ** 5, 5 * x2 ** 4 - 4 * x2]))

    def ineq(x):
        e = math.exp(-2 * x[1] ** 2)
        return np.array([1 - 2 * e]), np.array([[0.0, 8 * x[1] * e]])

    def eq(x):
        return np.array([x[0] - x[1]]), np.array([[1.0, -1.0]])
    return NlpProblem(2, obj, ineq=ineq, eq=eq)


def test_toy_basin_from_positive_start():
    r = solve(_toy_a(), [0.5, 0.5])
    assert r.converged
    assert np.allclose(r.x, [C, C], atol=1e-4)
    assert r.f == pytest.approx(1.9608, abs=1e-3)


def test_toy_basin_from_negative_start():
    r = solve(_toy_a(), [-1.0, -1.0])
    assert r.converged
    assert np.allclose(r.x, [-C, -C], atol=1e-4)
    assert r.f == pytest.approx(1.8194, abs=1e-3)


def test_start_clipped_into_bounds():
    r = solve(NlpProblem(2, quad([0.2, 0.3]), [0.0, 0.0], [1.0, 1.0]), [5.0, -5.0])
    assert r.converged
    assert np.allclose(r.x, [0.2, 0.3], atol=1e-7)


def test_deterministic():
    a = solve(_toy_a(), [0.3, 0.7])
    b = solve(_toy_a(), [0.3, 0.7])
    assert np.array_equal(a.x, b.x) and a.f == b.f and a.status == b.status


def test_unbounded_below():
    def f(x):
        return float(x[0] ** 3), np.array([3 * x[0] ** 2])
    r = solve(NlpProblem(1, f), [-1.0])
    assert r.status == nlp.UNBOUNDED


def test_max_iter_is_status_not_exception():
    def rosen(x):
        a, b = x
        return (100 * (b - a * a) ** 2 + (1 - a) ** 2,
                np.array([-400 * a * (b - a * a) - 2 * (1 - a), 200 * (b - a * a)]))
    r = solve(NlpProblem(2, rosen), [-1.2, 1.0], max_iter=1, inner_max_iter=2)
    assert r.status == nlp.MAX_ITER


def test_inverted_bounds_rejected():
    with pytest.raises(ValueError):
        solve(NlpProblem(1, quad([0.0]), [1.0], [0.0]), [0.5])


def test_inequality_active_at_solution():
    # min (x-2)^2 + (y-2)^2 s.t. x^2 + y^2 <= 2  ->  (1, 1)
    def ineq(x):
        return np.array([x @ x - 2]), 2 * x[None, :]
    r = solve(NlpProblem(2, quad([2.0, 2.0]), ineq=ineq), [0.0, 0.0])
    assert r.converged
    assert np.allclose(r.x, [1.0, 1.0], atol=1e-6)
    assert r.violation < 1e-8


def test_projected_gradient_zero_at_bound_optimum():
    x = np.array([1.0])
    assert projected_gradient(x, np.array([-4.0]), np.array([0.0]), np.array([1.0]))[0] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_box_quadratic_equals_clip(center, start):
    lo, hi = -np.ones(3), np.ones(3)
    x = minimize_box(quad(center), np.asarray(start), lo, hi, 1e-10)[0]
    assert np.allclose(x, np.clip(center, lo, hi), atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.5, 5))
def test_converged_implies_feasible(a, b, radius):
    def ineq(x):
        return np.array([x @ x - radius]), 2 * x[None, :]

    def eq(x):
        return np.array([x[0] + x[1] - 0.5]), np.array([[1.0, 1.0]])
    r = solve(NlpProblem(2, quad([a, b]), ineq=ineq, eq=eq), [0.0, 0.0])
    if r.converged:
        assert r.violation < 1e-8
        assert abs(r.x[0] + r.x[1] - 0.5) < 1e-8
        assert r.x @ r.x <= radius + 1e-8
        assert r.kkt_residual < 1e-8
