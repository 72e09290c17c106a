import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from darcyvi.errors import ConvergenceError, StagnationError
from darcyvi.mcp import complementarity_residual, fb_residual, fischer_burmeister, semismooth_newton

finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(a=finite, b=finite)
@settings(max_examples=200, deadline=None)
def test_fb_zero_iff_complementary(a, b):
    phi = fischer_burmeister(a, b)
    if a >= 0 and b >= 0 and a * b == 0:
        assert phi == pytest.approx(0.0, abs=1e-12)
    if abs(phi) < 1e-14 * max(1.0, abs(a), abs(b)):
        assert a >= -1e-9 and b >= -1e-9 and min(abs(a), abs(b)) <= 1e-6 * max(1.0, abs(a), abs(b))


@given(a=finite, b=finite)
@settings(max_examples=100, deadline=None)
def test_fb_symmetric_and_bounded_by_min(a, b):
    assert fischer_burmeister(a, b) == fischer_burmeister(b, a)
    # |phi| is within a factor (2 + sqrt 2) of |min(a, b)|
    m = abs(min(a, b))
    assert abs(fischer_burmeister(a, b)) <= (2 + np.sqrt(2)) * m + 1e-9


def _affine(M, q):
    return lambda y: M @ y + q


def _dense_solver(M):
    def solve(y, t, rhs, rtol):
        A = t[:, None] * M + np.diag(1.0 - t)
        return np.linalg.solve(A, rhs), 1
    return solve


def _brute_force_box(M, q, lo, hi):
    """Enumerate active sets (lower, free, upper) of the box MCP."""
    n = len(q)
    for states in itertools.product((0, 1, 2), repeat=n):
        states = np.array(states)
        y = np.where(states == 0, lo, np.where(states == 2, hi, 0.0))
        if not np.all(np.isfinite(y)):
            continue
        free = states == 1
        if free.any():
            fixed = ~free
            rhs = -q[free] - M[np.ix_(free, fixed)] @ y[fixed]
            y[free] = np.linalg.solve(M[np.ix_(free, free)], rhs)
        G = M @ y + q
        ok = (np.all(y >= lo - 1e-12) and np.all(y <= hi + 1e-12)
              and np.all(G[states == 0] >= -1e-12) and np.all(G[states == 2] <= 1e-12))
        if ok:
            return y
    raise AssertionError("no solution found")


def _p_matrix(rng, n):
    B = rng.standard_normal((n, n))
    S = rng.standard_normal((n, n))
    return B @ B.T + 0.5 * np.eye(n) + 0.5 * (S - S.T)   # positive definite, nonsymmetric


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("weight", [1.0, 0.03])
def test_box_mcp_matches_brute_force(seed, weight):
    rng = np.random.default_rng(seed)
    n = 6
    M = _p_matrix(rng, n)
    q = 3 * rng.standard_normal(n)
    lo = -rng.uniform(0, 1, n)
    hi = rng.uniform(0, 1, n)
    hi[0], lo[1] = np.inf, -np.inf          # mix of bound types
    lo[2] = hi[2] = 0.25                     # fixed component
    exact = _brute_force_box(M, q, lo, hi)
    y, res = semismooth_newton(_affine(M, q), _dense_solver(M), np.zeros(n), lo, hi, atol=1e-13,
                               weight=weight)
    assert res.converged
    assert np.allclose(y, exact, atol=1e-9)
    assert np.all(y >= lo) and np.all(y <= hi)
    assert np.abs(complementarity_residual(y, M @ y + q, lo, hi)).max() < 1e-9


def test_unbounded_is_plain_newton():
    M = np.array([[2.0, 1.0], [0.0, 3.0]])
    q = np.array([1.0, -2.0])
    inf = np.full(2, np.inf)
    y, res = semismooth_newton(_affine(M, q), _dense_solver(M), np.zeros(2), -inf, inf, atol=1e-14)
    assert res.iterations == 1
    assert np.allclose(M @ y + q, 0)


def test_solution_is_fixed_point(rng):
    """A solution of the box MCP has zero reformulated residual for any weight."""
    M = _p_matrix(rng, 5)
    q = rng.standard_normal(5)
    lo, hi = np.full(5, -0.2), np.full(5, 0.3)
    y = _brute_force_box(M, q, lo, hi)
    for w in (0.01, 1.0, 100.0):
        assert np.abs(fb_residual(y, M @ y + q, lo, hi, weight=w)).max() < 1e-12


@pytest.mark.parametrize("weight", [1.0, 0.1])
def test_rows_match_directional_derivative(weight, rng):
    """Away from kinks the generalized Jacobian is the classical one."""
    n = 8
    M = _p_matrix(rng, n)
    q = rng.standard_normal(n)
    lo = np.array([-1, -1, -np.inf, -np.inf, -1, 0.5, -2, -np.inf])
    hi = np.array([1, np.inf, 1, np.inf, 2, 0.5, np.inf, 3.0])
    y = np.clip(rng.uniform(-0.9, 0.9, n), lo, hi)
    G = M @ y + q
    Phi, ce, cg = fb_residual(y, G, lo, hi, with_rows=True, weight=weight)
    J = np.diag(ce) + cg[:, None] * M
    d = rng.standard_normal(n)
    d[5] = 0.0
    h = 1e-7
    fd = (fb_residual(y + h * d, M @ (y + h * d) + q, lo, hi, weight=weight)
          - fb_residual(y - h * d, M @ (y - h * d) + q, lo, hi, weight=weight)) / (2 * h)
    assert np.allclose(J @ d, fd, rtol=1e-6, atol=1e-8)
    assert np.all(ce >= 0) and np.all(cg >= 0)


def test_kink_row_is_interior_subgradient():
    Phi, ce, cg = fb_residual(np.array([0.0]), np.array([0.0]), np.array([0.0]), np.array([np.inf]),
                              with_rows=True)
    assert Phi[0] == 0.0 and ce[0] == 0.0 and cg[0] == 1.0


@given(y=st.lists(finite, min_size=3, max_size=3), g=st.lists(finite, min_size=3, max_size=3))
@settings(max_examples=100, deadline=None)
def test_natural_residual_is_mid(y, g):
    y, g = np.array(y), np.array(g)
    lo, hi = np.array([-1.0, -np.inf, 0.0]), np.array([2.0, 1.0, np.inf])
    mid = np.median(np.stack([y - hi, g, y - lo]), axis=0)
    assert np.allclose(complementarity_residual(y, g, lo, hi), mid)


def test_errors_carry_iterate():
    M = np.eye(2)
    with pytest.raises(ValueError):
        semismooth_newton(_affine(M, np.zeros(2)), _dense_solver(M), np.zeros(2), np.ones(2), np.zeros(2), 1e-10)

    def bad_solver(y, t, rhs, rtol):
        return -rhs, 1   # ascent direction

    q = np.array([1.0, -1.0])
    inf = np.full(2, np.inf)
    with pytest.raises((StagnationError, ConvergenceError)) as info:
        semismooth_newton(_affine(M, q), bad_solver, np.zeros(2), -inf, inf, 1e-12, max_iter=20)
    assert info.value.solution.shape == (2,)

    with pytest.raises(ConvergenceError):
        semismooth_newton(_affine(M, q), _dense_solver(2.0 * M), np.zeros(2), -inf, inf, 1e-14, max_iter=2)


@given(seed=st.integers(0, 1000), scale=st.floats(0.1, 10))
@settings(max_examples=30, deadline=None)
def test_iterates_stay_feasible(seed, scale):
    rng = np.random.default_rng(seed)
    M = _p_matrix(rng, 4)
    q = scale * rng.standard_normal(4)
    lo, hi = np.full(4, -0.1), np.full(4, 0.1)
    seen = []

    def G(y):
        seen.append(y.copy())
        return M @ y + q

    y, res = semismooth_newton(G, _dense_solver(M), rng.standard_normal(4), lo, hi, atol=1e-11)
    assume(res.converged)
    assert all(np.all(s >= lo) and np.all(s <= hi) for s in seen)
    assert np.allclose(y, _brute_force_box(M, q, lo, hi), atol=1e-8)
