import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colloc.core import (
    MonotonicPolynomial,
    companion_roots,
    eval_poly,
    hermite_moments,
    invert_monotonic,
    norm_cdf,
    norm_pdf,
)
from colloc.errors import DegenerateLeadingCoefficient, UnsupportedDegree
from conftest import TABLE1
from oracles import bisect_inverse


def mp_moment(b, i):
    f = lambda x: x**i * mpmath.npdf(x)
    return float(mpmath.quad(f, [b, b + 5, b + 12, mpmath.inf]))


def test_moments_at_zero():
    m = hermite_moments(0.0, 2)
    assert m[0] == 0.5
    assert m[1] == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-16)
    assert m[2] == pytest.approx(0.5, abs=1e-16)


def test_moments_match_quadrature_at_one():
    m = hermite_moments(1.0, 4)
    for i in range(5):
        assert m[i] == pytest.approx(mp_moment(1.0, i), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.integers(0, 10))
def test_moment_recurrence_matches_quadrature(b, n):
    m = hermite_moments(b, n)
    for i in range(n + 1):
        assert abs(m[i] - mp_moment(b, i)) <= 1e-11


def test_moments_approach_full_gaussian_moments():
    # the tail ∫_{-∞}^{-8} x^k φ stays below 1e-10 only up to k = 6
    m = hermite_moments(-8.0, 6)
    np.testing.assert_allclose(m, [1, 0, 1, 0, 3, 0, 15], atol=1e-10)
    m = hermite_moments(-8.0, 10)
    for i in (7, 8, 9, 10):
        assert m[i] == pytest.approx(mp_moment(-8.0, i), abs=1e-10)


def test_moments_infinite_bounds():
    np.testing.assert_array_equal(hermite_moments(np.inf, 4), 0.0)
    np.testing.assert_allclose(hermite_moments(-np.inf, 4), [1, 0, 1, 0, 3])


def test_moments_vectorized_shape():
    b = np.linspace(-2, 2, 7)
    m = hermite_moments(b, 3)
    assert m.shape == (4, 7)
    np.testing.assert_allclose(m[:, 3], hermite_moments(b[3], 3))


def test_gaussian_helpers():
    assert norm_cdf(0.0) == 0.5
    # Φ(-x) keeps relative accuracy deep in the tail
    assert norm_cdf(-30.0) == pytest.approx(float(mpmath.ncdf(-30)), rel=1e-14)
    assert norm_pdf(0.0) == pytest.approx(0.3989422804014327, rel=1e-15)


def test_eval_poly_table_rows():
    july = MonotonicPolynomial(TABLE1["2018-07-20"])
    assert eval_poly(july, 0.0) == 356.64
    assert eval_poly(MonotonicPolynomial([0, 1]), 3.5) == 3.5
    jan20 = MonotonicPolynomial(TABLE1["2020-01-17"])
    assert eval_poly(jan20, 1.0) == pytest.approx(507.324, abs=1e-10)


def test_eval_poly_vectorized():
    p = MonotonicPolynomial([1.0, 2.0, 3.0])
    np.testing.assert_allclose(p(np.array([0.0, 1.0, -1.0])), [1.0, 6.0, 2.0])


def test_polynomial_degree_limits():
    with pytest.raises(UnsupportedDegree):
        MonotonicPolynomial([1.0])
    with pytest.raises(UnsupportedDegree):
        MonotonicPolynomial(np.ones(13))


def test_companion_roots_simple():
    np.testing.assert_allclose(np.sort(companion_roots([-1, 0, 1]).real), [-1, 1], atol=1e-14)
    np.testing.assert_allclose(np.sort(companion_roots([6, -5, 1]).real), [2, 3], atol=1e-14)


def test_companion_roots_residual():
    a = np.array(TABLE1["2020-01-17"])
    roots = companion_roots(a)
    assert len(roots) == 5
    for r in roots:
        assert abs(np.polyval(a[::-1], r)) <= 1e-8 * np.abs(a).sum()


def test_companion_roots_derivative_matches_grid_scan(jan20):
    d = jan20.derivative_coeffs()
    roots = companion_roots(d)
    real = np.sort([r.real for r in roots if abs(r.imag) < 1e-9])
    xs = np.linspace(-8, 8, 400_001)
    v = np.polyval(d[::-1], xs)
    changes = xs[np.flatnonzero(np.sign(v[:-1]) != np.sign(v[1:]))]
    assert len(real) == len(changes) == 2
    np.testing.assert_allclose(real, changes, atol=1e-4)


def test_companion_roots_rejects_zero_leading():
    with pytest.raises(DegenerateLeadingCoefficient):
        companion_roots([1.0, 2.0, 0.0])


def test_monotonicity_check(july, jan19, jan20, smooth):
    assert july.is_increasing()
    assert smooth.is_increasing()
    # the rounded coefficients of the longer expiries dip where g is already negative
    assert not jan19.is_increasing()
    assert not jan20.is_increasing()
    assert jan20.is_increasing(lower=-2.0)
    assert float(jan20(-2.2)) < 0


def test_invert_identity():
    assert invert_monotonic(MonotonicPolynomial([0, 1]), 2.7) == pytest.approx(2.7, abs=1e-15)


def test_invert_at_a0(july):
    assert invert_monotonic(july, 356.64) == pytest.approx(0.0, abs=1e-14)


def test_invert_against_bisection(jan20):
    c = invert_monotonic(jan20, 450.0)
    assert abs(jan20(c) - 450.0) < 1e-10
    assert c == pytest.approx(bisect_inverse(jan20, 450.0), abs=1e-12)


def test_invert_vectorized(july):
    ys = np.linspace(200, 600, 41)
    cs = invert_monotonic(july, ys)
    np.testing.assert_allclose(july(cs), ys, rtol=0, atol=1e-13 * 600)


def test_invert_restricted_domain():
    # g(z) = z^2 is increasing only on [0, inf)
    p = MonotonicPolynomial([0.0, 0.0, 1.0])
    assert invert_monotonic(p, 4.0, guess=1.0, lower=0.0) == pytest.approx(2.0, abs=1e-14)


def increasing_poly(draw_floats):
    q1 = np.array(draw_floats[:3])
    q2 = np.array(draw_floats[3:5])
    d = np.polynomial.polynomial.polyadd(
        np.polynomial.polynomial.polymul(q1, q1), np.polynomial.polynomial.polymul(q2, q2)
    )
    d[0] += 0.05
    coeffs = np.concatenate([[draw_floats[5]], d / np.arange(1, d.size + 1)])
    return MonotonicPolynomial(coeffs)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-2, 2), min_size=6, max_size=6).filter(lambda v: abs(v[2]) > 0.05),
    st.floats(-4, 4),
)
def test_inversion_round_trip(params, x):
    p = increasing_poly(params)
    y = float(p(x))
    assert invert_monotonic(p, y) == pytest.approx(x, abs=1e-10)
