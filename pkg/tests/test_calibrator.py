import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import polynomial as npoly
from scipy.optimize import brentq

from colloc.black import black_call, black_digital, black_vega, implied_vol
from colloc.calibrator import (
    CalibrationConfig,
    IsotonicParams,
    QuoteSlice,
    calibrate_slice,
    driver_points,
    enforce_martingale,
    initial_guess,
    is_admissible,
    isotonic_to_coeffs,
    project_derivative,
    quotes_from_slice,
    survival_from_quotes,
)
from colloc.core import MonotonicPolynomial, norm_cdf
from colloc.errors import DegenerateQuotes, InputError, NoConvergence, PriceOutOfBounds, UnsupportedDegree
from colloc.optim import levenberg_marquardt
from colloc.pricer import (
    Absorption,
    CollocationSlice,
    ExpExtrapolation,
    Lognormal,
    ReflectedAbsorption,
    Reflection,
    first_moment,
    price_call,
    price_put,
    with_extrapolation,
    with_model_forward,
)
from conftest import SMOOTH, TABLE1

T_JULY = 35 / 365


def july_slice():
    return enforce_martingale(CollocationSlice(T_JULY, 357.0, MonotonicPolynomial(TABLE1["2018-07-20"])))


# ---------------------------------------------------------------- Black


def test_black_reference_value():
    # F = K = 100, σ√t = 0.2: C = 100(2Φ(0.1) - 1)
    assert black_call(100.0, 100.0, 1.0, 0.2) == pytest.approx(100 * (2 * norm_cdf(0.1) - 1), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    sigma=st.floats(0.05, 1.5),
    t=st.floats(0.02, 5.0),
    moneyness=st.floats(-1.0, 1.0),
    is_call=st.booleans(),
)
def test_implied_vol_round_trip(sigma, t, moneyness, is_call):
    F = 100.0
    K = F * math.exp(moneyness * sigma * math.sqrt(t))
    c = black_call(F, K, t, sigma)
    price = c if is_call else c - F + K
    if c - max(F - K, 0.0) < 1e-9 * F:
        return
    vol = implied_vol(price, F, K, t, is_call)
    assert abs(black_call(F, K, t, vol) - c) <= 1e-10 * F


def test_implied_vol_exact_value():
    c = black_call(100.0, 110.0, 0.7, 0.3)
    assert implied_vol(c, 100.0, 110.0, 0.7) == pytest.approx(0.3, abs=1e-10)


def test_implied_vol_rejects_intrinsic():
    with pytest.raises(PriceOutOfBounds):
        implied_vol(10.0, 100.0, 90.0, 1.0)
    with pytest.raises(PriceOutOfBounds):
        implied_vol(100.0, 100.0, 90.0, 1.0)


def test_implied_vol_of_july_atm_matches_bisection():
    s = july_slice()
    c = float(price_call(s, s.forward))
    oracle = brentq(lambda v: black_call(s.forward, s.forward, T_JULY, v) - c, 1e-4, 5.0, xtol=1e-15, rtol=1e-15)
    assert implied_vol(c, s.forward, s.forward, T_JULY) == pytest.approx(oracle, abs=1e-9)


def test_vega_is_price_derivative():
    h = 1e-6
    fd = (black_call(100, 120, 2.0, 0.3 + h) - black_call(100, 120, 2.0, 0.3 - h)) / (2 * h)
    assert black_vega(100, 120, 2.0, 0.3) == pytest.approx(fd, rel=1e-8)


# ---------------------------------------------------------------- LM


def test_lm_rosenbrock_and_descent():
    res = levenberg_marquardt(lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]]), [-1.2, 1.0])
    assert res.converged
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-7)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


# ---------------------------------------------------------------- quotes and survival


def flat_quotes(sigma=0.3, t=0.5, F=100.0, strikes=None):
    K = np.linspace(60, 150, 19) if strikes is None else np.asarray(strikes, dtype=float)
    return QuoteSlice(t, F, K, np.full(K.size, sigma))


def test_quote_slice_validation():
    with pytest.raises(InputError):
        QuoteSlice(0.5, 100.0, [100.0, 90.0], [0.2, 0.2])
    with pytest.raises(InputError):
        QuoteSlice(0.5, 100.0, [100.0], [-0.2])
    with pytest.raises(InputError):
        QuoteSlice(0.0, 100.0, [100.0], [0.2])


def test_survival_flat_smile_is_black_digital():
    q = flat_quotes()
    K, p = survival_from_quotes(q)
    assert np.allclose(p, black_digital(q.forward, K, q.t, 0.3), atol=1e-6)


def test_survival_atm_limit():
    for t in (1.0, 1e-2, 1e-4):
        q = flat_quotes(sigma=0.3, t=t, strikes=[99.0, 100.0, 101.0])
        p = survival_from_quotes(q)[1][1]
        assert p == pytest.approx(norm_cdf(-0.15 * math.sqrt(t)), abs=1e-6)
    assert abs(p - 0.5) < 1e-3


def test_survival_projects_violations():
    # a steep upward smile makes the raw digital increase between the two strikes
    q = QuoteSlice(1.0, 100.0, [100.0, 100.5], [0.2, 0.8])
    _, p = survival_from_quotes(q)
    assert p[0] >= p[1]
    assert np.all((p > 0) & (p < 1))


def test_survival_needs_two_strikes():
    with pytest.raises(DegenerateQuotes):
        survival_from_quotes(flat_quotes(strikes=[100.0]))


# ---------------------------------------------------------------- isotonic parameterization


def test_isotonic_examples():
    g = isotonic_to_coeffs(IsotonicParams(np.array([3.0]), np.zeros(0), "real"), 7.0)
    assert np.allclose(g.coeffs, [7.0, 9.0])
    g = isotonic_to_coeffs(IsotonicParams(np.array([0.0]), np.array([1.0]), "positive"), 2.0)
    assert np.allclose(g.coeffs, [2.0, 0.0, 0.5])


@settings(max_examples=100, deadline=None)
@given(
    degree=st.sampled_from([1, 2, 3, 4, 5, 6, 7, 8, 9, 11]),
    domain=st.sampled_from(["real", "positive"]),
    data=st.data(),
)
def test_isotonic_derivative_nonnegative(degree, domain, data):
    if domain == "real" and degree % 2 == 0:
        return
    from colloc.calibrator import _param_sizes

    n1, n2 = _param_sizes(degree, domain)
    theta = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=n1 + n2, max_size=n1 + n2)))
    p = IsotonicParams.from_vector(theta, degree, domain)
    g = isotonic_to_coeffs(p, 0.0)
    assert g.coeffs.size <= degree + 1
    grid = np.linspace(-5, 5, 2001) if domain == "real" else np.linspace(0, 10, 2001)
    d = npoly.polyval(grid, npoly.polyder(g.coeffs))
    scale = max(1.0, float(np.max(np.abs(d))))
    assert d.min() >= -1e-14 * scale


@pytest.mark.parametrize("domain", ["real", "positive"])
def test_projection_reproduces_positive_derivative(domain):
    coeffs = SMOOTH if domain == "real" else [0.0, 150.0, 100.0, 30.0, 5.0, 1.0]
    d = npoly.polyder(coeffs)
    p = project_derivative(d, 5, domain, (-3, 3) if domain == "real" else (0, 3))
    assert np.allclose(p.derivative(), d, rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------- initial guess


def test_initial_guess_two_quotes_is_exact_line():
    q = QuoteSlice(0.5, 100.0, [90.0, 110.0], [0.3, 0.3])
    cfg = CalibrationConfig(degree=1)
    g = initial_guess(q, cfg)
    assert np.allclose(g(driver_points(q, cfg)), q.strikes, rtol=1e-12)


def test_initial_guess_flat_vol_slope_positive():
    g = initial_guess(flat_quotes(), CalibrationConfig(degree=1))
    assert g.coeffs[1] > 0


def test_initial_guess_is_increasing():
    s = july_slice()
    q = quotes_from_slice(s, np.linspace(250, 480, 30))
    assert initial_guess(q, CalibrationConfig()).is_increasing()


@pytest.mark.xfail(strict=True, reason="flat-vol survival ignores the smile skew; see decisions ledger")
def test_initial_guess_recovers_quintic():
    s = july_slice()
    q = quotes_from_slice(s, np.linspace(250, 480, 30))
    g = initial_guess(q, CalibrationConfig())
    assert np.allclose(g.coeffs, s.coeffs, rtol=1e-3)


def test_initial_guess_needs_enough_quotes():
    with pytest.raises(DegenerateQuotes):
        initial_guess(flat_quotes(strikes=[90.0, 100.0, 110.0]), CalibrationConfig(degree=5))


def test_config_validation():
    with pytest.raises(UnsupportedDegree):
        CalibrationConfig(degree=4)
    with pytest.raises(UnsupportedDegree):
        CalibrationConfig(degree=13)
    CalibrationConfig(degree=4, variant="lognormal")
    with pytest.raises(InputError):
        CalibrationConfig(variant="lognormal", sigma_x_mode="fixed")


# ---------------------------------------------------------------- calibration


def test_july_round_trip():
    s = july_slice()
    q = quotes_from_slice(s, np.linspace(250, 480, 30))
    out, rep = calibrate_slice(q, CalibrationConfig())
    assert rep.rmse_vol < 1e-6
    assert np.allclose(out.coeffs, s.coeffs, rtol=1e-3)
    assert all(b <= a for a, b in zip(rep.objective_history, rep.objective_history[1:]))


def test_single_strike_exact_fit():
    q = QuoteSlice(0.5, 100.0, [105.0], [0.25])
    out, rep = calibrate_slice(q, CalibrationConfig(degree=1))
    assert rep.rmse_vol < 1e-10
    assert abs(first_moment(out) - 100.0) <= 1e-9 * 100.0


def smooth_slice(boundary_cls):
    p = MonotonicPolynomial(SMOOTH)
    L = float(p(-1.5))
    return with_model_forward(CollocationSlice(1.0, 1.0, p, boundary_cls(L)))


def variant_cases():
    cases = [("none", july_slice(), {}, np.linspace(250, 480, 30))]
    for cls in (Absorption, ReflectedAbsorption, Reflection):
        s = smooth_slice(cls)
        K = s.poly(np.linspace(-1.45, 2.2, 22))
        cases.append((s.kind, s, {"cutoff": s.boundary.L}, K))
    jan20 = MonotonicPolynomial(TABLE1["2020-01-17"])
    xL = brentq(lambda x: jan20(x) - 150.0, -2, 2)
    s = with_model_forward(with_extrapolation(CollocationSlice(1.0, 1.0, jan20), xL, 2.0))
    cases.append(("exp_extrapolation", s, {"cutoff_x": xL, "alpha_cap": 2.0}, np.linspace(80, 800, 25)))
    s = with_model_forward(CollocationSlice(1.0, 1.0, MonotonicPolynomial([0.0, 150.0, 100.0, 30.0, 5.0, 1.0]), Lognormal(0.3)))
    cases.append(("lognormal", s, {"sigma_x_mode": "fixed", "sigma_x": 0.3}, s.poly(np.exp(0.3 * np.linspace(-2.2, 2.2, 25)))))
    s = with_extrapolation(
        CollocationSlice(1.0, 1.0, MonotonicPolynomial([-50.0, 200.0, 120.0, 20.0, 3.0, 0.5]), Lognormal(0.4)),
        math.log(brentq(lambda z: npoly.polyval(z, [-50.0, 200.0, 120.0, 20.0, 3.0, 0.5]) - 40.0, 0, 5)) / 0.4,
    )
    s = with_model_forward(s)
    cL = s.boundary.extrapolation.c_L
    cases.append(
        (
            "lognormal_extrapolation",
            s,
            {"sigma_x_mode": "fixed", "sigma_x": 0.4, "cutoff_x": cL, "alpha_cap": None},
            np.linspace(60, 900, 25),
        )
    )
    return cases


CASES = variant_cases()


@pytest.mark.parametrize("case", CASES, ids=[c[0] for c in CASES])
def test_round_trip_each_variant(case):
    name, s, kw, K = case
    q = quotes_from_slice(s, K)
    out, rep = calibrate_slice(q, CalibrationConfig(variant=name, **kw))
    assert out.kind == s.kind
    assert rep.rmse_vol < 1e-5
    assert abs(first_moment(out) - q.forward) <= 1e-9 * q.forward
    assert is_admissible(out)
    if name != "exp_extrapolation":
        # Jan-2020 generator dips below x_L; the other generators are increasing on their domain
        assert out.poly.is_increasing(lower=0.0 if name.startswith("lognormal") else -np.inf)
    grid = np.linspace(K[0], K[-1], 40)
    parity = price_call(out, grid) - price_put(out, grid) - q.forward + grid
    assert np.max(np.abs(parity)) <= 1e-12 * q.forward
    assert all(b <= a for a, b in zip(rep.objective_history, rep.objective_history[1:]))


def test_no_convergence_carries_result():
    s = july_slice()
    q = quotes_from_slice(s, np.linspace(250, 480, 30))
    with pytest.raises(NoConvergence) as info:
        calibrate_slice(q, CalibrationConfig(max_iter=1))
    out, rep = info.value.result
    assert abs(first_moment(out) - q.forward) <= 1e-9 * q.forward
    assert rep.iterations == 1


def test_optimized_sigma_x_no_worse_than_min_vol():
    s = july_slice()
    q = quotes_from_slice(s, np.linspace(250, 480, 30))
    _, fixed = calibrate_slice(q, CalibrationConfig(variant="lognormal"))
    _, opt = calibrate_slice(q, CalibrationConfig(variant="lognormal", sigma_x_mode="optimized"))
    assert fixed.sigma_x == pytest.approx(float(np.min(q.vols)) * math.sqrt(q.t))
    assert opt.rmse_vol <= fixed.rmse_vol * (1 + 1e-6)


@settings(max_examples=10, deadline=None)
@given(
    a1=st.floats(10.0, 40.0),
    a2=st.floats(-2.0, 4.0),
    a3=st.floats(0.5, 2.0),
)
def test_martingale_always_enforced(a1, a2, a3):
    p = MonotonicPolynomial([100.0, a1, a2, a3])
    if not p.is_increasing():
        return
    s = with_model_forward(CollocationSlice(0.5, 1.0, p))
    q = quotes_from_slice(s, p(np.linspace(-1.5, 1.5, 9)))
    try:
        out, _ = calibrate_slice(q, CalibrationConfig(degree=3, max_iter=15))
    except NoConvergence as e:
        out = e.result[0]
    assert abs(first_moment(out) - q.forward) <= 1e-9 * q.forward


def test_isotonic_stage_used_when_plain_coefficients_fail(monkeypatch):
    import colloc.calibrator as cal
    from colloc.errors import NumericalError

    def refuse(*args, **kwargs):
        raise NumericalError("plain stage disabled")

    monkeypatch.setattr(cal, "_assemble_raw", refuse)
    s = july_slice()
    q = quotes_from_slice(s, np.linspace(250, 480, 30))
    out, rep = calibrate_slice(q, CalibrationConfig())
    assert rep.rmse_vol < 1e-6
    assert out.poly.is_increasing()
