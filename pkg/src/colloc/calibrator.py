"""Calibration of one expiry slice to implied volatility quotes.

Pipeline: finite-difference survival probabilities give driver coordinates
for each quote, a least-squares polynomial through (x_i, K_i) seeds the
search, and damped least squares over a sum-of-squares parameterization of
g' refines it.  The constant coefficient a_0 is never a free parameter: it is
re-implied from the martingale condition at every objective evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Optional

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import isotonic_regression, minimize_scalar, toms748

from colloc.black import black_call, black_vega, implied_vol
from colloc.core import (
    MAX_DEGREE,
    MonotonicPolynomial,
    companion_roots,
    gaussian_moments,
    invert_monotonic,
    norm_ppf,
)
from colloc.errors import (
    DegenerateQuotes,
    InfeasibleMartingale,
    InputError,
    NoConvergence,
    NonPositiveAtCutoff,
    NumericalError,
    PriceOutOfBounds,
    UnsupportedDegree,
)
from colloc.optim import LMResult, levenberg_marquardt
from colloc.pricer import (
    Absorption,
    CollocationSlice,
    ExpExtrapolation,
    Lognormal,
    LognormalExtrapolation,
    NoBoundary,
    ReflectedAbsorption,
    Reflection,
    first_moment,
    lognormal_weights,
    price_call,
    refresh_tail,
)

VARIANTS = (
    "none",
    "absorption",
    "reflected_absorption",
    "reflection",
    "exp_extrapolation",
    "lognormal",
    "lognormal_extrapolation",
)
SIGMA_X_MODES = ("fixed", "min_total_vol", "optimized")
A0_MAX_DOUBLINGS = 60
P_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class QuoteSlice:
    t: float
    forward: float
    strikes: np.ndarray
    vols: np.ndarray
    weights: Optional[np.ndarray] = None
    expiry: Optional[date] = None

    def __post_init__(self):
        K = np.asarray(self.strikes, dtype=float).reshape(-1)
        v = np.asarray(self.vols, dtype=float).reshape(-1)
        w = np.ones_like(K) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        if not (self.t > 0 and self.forward > 0):
            raise InputError("quote slice needs t > 0 and forward > 0")
        if K.size == 0 or K.shape != v.shape or K.shape != w.shape:
            raise InputError("strikes, vols and weights must be non-empty and of equal length")
        if np.any(K <= 0) or np.any(v <= 0) or np.any(w < 0):
            raise InputError("strikes and vols must be positive, weights non-negative")
        if np.any(np.diff(K) <= 0):
            raise InputError("strikes must be strictly increasing")
        for name, arr in (("strikes", K), ("vols", v), ("weights", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.strikes.size

    def call_prices(self) -> np.ndarray:
        return np.asarray(black_call(self.forward, self.strikes, self.t, self.vols))


@dataclass(frozen=True)
class CalibrationConfig:
    degree: int = 5
    variant: str = "none"
    # asset level of the boundary / tail cutoff; None means the lowest strike
    cutoff: Optional[float] = None
    # driver coordinate of the tail cutoff, overrides ``cutoff`` for tails
    cutoff_x: Optional[float] = None
    alpha_cap: Optional[float] = 2.0
    sigma_x_mode: str = "min_total_vol"
    sigma_x: Optional[float] = None
    weights: str = "vega"
    max_iter: int = 300
    tol: float = 1e-15
    # multipliers of the initial g' tried as starting points; empty means the
    # variant default (several for reflection, whose objective has a spurious
    # low-reflected-mass basin, otherwise just the guess itself)
    spread_seeds: tuple = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InputError(f"unknown variant {self.variant!r}")
        if not 1 <= self.degree <= MAX_DEGREE:
            raise UnsupportedDegree(f"degree must be in 1..{MAX_DEGREE}")
        if not self.lognormal and self.degree % 2 == 0:
            raise UnsupportedDegree("Gaussian-domain variants need an odd degree")
        if self.sigma_x_mode not in SIGMA_X_MODES:
            raise InputError(f"unknown sigma_x mode {self.sigma_x_mode!r}")
        if self.sigma_x_mode == "fixed" and self.lognormal and not (self.sigma_x and self.sigma_x > 0):
            raise InputError("fixed sigma_x mode needs sigma_x > 0")
        if self.weights not in ("vega", "uniform"):
            raise InputError(f"unknown weight scheme {self.weights!r}")

    @property
    def lognormal(self) -> bool:
        return self.variant.startswith("lognormal")

    @property
    def domain(self) -> str:
        return "positive" if self.lognormal else "real"


@dataclass
class CalibrationReport:
    rmse_vol: float
    iterations: int
    objective_history: list = field(default_factory=list)
    martingale_residual: float = 0.0
    sigma_x: Optional[float] = None
    converged: bool = True
    message: str = ""


# ---------------------------------------------------------------- survival


def survival_from_quotes(q: QuoteSlice) -> tuple[np.ndarray, np.ndarray]:
    """(K_i, p_i) with p_i = P(S > K_i) from central differences of Black prices."""
    if len(q) < 2:
        raise DegenerateQuotes("survival estimation needs at least two strikes")
    K = q.strikes
    gaps = np.diff(K)
    gap = np.minimum(np.r_[gaps[0], gaps], np.r_[gaps, gaps[-1]])
    h = np.minimum(1e-4 * q.forward, gap / 10.0)
    up = black_call(q.forward, K + h, q.t, q.vols)
    dn = black_call(q.forward, K - h, q.t, q.vols)
    p = np.clip((dn - up) / (2.0 * h), P_CLAMP, 1.0 - P_CLAMP)
    if np.any(np.diff(p) > 0):
        p = isotonic_regression(p, increasing=False).x
    return K.copy(), p


# ---------------------------------------------------------------- isotonic


def _param_sizes(degree: int, domain: str) -> tuple[int, int]:
    D = degree - 1  # degree of g'
    if domain == "real":
        return D // 2 + 1, D // 2
    return D // 2 + 1, (D + 1) // 2


@dataclass(frozen=True, eq=False)
class IsotonicParams:
    """g' = q1² + q2² on ℝ, or g' = q1² + x·q2² on [0, ∞)."""

    q1: np.ndarray
    q2: np.ndarray
    domain: str = "real"

    def derivative(self) -> np.ndarray:
        q1 = np.asarray(self.q1, dtype=float)
        q2 = np.asarray(self.q2, dtype=float)
        d = npoly.polymul(q1, q1) if q1.size else np.zeros(1)
        if q2.size:
            sq = npoly.polymul(q2, q2)
            d = npoly.polyadd(d, sq if self.domain == "real" else npoly.polymulx(sq))
        return d

    @property
    def degree(self) -> int:
        n1, n2 = len(self.q1), len(self.q2)
        if self.domain == "real":
            return 2 * max(n1 - 1, n2 - 1, 0) + 1
        return max(2 * (n1 - 1), 2 * n2 - 1, 0) + 1

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.q1, self.q2]).astype(float)

    @classmethod
    def from_vector(cls, theta, degree: int, domain: str) -> "IsotonicParams":
        n1, _ = _param_sizes(degree, domain)
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:n1], theta[n1:], domain)


def isotonic_to_coeffs(params: IsotonicParams, a_0_seed: float) -> MonotonicPolynomial:
    c = _pad(npoly.polyint(params.derivative()), params.degree + 1)
    c[0] = a_0_seed
    return MonotonicPolynomial(c)


def _pad(c, n):
    c = np.asarray(c, dtype=float)
    if c.size >= n:
        return c[:n].copy()
    return np.r_[c, np.zeros(n - c.size)]


def _positive_shift(d, domain, x_range):
    """Lift d so that it is strictly positive on its domain; returns (d, shift/scale)."""
    lo, hi = x_range
    grid = np.linspace(lo, hi, 201)
    scale = max(float(np.max(np.abs(npoly.polyval(grid, d)))), 1e-300)
    crit = []
    if d.size > 2:
        for r in companion_roots(npoly.polyder(d)):
            if abs(r.imag) <= 1e-9 * max(1.0, abs(r.real)):
                crit.append(r.real)
    crit = np.array([x for x in crit if domain == "real" or x >= 0] + ([0.0] if domain == "positive" else []))
    m = float(np.min(npoly.polyval(crit, d))) if crit.size else float(d[0])
    shift = max(0.0, 1e-4 * scale - m)
    d = d.copy()
    d[0] += shift
    return d, shift / scale


def _factor_real(d, n1, n2):
    roots = companion_roots(d)
    upper = roots[np.argsort(-roots.imag)][: (d.size - 1) // 2]
    h = math.sqrt(d[-1]) * npoly.polyfromroots(upper) if upper.size else np.array([math.sqrt(d[-1])], complex)
    return _pad(h.real, n1), _pad(h.imag, n2)


def _factor_positive(d, n1, n2):
    A, B = np.array([math.sqrt(d[-1])]), np.zeros(1)
    for r in companion_roots(d) if d.size > 1 else []:
        if abs(r.imag) <= 1e-9 * max(1.0, abs(r.real)):
            if r.real > 0:
                raise ValueError("positive real root")
            Ai, Bi = np.array([math.sqrt(-r.real)]), np.array([1.0])
        elif r.imag > 0:
            mod = abs(r)
            Ai, Bi = np.array([-mod, 1.0]), np.array([math.sqrt(max(2.0 * (mod - r.real), 0.0))])
        else:
            continue
        # (a1² + x b1²)(a2² + x b2²) = (a1 a2 + x b1 b2)² + x (a1 b2 - a2 b1)²
        A, B = (
            npoly.polyadd(npoly.polymul(A, Ai), npoly.polymulx(npoly.polymul(B, Bi))),
            npoly.polysub(npoly.polymul(A, Bi), npoly.polymul(Ai, B)),
        )
    return _pad(A, n1), _pad(B, n2)


def project_derivative(d, degree: int, domain: str, x_range=(-3.0, 3.0)) -> IsotonicParams:
    """Isotonic parameters whose derivative approximates the polynomial ``d`` on ``x_range``.

    When ``d`` is already (almost) positive on its whole domain it is factored
    exactly; otherwise the factorization only seeds a least-squares fit of the
    representation to the positive part of ``d`` on a grid over ``x_range``.
    """
    n1, n2 = _param_sizes(degree, domain)
    d = _pad(np.trim_zeros(np.asarray(d, dtype=float), "b"), degree)
    if degree == 1:
        return IsotonicParams(np.array([math.sqrt(max(d[0], 1e-300))]), np.zeros(0), domain)
    grid = np.linspace(x_range[0], x_range[1], 101)
    target = npoly.polyval(grid, d)
    scale = max(float(np.max(np.abs(target))), 1e-300)
    target = np.maximum(target, 1e-3 * scale)
    seed = None
    if d[-1] > 0:
        try:
            ds, rel_shift = _positive_shift(d, domain, x_range)
            q1, q2 = (_factor_real if domain == "real" else _factor_positive)(ds, n1, n2)
            seed = IsotonicParams(q1, q2, domain)
            err = npoly.polyval(grid, seed.derivative()) - npoly.polyval(grid, ds)
            if not np.all(np.isfinite(err)) or np.max(np.abs(err)) > 1e-6 * scale:
                seed = None
            elif rel_shift <= 1e-3:
                return seed
        except (ValueError, NumericalError, InputError):
            seed = None
    if seed is None:
        theta0 = np.r_[math.sqrt(float(np.mean(target))), np.full(n1 - 1, 1e-3), np.full(n2, 1e-3)]
    else:
        theta0 = seed.to_vector()

    def resid(theta):
        p = IsotonicParams.from_vector(theta, degree, domain)
        return (npoly.polyval(grid, p.derivative()) - target) / scale

    res = levenberg_marquardt(resid, theta0, max_iter=500)
    return IsotonicParams.from_vector(res.x, degree, domain)


# ---------------------------------------------------------------- initial guess


def resolve_sigma_x(q: QuoteSlice, cfg: CalibrationConfig) -> Optional[float]:
    if not cfg.lognormal:
        return None
    if cfg.sigma_x_mode == "fixed":
        return float(cfg.sigma_x)
    return float(np.min(q.vols) * math.sqrt(q.t))


def driver_points(q: QuoteSlice, cfg: CalibrationConfig, sigma_x=None) -> np.ndarray:
    """Collocation coordinates x_i of the quoted strikes."""
    _, p = survival_from_quotes(q)
    y = norm_ppf(1.0 - p)
    return np.exp(sigma_x * y) if cfg.lognormal else y


def initial_guess(q: QuoteSlice, cfg: CalibrationConfig, sigma_x=None) -> MonotonicPolynomial:
    """Least-squares fit of (x_i, K_i) projected onto increasing polynomials."""
    return _initial(q, cfg, sigma_x)[0]


def _initial(q, cfg, sigma_x):
    N = cfg.degree
    if cfg.lognormal and sigma_x is None:
        sigma_x = resolve_sigma_x(q, cfg)
    if len(q) < N + 1:
        if N == 1 and len(q) == 1:
            # one quote: normal approximation of the smile around the forward
            slope = float(q.vols[0]) * math.sqrt(q.t) * q.forward
            if cfg.lognormal:
                slope = q.forward
                c = np.array([0.0, slope])
            else:
                c = np.array([q.forward, slope])
            params = IsotonicParams(np.array([math.sqrt(slope)]), np.zeros(0), cfg.domain)
            return MonotonicPolynomial(c), params, sigma_x
        raise DegenerateQuotes(f"degree {N} needs at least {N + 1} quotes, got {len(q)}")
    x = driver_points(q, cfg, sigma_x)
    K = q.strikes
    if cfg.variant == "lognormal":
        # g(0) = 0 keeps the lognormal collocation positive
        V = np.vander(x, N + 1, increasing=True)[:, 1:]
        coef = np.r_[0.0, np.linalg.lstsq(V, K, rcond=None)[0]]
    else:
        coef = npoly.polyfit(x, K, N)
    span = (float(x.min()), float(x.max()))
    if cfg.lognormal:
        span = (0.0, span[1])
    params = project_derivative(npoly.polyder(coef), N, cfg.domain, span)
    g0 = isotonic_to_coeffs(params, 0.0)
    a0 = 0.0 if cfg.variant == "lognormal" else float(np.mean(K - g0(x)))
    return g0.with_a0(a0), params, sigma_x


# ---------------------------------------------------------------- martingale


def _moment_gap(s: CollocationSlice, a0: float) -> float:
    trial = refresh_tail(replace(s, poly=s.poly.with_a0(a0)))
    return first_moment(trial) - s.forward


def _a0_floor(s: CollocationSlice) -> float:
    """Smallest admissible a_0 (tails need a positive polynomial at the cutoff)."""
    b = s.boundary
    if isinstance(b, ExpExtrapolation):
        x = b.x_L
    elif isinstance(b, Lognormal) and b.extrapolation is not None:
        x = math.exp(b.sigma_x * b.extrapolation.c_L)
    else:
        return -math.inf
    rest = float(s.poly(x)) - s.poly.coeffs[0]
    return -rest + 1e-12 * s.forward


def _unconstrained_a0(s: CollocationSlice) -> float:
    a = s.poly.coeffs
    if isinstance(s.boundary, Lognormal):
        return s.forward - float(lognormal_weights(a, s.boundary.sigma_x)[1:].sum())
    return s.forward - float(np.dot(a[1:], gaussian_moments(a.size - 1)[1:]))


def enforce_martingale(s: CollocationSlice) -> CollocationSlice:
    """Return ``s`` with a_0 (or the scale, for pure lognormal) set so that E[S] = F."""
    b = s.boundary
    F = s.forward
    if isinstance(b, (NoBoundary, ReflectedAbsorption)):
        return replace(s, poly=s.poly.with_a0(_unconstrained_a0(s)))
    if isinstance(b, Lognormal) and b.extrapolation is None:
        m = first_moment(s)
        if not m > 0:
            raise InfeasibleMartingale("lognormal collocation has non-positive mean")
        return replace(s, poly=s.poly.scaled(F / m))

    floor = _a0_floor(s)
    start = max(_unconstrained_a0(s), floor + 1e-6 * F) if math.isfinite(floor) else _unconstrained_a0(s)
    gap = lambda a0: _moment_gap(s, a0)  # noqa: E731
    g_start = gap(start)
    if g_start == 0.0:
        lo = hi = start
    elif g_start < 0:
        lo, hi = start, None
        for k in range(A0_MAX_DOUBLINGS):
            cand = start + 1e-3 * F * 2.0**k
            if gap(cand) > 0:
                hi = cand
                break
            lo = cand
    elif isinstance(b, Reflection):
        lo, hi = _reflection_bracket(gap, start, F)
    else:
        lo, hi = None, start
        for k in range(A0_MAX_DOUBLINGS):
            cand = max(start - 1e-3 * F * 2.0**k, floor)
            if gap(cand) < 0:
                lo = cand
                break
            hi = cand
            if cand == floor:
                break
    if lo is None or hi is None:
        raise InfeasibleMartingale("no a_0 bracket found for the martingale condition")
    a0 = lo if lo == hi else toms748(gap, lo, hi, xtol=1e-15 * F, rtol=4 * np.finfo(float).eps)
    return refresh_tail(replace(s, poly=s.poly.with_a0(a0)))


def _reflection_bracket(gap, start, F):
    # E[S] is convex in a_0 under reflection: walk down until the gap turns
    # negative, or locate the minimum once the gap starts growing again
    prev_x, prev_g = start, gap(start)
    for k in range(A0_MAX_DOUBLINGS):
        cand = start - 1e-3 * F * 2.0**k
        gc = gap(cand)
        if gc < 0:
            return cand, prev_x
        if gc > prev_g:
            res = minimize_scalar(gap, bounds=(cand, start), method="bounded", options={"xatol": 1e-12 * F})
            if res.fun < 0:
                return float(res.x), start
            return None, None
        prev_x, prev_g = cand, gc
    return None, None


# ---------------------------------------------------------------- calibration


def _template(q: QuoteSlice, cfg: CalibrationConfig, guess: MonotonicPolynomial, sigma_x):
    """Boundary spec (with a fixed cutoff) for the configured variant."""
    L = float(cfg.cutoff) if cfg.cutoff is not None else float(q.strikes[0])
    v = cfg.variant
    if v == "none":
        return NoBoundary()
    if v == "absorption":
        return Absorption(L)
    if v == "reflected_absorption":
        return ReflectedAbsorption(L)
    if v == "reflection":
        return Reflection(L)
    if v == "lognormal":
        return Lognormal(sigma_x)
    if cfg.cutoff_x is not None:
        x_L = float(cfg.cutoff_x)
    elif cfg.cutoff is None and len(q) >= 2:
        x_L = float(norm_ppf(1.0 - survival_from_quotes(q)[1][0]))
    elif v == "exp_extrapolation":
        x_L = float(invert_monotonic(guess, L))
    else:
        x_L = math.log(float(invert_monotonic(guess, L, guess=1.0, lower=0.0))) / sigma_x
    if v == "exp_extrapolation":
        return ExpExtrapolation(x_L, 1.0, 0.0, cfg.alpha_cap)
    return Lognormal(sigma_x, LognormalExtrapolation(x_L, 1.0, 0.0, cfg.alpha_cap))


def _complete(poly: MonotonicPolynomial, q, cfg, boundary) -> CollocationSlice:
    """Slice from a polynomial whose a_0 is still free: imply a_0 (or scale)."""
    s = CollocationSlice(q.t, q.forward, poly, boundary, q.expiry)
    if cfg.variant == "lognormal":
        return enforce_martingale(s)
    # seed a_0 at the unconstrained value so the tail is well defined
    s = replace(s, poly=poly.with_a0(max(_unconstrained_a0(s), _a0_floor(s) + 1e-6 * q.forward)))
    return enforce_martingale(refresh_tail(s))


def _assemble(theta, q, cfg, boundary) -> CollocationSlice:
    params = IsotonicParams.from_vector(theta, cfg.degree, cfg.domain)
    return _complete(isotonic_to_coeffs(params, 0.0), q, cfg, boundary)


def _assemble_raw(theta, q, cfg, boundary) -> CollocationSlice:
    return _complete(MonotonicPolynomial(np.r_[0.0, theta]), q, cfg, boundary)


def monotone_lower(s: CollocationSlice) -> float:
    """Left end of the region where the polynomial must be increasing."""
    b = s.boundary
    if isinstance(b, ExpExtrapolation):
        return b.x_L
    if isinstance(b, Lognormal):
        return 0.0 if b.extrapolation is None else math.exp(b.sigma_x * b.extrapolation.c_L)
    return -math.inf


def is_admissible(s: CollocationSlice) -> bool:
    return s.poly.is_increasing(lower=monotone_lower(s))


def model_vols(s: CollocationSlice, q: QuoteSlice) -> np.ndarray:
    prices = np.asarray(price_call(s, q.strikes), dtype=float)
    out = np.empty(len(q))
    for i, (c, K) in enumerate(zip(prices, q.strikes)):
        try:
            out[i] = implied_vol(float(c), q.forward, float(K), q.t)
        except PriceOutOfBounds:
            out[i] = 0.0
    return out


def vol_rmse(s: CollocationSlice, q: QuoteSlice) -> float:
    return float(np.sqrt(np.mean((model_vols(s, q) - q.vols) ** 2)))


def _fit(q, cfg, sigma_x):
    guess, params, sigma_x = _initial(q, cfg, sigma_x)
    boundary = _template(q, cfg, guess, sigma_x)
    target = q.call_prices()
    if cfg.weights == "vega":
        denom = np.maximum(np.asarray(black_vega(q.forward, q.strikes, q.t, q.vols)), 1e-8 * q.forward)
    else:
        denom = np.full(len(q), q.forward)
    scale = np.sqrt(q.weights) / denom
    n = len(q)

    seeds = cfg.spread_seeds or ((1.0, 1.25, 1.5, 2.0) if cfg.variant == "reflection" else (1.0,))
    lm = dict(max_iter=cfg.max_iter, ftol=cfg.tol, xtol=cfg.tol, gtol=cfg.tol, rel_step=1e-5, central=True)

    def run(build, starts, strict=True):
        best, fallback = None, None
        for theta0 in starts:
            def resid(theta, build=build):
                try:
                    s = build(theta, q, cfg, boundary)
                    return (np.asarray(price_call(s, q.strikes)) - target) * scale
                except (NumericalError, NonPositiveAtCutoff):
                    return np.full(n, np.inf)

            res = levenberg_marquardt(resid, theta0, **lm)
            if not math.isfinite(res.cost):
                continue
            s = build(res.x, q, cfg, boundary)
            if strict and not is_admissible(s):
                if fallback is None or res.cost < fallback[1].cost:
                    fallback = (s, res)
                continue
            if best is None or res.cost < best[1].cost:
                best = (s, res)
            if best[1].cost <= 1e-24 * n:
                break
        return best, fallback

    # stage 1: plain coefficients converge much faster; monotonicity is then
    # verified through the roots of g'
    raw_best, raw_any = run(_assemble_raw, [guess.coeffs[1:] * lam for lam in seeds])
    if raw_best is not None:
        return raw_best[0], raw_best[1], sigma_x
    # stage 2: the sum-of-squares parameterization keeps every iterate
    # non-decreasing (the optimum may touch g' = 0 at one point, which a
    # strict root test would reject); an inadmissible stage-1 fit usually only
    # fails far outside the quotes, so its projection is the most promising start
    starts = [params.to_vector() * math.sqrt(lam) for lam in seeds]
    if raw_any is not None:
        x = driver_points(q, cfg, sigma_x)
        span = (0.0 if cfg.lognormal else float(x.min()) - 1.0, float(x.max()) + 1.0)
        proj = project_derivative(raw_any[0].poly.derivative_coeffs(), cfg.degree, cfg.domain, span)
        starts.insert(0, proj.to_vector())
    best, _ = run(_assemble, starts, strict=False)
    if best is None:
        raise InfeasibleMartingale("no admissible starting point for the least squares")
    return best[0], best[1], sigma_x


def _report(s, q, res: LMResult, sigma_x) -> CalibrationReport:
    return CalibrationReport(
        rmse_vol=vol_rmse(s, q),
        iterations=res.iterations,
        objective_history=list(res.history),
        martingale_residual=abs(first_moment(s) - q.forward) / q.forward,
        sigma_x=sigma_x,
        converged=res.converged,
        message=res.message,
    )


def calibrate_slice(q: QuoteSlice, cfg: CalibrationConfig = CalibrationConfig()):
    """Fit a collocation slice to ``q``; returns ``(slice, report)``.

    Raises NoConvergence (carrying ``(slice, report)``) when the iteration
    budget runs out before a stopping criterion is met.
    """
    if cfg.lognormal and cfg.sigma_x_mode == "optimized":
        upper = 2.0 * float(np.min(q.vols)) * math.sqrt(q.t)

        def outer(sig):
            try:
                return _fit(q, cfg, sig)[1].cost
            except (NumericalError, InputError):
                return math.inf

        best = minimize_scalar(outer, bounds=(0.01, upper), method="bounded", options={"xatol": 1e-4})
        sigma_x = float(best.x)
    else:
        sigma_x = resolve_sigma_x(q, cfg)
    s, res, sigma_x = _fit(q, cfg, sigma_x)
    report = _report(s, q, res, sigma_x)
    if not res.converged:
        raise NoConvergence(f"no convergence after {res.iterations} iterations", result=(s, report))
    return s, report


def quotes_from_slice(s: CollocationSlice, strikes, weights=None) -> QuoteSlice:
    """Synthetic quotes: Black vols of the slice's own call prices."""
    strikes = np.asarray(strikes, dtype=float)
    prices = np.asarray(price_call(s, strikes), dtype=float)
    vols = np.array([implied_vol(float(c), s.forward, float(K), s.t) for c, K in zip(prices, strikes)])
    return QuoteSlice(s.t, s.forward, strikes, vols, weights, s.expiry)
