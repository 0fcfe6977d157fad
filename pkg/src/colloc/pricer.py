"""Closed-form undiscounted vanilla prices for every collocation variant.

A slice maps a standard normal driver ``x`` to the asset price at one expiry.
The boundary spec decides what happens in the left tail:

* ``NoBoundary``          S = g(x) on ℝ (may go negative)
* ``Absorption(L)``       S = max(g(x), L), mass Φ(c_L) sits at L
* ``ReflectedAbsorption`` density folded back by the reflection principle,
                          mass 2Φ(c_L) at L
* ``Reflection(L)``       S = 2L - g(x) below c_L
* ``ExpExtrapolation``    S = exp(αx + β) below x_L
* ``Lognormal``           S = g(exp(σ_X x)), optionally with an exponential
                          tail below c_L

All pricing functions are vectorized over the strike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import date
from typing import ClassVar, Optional, Union

import numpy as np

from colloc.core import (
    MonotonicPolynomial,
    hermite_moments,
    invert_monotonic,
    norm_cdf,
    norm_pdf,
)
from colloc.errors import NonPositiveAtCutoff, UnsupportedStrike, WrongVariant


@dataclass(frozen=True)
class NoBoundary:
    kind: ClassVar[str] = "none"


@dataclass(frozen=True)
class Absorption:
    L: float
    kind: ClassVar[str] = "absorption"


@dataclass(frozen=True)
class ReflectedAbsorption:
    L: float
    kind: ClassVar[str] = "reflected_absorption"


@dataclass(frozen=True)
class Reflection:
    L: float
    kind: ClassVar[str] = "reflection"


@dataclass(frozen=True)
class ExpExtrapolation:
    x_L: float
    alpha: float
    beta: float
    cap: Optional[float] = None
    kind: ClassVar[str] = "exp_extrapolation"


@dataclass(frozen=True)
class LognormalExtrapolation:
    c_L: float
    alpha: float
    beta: float
    cap: Optional[float] = None


@dataclass(frozen=True)
class Lognormal:
    sigma_x: float
    extrapolation: Optional[LognormalExtrapolation] = None
    kind: ClassVar[str] = "lognormal"


BoundarySpec = Union[NoBoundary, Absorption, ReflectedAbsorption, Reflection, ExpExtrapolation, Lognormal]

POSITIVE_VARIANTS = ("absorption", "reflected_absorption", "reflection", "exp_extrapolation", "lognormal")


@dataclass(frozen=True, eq=False)
class CollocationSlice:
    t: float
    forward: float
    poly: MonotonicPolynomial
    boundary: BoundarySpec = field(default_factory=NoBoundary)
    expiry: Optional[date] = None

    @property
    def coeffs(self) -> np.ndarray:
        return self.poly.coeffs

    @property
    def kind(self) -> str:
        return self.boundary.kind


def _vec(K):
    arr = np.asarray(K, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def _out(values, scalar):
    return float(values[0]) if scalar else values


def upper_integral(coeffs, c):
    """∫_c^∞ g(x) φ(x) dx."""
    coeffs = np.asarray(coeffs, dtype=float)
    m = hermite_moments(c, coeffs.size - 1)
    return np.tensordot(coeffs, m, axes=1)


def lower_integral(coeffs, c):
    """∫_{-∞}^c g(x) φ(x) dx."""
    coeffs = np.asarray(coeffs, dtype=float)
    signs = np.where(np.arange(coeffs.size) % 2, -1.0, 1.0)
    m = hermite_moments(-np.asarray(c, dtype=float), coeffs.size - 1)
    return np.tensordot(coeffs * signs, m, axes=1)


def lognormal_weights(coeffs, sigma_x: float) -> np.ndarray:
    k = np.arange(len(coeffs))
    return np.asarray(coeffs, dtype=float) * np.exp(0.5 * (k * sigma_x) ** 2)


def _lognormal_upper(coeffs, sigma_x, c):
    """∫_c^∞ g(exp(σ y)) φ(y) dy = Σ a_k e^{k²σ²/2} Φ(kσ - c)."""
    w = lognormal_weights(coeffs, sigma_x)
    k = np.arange(len(coeffs))
    c = np.asarray(c, dtype=float)
    return np.tensordot(w, norm_cdf(np.multiply.outer(k * sigma_x, np.ones(c.shape)) - c), axes=1)


def _exp_tail(alpha, beta, cut, c):
    """∫_c^cut exp(αx + β) φ(x) dx for c <= cut."""
    return math.exp(beta + 0.5 * alpha * alpha) * (norm_cdf(cut - alpha) - norm_cdf(c - alpha))


def cutoff_strike(s: CollocationSlice) -> float:
    """Asset level where the left-tail treatment starts (0 when unbounded)."""
    b = s.boundary
    if isinstance(b, (Absorption, ReflectedAbsorption, Reflection)):
        return b.L
    if isinstance(b, ExpExtrapolation):
        return float(s.poly(b.x_L))
    if isinstance(b, Lognormal):
        if b.extrapolation is not None:
            return float(s.poly(math.exp(b.sigma_x * b.extrapolation.c_L)))
        return float(s.poly.coeffs[0])
    return -math.inf


def _invert(s: CollocationSlice, y):
    return invert_monotonic(s.poly, y)


def _lognormal_c(s: CollocationSlice, K: np.ndarray) -> np.ndarray:
    """Driver coordinate y with g(exp(σ y)) = K; -inf at or below g(0)."""
    sigma = s.boundary.sigma_x
    a0 = s.poly.coeffs[0]
    c = np.full(K.shape, -np.inf)
    above = K > a0
    if above.any():
        z = invert_monotonic(s.poly, K[above], guess=1.0, lower=0.0)
        with np.errstate(divide="ignore"):
            c[above] = np.log(z) / sigma
    return c


def quantile_x(s: CollocationSlice, y):
    """Driver coordinate of asset level ``y`` for variants where S is increasing in x.

    Returns -inf for levels below the support (absorbed mass or the lognormal
    floor).
    """
    y, scalar = _vec(y)
    b = s.boundary
    if isinstance(b, NoBoundary):
        c = np.asarray(_invert(s, y), dtype=float)
    elif isinstance(b, Absorption):
        c = np.full(y.shape, -np.inf)
        m = y >= b.L
        if m.any():
            c[m] = _invert(s, y[m])
    elif isinstance(b, ExpExtrapolation):
        L = cutoff_strike(s)
        c = np.empty(y.shape)
        m = y >= L
        if m.any():
            c[m] = _invert(s, y[m])
        with np.errstate(divide="ignore"):
            c[~m] = (np.log(y[~m]) - b.beta) / b.alpha
    elif isinstance(b, Lognormal):
        if b.extrapolation is None:
            c = _lognormal_c(s, y)
        else:
            e = b.extrapolation
            L = cutoff_strike(s)
            c = np.empty(y.shape)
            m = y >= L
            if m.any():
                c[m] = _lognormal_c(s, y[m])
            with np.errstate(divide="ignore"):
                c[~m] = (np.log(y[~m]) - e.beta) / e.alpha
    else:
        raise WrongVariant(f"asset is not monotone in the driver for variant {b.kind!r}")
    return _out(np.asarray(c, dtype=float), scalar)


def transform(s: CollocationSlice, x):
    """Asset price S = g(t, x) as a function of the standard normal driver."""
    x = np.asarray(x, dtype=float)
    b = s.boundary
    if isinstance(b, NoBoundary):
        return s.poly(x)
    if isinstance(b, Absorption):
        return np.maximum(s.poly(x), b.L)
    if isinstance(b, Reflection):
        gx = s.poly(x)
        return np.where(gx < b.L, 2.0 * b.L - gx, gx)
    if isinstance(b, ExpExtrapolation):
        with np.errstate(over="ignore"):
            tail = np.exp(b.alpha * np.minimum(x, b.x_L) + b.beta)
        return np.where(x < b.x_L, tail, s.poly(np.maximum(x, b.x_L)))
    if isinstance(b, Lognormal):
        with np.errstate(over="ignore"):
            body = s.poly(np.exp(b.sigma_x * x))
        if b.extrapolation is None:
            return body
        e = b.extrapolation
        tail = np.exp(e.alpha * np.minimum(x, e.c_L) + e.beta)
        return np.where(x < e.c_L, tail, body)
    raise WrongVariant(f"no path transform for variant {b.kind!r}")


def first_moment(s: CollocationSlice) -> float:
    """E[S] under the slice's model (must equal the forward once calibrated)."""
    b = s.boundary
    a = s.poly.coeffs
    if isinstance(b, (NoBoundary, ReflectedAbsorption)):
        return s.poly.gaussian_mean()
    if isinstance(b, Absorption):
        cL = _invert(s, b.L)
        return float(b.L * norm_cdf(cL) + upper_integral(a, cL))
    if isinstance(b, Reflection):
        cL = _invert(s, b.L)
        return float(
            2.0 * b.L * norm_cdf(cL) + upper_integral(a, cL) - lower_integral(a, cL)
        )
    if isinstance(b, ExpExtrapolation):
        return float(_exp_tail(b.alpha, b.beta, b.x_L, -np.inf) + upper_integral(a, b.x_L))
    if isinstance(b, Lognormal):
        if b.extrapolation is None:
            return float(lognormal_weights(a, b.sigma_x).sum())
        e = b.extrapolation
        return float(
            _exp_tail(e.alpha, e.beta, e.c_L, -np.inf) + _lognormal_upper(a, b.sigma_x, e.c_L)
        )
    raise WrongVariant(b.kind)


def _gaussian_call(a, c, K):
    return upper_integral(a, c) - norm_cdf(-c) * K


def price_call(s: CollocationSlice, K):
    """Undiscounted call price E[(S - K)^+]."""
    K, scalar = _vec(K)
    b = s.boundary
    a = s.poly.coeffs
    out = np.empty(K.shape)

    if isinstance(b, NoBoundary):
        out[:] = _gaussian_call(a, np.asarray(_invert(s, K)), K)

    elif isinstance(b, Absorption):
        hi = K >= b.L
        if hi.any():
            out[hi] = _gaussian_call(a, np.asarray(_invert(s, K[hi])), K[hi])
        if (~hi).any():
            out[~hi] = first_moment(s) - K[~hi]

    elif isinstance(b, (ReflectedAbsorption, Reflection)):
        sign = 1.0 if isinstance(b, ReflectedAbsorption) else -1.0
        hi = K > b.L
        if hi.any():
            Kh = K[hi]
            cK = np.asarray(_invert(s, Kh))
            cM = np.asarray(_invert(s, 2.0 * b.L - Kh))
            out[hi] = (
                _gaussian_call(a, cK, Kh)
                + sign * lower_integral(a, cM)
                - sign * (2.0 * b.L - Kh) * norm_cdf(cM)
            )
        if (~hi).any():
            # the whole distribution sits at or above L
            out[~hi] = first_moment(s) - K[~hi]

    elif isinstance(b, ExpExtrapolation):
        L = cutoff_strike(s)
        hi = K >= L
        if hi.any():
            out[hi] = _gaussian_call(a, np.asarray(_invert(s, K[hi])), K[hi])
        if (~hi).any():
            Kl = K[~hi]
            with np.errstate(divide="ignore"):
                cK = (np.log(Kl) - b.beta) / b.alpha
            out[~hi] = (
                _exp_tail(b.alpha, b.beta, b.x_L, cK) + upper_integral(a, b.x_L) - Kl * norm_cdf(-cK)
            )

    elif isinstance(b, Lognormal):
        sig = b.sigma_x
        e = b.extrapolation
        L = cutoff_strike(s) if e is not None else -np.inf
        hi = K >= L
        if hi.any():
            cK = _lognormal_c(s, K[hi])
            out[hi] = _lognormal_upper(a, sig, cK) - K[hi] * norm_cdf(-cK)
        if (~hi).any():
            Kl = K[~hi]
            with np.errstate(divide="ignore"):
                cK = (np.log(Kl) - e.beta) / e.alpha
            out[~hi] = (
                _exp_tail(e.alpha, e.beta, e.c_L, cK)
                + _lognormal_upper(a, sig, e.c_L)
                - Kl * norm_cdf(-cK)
            )
    else:
        raise WrongVariant(b.kind)
    return _out(out, scalar)


def price_put(s: CollocationSlice, K):
    """Put price from parity: P = C - F + K."""
    K_arr = np.asarray(K, dtype=float)
    put = price_call(s, K_arr) - s.forward + K_arr
    return put if K_arr.ndim else float(put)


def absorption_probability(s: CollocationSlice) -> float:
    b = s.boundary
    if isinstance(b, Absorption):
        return float(norm_cdf(_invert(s, b.L)))
    if isinstance(b, ReflectedAbsorption):
        return float(2.0 * norm_cdf(_invert(s, b.L)))
    raise WrongVariant(f"variant {b.kind!r} has no absorbed mass")


def survival(s: CollocationSlice, K):
    """P(S > K), i.e. minus the strike derivative of the call price."""
    K, scalar = _vec(K)
    b = s.boundary
    if isinstance(b, (ReflectedAbsorption, Reflection)):
        out = np.ones(K.shape)
        hi = K > b.L
        if hi.any():
            cK = np.asarray(_invert(s, K[hi]))
            cM = np.asarray(_invert(s, 2.0 * b.L - K[hi]))
            sign = -1.0 if isinstance(b, ReflectedAbsorption) else 1.0
            out[hi] = norm_cdf(-cK) + sign * norm_cdf(cM)
        return _out(out, scalar)
    c = np.asarray(quantile_x(s, K), dtype=float)
    return _out(norm_cdf(-c), scalar)


def _poly_density(poly, c):
    return norm_pdf(c) / poly.d1(c)


def density(s: CollocationSlice, K):
    """Continuous part of the asset density at K.

    Absorbed mass is excluded; see ``absorption_probability``.
    """
    K, scalar = _vec(K)
    b = s.boundary
    out = np.zeros(K.shape)
    if isinstance(b, NoBoundary):
        out[:] = _poly_density(s.poly, np.asarray(_invert(s, K)))
    elif isinstance(b, Absorption):
        hi = K >= b.L
        if hi.any():
            out[hi] = _poly_density(s.poly, np.asarray(_invert(s, K[hi])))
    elif isinstance(b, (ReflectedAbsorption, Reflection)):
        hi = K > b.L
        if hi.any():
            cK = np.asarray(_invert(s, K[hi]))
            cM = np.asarray(_invert(s, 2.0 * b.L - K[hi]))
            sign = -1.0 if isinstance(b, ReflectedAbsorption) else 1.0
            out[hi] = _poly_density(s.poly, cK) + sign * _poly_density(s.poly, cM)
    elif isinstance(b, ExpExtrapolation):
        L = cutoff_strike(s)
        hi = K >= L
        if hi.any():
            out[hi] = _poly_density(s.poly, np.asarray(_invert(s, K[hi])))
        lo = (~hi) & (K > 0)
        if lo.any():
            c = (np.log(K[lo]) - b.beta) / b.alpha
            out[lo] = norm_pdf(c) / (b.alpha * K[lo])
    elif isinstance(b, Lognormal):
        sig = b.sigma_x
        e = b.extrapolation
        L = cutoff_strike(s) if e is not None else s.poly.coeffs[0]
        hi = K > L if e is None else K >= L
        if hi.any():
            z = invert_monotonic(s.poly, K[hi], guess=1.0, lower=0.0)
            z = np.atleast_1d(z)
            c = np.log(z) / sig
            out[hi] = norm_pdf(c) / (sig * z * s.poly.d1(z))
        if e is not None:
            lo = (~hi) & (K > 0)
            if lo.any():
                c = (np.log(K[lo]) - e.beta) / e.alpha
                out[lo] = norm_pdf(c) / (e.alpha * K[lo])
    else:
        raise WrongVariant(b.kind)
    return _out(out, scalar)


def fit_extrapolation(p: MonotonicPolynomial, x_L: float, cap: Optional[float] = None):
    """Exponential tail exp(αx + β) matching p in value (and slope unless capped) at x_L."""
    gx = float(p(x_L))
    if not gx > 0:
        raise NonPositiveAtCutoff(f"g(x_L) = {gx} is not positive")
    alpha = float(p.d1(x_L)) / gx
    if cap is not None:
        alpha = min(alpha, cap)
    beta = math.log(gx) - alpha * x_L
    return alpha, beta


def fit_lognormal_extrapolation(p: MonotonicPolynomial, sigma_x: float, c_L: float, cap: Optional[float] = None):
    """Tail parameters for lognormal collocation in the driver coordinate y."""
    z = math.exp(sigma_x * c_L)
    gz = float(p(z))
    if not gz > 0:
        raise NonPositiveAtCutoff(f"g(exp(σ c_L)) = {gz} is not positive")
    alpha = sigma_x * z * float(p.d1(z)) / gz
    if cap is not None:
        alpha = min(alpha, cap)
    beta = math.log(gz) - alpha * c_L
    return alpha, beta


def with_extrapolation(s: CollocationSlice, x_L: float, cap: Optional[float] = None) -> CollocationSlice:
    """Replace the slice boundary by a (possibly capped) exponential tail at x_L."""
    if isinstance(s.boundary, Lognormal):
        alpha, beta = fit_lognormal_extrapolation(s.poly, s.boundary.sigma_x, x_L, cap)
        return replace(s, boundary=Lognormal(s.boundary.sigma_x, LognormalExtrapolation(x_L, alpha, beta, cap)))
    alpha, beta = fit_extrapolation(s.poly, x_L, cap)
    return replace(s, boundary=ExpExtrapolation(x_L, alpha, beta, cap))


def refresh_tail(s: CollocationSlice) -> CollocationSlice:
    """Recompute α, β after the polynomial changed, keeping cutoff and cap."""
    b = s.boundary
    if isinstance(b, ExpExtrapolation):
        return with_extrapolation(s, b.x_L, b.cap)
    if isinstance(b, Lognormal) and b.extrapolation is not None:
        return with_extrapolation(s, b.extrapolation.c_L, b.extrapolation.cap)
    return s


def with_model_forward(s: CollocationSlice) -> CollocationSlice:
    """Set the slice forward to its own first moment."""
    return replace(s, forward=first_moment(s))


def check_strike_domain(s: CollocationSlice, K: float) -> None:
    if s.kind in POSITIVE_VARIANTS and K < 0:
        raise UnsupportedStrike(f"negative strike {K} for positive variant {s.kind!r}")
