"""Polynomial and Gaussian building blocks shared by every other module.

The collocation map ``g`` sends a standard normal coordinate ``x`` to an
asset price.  Everything downstream reduces to three primitives defined
here: truncated Gaussian moments, Horner evaluation and inversion of a
strictly increasing polynomial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import special

from colloc.errors import (
    DegenerateLeadingCoefficient,
    NonMonotonicInput,
    NoRealRoot,
    UnsupportedDegree,
)

MAX_DEGREE = 11
HALLEY_MAX_ITER = 20
HALLEY_RTOL = 1e-13

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def norm_cdf(x):
    # ndtr switches to erfc in the tails, so both Φ(x) and Φ(-x) keep full
    # relative precision.
    return special.ndtr(x)


def norm_ppf(u):
    return special.ndtri(u)


def double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def gaussian_moments(n: int) -> np.ndarray:
    """E[Z^k] for k = 0..n."""
    return np.array([0.0 if k % 2 else float(double_factorial(k - 1)) for k in range(n + 1)])


def hermite_moments(b, n: int) -> np.ndarray:
    """Truncated moments m_k(b) = ∫_b^∞ x^k φ(x) dx for k = 0..n.

    ``b`` may be a scalar or an array (including ±inf); the result has shape
    ``(n + 1,) + np.shape(b)``.
    """
    b = np.asarray(b, dtype=float)
    finite = np.isfinite(b)
    bf = np.where(finite, b, 0.0)
    pdf = np.where(finite, norm_pdf(bf), 0.0)
    m = np.empty((n + 1,) + b.shape)
    m[0] = norm_cdf(-b)
    if n >= 1:
        m[1] = pdf
    power = bf.copy()  # b^{i+1}, starting at i = 0
    for i in range(n - 1):
        m[i + 2] = (i + 1) * m[i] + power * pdf
        power = power * bf
    return m


@dataclass(frozen=True, eq=False)
class MonotonicPolynomial:
    """Ascending-power coefficients a_0..a_N of an increasing map."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size < 2:
            raise UnsupportedDegree("collocation polynomial needs degree >= 1")
        if c.size - 1 > MAX_DEGREE:
            raise UnsupportedDegree(f"degree {c.size - 1} exceeds supported maximum {MAX_DEGREE}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, x):
        return eval_poly(self, x)

    def derivative_coeffs(self, order: int = 1) -> np.ndarray:
        return npoly.polyder(self.coeffs, order)

    def d1(self, x):
        return npoly.polyval(x, self.derivative_coeffs(1))

    def d2(self, x):
        if self.degree < 2:
            return np.zeros_like(np.asarray(x, dtype=float))
        return npoly.polyval(x, self.derivative_coeffs(2))

    def gaussian_mean(self) -> float:
        """E[g(Z)] for standard normal Z."""
        return float(np.dot(self.coeffs, gaussian_moments(self.degree)))

    def with_a0(self, a0: float) -> "MonotonicPolynomial":
        c = self.coeffs.copy()
        c[0] = a0
        return MonotonicPolynomial(c)

    def scaled(self, factor: float) -> "MonotonicPolynomial":
        return MonotonicPolynomial(self.coeffs * factor)

    def is_increasing(self, lower: float = -np.inf) -> bool:
        """True when g' > 0 on (lower, ∞), checked through the roots of g'."""
        d = self.derivative_coeffs()
        if d.size == 1:
            return bool(d[0] > 0)
        if d[-1] == 0:
            d = np.trim_zeros(d, "b")
            if d.size <= 1:
                return bool(d.size and d[0] > 0)
        if d[-1] < 0:
            return False
        scale = np.abs(d).sum()
        for r in companion_roots(d):
            if abs(r.imag) > 1e-7 * max(1.0, abs(r.real)):
                continue
            if r.real <= lower:
                continue
            if npoly.polyval(r.real, d) <= 1e-12 * scale:
                return False
        probe = lower + 1.0 if np.isfinite(lower) else 0.0
        return bool(npoly.polyval(probe, d) > 0)


def eval_poly(p: MonotonicPolynomial, x):
    """Horner evaluation of Σ a_k x^k (vectorized over ``x``)."""
    coeffs = p.coeffs if isinstance(p, MonotonicPolynomial) else np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    acc = np.full(x.shape, coeffs[-1])
    for a in coeffs[-2::-1]:
        acc = acc * x + a
    return acc if acc.ndim else float(acc)


def companion_roots(coeffs) -> np.ndarray:
    """All complex roots via eigenvalues of the Frobenius companion matrix.

    LAPACK's ``geev`` balances the matrix first; each eigenvalue then gets one
    Newton polish step on the original polynomial.
    """
    a = np.asarray(coeffs, dtype=float).reshape(-1)
    n = a.size - 1
    if n < 1:
        raise DegenerateLeadingCoefficient("need degree >= 1")
    if a[-1] == 0.0:
        raise DegenerateLeadingCoefficient("leading coefficient is zero")
    if n > MAX_DEGREE:
        raise UnsupportedDegree(f"degree {n} exceeds supported maximum {MAX_DEGREE}")
    if n == 1:
        return np.array([complex(-a[0] / a[1])])
    m = np.zeros((n, n))
    m[1:, :-1] = np.eye(n - 1)
    m[:, -1] = -a[:-1] / a[-1]
    roots = np.linalg.eigvals(m).astype(complex)
    da = npoly.polyder(a)
    f = npoly.polyval(roots, a)
    df = npoly.polyval(roots, da)
    ok = df != 0
    roots[ok] = roots[ok] - f[ok] / df[ok]
    return roots


def invert_monotonic(p: MonotonicPolynomial, y, guess=None, lower: float = -np.inf):
    """Solve p(c) = y for c on (lower, ∞) where p is increasing.

    Halley iteration with bracket bookkeeping: a step that leaves the current
    bracket is replaced by bisection (or by bracket expansion while one side
    is still open).  Entries not converged after ``HALLEY_MAX_ITER`` steps fall
    back to companion-matrix roots of p - y.

    Vectorized over ``y``; ``guess`` defaults to -1 below the Gaussian mean of
    p and +1 above it.
    """
    coeffs = p.coeffs
    d1c = npoly.polyder(coeffs)
    d2c = npoly.polyder(coeffs, 2) if coeffs.size > 2 else np.zeros(1)
    y_arr = np.asarray(y, dtype=float)
    scalar = y_arr.ndim == 0
    y_arr = np.atleast_1d(y_arr).astype(float)

    if guess is None:
        guess = np.where(y_arr < p.gaussian_mean(), -1.0, 1.0)
    c = np.broadcast_to(np.asarray(guess, dtype=float), y_arr.shape).copy()
    if np.isfinite(lower):
        c = np.maximum(c, lower)

    tol = HALLEY_RTOL * np.maximum(1.0, np.abs(y_arr))
    lo = np.full(y_arr.shape, lower, dtype=float)
    hi = np.full(y_arr.shape, np.inf)
    done = np.zeros(y_arr.shape, dtype=bool)

    for _ in range(HALLEY_MAX_ITER):
        f = npoly.polyval(c, coeffs) - y_arr
        d1 = npoly.polyval(c, d1c)
        d2 = npoly.polyval(c, d2c)
        active = ~done
        if np.any(active & (d1 < 0)):
            raise NonMonotonicInput("polynomial derivative is negative at an iterate")
        converged = active & (np.abs(f) <= tol)
        lo = np.where(f < 0, np.maximum(lo, c), lo)
        hi = np.where(f > 0, np.minimum(hi, c), hi)

        with np.errstate(divide="ignore", invalid="ignore"):
            new = c - 2.0 * f * d1 / (2.0 * d1 * d1 - f * d2)
            newton = c - f / d1
            outside = ~np.isfinite(new) | (new < lo) | (new > hi)
            new = np.where(outside, newton, new)
            outside = ~np.isfinite(new) | (new < lo) | (new > hi)
            both = np.isfinite(lo) & np.isfinite(hi)
            step = 2.0 * (1.0 + np.abs(c))
            fallback = np.where(both, 0.5 * (lo + hi), np.where(f < 0, c + step, c - step))
        if np.isfinite(lower):
            fallback = np.where(fallback <= lower, 0.5 * (lower + c), fallback)
        # a converged entry takes one last polishing step, but never a bisection
        new = np.where(outside, np.where(converged, c, fallback), new)

        stalled = np.abs(new - c) <= 4.0 * np.finfo(float).eps * (1.0 + np.abs(c))
        c = np.where(active, new, c)
        done |= converged | (stalled & active)
        if done.all():
            break

    if not done.all():
        for idx in np.flatnonzero(~done):
            c[idx] = _root_fallback(coeffs, y_arr[idx], lower)
    return float(c[0]) if scalar else c


def _root_fallback(coeffs: np.ndarray, y: float, lower: float) -> float:
    shifted = coeffs.copy()
    shifted[0] -= y
    roots = companion_roots(shifted)
    real = [r.real for r in roots if abs(r.imag) <= 1e-7 * max(1.0, abs(r.real)) and r.real >= lower]
    if not real:
        raise NoRealRoot(f"no real preimage of {y!r}")
    d1c = npoly.polyder(coeffs)
    best = min(real, key=lambda r: abs(npoly.polyval(r, shifted)))
    for _ in range(3):
        d = npoly.polyval(best, d1c)
        if d <= 0:
            break
        best -= npoly.polyval(best, shifted) / d
    return float(best)
