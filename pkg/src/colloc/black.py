"""Undiscounted Black formula and a safeguarded implied-volatility solver."""

from __future__ import annotations

import math

import numpy as np

from colloc.core import norm_cdf, norm_pdf
from colloc.errors import PriceOutOfBounds


def black_call(F, K, t, sigma):
    F, K, sigma = (np.asarray(v, dtype=float) for v in (F, K, sigma))
    sd = sigma * math.sqrt(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.log(F / K) / sd + 0.5 * sd
    d2 = d1 - sd
    out = F * norm_cdf(d1) - K * norm_cdf(d2)
    out = np.where(sd > 0, out, np.maximum(F - K, 0.0))
    return out if out.ndim else float(out)


def black_put(F, K, t, sigma):
    return black_call(F, K, t, sigma) - np.asarray(F, dtype=float) + np.asarray(K, dtype=float)


def black_vega(F, K, t, sigma):
    F, K, sigma = (np.asarray(v, dtype=float) for v in (F, K, sigma))
    sd = sigma * math.sqrt(t)
    d1 = np.log(F / K) / sd + 0.5 * sd
    out = F * norm_pdf(d1) * math.sqrt(t)
    return out if out.ndim else float(out)


def black_digital(F, K, t, sigma):
    """P(S > K) under Black, i.e. Φ(d2)."""
    sd = np.asarray(sigma, dtype=float) * math.sqrt(t)
    d2 = np.log(np.asarray(F, dtype=float) / np.asarray(K, dtype=float)) / sd - 0.5 * sd
    return norm_cdf(d2)


def implied_vol(price: float, F: float, K: float, t: float, is_call: bool = True) -> float:
    """Black volatility reproducing ``price`` to 1e-10·F.

    Newton on the total standard deviation, falling back to bisection whenever
    a step leaves the bracket.
    """
    call = price if is_call else price + F - K
    intrinsic = max(F - K, 0.0)
    if not (intrinsic < call < F):
        raise PriceOutOfBounds(f"call price {call!r} outside ({intrinsic}, {F}) for K={K}")
    target_tol = 1e-12 * F

    def f(sd):
        d1 = math.log(F / K) / sd + 0.5 * sd
        return F * float(norm_cdf(d1)) - K * float(norm_cdf(d1 - sd)) - call, F * float(norm_pdf(d1))

    lo, hi = 0.0, 1.0
    while f(hi)[0] < 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e3:
            raise PriceOutOfBounds(f"no volatility reproduces {call!r}")
    # Brenner-Subrahmanyam start, clipped into the bracket
    sd = min(max(math.sqrt(2 * math.pi) * call / F, 0.5 * (lo + hi) * 0.1), hi)
    sd = sd if lo < sd < hi else 0.5 * (lo + hi)
    for _ in range(200):
        val, vega = f(sd)
        if abs(val) <= target_tol:
            break
        if val > 0:
            hi = sd
        else:
            lo = sd
        step = sd - val / vega if vega > 0 else -1.0
        sd = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 4e-16 * hi:
            break
    return sd / math.sqrt(t)
