"""Adaptive Gauss-Lobatto quadrature (Gander & Gautschi, 2000).

Each interval is integrated with the 4-point Gauss-Lobatto rule and its
7-point Kronrod extension; the difference between the two is the error
estimate.  Intervals failing the test are split at the Kronrod nodes into six
pieces, reusing every function value already computed.  Unlike the textbook
recursive version the refinement is breadth-first so that the integrand is
called once per level on a whole batch of nodes.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence

import numpy as np

from colloc.errors import QuadratureFailure

_ALPHA = math.sqrt(2.0 / 3.0)
_BETA = 1.0 / math.sqrt(5.0)


def adaptive_lobatto(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-12,
    max_intervals: int = 200_000,
) -> float:
    """∫_a^b f(x) dx to absolute tolerance ``tol``.

    ``f`` must accept and return 1-d arrays.
    """
    if a == b:
        return 0.0
    if b < a:
        return -adaptive_lobatto(f, b, a, tol, max_intervals)
    length = b - a
    lo = np.array([a], dtype=float)
    hi = np.array([b], dtype=float)
    ends = np.asarray(f(np.array([a, b], dtype=float)), dtype=float)
    flo, fhi = ends[:1], ends[1:]
    pieces: list[float] = []
    processed = 0
    noise = None

    while lo.size:
        processed += lo.size
        if processed > max_intervals:
            raise QuadratureFailure(f"more than {max_intervals} subintervals on [{a}, {b}]")
        h = 0.5 * (hi - lo)
        m = 0.5 * (hi + lo)
        mll, ml, mr, mrr = m - _ALPHA * h, m - _BETA * h, m + _BETA * h, m + _ALPHA * h
        vals = np.asarray(f(np.concatenate([mll, ml, m, mr, mrr])), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise QuadratureFailure("integrand returned a non-finite value")
        fmll, fml, fm, fmr, fmrr = np.split(vals, 5)

        i2 = (h / 6.0) * (flo + fhi + 5.0 * (fml + fmr))
        i1 = (h / 1470.0) * (
            77.0 * (flo + fhi) + 432.0 * (fmll + fmrr) + 625.0 * (fml + fmr) + 672.0 * fm
        )
        if noise is None:
            # differences below rounding of the whole integral cannot be resolved
            scale = (h / 1470.0) * (
                77.0 * (np.abs(flo) + np.abs(fhi))
                + 432.0 * (np.abs(fmll) + np.abs(fmrr))
                + 625.0 * (np.abs(fml) + np.abs(fmr))
                + 672.0 * np.abs(fm)
            )
            noise = 16.0 * np.finfo(float).eps * float(scale.sum())
        local_tol = np.maximum(tol * (hi - lo) / length, noise * (hi - lo) / length)
        exhausted = (mll <= lo) | (hi <= mrr)
        accept = (np.abs(i1 - i2) <= local_tol) | exhausted
        pieces.extend(i1[accept].tolist())

        r = ~accept
        if not r.any():
            break
        knots = [lo[r], mll[r], ml[r], m[r], mr[r], mrr[r], hi[r]]
        fk = [flo[r], fmll[r], fml[r], fm[r], fmr[r], fmrr[r], fhi[r]]
        lo = np.concatenate(knots[:-1])
        hi = np.concatenate(knots[1:])
        flo = np.concatenate(fk[:-1])
        fhi = np.concatenate(fk[1:])

    return math.fsum(pieces)


def integrate_pieces(
    f: Callable[[np.ndarray], np.ndarray],
    breakpoints: Sequence[float],
    tol: float = 1e-12,
) -> float:
    """Sum of adaptive integrals over consecutive breakpoints.

    Splitting at known kinks keeps the adaptive refinement cheap.
    """
    pts = sorted(float(p) for p in breakpoints)
    n = max(len(pts) - 1, 1)
    return math.fsum(
        adaptive_lobatto(f, p0, p1, tol / n) for p0, p1 in zip(pts[:-1], pts[1:]) if p1 > p0
    )
