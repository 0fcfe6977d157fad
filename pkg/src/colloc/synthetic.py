"""Three-expiry equity model built from published TSLA collocation polynomials.

The polynomials were calibrated on 2018-06-15.  The two longer ones are not
monotone far in the left tail, so every slice gets an exponential left tail
with slope capped at 2, starting at a fixed asset level.  Forwards are set to
the model first moments, which makes each slice a martingale by construction.
"""

from __future__ import annotations

from datetime import date

from colloc.clv import CLVModel, Correlation, WienerCorrelation
from colloc.core import MonotonicPolynomial, invert_monotonic
from colloc.pricer import CollocationSlice, with_extrapolation, with_model_forward

VALUATION = date(2018, 6, 15)
EXPIRIES = (date(2018, 7, 20), date(2019, 1, 18), date(2020, 1, 17))
TSLA_POLYNOMIALS = (
    (356.64, 48.632, 0.842, -0.565, 0.0917, 0.412),
    (362.86, 117.77, -23.49, 3.970, 5.586, 0.729),
    (364.01, 216.74, -72.76, -29.51, 21.83, 7.014),
)
TAIL_LEVELS = (200.0, 100.0, 50.0)
ALPHA_CAP = 2.0


def year_fraction(start: date, end: date) -> float:
    """ACT/365."""
    return (end - start).days / 365.0


def tsla_times() -> tuple[float, ...]:
    return tuple(year_fraction(VALUATION, e) for e in EXPIRIES)


def tsla_slices(extrapolate: bool = True) -> tuple[CollocationSlice, ...]:
    out = []
    for t, e, row, level in zip(tsla_times(), EXPIRIES, TSLA_POLYNOMIALS, TAIL_LEVELS):
        p = MonotonicPolynomial(row)
        s = CollocationSlice(t, 1.0, p, expiry=e)
        if extrapolate:
            s = with_extrapolation(s, float(invert_monotonic(p, level)), ALPHA_CAP)
        out.append(with_model_forward(s))
    return tuple(out)


def tsla_model(correlation: Correlation | None = None, extrapolate: bool = True) -> CLVModel:
    """CLV model on the three TSLA expiries; ``extrapolate=False`` keeps the raw polynomials."""
    return CLVModel(tsla_slices(extrapolate), correlation or WienerCorrelation(), VALUATION)
