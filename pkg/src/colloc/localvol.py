"""Time interpolation of collocated call prices and the implied Dupire local volatility.

Between two expiries the normalized price C(K, t)/F(0, t) at fixed forward
moneyness is blended linearly in t.  The blend is arbitrage free as soon as
the two slices satisfy the calendar condition, and both Dupire derivatives
are available in closed form from the slice prices and densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from colloc.errors import CalendarArbitrage, InputError, OutOfTimeRange, ZeroDensity
from colloc.pricer import CollocationSlice, density, price_call, transform

CALENDAR_POINTS = 100
DENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class CalendarViolation:
    pair: tuple[int, int]
    moneyness: float
    gap: float  # C_2/K_2 - C_1/K_1, negative


@dataclass(frozen=True, eq=False)
class SliceTermStructure:
    slices: tuple
    violations: tuple = field(init=False)

    def __post_init__(self):
        slices = tuple(self.slices)
        if not slices:
            raise InputError("need at least one slice")
        t = np.array([s.t for s in slices])
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise InputError("expiries must be positive and strictly increasing")
        object.__setattr__(self, "slices", slices)
        object.__setattr__(self, "violations", tuple(calendar_violations(slices)))

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.slices])

    def forward(self, t: float) -> float:
        """F(0, t), log-linear in t between expiries."""
        k = self._interval(t)
        s1, s2 = self.slices[k], self.slices[k + 1] if k + 1 < len(self.slices) else self.slices[k]
        if s1 is s2 or t == s1.t:
            return s1.forward
        w = (t - s1.t) / (s2.t - s1.t)
        return math.exp((1.0 - w) * math.log(s1.forward) + w * math.log(s2.forward))

    def _interval(self, t: float) -> int:
        """Index k with t_k <= t <= t_{k+1}; interior knots belong to the interval on their right."""
        times = self.times
        if not (times[0] <= t <= times[-1]):
            raise OutOfTimeRange(f"t = {t!r} outside [{times[0]}, {times[-1]}]")
        k = int(np.searchsorted(times, t, side="right")) - 1
        return min(k, max(len(times) - 2, 0))


def _strike_range(s: CollocationSlice) -> tuple[float, float]:
    y = transform(s, np.linspace(-3.7, 3.7, 201))
    return float(np.min(y)), float(np.max(y))


def calendar_violations(slices, points: int = CALENDAR_POINTS) -> list[CalendarViolation]:
    """Points of a geometric moneyness grid where C(K_2, t_2)/K_2 < C(K_1, t_1)/K_1."""
    out = []
    for k in range(len(slices) - 1):
        s1, s2 = slices[k], slices[k + 1]
        lo1, hi1 = _strike_range(s1)
        lo2, hi2 = _strike_range(s2)
        lo = max(min(lo1 / s1.forward, lo2 / s2.forward), 1e-3)
        hi = max(hi1 / s1.forward, hi2 / s2.forward)
        y = np.geomspace(lo, hi, points)
        gap = price_call(s2, y * s2.forward) / (y * s2.forward) - price_call(s1, y * s1.forward) / (y * s1.forward)
        # tolerate rounding in deep out-of-the-money wings
        bad = gap < -1e-12
        out.extend(CalendarViolation((k, k + 1), float(m), float(g)) for m, g in zip(y[bad], gap[bad]))
    return out


def _bracket(ts: SliceTermStructure, K, t: float):
    K = np.asarray(K, dtype=float)
    if not np.all(K > 0):
        raise InputError("strikes must be positive")
    if len(ts.slices) == 1:
        if t != ts.slices[0].t:
            raise OutOfTimeRange(f"t = {t!r} differs from the only expiry")
        return None
    k = ts._interval(t)
    s1, s2 = ts.slices[k], ts.slices[k + 1]
    F = ts.forward(t)
    return s1, s2, F, K * s1.forward / F, K * s2.forward / F


def _scalar(x, like):
    return float(x) if np.ndim(like) == 0 else np.asarray(x, dtype=float)


def interp_call(ts: SliceTermStructure, K, t: float):
    """Undiscounted call price at an intermediate time by moneyness-preserving blending."""
    for s in ts.slices:
        if t == s.t:
            if not np.all(np.asarray(K) > 0):
                raise InputError("strikes must be positive")
            return _scalar(price_call(s, K), K)
    s1, s2, F, K1, K2 = _bracket(ts, K, t)
    dt = s2.t - s1.t
    w2 = (t - s1.t) / dt
    w1 = (s2.t - t) / dt
    return _scalar(w2 * F / s2.forward * price_call(s2, K2) + w1 * F / s1.forward * price_call(s1, K1), K)


def _dupire_parts(ts, K, t):
    br = _bracket(ts, K, t)
    if br is None:
        raise OutOfTimeRange("local volatility needs two expiries")
    s1, s2, _, K1, K2 = br
    num = price_call(s2, K2) / K2 - price_call(s1, K1) / K1
    den = (t - s1.t) * K2 * density(s2, K2) + (s2.t - t) * K1 * density(s1, K1)
    return np.asarray(num, dtype=float), np.asarray(den, dtype=float)


def dupire_local_vol(ts: SliceTermStructure, K, t: float):
    """σ_L(K, t) from the interpolated prices (scalar or array of strikes).

    σ_L² = 2 (C_2/K_2 - C_1/K_1) / ((t - t_1) K_2 p_2(K_2) + (t_2 - t) K_1 p_1(K_1)),
    with p_i the slice densities at the moneyness-matched strikes.
    """
    num, den = _dupire_parts(ts, K, t)
    if np.any(num < 0):
        raise CalendarArbitrage(f"negative calendar spread {float(np.min(num)):.3g} at t={t}")
    if not np.all(den >= DENSITY_FLOOR):
        raise ZeroDensity(f"density vanishes at t={t}")
    return _scalar(np.sqrt(2.0 * num / den), K)


def dupire_fd(ts: SliceTermStructure, K, t: float, dt: float = 1e-5, dk: float = 1e-4):
    """Finite-difference Dupire on interp_call (reference implementation).

    The time derivative is taken at fixed forward moneyness, i.e. on a call
    written on a fixed forward F(0, t).
    """
    K = np.asarray(K, dtype=float)
    F = ts.forward(t)
    y = K / F

    def normalized(tt):
        return interp_call(ts, y * ts.forward(tt), tt) / ts.forward(tt)

    dC_dT = F * (normalized(t + dt) - normalized(t - dt)) / (2.0 * dt)
    h = dk * K
    d2C = (interp_call(ts, K + h, t) - 2.0 * interp_call(ts, K, t) + interp_call(ts, K - h, t)) / (h * h)
    return _scalar(np.sqrt(2.0 * dC_dT / (K * K * d2C)), K)


@dataclass
class LocalVolSurface:
    strikes: np.ndarray
    times: np.ndarray
    values: np.ndarray  # NaN where flagged
    codes: np.ndarray  # "" where valid

    def to_csv(self) -> str:
        lines = ["t," + ",".join(repr(float(k)) for k in self.strikes)]
        for i, t in enumerate(self.times):
            cells = [
                f"NA:{self.codes[i, j]}" if self.codes[i, j] else repr(float(self.values[i, j]))
                for j in range(self.strikes.size)
            ]
            lines.append(repr(float(t)) + "," + ",".join(cells))
        return "\n".join(lines) + "\n"


def local_vol_surface(ts: SliceTermStructure, strikes, times) -> LocalVolSurface:
    """Dupire local volatility on a grid, flagging cells instead of failing."""
    K = np.asarray(strikes, dtype=float).reshape(-1)
    T = np.asarray(times, dtype=float).reshape(-1)
    values = np.full((T.size, K.size), np.nan)
    codes = np.full((T.size, K.size), "", dtype=object)
    bad_k = ~(K > 0)
    K_safe = np.where(bad_k, 1.0, K)
    for i, t in enumerate(T):
        try:
            num, den = _dupire_parts(ts, K_safe, float(t))
        except OutOfTimeRange:
            codes[i, :] = "time-range"
            continue
        codes[i, bad_k] = "strike"
        cal = (num < 0) & ~bad_k
        zero = ~(den >= DENSITY_FLOOR) & ~cal & ~bad_k
        ok = ~(bad_k | cal | zero)
        values[i, ok] = np.sqrt(2.0 * num[ok] / den[ok])
        codes[i, cal] = "calendar"
        codes[i, zero] = "zero-density"
    return LocalVolSurface(K, T, values, codes)
