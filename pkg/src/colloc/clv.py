"""Collocated local volatility: multi-expiry path model on a Gaussian driver.

S(t_i) = g_i(x_i) where (x_1, ..., x_m) is a standard normal vector with
correlation ρ_{i,j}.  The Wiener choice ρ_{i,j} = √(t_i/t_j) does not keep
E[S_j/S_i] equal to the deterministic forward ratio, so the correlations (or a
piecewise-constant driver volatility) can be calibrated to restore it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import comb

from colloc.core import hermite_moments, invert_monotonic, norm_cdf, norm_pdf, norm_ppf
from colloc.errors import (
    BarrierBelowCutoff,
    InputError,
    NearSingularDenominator,
    NoConvergence,
    NonPositiveDenominator,
    NonPositiveTime,
    NoRootInUnitInterval,
    NumericalError,
    PositivityRequired,
    WrongVariant,
)
from colloc.optim import levenberg_marquardt
from colloc.pricer import (
    Absorption,
    CollocationSlice,
    ExpExtrapolation,
    Lognormal,
    NoBoundary,
    Reflection,
    quantile_x,
    transform,
)
from colloc.quadrature import integrate_pieces

QUAD_LO, QUAD_HI = -8.0, 8.0
QUAD_TOL = 1e-9
SINGULAR_REL = 1e-12
RHO_RESIDUAL = 1e-8
BLOCK_SIZE = 1 << 16


# ---------------------------------------------------------------- correlation


@dataclass(frozen=True)
class WienerCorrelation:
    kind = "wiener"


@dataclass(frozen=True, eq=False)
class ExplicitCorrelation:
    matrix: np.ndarray
    kind = "explicit"


@dataclass(frozen=True)
class PiecewiseVols:
    """Driver volatility σ_k on (t_k, t_{k+1}], with t_0 = 0; σ_0 is conventionally 1."""

    sigmas: tuple
    kind = "piecewise"


Correlation = Union[WienerCorrelation, ExplicitCorrelation, PiecewiseVols]


def cumulative_variance(times, sigmas) -> np.ndarray:
    """∫_0^{t_i} σ_X² du = Σ_{k=1}^{i} σ_{k-1}² (t_k - t_{k-1})."""
    t = np.asarray(times, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    dt = np.diff(np.r_[0.0, t])
    return np.cumsum(s[: t.size] ** 2 * dt)


def wiener_autocorrelation(t_i: float, t_j: float, times=None, sigmas=None) -> float:
    """Correlation of X(t_i)/sd and X(t_j)/sd for a driver σ_X(t) W(t)."""
    if not (t_i > 0 and t_j > 0):
        raise NonPositiveTime("times must be positive")
    if t_i > t_j:
        t_i, t_j = t_j, t_i
    if sigmas is None:
        return math.sqrt(t_i / t_j)
    times = np.asarray(times, dtype=float)
    var = cumulative_variance(times, sigmas)
    vi = float(np.interp(t_i, np.r_[0.0, times], np.r_[0.0, var]))
    vj = float(np.interp(t_j, np.r_[0.0, times], np.r_[0.0, var]))
    return math.sqrt(vi / vj)


def correlation_matrix(times, corr: Correlation) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if isinstance(corr, ExplicitCorrelation):
        return np.array(corr.matrix, dtype=float)
    v = t if isinstance(corr, WienerCorrelation) else cumulative_variance(t, corr.sigmas)
    lo = np.minimum.outer(v, v)
    hi = np.maximum.outer(v, v)
    return np.sqrt(lo / hi)


def factorize_correlation(C) -> tuple[np.ndarray, float]:
    """A with A Aᵀ ≈ C and the max reconstruction error.

    Cholesky when C is positive definite; otherwise the symmetric eigen-
    decomposition with negative eigenvalues clipped to zero and rows rescaled
    to unit norm.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or not np.allclose(C, C.T, atol=1e-14):
        raise InputError("correlation matrix must be square and symmetric")
    try:
        A = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(C)
        A = V * np.sqrt(np.clip(w, 0.0, None))
        norms = np.linalg.norm(A, axis=1)
        A = A / np.where(norms > 0, norms, 1.0)[:, None]
    return A, float(np.max(np.abs(A @ A.T - C)))


# ---------------------------------------------------------------- model


@dataclass(frozen=True, eq=False)
class CLVModel:
    slices: tuple
    correlation: Correlation = field(default_factory=WienerCorrelation)
    valuation_date: Optional[date] = None
    factor: np.ndarray = field(init=False, repr=False)
    factor_error: float = field(init=False)

    def __post_init__(self):
        slices = tuple(self.slices)
        object.__setattr__(self, "slices", slices)
        t = self.times
        if np.any(t <= 0):
            raise NonPositiveTime("expiry times must be positive")
        if np.any(np.diff(t) <= 0):
            raise InputError("expiry times must be strictly increasing")
        if isinstance(self.correlation, PiecewiseVols) and len(self.correlation.sigmas) < len(slices):
            raise InputError("need one driver volatility per expiry")
        A, err = factorize_correlation(self.matrix())
        A.setflags(write=False)
        object.__setattr__(self, "factor", A)
        object.__setattr__(self, "factor_error", err)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.slices], dtype=float)

    @property
    def forwards(self) -> np.ndarray:
        return np.array([s.forward for s in self.slices], dtype=float)

    def matrix(self) -> np.ndarray:
        return correlation_matrix(self.times, self.correlation)

    def with_correlation(self, corr: Correlation) -> "CLVModel":
        return CLVModel(self.slices, corr, self.valuation_date)


# ---------------------------------------------------------------- closed forms


def _poly_partial(a, mu, sd, c):
    """Σ_k a_k E[(μ + sd·U)^k ; U > c] via the binomial expansion."""
    n = a.size - 1
    m = hermite_moments(c, n)
    mu_pow = [np.ones_like(mu)]
    for _ in range(n):
        mu_pow.append(mu_pow[-1] * mu)
    sd_pow = [sd**l for l in range(n + 1)]
    out = np.zeros(np.broadcast(mu, c).shape)
    for k in range(n + 1):
        if a[k] == 0.0:
            continue
        acc = np.zeros_like(out)
        for l in range(k + 1):
            acc = acc + comb(k, l, exact=True) * mu_pow[k - l] * sd_pow[l] * m[l]
        out = out + a[k] * acc
    return out


def _exp_below(alpha, beta, mu, sd, c):
    """E[exp(α(μ + sd·U) + β) ; U < c]."""
    return np.exp(beta + alpha * mu + 0.5 * alpha * alpha * sd * sd) * norm_cdf(c - alpha * sd)


def _lognormal_above(a, sigma_x, mu, sd, c):
    """Σ_k a_k E[exp(kσ(μ + sd·U)) ; U > c]."""
    out = np.zeros(np.broadcast(mu, c).shape)
    for k, ak in enumerate(a):
        ks = k * sigma_x
        out = out + ak * np.exp(ks * mu + 0.5 * ks * ks * sd * sd) * norm_cdf(ks * sd - c)
    return out


def conditional_mean(s: CollocationSlice, mu, sd: float):
    """E[S(μ + sd·U)] for U standard normal, vectorized over μ."""
    mu = np.asarray(mu, dtype=float)
    if sd == 0.0:
        return transform(s, mu)
    b = s.boundary
    a = s.poly.coeffs
    with np.errstate(over="ignore", invalid="ignore"):
        if isinstance(b, NoBoundary):
            return _poly_partial(a, mu, sd, np.full(mu.shape, -np.inf))
        if isinstance(b, (Absorption, Reflection)):
            cL = float(invert_monotonic(s.poly, b.L))
            c = (cL - mu) / sd
            above = _poly_partial(a, mu, sd, c)
            if isinstance(b, Absorption):
                return above + b.L * norm_cdf(c)
            full = _poly_partial(a, mu, sd, np.full(mu.shape, -np.inf))
            return above + 2.0 * b.L * norm_cdf(c) - (full - above)
        if isinstance(b, ExpExtrapolation):
            c = (b.x_L - mu) / sd
            return _exp_below(b.alpha, b.beta, mu, sd, c) + _poly_partial(a, mu, sd, c)
        if isinstance(b, Lognormal):
            if b.extrapolation is None:
                return _lognormal_above(a, b.sigma_x, mu, sd, np.full(mu.shape, -np.inf))
            e = b.extrapolation
            c = (e.c_L - mu) / sd
            return _exp_below(e.alpha, e.beta, mu, sd, c) + _lognormal_above(a, b.sigma_x, mu, sd, c)
    raise WrongVariant(f"no conditional expectation for variant {b.kind!r}")


def _kinks(s: CollocationSlice) -> list[float]:
    b = s.boundary
    if isinstance(b, (Absorption, Reflection)):
        return [float(invert_monotonic(s.poly, b.L))]
    if isinstance(b, ExpExtrapolation):
        return [b.x_L]
    if isinstance(b, Lognormal) and b.extrapolation is not None:
        return [b.extrapolation.c_L]
    return []


def _check_pair(s_i: CollocationSlice, rho: float):
    if s_i.kind not in ("absorption", "reflection", "exp_extrapolation", "lognormal"):
        raise PositivityRequired(f"denominator slice variant {s_i.kind!r} can reach zero")
    if not 0.0 < rho <= 1.0:
        raise InputError(f"autocorrelation {rho!r} outside (0, 1]")


def _ratio_integral(s_i, s_j, rho, lo):
    _check_pair(s_i, rho)
    sd = math.sqrt(max(1.0 - rho * rho, 0.0))
    floor = SINGULAR_REL * s_i.forward

    def f(v):
        den = transform(s_i, v)
        if np.any(~(den >= floor)):
            raise NearSingularDenominator(
                f"denominator {float(np.min(den)):.3g} below {floor:.3g} inside the quadrature range"
            )
        return conditional_mean(s_j, rho * v, sd) / den * norm_pdf(v)

    lo = max(lo, QUAD_LO)
    if lo >= QUAD_HI:
        return 0.0
    breaks = [lo, QUAD_HI] + [k for k in _kinks(s_i) if lo < k < QUAD_HI]
    if sd == 0.0:
        breaks += [k / rho for k in _kinks(s_j) if lo < k / rho < QUAD_HI]
    return integrate_pieces(f, breaks, QUAD_TOL)


def expected_forward_ratio(s_i: CollocationSlice, s_j: CollocationSlice, rho: float) -> float:
    """E[S_j / S_i] when the drivers have correlation ρ."""
    return _ratio_integral(s_i, s_j, rho, -math.inf)


def barrier_level_x(s_i: CollocationSlice, B: float) -> float:
    if not B > 0:
        raise BarrierBelowCutoff(f"barrier {B!r} must be positive")
    return float(quantile_x(s_i, B))


def expected_barrier_ratio(s_i, s_j, rho: float, B: float) -> float:
    """E[S_j / S_i ; S_i > B]."""
    return _ratio_integral(s_i, s_j, rho, barrier_level_x(s_i, B))


def barrier_probability(s_i: CollocationSlice, B: float) -> float:
    """P(S_i > B) = Φ(-c_B)."""
    return float(norm_cdf(-barrier_level_x(s_i, B)))


# ---------------------------------------------------------------- calibration


@dataclass
class PairCalibration:
    i: int
    j: int
    rho: float
    wiener: float
    residual: float
    fallback: bool = False
    message: str = ""


def calibrate_pair(s_i, s_j, rho0: float) -> tuple[float, float]:
    """ρ in (0, 1] with E[S_j/S_i] = F_j/F_i; returns (ρ, residual)."""
    target = s_j.forward / s_i.forward

    def f(r):
        return expected_forward_ratio(s_i, s_j, r) - target

    f0 = f(rho0)
    if abs(f0) <= 0.1 * RHO_RESIDUAL:
        return rho0, f0
    # scan away from the initial guess in both directions, nearest bracket first
    steps = [0.01 * 2.0**k for k in range(8)]
    lo_pts = [max(rho0 - d, 1e-6) for d in steps]
    hi_pts = [min(rho0 + d, 1.0) for d in steps]
    prev_lo, prev_hi = (rho0, f0), (rho0, f0)
    for a, b in zip(lo_pts, hi_pts):
        for pt, prev, side in ((b, prev_hi, "hi"), (a, prev_lo, "lo")):
            if pt == prev[0]:
                continue
            try:
                fp = f(pt)
            except NearSingularDenominator:
                continue
            if fp == 0.0:
                return pt, 0.0
            if np.sign(fp) != np.sign(prev[1]):
                x0, x1 = sorted((pt, prev[0]))
                r = brentq(f, x0, x1, xtol=1e-14, rtol=4 * np.finfo(float).eps)
                return r, f(r)
            if side == "hi":
                prev_hi = (pt, fp)
            else:
                prev_lo = (pt, fp)
    raise NoRootInUnitInterval(f"no autocorrelation in (0, 1] reproduces the forward ratio {target:.6g}")


def calibrate_autocorrelations(model: CLVModel) -> tuple[np.ndarray, list[PairCalibration]]:
    """Pairwise ρ_{i,j} matching every deterministic forward ratio.

    A pair without a root keeps its Wiener value and is flagged.
    """
    t = model.times
    m = len(model.slices)
    C = np.eye(m)
    report = []
    for i in range(m):
        for j in range(i + 1, m):
            w = math.sqrt(t[i] / t[j])
            try:
                rho, res = calibrate_pair(model.slices[i], model.slices[j], w)
                entry = PairCalibration(i, j, rho, w, res)
            except (NoRootInUnitInterval, NearSingularDenominator) as exc:
                rho = w
                target = model.slices[j].forward / model.slices[i].forward
                try:
                    res = expected_forward_ratio(model.slices[i], model.slices[j], w) - target
                except NumericalError:
                    res = math.nan
                entry = PairCalibration(i, j, w, w, res, True, str(exc))
            C[i, j] = C[j, i] = rho
            report.append(entry)
    return C, report


def forward_ratio_errors(model: CLVModel) -> dict:
    """e_{i,j} = E[S_j/S_i] - F_j/F_i under the model's correlation."""
    C = model.matrix()
    out = {}
    for i in range(len(model.slices)):
        for j in range(i + 1, len(model.slices)):
            si, sj = model.slices[i], model.slices[j]
            out[(i, j)] = expected_forward_ratio(si, sj, float(C[i, j])) - sj.forward / si.forward
    return out


@dataclass
class ForwardVolCalibration:
    sigmas: tuple
    errors: dict
    iterations: int
    cost: float


def calibrate_forward_vols(model: CLVModel, sigma0: float = 1.0, max_iter: int = 100) -> ForwardVolCalibration:
    """Least squares over σ_1..σ_{m-1} (log-parameterized) on all forward ratios."""
    m = len(model.slices)
    if m < 2:
        raise InputError("forward-vol calibration needs at least two expiries")

    def build(theta):
        return model.with_correlation(PiecewiseVols((sigma0, *np.exp(theta).tolist())))

    def resid(theta):
        try:
            return np.array(list(forward_ratio_errors(build(theta)).values()))
        except NumericalError:
            return np.full(m * (m - 1) // 2, np.inf)

    res = levenberg_marquardt(resid, np.zeros(m - 1), max_iter=max_iter, ftol=1e-14, xtol=1e-12, gtol=1e-14)
    fitted = build(res.x)
    out = ForwardVolCalibration(fitted.correlation.sigmas, forward_ratio_errors(fitted), res.iterations, res.cost)
    if not res.converged:
        raise NoConvergence("forward-volatility calibration did not converge", result=out)
    return out


# ---------------------------------------------------------------- Monte-Carlo


@dataclass(frozen=True)
class Terminal:
    i: int

    @property
    def indices(self):
        return (self.i,)

    def payoff(self, S):
        return S[self.i]


@dataclass(frozen=True)
class Ratio:
    i: int
    j: int

    @property
    def indices(self):
        return (self.i, self.j)

    def payoff(self, S):
        return S[self.j] / S[self.i]


@dataclass(frozen=True)
class BarrierRatio:
    i: int
    j: int
    B: float

    @property
    def indices(self):
        return (self.i, self.j)

    def payoff(self, S):
        return np.where(S[self.i] > self.B, S[self.j] / S[self.i], 0.0)


@dataclass(frozen=True)
class Digital:
    i: int
    B: float

    @property
    def indices(self):
        return (self.i,)

    def payoff(self, S):
        return (S[self.i] > self.B).astype(float)


Contract = Union[Terminal, Ratio, BarrierRatio, Digital]


@dataclass(frozen=True)
class SimulationResult:
    contract: str
    mean: float
    stderr: float
    paths: int
    seed: int

    def as_dict(self) -> dict:
        return {"contract": self.contract, "mean": self.mean, "stderr": self.stderr, "paths": self.paths, "seed": self.seed}


def contract_label(c: Contract) -> str:
    # 1-based expiry indices, as on the command line
    if isinstance(c, Terminal):
        return f"terminal:{c.i + 1}"
    if isinstance(c, Ratio):
        return f"ratio:{c.i + 1},{c.j + 1}"
    if isinstance(c, BarrierRatio):
        return f"barrier-ratio:{c.i + 1},{c.j + 1},{c.B!r}"
    return f"digital:{c.i + 1},{c.B!r}"


def _threads(threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("COLLOC_THREADS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def _block_uniforms(seed: int, block: int, n: int, m: int) -> np.ndarray:
    # counter-based stream per (seed, block): the first k rows never depend on n
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
    return gen.random((n, m))


def driver_sample(model: CLVModel, Z: np.ndarray, construction: str = "matrix") -> np.ndarray:
    """Normalized driver values x (paths × m) from independent normals Z."""
    if construction == "matrix":
        return Z @ model.factor.T
    if construction == "increment":
        if isinstance(model.correlation, ExplicitCorrelation):
            raise InputError("increment construction needs a Wiener or piecewise driver")
        t = model.times
        var = t if isinstance(model.correlation, WienerCorrelation) else cumulative_variance(t, model.correlation.sigmas)
        X = np.cumsum(Z * np.sqrt(np.diff(np.r_[0.0, var])), axis=1)
        return X / np.sqrt(var)
    raise InputError(f"unknown construction {construction!r}")


def _block_payoffs(model, contract, seed, block, n, construction, allow_nonpositive):
    m = len(model.slices)
    Z = norm_ppf(_block_uniforms(seed, block, n, m))
    X = driver_sample(model, Z, construction)
    S = {k: transform(model.slices[k], X[:, k]) for k in contract.indices}
    if isinstance(contract, (Ratio, BarrierRatio)) and not allow_nonpositive:
        den = S[contract.i]
        bad = den <= 0 if isinstance(contract, Ratio) else (den <= 0) & (den > contract.B)
        if np.any(bad):
            raise NonPositiveDenominator(f"{int(bad.sum())} paths with S(t_{contract.i + 1}) <= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.asarray(contract.payoff(S), dtype=float)


def _stats(x: np.ndarray) -> tuple[int, float, float]:
    if x.size == 0:
        return 0, 0.0, 0.0
    mean = float(np.mean(x))
    return x.size, mean, float(np.sum((x - mean) ** 2))


def _merge(a, b):
    # Chan et al. pairwise update, applied in block order
    na, ma, qa = a
    nb, mb, qb = b
    if na == 0:
        return b
    n = na + nb
    d = mb - ma
    return n, ma + d * nb / n, qa + qb + d * d * na * nb / n


def simulate_sweep(
    model: CLVModel,
    contract: Contract,
    counts,
    seed: int,
    threads: Optional[int] = None,
    construction: str = "matrix",
    allow_nonpositive: bool = False,
    block_size: int = BLOCK_SIZE,
) -> list[SimulationResult]:
    """Results for several path counts sharing one stream.

    The estimate for n paths uses exactly the first n paths, so every entry
    equals ``simulate(model, contract, n, seed)`` bit for bit.
    """
    counts = sorted({int(c) for c in counts})
    if not counts or counts[0] < 2:
        raise InputError("path counts must be at least 2")
    total = counts[-1]
    nblocks = -(-total // block_size)

    def work(b):
        start = b * block_size
        n = min(block_size, total - start)
        x = _block_payoffs(model, contract, seed, b, n, construction, allow_nonpositive)
        cuts = {c: _stats(x[: c - start]) for c in counts if start < c < start + n}
        return _stats(x), cuts

    with ThreadPoolExecutor(max_workers=_threads(threads)) as pool:
        blocks = list(pool.map(work, range(nblocks)))

    label = contract_label(contract)
    out = []
    acc = (0, 0.0, 0.0)
    pending = list(counts)
    for b, (full, cuts) in enumerate(blocks):
        start = b * block_size
        for c in [c for c in pending if c in cuts]:
            out.append(_result(label, _merge(acc, cuts[c]), seed))
            pending.remove(c)
        acc = _merge(acc, full)
        for c in [c for c in pending if c == start + full[0]]:
            out.append(_result(label, acc, seed))
            pending.remove(c)
    return out


def _result(label, stats, seed) -> SimulationResult:
    n, mean, q = stats
    stderr = math.sqrt(q / (n - 1)) / math.sqrt(n)
    return SimulationResult(label, mean, stderr, n, seed)


def simulate(
    model: CLVModel,
    contract: Contract,
    paths: int,
    seed: int,
    threads: Optional[int] = None,
    construction: str = "matrix",
    allow_nonpositive: bool = False,
) -> SimulationResult:
    """Monte-Carlo mean and standard error; exact (no time discretization)."""
    return simulate_sweep(model, contract, [paths], seed, threads, construction, allow_nonpositive)[0]
