"""Command-line front end.

Tables go to stdout (or ``--out``) as CSV, summaries to stderr.  Exit codes:
0 success, 1 input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np

from colloc.black import implied_vol
from colloc.calibrator import VARIANTS, CalibrationConfig, calibrate_slice
from colloc.clv import (
    BarrierRatio,
    Digital,
    ExplicitCorrelation,
    PiecewiseVols,
    Ratio,
    Terminal,
    WienerCorrelation,
    calibrate_autocorrelations,
    calibrate_forward_vols,
    contract_label,
    simulate_sweep,
)
from colloc.errors import InputError, NoConvergence, NumericalError, OutOfTimeRange, PriceOutOfBounds
from colloc.localvol import SliceTermStructure, dupire_fd, local_vol_surface
from colloc.modelio import ModelFile, load_model, parse_quotes, save_model, write_atomic
from colloc.pricer import (
    absorption_probability,
    check_strike_domain,
    density,
    price_call,
    price_put,
    survival,
)

VARIANT_ALIASES = {"extrapolation": "exp_extrapolation", "exp": "exp_extrapolation"}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(text: str, out) -> None:
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def parse_grid(text: str) -> np.ndarray:
    """``a:b:n`` (n points, inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            n = int(n)
            if n < 1:
                raise ValueError("need at least one point")
            return np.linspace(float(a), float(b), n)
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError as exc:
        raise InputError(f"bad grid {text!r}: {exc}") from exc


def parse_contract(text: str):
    """terminal:i | ratio:i,j | barrier-ratio:i,j,B | digital:i,B with 1-based expiries."""
    try:
        kind, _, rest = text.partition(":")
        args = [a.strip() for a in rest.split(",")]
        idx = lambda s: int(s) - 1  # noqa: E731
        if kind == "terminal" and len(args) == 1:
            c = Terminal(idx(args[0]))
        elif kind == "ratio" and len(args) == 2:
            c = Ratio(idx(args[0]), idx(args[1]))
        elif kind == "barrier-ratio" and len(args) == 3:
            c = BarrierRatio(idx(args[0]), idx(args[1]), float(args[2]))
        elif kind == "digital" and len(args) == 2:
            c = Digital(idx(args[0]), float(args[1]))
        else:
            raise ValueError("unknown form")
    except ValueError as exc:
        raise InputError(f"bad contract {text!r}; use terminal:i, ratio:i,j, barrier-ratio:i,j,B or digital:i,B") from exc
    return c


def _check_indices(contract, m: int) -> None:
    for i in contract.indices:
        if not 0 <= i < m:
            raise InputError(f"expiry index {i + 1} outside 1..{m}")


# ---------------------------------------------------------------- commands


def _boundary_param(b, name: str) -> float:
    src = getattr(b, "extrapolation", None) if name != "L" and hasattr(b, "sigma_x") else b
    v = getattr(src, name, None)
    return math.nan if v is None else float(v)


def cmd_calibrate(a) -> int:
    vd = date.fromisoformat(a.valuation_date)
    quotes = parse_quotes(Path(a.quotes).read_text(encoding="utf-8"), vd)
    variant = VARIANT_ALIASES.get(a.variant, a.variant)
    cfg = CalibrationConfig(
        degree=a.degree,
        variant=variant,
        cutoff=a.cutoff,
        alpha_cap=a.alpha_cap,
        sigma_x_mode=a.sigma_x_mode,
        sigma_x=a.sigma_x,
        weights=a.weights,
        max_iter=a.max_iter,
    )
    slices, rows, failed = [], [], []
    for q in quotes:
        try:
            s, rep = calibrate_slice(q, cfg)
        except NoConvergence as exc:
            s, rep = exc.result
            failed.append(q.expiry.isoformat())
        slices.append(s)
        b = s.boundary
        rows.append(
            [
                q.expiry.isoformat(),
                q.t,
                s.kind if variant != "lognormal_extrapolation" else variant,
                rep.rmse_vol,
                rep.martingale_residual,
                rep.iterations,
                rep.converged,
                *(_boundary_param(b, name) for name in ("L", "alpha", "beta")),
                rep.sigma_x if rep.sigma_x is not None else math.nan,
            ]
        )
    _emit(
        _csv(["expiry", "t", "variant", "rmse_vol", "martingale_residual", "iterations", "converged", "L", "alpha", "beta", "sigma_x"], rows),
        a.report,
    )
    if failed:
        _log(f"no convergence for {', '.join(failed)}; model not written")
        return 2
    save_model(a.out, ModelFile(vd, tuple(slices)))
    _log(f"calibrated {len(slices)} slices -> {a.out}")
    return 0


def cmd_price(a) -> int:
    m = load_model(a.model)
    s = m.slices[m.find(a.expiry)]
    K = parse_grid(a.strikes)
    for k in K:
        check_strike_domain(s, float(k))
    calls = np.atleast_1d(price_call(s, K))
    puts = np.atleast_1d(price_put(s, K))
    dens = np.atleast_1d(density(s, K))
    surv = np.atleast_1d(survival(s, K))
    rows = []
    for k, c, p, d, g in zip(K, calls, puts, dens, surv):
        try:
            iv = implied_vol(float(c), s.forward, float(k), s.t) if k > 0 else math.nan
        except PriceOutOfBounds:
            iv = math.nan
        rows.append([float(k), float(c), float(p), iv, float(d), float(g), float(c - p - s.forward + k)])
    _emit(_csv(["K", "call", "put", "implied_vol", "density", "survival", "parity_residual"], rows), a.out)
    return 0


def cmd_density(a) -> int:
    m = load_model(a.model)
    s = m.slices[m.find(a.expiry)]
    K = parse_grid(a.k_grid)
    rows = [[float(k), float(d), float(g)] for k, d, g in zip(K, np.atleast_1d(density(s, K)), np.atleast_1d(survival(s, K)))]
    _emit(_csv(["K", "density", "survival"], rows), a.out)
    try:
        _log(f"absorbed mass {absorption_probability(s)!r}")
    except InputError:
        pass
    return 0


def cmd_autocorr(a) -> int:
    m = load_model(a.model)
    n = len(m.slices)
    if n < 2:
        _emit(_csv(["i", "j", "rho", "wiener", "residual", "fallback"], []), a.out)
        _log("single expiry: nothing to correlate")
        return 0
    clv = replace(m, correlation=WienerCorrelation()).clv()
    t = clv.times
    if a.method == "wiener":
        C = clv.matrix()
        rows = [[i + 1, j + 1, C[i, j], math.sqrt(t[i] / t[j]), "", False] for i in range(n) for j in range(i + 1, n)]
        corr = WienerCorrelation()
        header = ["i", "j", "rho", "wiener", "residual", "fallback"]
    elif a.method == "calibrate":
        C, report = calibrate_autocorrelations(clv)
        rows = [[r.i + 1, r.j + 1, r.rho, r.wiener, r.residual, r.fallback] for r in report]
        for r in report:
            if r.fallback:
                _log(f"pair ({r.i + 1},{r.j + 1}): {r.message}; kept Wiener value")
        corr = ExplicitCorrelation(C)
        header = ["i", "j", "rho", "wiener", "residual", "fallback"]
    else:
        res = calibrate_forward_vols(clv)
        rows = [["sigma", k, v, "", ""] for k, v in enumerate(res.sigmas)]
        rows += [["error", i + 1, j + 1, e, ""] for (i, j), e in res.errors.items()]
        corr = PiecewiseVols(res.sigmas)
        header = ["kind", "a", "b", "value", ""]
    save_model(a.model, replace(m, correlation=corr))
    _emit(_csv(header, rows), a.out)
    return 0


def cmd_simulate(a) -> int:
    m = load_model(a.model)
    clv = m.clv()
    contract = parse_contract(a.contract)
    _check_indices(contract, len(clv.slices))
    counts = [int(c) for c in a.sweep_paths.split(",")] if a.sweep_paths else [a.paths]
    results = simulate_sweep(
        clv, contract, counts, a.seed, construction=a.construction, allow_nonpositive=a.allow_nonpositive
    )
    if a.sweep_paths:
        se = [r.stderr for r in results]
        rising = [results[k + 1].paths for k in range(len(se) - 1) if se[k + 1] > se[k]]
        doc = {
            "contract": contract_label(contract),
            "seed": a.seed,
            "results": [r.as_dict() for r in results],
            "stderr_increases_at": rising,
        }
        if rising:
            _log(f"standard error increased with the path count at {rising}: estimator not converging")
    else:
        doc = results[0].as_dict()
    _emit(json.dumps(doc, indent=2) + "\n", a.out)
    return 0


def cmd_localvol(a) -> int:
    m = load_model(a.model)
    ts = SliceTermStructure(m.slices)
    K = parse_grid(a.k_grid)
    T = parse_grid(a.t_grid)
    lo, hi = ts.times[0], ts.times[-1]
    outside = [t for t in T if not lo <= t <= hi]
    if outside:
        raise OutOfTimeRange(f"times {outside} outside [{lo}, {hi}]")
    for v in ts.violations[:5]:
        _log(f"calendar violation between expiries {v.pair[0] + 1},{v.pair[1] + 1} at moneyness {v.moneyness:.4g}")
    surf = local_vol_surface(ts, K, T)
    _emit(surf.to_csv(), a.out)
    if a.verify:
        worst = 0.0
        for i, t in enumerate(T):
            ok = surf.codes[i] == ""
            if ok.any() and lo < t < hi and t not in ts.times:
                fd = dupire_fd(ts, K[ok], float(t))
                worst = max(worst, float(np.max(np.abs(surf.values[i, ok] / fd - 1.0))))
        _log(f"max relative deviation from finite differences: {worst:.3e}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="colloc", description="Stochastic collocation smiles, CLV simulation and local volatility.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="fit one collocation slice per expiry")
    c.add_argument("quotes")
    c.add_argument("--valuation-date", required=True)
    c.add_argument("--out", required=True, help="model file to write")
    c.add_argument("--report", help="CSV report path (default stdout)")
    c.add_argument("--variant", default="none", choices=sorted(set(VARIANTS) | set(VARIANT_ALIASES)))
    c.add_argument("--degree", type=int, default=5)
    c.add_argument("--cutoff", type=float, help="boundary or tail level (default: lowest strike)")
    c.add_argument("--alpha-cap", type=float, default=2.0)
    c.add_argument("--sigma-x-mode", default="min_total_vol", choices=["fixed", "min_total_vol", "optimized"])
    c.add_argument("--sigma-x", type=float)
    c.add_argument("--weights", default="vega", choices=["vega", "uniform"])
    c.add_argument("--max-iter", type=int, default=300)
    c.set_defaults(func=cmd_calibrate)

    c = sub.add_parser("price", help="closed-form prices for one expiry")
    c.add_argument("model")
    c.add_argument("--expiry", required=True, help="ISO date or 1-based index")
    c.add_argument("--strikes", required=True, help="a,b,c or lo:hi:n")
    c.add_argument("--out")
    c.set_defaults(func=cmd_price)

    c = sub.add_parser("autocorr", help="set the driver correlation of a model")
    c.add_argument("model")
    c.add_argument("--method", default="wiener", choices=["wiener", "calibrate", "forward-vols"])
    c.add_argument("--out")
    c.set_defaults(func=cmd_autocorr)

    c = sub.add_parser("simulate", help="Monte-Carlo estimate of a path contract")
    c.add_argument("model")
    c.add_argument("--contract", required=True, help="terminal:i | ratio:i,j | barrier-ratio:i,j,B | digital:i,B")
    c.add_argument("--paths", type=int, default=1_000_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--sweep-paths", help="comma-separated path counts sharing one stream")
    c.add_argument("--construction", default="matrix", choices=["matrix", "increment"])
    c.add_argument("--allow-nonpositive", action="store_true", help="accept ratios with non-positive denominators")
    c.add_argument("--out")
    c.set_defaults(func=cmd_simulate)

    c = sub.add_parser("localvol", help="Dupire local volatility surface")
    c.add_argument("model")
    c.add_argument("--k-grid", required=True)
    c.add_argument("--t-grid", required=True)
    c.add_argument("--verify", action="store_true", help="compare against finite differences")
    c.add_argument("--out")
    c.set_defaults(func=cmd_localvol)

    c = sub.add_parser("density", help="density and survival for one expiry")
    c.add_argument("model")
    c.add_argument("--expiry", required=True)
    c.add_argument("--k-grid", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_density)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OutOfTimeRange as exc:
        # a requested time outside the expiry range cannot be evaluated at all
        _log(f"error: {exc}")
        return 2
    except (InputError, OSError, ValueError) as exc:
        _log(f"error: {exc}")
        return 1
    except NumericalError as exc:
        _log(f"numerical failure: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
