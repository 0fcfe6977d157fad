"""Model files (JSON) and quote files (CSV).

Floats are written with ``repr``, the shortest string that parses back to the
same double, so a load/save cycle is lossless.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Optional

import numpy as np

from colloc.calibrator import QuoteSlice
from colloc.clv import CLVModel, Correlation, ExplicitCorrelation, PiecewiseVols, WienerCorrelation
from colloc.core import MonotonicPolynomial
from colloc.errors import InputError, ParseError
from colloc.pricer import (
    Absorption,
    CollocationSlice,
    ExpExtrapolation,
    Lognormal,
    LognormalExtrapolation,
    NoBoundary,
    ReflectedAbsorption,
    Reflection,
)

SCHEMA_VERSION = 1
QUOTE_HEADER = ["expiry", "forward", "strike", "vol", "weight"]


def year_fraction(start: date, end: date) -> float:
    """ACT/365."""
    return (end - start).days / 365.0


def _date(text, where: str = "", line: Optional[int] = None) -> date:
    try:
        return date.fromisoformat(str(text))
    except ValueError as exc:
        prefix = f"{where}: " if where else ""
        raise ParseError(f"{prefix}invalid ISO date {text!r}", line=line) from exc


# ---------------------------------------------------------------- slices


def _variant(s: CollocationSlice) -> str:
    b = s.boundary
    if isinstance(b, Lognormal) and b.extrapolation is not None:
        return "lognormal_extrapolation"
    return b.kind


def _boundary_dict(b) -> dict:
    if isinstance(b, NoBoundary):
        return {}
    if isinstance(b, (Absorption, ReflectedAbsorption, Reflection)):
        return {"L": b.L}
    if isinstance(b, ExpExtrapolation):
        return {"x_L": b.x_L, "alpha": b.alpha, "beta": b.beta, "cap": b.cap}
    out = {"sigma_x": b.sigma_x}
    if b.extrapolation is not None:
        e = b.extrapolation
        out.update({"c_L": e.c_L, "alpha": e.alpha, "beta": e.beta, "cap": e.cap})
    return out


def _boundary_from(variant: str, d: dict):
    try:
        if variant == "none":
            return NoBoundary()
        if variant == "absorption":
            return Absorption(float(d["L"]))
        if variant == "reflected_absorption":
            return ReflectedAbsorption(float(d["L"]))
        if variant == "reflection":
            return Reflection(float(d["L"]))
        if variant == "exp_extrapolation":
            return ExpExtrapolation(float(d["x_L"]), float(d["alpha"]), float(d["beta"]), _opt(d.get("cap")))
        if variant == "lognormal":
            return Lognormal(float(d["sigma_x"]))
        if variant == "lognormal_extrapolation":
            e = LognormalExtrapolation(float(d["c_L"]), float(d["alpha"]), float(d["beta"]), _opt(d.get("cap")))
            return Lognormal(float(d["sigma_x"]), e)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad boundary block for variant {variant!r}: {exc}") from exc
    raise ParseError(f"unknown variant {variant!r}")


def _opt(v) -> Optional[float]:
    return None if v is None else float(v)


def slice_to_dict(s: CollocationSlice) -> dict:
    return {
        "expiry": s.expiry.isoformat() if s.expiry else None,
        "t": s.t,
        "forward": s.forward,
        "variant": _variant(s),
        "coefficients": [float(c) for c in s.poly.coeffs],
        "boundary": _boundary_dict(s.boundary),
    }


def slice_from_dict(d: dict) -> CollocationSlice:
    try:
        expiry = _date(d["expiry"], "slice") if d.get("expiry") else None
        return CollocationSlice(
            float(d["t"]),
            float(d["forward"]),
            MonotonicPolynomial(np.array(d["coefficients"], dtype=float)),
            _boundary_from(d["variant"], d.get("boundary", {})),
            expiry,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise ParseError(f"bad slice record: {exc}") from exc


# ---------------------------------------------------------------- model files


@dataclass(eq=False)
class ModelFile:
    valuation_date: Optional[date]
    slices: tuple
    correlation: Optional[Correlation] = None

    def clv(self) -> CLVModel:
        return CLVModel(self.slices, self.correlation or WienerCorrelation(), self.valuation_date)

    def find(self, expiry: str) -> int:
        """Slice index from an ISO date or a 1-based position."""
        for k, s in enumerate(self.slices):
            if s.expiry and s.expiry.isoformat() == expiry:
                return k
        if expiry.isdigit() and 1 <= int(expiry) <= len(self.slices):
            return int(expiry) - 1
        raise InputError(f"unknown expiry {expiry!r}")


def _corr_dict(c: Optional[Correlation]):
    if c is None:
        return None
    if isinstance(c, WienerCorrelation):
        return {"type": "wiener"}
    if isinstance(c, ExplicitCorrelation):
        return {"type": "explicit", "values": np.asarray(c.matrix, dtype=float).tolist()}
    return {"type": "piecewise", "values": [float(v) for v in c.sigmas]}


def _corr_from(d) -> Optional[Correlation]:
    if d is None:
        return None
    kind = d.get("type")
    if kind == "wiener":
        return WienerCorrelation()
    if kind == "explicit":
        return ExplicitCorrelation(np.array(d["values"], dtype=float))
    if kind == "piecewise":
        return PiecewiseVols(tuple(float(v) for v in d["values"]))
    raise ParseError(f"unknown correlation type {kind!r}")


def dumps_model(m: ModelFile) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "valuation_date": m.valuation_date.isoformat() if m.valuation_date else None,
        "slices": [slice_to_dict(s) for s in m.slices],
        "correlation": _corr_dict(m.correlation),
    }
    return json.dumps(doc, indent=2) + "\n"


def loads_model(text: str) -> ModelFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported model schema (expected version {SCHEMA_VERSION})")
    vd = _date(doc["valuation_date"], "valuation_date") if doc.get("valuation_date") else None
    slices = tuple(slice_from_dict(d) for d in doc.get("slices", []))
    return ModelFile(vd, slices, _corr_from(doc.get("correlation")))


def write_atomic(path, text: str) -> None:
    """Write to a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path) -> ModelFile:
    return loads_model(Path(path).read_text(encoding="utf-8"))


def save_model(path, m: ModelFile) -> None:
    write_atomic(path, dumps_model(m))


# ---------------------------------------------------------------- quotes


def parse_quotes(text: str, valuation_date: date) -> list[QuoteSlice]:
    """Quote slices in order of first appearance of each expiry."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not any(c.strip() for c in rows[0]):
        raise ParseError("empty quote file", line=1)
    header = [c.strip().lower() for c in rows[0]]
    if header != QUOTE_HEADER:
        raise ParseError(f"header must be {','.join(QUOTE_HEADER)}", line=1)
    groups: dict[date, dict] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(QUOTE_HEADER):
            raise ParseError(f"expected {len(QUOTE_HEADER)} fields, got {len(row)}", line=lineno)
        expiry = _date(row[0].strip(), line=lineno)
        try:
            F, K, vol = (float(row[i]) for i in (1, 2, 3))
            w = float(row[4]) if row[4].strip() else 1.0
        except ValueError as exc:
            raise ParseError(f"non-numeric field: {exc}", line=lineno) from exc
        if not F > 0:
            raise ParseError(f"forward must be positive, got {F!r}", line=lineno)
        if not vol > 0:
            raise ParseError(f"vol must be positive, got {vol!r}", line=lineno)
        if not K > 0 or not w >= 0:
            raise ParseError("strike must be positive and weight non-negative", line=lineno)
        if expiry <= valuation_date:
            raise ParseError(f"expiry {expiry} not after valuation date", line=lineno)
        g = groups.setdefault(expiry, {"F": F, "K": [], "v": [], "w": []})
        if F != g["F"]:
            raise ParseError(f"forward {F!r} differs from {g['F']!r} earlier in the same expiry", line=lineno)
        if g["K"] and K <= g["K"][-1]:
            raise ParseError(f"strike {K!r} not above previous strike {g['K'][-1]!r}", line=lineno)
        g["K"].append(K)
        g["v"].append(vol)
        g["w"].append(w)
    if not groups:
        raise ParseError("quote file has no data rows", line=1)
    return [
        QuoteSlice(year_fraction(valuation_date, e), g["F"], np.array(g["K"]), np.array(g["v"]), np.array(g["w"]), e)
        for e, g in sorted(groups.items())
    ]


def format_quotes(quotes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(QUOTE_HEADER)
    for q in quotes:
        for K, v, wt in zip(q.strikes, q.vols, q.weights):
            w.writerow([q.expiry.isoformat(), repr(float(q.forward)), repr(float(K)), repr(float(v)), repr(float(wt))])
    return buf.getvalue()
