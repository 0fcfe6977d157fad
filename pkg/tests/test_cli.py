import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colloc.calibrator import quotes_from_slice
from colloc.cli import main, parse_contract, parse_grid
from colloc.clv import BarrierRatio, Digital, ExplicitCorrelation, PiecewiseVols, Ratio, Terminal
from colloc.core import MonotonicPolynomial
from colloc.errors import InputError, ParseError
from colloc.modelio import (
    ModelFile,
    dumps_model,
    format_quotes,
    load_model,
    loads_model,
    parse_quotes,
    save_model,
)
from colloc.pricer import (
    Absorption,
    CollocationSlice,
    ExpExtrapolation,
    Lognormal,
    LognormalExtrapolation,
    NoBoundary,
    ReflectedAbsorption,
    Reflection,
    with_model_forward,
)
from colloc.synthetic import EXPIRIES, VALUATION, tsla_slices
from conftest import TABLE1


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def model_path(tmp_path):
    p = tmp_path / "model.json"
    save_model(p, ModelFile(VALUATION, tsla_slices()))
    return p


@pytest.fixture
def raw_model_path(tmp_path):
    slices = tuple(
        with_model_forward(CollocationSlice(s.t, 1.0, MonotonicPolynomial(TABLE1[e.isoformat()]), expiry=e))
        for s, e in zip(tsla_slices(), EXPIRIES)
    )
    p = tmp_path / "raw.json"
    save_model(p, ModelFile(VALUATION, slices))
    return p


# ---------------------------------------------------------------- model files

BOUNDARIES = [
    NoBoundary(),
    Absorption(12.5),
    ReflectedAbsorption(12.5),
    Reflection(0.1),
    ExpExtrapolation(-1.7, 1.3, 4.1, 2.0),
    ExpExtrapolation(-1.7, 1.3, 4.1, None),
    Lognormal(0.3),
    Lognormal(0.4, LognormalExtrapolation(-2.0, 1.1, 3.3, 2.0)),
]


@pytest.mark.parametrize("b", BOUNDARIES, ids=lambda b: b.kind)
def test_model_round_trip_each_variant(b):
    s = CollocationSlice(0.5, 101.25, MonotonicPolynomial([100.0, 20.1, 0.3, 0.1]), b, EXPIRIES[0])
    text = dumps_model(ModelFile(VALUATION, (s,)))
    back = loads_model(text)
    assert dumps_model(back) == text
    assert back.slices[0].boundary == b
    assert np.array_equal(back.slices[0].poly.coeffs, s.poly.coeffs)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=5), st.floats(1e-3, 10.0))
def test_serialization_is_lossless(tail, t):
    coeffs = [1.0, 1.0, *tail]
    if coeffs[-1] == 0.0:
        coeffs[-1] = 1.0
    s = CollocationSlice(t, 3.0, MonotonicPolynomial(coeffs))
    back = loads_model(dumps_model(ModelFile(None, (s,), PiecewiseVols((1.0, 0.7)))))
    assert back.slices[0].t == t
    assert np.array_equal(back.slices[0].poly.coeffs, s.poly.coeffs)
    assert back.correlation == PiecewiseVols((1.0, 0.7))


def test_explicit_correlation_round_trip():
    C = np.array([[1.0, 0.3], [0.3, 1.0]])
    back = loads_model(dumps_model(ModelFile(None, tsla_slices()[:2], ExplicitCorrelation(C))))
    assert np.array_equal(back.correlation.matrix, C)


def test_bad_model_json():
    with pytest.raises(ParseError):
        loads_model("{not json")
    with pytest.raises(ParseError):
        loads_model('{"schema_version": 99}')
    with pytest.raises(ParseError):
        loads_model('{"schema_version": 1, "slices": [{"t": 1, "forward": 1, "variant": "weird", "coefficients": [0, 1]}]}')


# ---------------------------------------------------------------- quote files


def test_quote_round_trip():
    s = with_model_forward(CollocationSlice(35 / 365, 1.0, MonotonicPolynomial(TABLE1["2018-07-20"]), expiry=EXPIRIES[0]))
    q = quotes_from_slice(s, np.linspace(250, 480, 8))
    back = parse_quotes(format_quotes([q]), VALUATION)
    assert len(back) == 1
    assert np.array_equal(back[0].strikes, q.strikes)
    assert np.array_equal(back[0].vols, q.vols)
    assert back[0].t == q.t


@pytest.mark.parametrize(
    "body, line",
    [
        ("", 1),
        ("expiry,strike\n", 1),
        ("expiry,forward,strike,vol,weight\n2018-07-20,100,90,0.3,1\n2018-07-20,100,80,0.3,1\n", 3),
        ("expiry,forward,strike,vol,weight\n2018-07-20,100,90,-0.3,1\n", 2),
        ("expiry,forward,strike,vol,weight\n2018-07-20,0,90,0.3,1\n", 2),
        ("expiry,forward,strike,vol,weight\n2018-07-20,100,90,0.3,1\n2018-07-20,101,95,0.3,1\n", 3),
        ("expiry,forward,strike,vol,weight\n20-07-2018,100,90,0.3,1\n", 2),
        ("expiry,forward,strike,vol,weight\n2018-07-20,100,abc,0.3,1\n", 2),
    ],
)
def test_quote_parse_errors(body, line):
    with pytest.raises(ParseError) as exc:
        parse_quotes(body, VALUATION)
    assert exc.value.line == line


def test_quotes_grouped_by_expiry():
    text = "expiry,forward,strike,vol,weight\n2019-01-18,360,300,0.4,\n2018-07-20,357,300,0.5,1\n2019-01-18,360,350,0.38,2\n"
    qs = parse_quotes(text, VALUATION)
    assert [q.expiry.isoformat() for q in qs] == ["2018-07-20", "2019-01-18"]
    assert list(qs[1].weights) == [1.0, 2.0]


# ---------------------------------------------------------------- helpers


def test_parse_grid_and_contract():
    assert list(parse_grid("1:3:3")) == [1.0, 2.0, 3.0]
    assert list(parse_grid("5,6")) == [5.0, 6.0]
    with pytest.raises(InputError):
        parse_grid("1:2")
    assert parse_contract("terminal:2") == Terminal(1)
    assert parse_contract("ratio:2,3") == Ratio(1, 2)
    assert parse_contract("barrier-ratio:2,3,150") == BarrierRatio(1, 2, 150.0)
    assert parse_contract("digital:1,300.5") == Digital(0, 300.5)
    with pytest.raises(InputError):
        parse_contract("lookback:1")


# ---------------------------------------------------------------- commands


def write_quotes(tmp_path):
    qs = []
    for e in EXPIRIES[:2]:
        t = (e - VALUATION).days / 365
        s = with_model_forward(CollocationSlice(t, 1.0, MonotonicPolynomial(TABLE1[e.isoformat()]), expiry=e))
        qs.append(quotes_from_slice(s, np.linspace(250, 480, 12)))
    p = tmp_path / "quotes.csv"
    p.write_text(format_quotes(qs))
    return p


def test_calibrate_round_trip(tmp_path, capsys):
    quotes = write_quotes(tmp_path)
    out = tmp_path / "fit.json"
    code = main(["calibrate", str(quotes), "--valuation-date", "2018-06-15", "--out", str(out)])
    assert code == 0
    report = rows(capsys.readouterr().out)
    assert len(report) == 2
    assert all(float(r["rmse_vol"]) < 1e-6 for r in report)
    assert len(load_model(out).slices) == 2


def test_calibrate_extrapolation_caps_alpha(tmp_path, capsys):
    quotes = write_quotes(tmp_path)
    out = tmp_path / "fit.json"
    code = main(["calibrate", str(quotes), "--valuation-date", "2018-06-15", "--out", str(out), "--variant", "extrapolation", "--alpha-cap", "2"])
    assert code == 0
    for s in load_model(out).slices:
        assert s.boundary.kind == "exp_extrapolation" and s.boundary.alpha <= 2.0


def test_calibrate_empty_file(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert main(["calibrate", str(p), "--valuation-date", "2018-06-15", "--out", str(tmp_path / "m.json")]) == 1
    assert "line 1" in capsys.readouterr().err


def test_calibrate_no_convergence_exit_2(tmp_path, capsys):
    quotes = write_quotes(tmp_path)
    out = tmp_path / "fit.json"
    code = main(["calibrate", str(quotes), "--valuation-date", "2018-06-15", "--out", str(out), "--max-iter", "1"])
    assert code == 2
    assert not out.exists()


def test_price_parity_at_forward(raw_model_path, capsys):
    F = load_model(raw_model_path).slices[0].forward
    assert main(["price", str(raw_model_path), "--expiry", "2018-07-20", "--strikes", repr(F)]) == 0
    r = rows(capsys.readouterr().out)[0]
    assert abs(float(r["call"]) - float(r["put"])) <= 1e-12 * F
    assert abs(float(r["parity_residual"])) <= 1e-12 * F


def test_price_zero_strike_absorption(tmp_path, capsys):
    s = with_model_forward(CollocationSlice(0.5, 1.0, MonotonicPolynomial([100.0, 30.0, 3.0, 1.5]), Absorption(0.0)))
    p = tmp_path / "abs.json"
    save_model(p, ModelFile(None, (s,)))
    assert main(["price", str(p), "--expiry", "1", "--strikes", "0"]) == 0
    assert float(rows(capsys.readouterr().out)[0]["call"]) == pytest.approx(s.forward, rel=1e-14)


def test_price_survival_is_call_slope(model_path, capsys):
    K = np.linspace(250, 450, 41)
    assert main(["price", str(model_path), "--expiry", "2", "--strikes", ",".join(repr(float(k)) for k in K)]) == 0
    r = rows(capsys.readouterr().out)
    C = np.array([float(x["call"]) for x in r])
    G = np.array([float(x["survival"]) for x in r])
    h = 1e-3
    assert main(["price", str(model_path), "--expiry", "2", "--strikes", ",".join(repr(float(k + h)) for k in K)]) == 0
    Ch = np.array([float(x["call"]) for x in rows(capsys.readouterr().out)])
    assert np.max(np.abs(-(Ch - C) / h - G)) <= 1e-4


def test_price_unknown_expiry(model_path, capsys):
    assert main(["price", str(model_path), "--expiry", "2031-01-01", "--strikes", "100"]) == 1


def test_density_command(model_path, capsys):
    assert main(["density", str(model_path), "--expiry", "3", "--k-grid", "10:900:50"]) == 0
    r = rows(capsys.readouterr().out)
    assert len(r) == 50 and all(float(x["density"]) >= 0 for x in r)


def test_autocorr_wiener(model_path, capsys):
    assert main(["autocorr", str(model_path), "--method", "wiener"]) == 0
    r = rows(capsys.readouterr().out)
    got = [round(float(x["rho"]), 4) for x in r]
    assert got == pytest.approx([0.4016, 0.2454, 0.6111], abs=5e-4)
    assert load_model(model_path).correlation.kind == "wiener"


def test_autocorr_calibrate_updates_model(model_path, capsys):
    assert main(["autocorr", str(model_path), "--method", "calibrate"]) == 0
    r = rows(capsys.readouterr().out)
    assert all(abs(float(x["residual"])) <= 1e-8 for x in r)
    assert load_model(model_path).correlation.kind == "explicit"


def test_autocorr_forward_vols(model_path, capsys):
    assert main(["autocorr", str(model_path), "--method", "forward-vols"]) == 0
    assert load_model(model_path).correlation.kind == "piecewise"


def test_autocorr_single_expiry(tmp_path, capsys):
    p = tmp_path / "one.json"
    save_model(p, ModelFile(VALUATION, tsla_slices()[:1]))
    assert main(["autocorr", str(p)]) == 0
    assert rows(capsys.readouterr().out) == []


def test_simulate_terminal(model_path, capsys):
    assert main(["simulate", str(model_path), "--contract", "terminal:1", "--paths", "100000", "--seed", "3"]) == 0
    doc = json.loads(capsys.readouterr().out)
    F = load_model(model_path).slices[0].forward
    assert abs(doc["mean"] - F) <= 4 * doc["stderr"]
    assert doc["paths"] == 100000 and doc["contract"] == "terminal:1"


def test_simulate_is_thread_independent(model_path, capsys, monkeypatch):
    outs = []
    for n in ("1", "4", "16"):
        monkeypatch.setenv("COLLOC_THREADS", n)
        assert main(["simulate", str(model_path), "--contract", "ratio:2,3", "--paths", "200000", "--seed", "5"]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1] == outs[2]


def test_simulate_sweep_flags_nonconvergence(raw_model_path, capsys):
    code = main(
        ["simulate", str(raw_model_path), "--contract", "ratio:1,2", "--sweep-paths", "100000,400000,1600000", "--seed", "8", "--allow-nonpositive"]
    )
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert [r["paths"] for r in doc["results"]] == [100000, 400000, 1600000]
    assert isinstance(doc["stderr_increases_at"], list)


def test_simulate_nonpositive_denominator_exit_2(raw_model_path, capsys):
    assert main(["simulate", str(raw_model_path), "--contract", "ratio:2,3", "--paths", "400000"]) == 2


def test_simulate_bad_index(model_path, capsys):
    assert main(["simulate", str(model_path), "--contract", "terminal:4"]) == 1


def test_localvol_command(model_path, capsys):
    assert main(["localvol", str(model_path), "--k-grid", "200:600:9", "--t-grid", "0.2:1.5:4", "--verify"]) == 0
    cap = capsys.readouterr()
    lines = cap.out.strip().splitlines()
    assert len(lines) == 5 and "NA" not in cap.out
    worst = float(cap.err.strip().split()[-1])
    assert worst <= 1e-4


def test_localvol_out_of_range(model_path, capsys):
    assert main(["localvol", str(model_path), "--k-grid", "300", "--t-grid", "0.01"]) == 2


def test_missing_file(tmp_path, capsys):
    assert main(["price", str(tmp_path / "nope.json"), "--expiry", "1", "--strikes", "1"]) == 1
