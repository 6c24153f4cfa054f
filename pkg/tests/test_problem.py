from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nqpnf import series as S
from nqpnf.problem import (
    ExpressionError,
    SpecError,
    desk_hamiltonian,
    desk_vector_field,
    dump_spec,
    load_spec,
    parse_expression,
    parse_spec,
)

MINIMAL = {
    "mode": "vector_field",
    "domain": {"I": [0.5, 1.5], "y": [1.0, 2.0], "r": 0.1, "sigma": 0.1, "s": 0.5},
    "normal": {"v": "y", "omega": "I"},
    "perturbation": {"P3": "eps*sin(phi)"},
    "weights": {"rho": 0.01, "tau": 0.01, "t": 0.05},
}


@pytest.mark.parametrize(
    "src,env,expected",
    [
        ("1 + 2*3", {}, 7.0),
        ("y**2 - I/2", {"y": 3.0, "I": 1.0}, 8.5),
        ("-x", {"x": 2.0}, -2.0),
        ("sin(phi) + cos(0) + exp(0)", {"phi": 0.0}, 2.0),
        ("2*pi", {}, 2 * np.pi),
        ("eps*p*q", {"eps": 0.5, "p": 2.0, "q": 3.0}, 3.0),
    ],
)
def test_expression_values(src, env, expected):
    assert parse_expression(src)(**env) == pytest.approx(expected, rel=1e-15)


def test_expression_numeric_literal():
    e = parse_expression(0.25)
    assert e() == 0.25 and not e.symbols


def test_expression_reports_symbols():
    e = parse_expression("I*y + sin(phi)")
    assert e.symbols == {"I", "y", "phi"}
    assert e.uses("phi") and not e.uses("x", "p")


@pytest.mark.parametrize(
    "src",
    [
        "__import__('os')",
        "I.real",
        "[1, 2]",
        "z + 1",
        "log(I)",
        "sin(I, y)",
        "I if y else 0",
        "'abc'",
        "I % 2",
        "lambda: 0",
    ],
)
def test_expression_whitelist_rejects(src):
    with pytest.raises(ExpressionError) as info:
        parse_expression(src, "normal.v")
    assert info.value.field == "normal.v"


def test_expression_syntax_error_has_column():
    with pytest.raises(ExpressionError) as info:
        parse_expression("I + * y", "normal.omega")
    assert info.value.column is not None
    assert "column" in str(info.value)


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(-10, 10, allow_nan=False),
    b=st.floats(0.1, 10, allow_nan=False),
    I=st.floats(-2, 2, allow_nan=False),
)
def test_expression_matches_python(a, b, I):
    e = parse_expression(f"{a!r}*I**2 - I/{b!r} + exp(-I)")
    assert e(I=I) == pytest.approx(a * I**2 - I / b + np.exp(-I), rel=1e-13, abs=1e-13)


def test_minimal_spec_is_valid():
    spec = parse_spec(MINIMAL)
    N, P = spec.build_vector_field()
    assert spec.mode == "vector_field"
    assert P.X1.l1() == 0.0 and P.X2.l1() == 0.0
    assert P.X3(1.0, 1.5, 0.3) == pytest.approx(1e-3 * np.sin(0.3), rel=1e-12)
    assert N.v(1.0, 1.7, 0.0) == pytest.approx(1.7, rel=1e-14)


def test_negative_sigma_names_field():
    doc = json.loads(json.dumps(MINIMAL))
    doc["domain"]["sigma"] = -1
    with pytest.raises(SpecError) as info:
        parse_spec(doc)
    assert info.value.field == "domain.sigma"
    assert "sigma" in str(info.value)


def test_vanishing_velocity_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["domain"]["y"] = [-1.0, 1.0]
    with pytest.raises(SpecError) as info:
        parse_spec(doc)
    assert info.value.field == "normal.v"


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"mode": "other"}, "mode"),
        ({"p": -1}, "p"),
        ({"cutoffs": {"kmax": -2}}, "cutoffs.kmax"),
        ({"weights": {"rho": 0.0, "tau": 0.01, "t": 0.05}}, "weights.rho"),
        ({"gate_policy": "lenient"}, "gate_policy"),
        ({"y0": 5.0}, "y0"),
        ({"normal": {"v": "y", "omega": "sin(phi)"}}, "normal.omega"),
        ({"perturbation": {"P1": "x"}}, "perturbation.P1"),
    ],
)
def test_invalid_fields(patch, field):
    doc = {**json.loads(json.dumps(MINIMAL)), **patch}
    with pytest.raises(SpecError) as info:
        parse_spec(doc)
    assert info.value.field == field


def test_missing_weights_in_vector_field_mode():
    doc = {k: v for k, v in MINIMAL.items() if k != "weights"}
    with pytest.raises(SpecError, match="weights"):
        parse_spec(doc)


def test_empty_interval_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["domain"]["I"] = [1.0, 1.0]
    with pytest.raises(SpecError) as info:
        parse_spec(doc)
    assert info.value.field == "domain.I"


def test_bad_json_reports_location():
    with pytest.raises(SpecError, match="line 1"):
        parse_spec('{"mode": ')


def test_round_trip_through_file(tmp_path):
    spec = parse_spec(desk_vector_field())
    path = tmp_path / "spec.json"
    path.write_text(dump_spec(spec))
    again = load_spec(path)
    assert again.to_dict() == spec.to_dict()
    N1, P1 = spec.build_vector_field()
    N2, P2 = again.build_vector_field()
    assert np.array_equal(P1.X3.coeff, P2.X3.coeff)
    assert np.array_equal(N1.v.coeff, N2.v.coeff)


def test_overrides_rebuild():
    spec = parse_spec(desk_vector_field(epsilon=1e-3, p=4))
    s2 = spec.with_epsilon(1e-4).with_p(2)
    assert (s2.epsilon, s2.p) == (1e-4, 2)
    _, P = s2.build_vector_field()
    _, P0 = spec.build_vector_field()
    assert np.abs(P.X1.coeff - 0.1 * P0.X1.coeff).max() < 1e-18


def test_desk_hamiltonian_builds():
    spec = parse_spec(desk_hamiltonian(epsilon=1e-3))
    h, f = spec.build_hamiltonian()
    assert spec.domain.is_hamiltonian
    # f = eps cos(phi)(1 + x + pq) at a real point
    val = f(1.0, 0.4, 0.2, 0.3, 1.5, 0.5)
    assert val == pytest.approx(1e-3 * np.cos(0.4) * (1 + 0.5 + 0.06), rel=1e-12)
    assert h(1.0, 0.0, 0.2, 0.3, 1.5, 0.0) == pytest.approx(1.0 + 1.5 + 0.1 * 0.06, rel=1e-13)


def test_builders_keep_unused_directions_trivial():
    spec = parse_spec(MINIMAL)
    N, P = spec.build_vector_field()
    assert N.v.kmax == 0 and N.omega.kmax == 0
    assert P.X3.kmax == spec.cutoffs.kmax


def test_spec_domain_is_domainspec():
    assert isinstance(parse_spec(MINIMAL).domain, S.DomainSpec)
