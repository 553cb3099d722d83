import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stivsa.case_model import (BusKind, CaseFormatError, branch_admittances, build_admittance, bundled_case,
                               check_connectivity, load_case, parse_case, scale_generation_dispatch, scale_load,
                               serialize_case)

from conftest import case_text
from oracles import ybus_loop


def test_case14_shape(case14):
    assert case14.n_bus == 14
    assert len(case14.branches) == 20
    assert len(case14.generators) == 5
    assert case14.buses[case14.slack].id == 1
    assert case14.total_load() == pytest.approx((259.0, 73.5))
    assert [b.kind for b in case14.buses[:3]] == [BusKind.SLACK, BusKind.PV, BusKind.PV]


def test_units_converted(case14):
    b9 = case14.buses[case14.bus_index[9]]
    assert b9.shunt_b == pytest.approx(0.19)
    br = case14.branches[case14.branch_by_label("4-7")]
    assert br.tap_ratio == pytest.approx(0.978)
    # zero ratio in the file means nominal
    assert case14.branches[0].tap_ratio == 1.0


def test_branch_labels(case14):
    assert case14.branch_labels[0] == "1-2"
    assert case14.branch_by_label("5-1") == case14.branch_by_label("1-5")
    with pytest.raises(KeyError):
        case14.branch_by_label("1-14")


def test_parallel_branch_labels():
    text = case_text([(1, 3, 0, 0), (2, 1, 10, 2)], [(1, 0, 0, 99, -99, 1.0)],
                     [(1, 2, 0.01, 0.1), (1, 2, 0.01, 0.1)])
    case = parse_case(text)
    assert case.branch_labels == ("1-2#1", "1-2#2")
    assert case.branch_by_label("2-1#2") == 1


def test_out_of_service_generator_dropped():
    text = case_text([(1, 3, 0, 0), (2, 1, 10, 2)], [(1, 0, 0, 99, -99, 1.0)], [(1, 2, 0.01, 0.1)])
    text = text.replace("mpc.gen = [\n", "mpc.gen = [\n2 5 0 10 -10 1.0 100 0 999 0;\n")
    case = parse_case(text)
    assert len(case.generators) == 1


@pytest.mark.parametrize("mutate, fragment", [
    (lambda t: t.replace("2 1 10", "2 1 1O"), "bad number"),
    (lambda t: t.replace("1 3 0 0", "1 1 0 0"), "slack"),
    (lambda t: t.replace("mpc.baseMVA = 100.0;", ""), "baseMVA"),
    (lambda t: t.replace("1 2 0.01 0.1", "1 7 0.01 0.1"), "unknown bus 7"),
    (lambda t: t.replace("1 2 0.01 0.1", "1 2 0 0"), "zero impedance"),
    (lambda t: t.replace("1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;", "1 2 0.01;"), "columns"),
])
def test_malformed_input(mutate, fragment):
    text = case_text([(1, 3, 0, 0), (2, 1, 10, 2)], [(1, 0, 0, 99, -99, 1.0)], [(1, 2, 0.01, 0.1)])
    with pytest.raises(CaseFormatError, match=fragment):
        parse_case(mutate(text))


def test_error_reports_position():
    text = case_text([(1, 3, 0, 0), (2, 1, 10, 2)], [(1, 0, 0, 99, -99, 1.0)], [(1, 2, 0.01, 0.1)])
    bad = text.replace("2 1 10", "2 1 x10")
    with pytest.raises(CaseFormatError) as info:
        parse_case(bad)
    line = next(i for i, ln in enumerate(bad.splitlines(), 1) if "x10" in ln)
    assert info.value.line == line
    assert info.value.column == bad.splitlines()[line - 1].index("x10") + 1


def test_comments_ignored():
    text = case_text([(1, 3, 0, 0), (2, 1, 10, 2)], [(1, 0, 0, 99, -99, 1.0)], [(1, 2, 0.01, 0.1)])
    commented = "% header [ ; junk\n" + text.replace("mpc.bus = [", "mpc.bus = [ % bus data ;")
    assert parse_case(commented) == parse_case(text)


def test_roundtrip_case14(case14, tmp_path):
    path = tmp_path / "case14.m"
    path.write_text(serialize_case(case14))
    again = load_case(path)
    assert serialize_case(again) == serialize_case(case14)
    np.testing.assert_allclose(build_admittance(again), build_admittance(case14), atol=1e-9)


finite = st.floats(-50, 50, allow_nan=False).map(lambda v: round(v, 6))


@settings(max_examples=40, deadline=None)
@given(pd=finite, qd=finite, r=st.floats(0, 0.1).map(lambda v: round(v, 6)),
       x=st.floats(0.01, 0.5).map(lambda v: round(v, 6)), b=st.floats(0, 0.3).map(lambda v: round(v, 6)),
       tap=st.sampled_from([0, 0.95, 1.0, 1.05]), shift=st.sampled_from([0, -3.5, 10]))
def test_roundtrip_property(pd, qd, r, x, b, tap, shift):
    case = parse_case(case_text([(1, 3, 0, 0), (2, 2, 5, 1), (3, 1, pd, qd, 0.5, 19)],
                                [(1, 0, 0, 99, -99, 1.02), (2, 30, 0, 40, -10, 1.01)],
                                [(1, 2, r, x, b, tap, shift), (2, 3, 0.01, 0.2), (1, 3, r, x + 0.1)]))
    back = parse_case(serialize_case(case))
    assert serialize_case(back) == serialize_case(case)
    for a, c in zip(case.branches, back.branches):
        assert c.tap_ratio == pytest.approx(a.tap_ratio, abs=1e-6)
        assert c.phase_shift == pytest.approx(a.phase_shift, abs=1e-7)


def test_ybus_matches_loop_oracle(case14):
    np.testing.assert_allclose(build_admittance(case14), ybus_loop(case14), atol=1e-12)


def test_ybus_phase_shifter_oracle():
    case = parse_case(case_text([(1, 3, 0, 0), (2, 1, 10, 2)], [(1, 0, 0, 99, -99, 1.0)],
                                [(1, 2, 0.01, 0.1, 0.02, 0.97, 5.0)]))
    Y = build_admittance(case)
    np.testing.assert_allclose(Y, ybus_loop(case), atol=1e-12)
    # a phase shifter breaks symmetry
    assert abs(Y[0, 1] - Y[1, 0]) > 1e-3


radial = st.lists(st.tuples(st.floats(0.001, 0.1), st.floats(0.01, 0.5)), min_size=1, max_size=6)


@settings(max_examples=40, deadline=None)
@given(radial)
def test_zero_row_sums_without_shunts(impedances):
    n = len(impedances) + 1
    buses = [(1, 3, 0, 0)] + [(k, 1, 1, 0) for k in range(2, n + 1)]
    # random tree: each bus hangs off the previous one or the root
    branches = [(k + 1 if k % 2 else 1, k + 2, r, x) for k, (r, x) in enumerate(impedances)]
    case = parse_case(case_text(buses, [(1, 0, 0, 99, -99, 1.0)], branches))
    Y = build_admittance(case)
    np.testing.assert_allclose(Y.sum(axis=1), 0, atol=1e-9)
    np.testing.assert_allclose(Y, Y.T, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 19))
def test_outage_equivalence(k):
    case = bundled_case("case14")

    branches = list(case.branches)
    branches[k] = replace(branches[k], in_service=False)
    np.testing.assert_allclose(build_admittance(case, outage=k),
                               build_admittance(replace(case, branches=tuple(branches))), atol=0)
    np.testing.assert_allclose(build_admittance(case.with_outage(k)), build_admittance(case, outage=k), atol=0)


def test_branch_admittance_nominal():
    from stivsa.case_model import Branch
    yff, yft, ytf, ytt = branch_admittances(Branch(1, 2, 0.0, 0.5, 0.2))
    assert yff == pytest.approx(-2j + 0.1j)
    assert yft == ytf == pytest.approx(2j)
    assert ytt == yff


def test_double_outage_rejected(case14):
    with pytest.raises(ValueError):
        build_admittance(case14.with_outage(3), outage=3)
    with pytest.raises(IndexError):
        build_admittance(case14, outage=20)


def test_connectivity(case14):
    assert check_connectivity(case14).connected
    rep = check_connectivity(case14, case14.branch_by_label("7-8"))
    assert not rep.connected
    assert rep.islands == ((8,),)
    assert 1 in rep.components[0]
    radial_ok = [k for k in range(20) if check_connectivity(case14, k).connected]
    assert len(radial_ok) == 19


def test_scaling(case14):
    s = scale_load(case14, 1.2)
    assert s.total_load() == pytest.approx((259 * 1.2, 73.5 * 1.2))
    assert s.generators == case14.generators
    g = scale_generation_dispatch(case14, 1.2)
    assert g.generators[1].p_gen == pytest.approx(40 * 1.2)
    assert g.buses == case14.buses
    with pytest.raises(ValueError):
        scale_load(case14, 0)
    assert math.isclose(case14.p_load_pu.sum(), 2.59)
