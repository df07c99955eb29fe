import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from privgrid.matpower import (
    BR_B,
    BR_R,
    BR_X,
    MatpowerParseError,
    RawCase,
    UnsupportedCostModel,
    bundled_case_path,
    bundled_cases,
    case_to_raw,
    parse_matpower,
    raw_to_case,
    write_matpower,
)
from privgrid.network import CaseValidationError
from oracles import MINIMAL_CASE


def test_minimal_case_shapes():
    raw = parse_matpower(MINIMAL_CASE)
    assert raw.bus.shape == (2, 13)
    assert raw.gen.shape == (1, 10)
    assert raw.branch.shape == (1, 13)
    assert raw.base_mva == 100
    assert raw.function_name == "two_bus"


def test_24_bus_base_and_dimensions():
    text = bundled_case_path("case24_ieee_rts").read_text()
    raw = parse_matpower(text)
    assert raw.base_mva == 100
    # published dimensions of the IEEE RTS-24 system
    assert raw.bus.shape[0] == 24
    assert raw.gen.shape[0] == 33
    assert raw.branch.shape[0] == 38
    case = raw_to_case(raw)
    assert len(case.generators) == 33
    assert len(case.branches) == 38


@pytest.mark.parametrize("field", ["bus", "gen", "branch", "baseMVA"])
def test_missing_field_is_named(field):
    lines = MINIMAL_CASE.splitlines()
    start = next(i for i, ln in enumerate(lines) if ln.startswith(f"mpc.{field} ="))
    end = start
    if lines[start].rstrip().endswith("["):
        while lines[end].strip() != "];":
            end += 1
    text = "\n".join(lines[:start] + lines[end + 1 :])
    with pytest.raises(MatpowerParseError, match=f"missing mpc.{field}") as info:
        parse_matpower(text)
    assert info.value.line is not None


def test_non_numeric_entry_reports_row_and_column():
    text = MINIMAL_CASE.replace("0.01\t0.1", "0.01\tabc")
    with pytest.raises(MatpowerParseError, match=r"row 1.*column 4"):
        parse_matpower(text)


def test_comments_and_inf_are_handled():
    text = MINIMAL_CASE.replace("250\t250\t250", "250\t250\tInf").replace(
        "-360\t360;", "-360\t360; % trailing comment ; with [brackets] and 'quotes'"
    )
    raw = parse_matpower(text)
    assert math.isinf(raw.branch[0, 7])


def test_piecewise_cost_rejected():
    text = MINIMAL_CASE.replace("2\t0\t0\t3\t0.01\t10\t5", "1\t0\t0\t2\t0\t0\t100\t1000")
    with pytest.raises(UnsupportedCostModel):
        raw_to_case(parse_matpower(text))


def test_dangling_reference_lists_rows():
    text = MINIMAL_CASE.replace("1\t2\t0.01\t0.1", "1\t7\t0.01\t0.1")
    with pytest.raises(CaseValidationError, match="branch row 1"):
        raw_to_case(parse_matpower(text))


def test_per_unit_conversion():
    case = raw_to_case(parse_matpower(MINIMAL_CASE))
    pd, qd = case.demand()
    assert pd[1] == pytest.approx(0.5)
    assert qd[1] == pytest.approx(0.1)
    assert case.generators[0].pmax == pytest.approx(2.0)
    g = case.generators[0]
    assert (g.c2, g.c1, g.c0) == (0.01, 10, 5)
    br = case.branches[0]
    assert br.ang_min == -math.pi / 2 and br.ang_max == math.pi / 2
    assert br.tap == 1.0


def test_bus_with_100_mw_is_one_per_unit():
    text = MINIMAL_CASE.replace("2\t1\t50\t10", "2\t1\t100\t10")
    pd, _ = raw_to_case(parse_matpower(text)).demand()
    assert pd[1] == 1.0


@pytest.mark.parametrize("name", bundled_cases())
def test_round_trip_every_bundled_case(name):
    text = bundled_case_path(name).read_text()
    t0 = time.perf_counter()
    raw = parse_matpower(text)
    again = parse_matpower(write_matpower(raw))
    assert time.perf_counter() - t0 < 1.0
    assert raw.same_data(again)
    assert raw.extras.keys() == again.extras.keys()


@pytest.mark.parametrize("name", bundled_cases())
def test_case_to_raw_identity(name):
    text = bundled_case_path(name).read_text()
    raw = parse_matpower(text)
    back = case_to_raw(raw_to_case(raw), raw)
    assert back.same_data(raw)


def test_obfuscation_touches_only_line_columns(case5, load):
    case, raw = load("pglib_opf_case5_pjm")
    new = case.with_branch_parameters({br.id: (br.r * 1.5, br.x * 0.5, br.b_sh + 0.01) for br in case.branches})
    out = case_to_raw(new, raw)
    assert np.array_equal(out.bus, raw.bus)
    assert np.array_equal(out.gen, raw.gen)
    assert np.array_equal(out.gencost, raw.gencost)
    changed = np.any(out.branch != raw.branch, axis=0)
    assert set(np.flatnonzero(changed)) == {BR_R, BR_X, BR_B}
    # text level: lines outside the branch matrix are byte-identical
    a = write_matpower(raw).split("mpc.branch")[0]
    b = write_matpower(out).split("mpc.branch")[0]
    assert a == b


finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e12, max_value=1e12)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3, 13), elements=finite), st.floats(min_value=1e-9, max_value=1e-5))
def test_random_matrices_round_trip(branch, tiny):
    branch[0, 2] = tiny
    bus = np.ones((2, 13))
    gen = np.ones((1, 10))
    raw = RawCase(100.0, bus, gen, branch)
    again = parse_matpower(write_matpower(raw))
    np.testing.assert_allclose(again.branch, branch, rtol=1e-9, atol=0)
    assert np.array_equal(again.branch, branch)
