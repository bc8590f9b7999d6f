import json

import pytest

from helpers import random_case, triangle_case
from opflearn.cases import (
    CaseSyntaxError,
    CaseValidationError,
    DisconnectedNetworkError,
    Overlay,
    apply_overlay,
    build_case,
    case_hash,
    parse_case,
    parse_case_json,
    parse_case_matpower,
    serialize_case,
)

MINIMAL_2BUS = """
{
  "base_mva": 100.0,
  "buses": [{"id": 1, "load_mw": 0.0}, {"id": 2, "load_mw": 50.0}],
  "branches": [{"from": 1, "to": 2, "reactance_pu": 0.5, "limit_mw": 80.0}],
  "generators": [{"bus": 1, "p_min_mw": 0.0, "p_max_mw": 100.0, "cost": [0.01, 20.0, 0.0]}],
  "slack_bus": 1
}
"""

# Hand-written MATPOWER-subset text; the assertions below freeze the literal
# numbers that appear in this string.
MATPOWER_3BUS = """\
function mpc = t3
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0  0 0 0 1 1 0 135 1 1.05 0.95;
    2 1 60 0 0 0 1 1 0 135 1 1.05 0.95;
    3 2 40 0 0 0 1 1 0 135 1 1.05 0.95;
];
mpc.gen = [
    1 0 0 0 0 1 100 1 120 0;
    3 0 0 0 0 1 100 1 50  10;
];
mpc.branch = [
    1 2 0 0.1  0 130 0 0 0 0 1 -360 360;
    1 3 0 0.2  0 130 0 0 0 0 1 -360 360;
    2 3 0 0.25 0 100 0 0 0 0 1 -360 360;
];
mpc.gencost = [
    2 0 0 3 0.02 30 5;
    2 0 0 3 0.04 32 7;
];
"""


def test_minimal_two_bus_json():
    case = parse_case(MINIMAL_2BUS, "json")
    assert case.n_bus == 2
    assert case.n_branch == 1
    assert case.n_gen == 1
    assert case.slack_bus == 0
    assert case.buses[1].load_mw == 50.0


def test_matpower_subset_numbers_match_file_text():
    case = parse_case_matpower(MATPOWER_3BUS)
    assert case.n_bus == 3 and case.n_branch == 3 and case.n_gen == 2
    assert case.base_mva == 100.0
    assert case.default_loads_mw() == [0.0, 60.0, 40.0]
    assert case.slack_bus == 0  # bus id 1, type 3
    # branch columns: fbus tbus _ x _ rateA
    assert [b.reactance_pu for b in case.branches] == [0.1, 0.2, 0.25]
    assert [b.limit_mw for b in case.branches] == [130.0, 130.0, 100.0]
    # gen columns: bus ... Pmax Pmin, gencost: 2 0 0 3 c2 c1 c0
    g1, g2 = case.generators
    assert (g1.p_min_mw, g1.p_max_mw, g1.cost) == (0.0, 120.0, (0.02, 30.0, 5.0))
    assert (g2.p_min_mw, g2.p_max_mw, g2.cost) == (10.0, 50.0, (0.04, 32.0, 7.0))
    assert case.buses[g2.bus].original_id == 3


def test_zero_reactance_names_branch():
    text = MINIMAL_2BUS.replace('"reactance_pu": 0.5', '"reactance_pu": 0.0')
    with pytest.raises(CaseValidationError, match="branch 0 .*reactance"):
        parse_case(text, "json")


def test_validation_errors_name_the_invariant():
    base = json.loads(MINIMAL_2BUS)

    bad = json.loads(MINIMAL_2BUS)
    bad["branches"][0]["to"] = 9
    with pytest.raises(CaseValidationError, match="unknown bus"):
        parse_case_json(json.dumps(bad))

    bad = json.loads(MINIMAL_2BUS)
    bad["generators"][0]["p_min_mw"] = 200.0
    with pytest.raises(CaseValidationError, match="p_min .* > p_max"):
        parse_case_json(json.dumps(bad))

    bad = json.loads(MINIMAL_2BUS)
    bad["slack_bus"] = 2
    with pytest.raises(CaseValidationError, match="hosts no generator"):
        parse_case_json(json.dumps(bad))

    bad = json.loads(MINIMAL_2BUS)
    bad["branches"][0]["limit_mw"] = -1.0
    with pytest.raises(CaseValidationError, match="flow limit"):
        parse_case_json(json.dumps(bad))

    assert parse_case_json(json.dumps(base)).n_bus == 2  # control


def test_disconnected_graph_rejected():
    doc = json.loads(MINIMAL_2BUS)
    doc["buses"].append({"id": 3, "load_mw": 5.0})
    with pytest.raises(DisconnectedNetworkError):
        parse_case_json(json.dumps(doc))


def test_json_syntax_error_reports_location():
    with pytest.raises(CaseSyntaxError, match=r"line 1"):
        parse_case('{"base_mva": }', "json")


def test_matpower_syntax_error_reports_line():
    text = MATPOWER_3BUS.replace("0.25", "zz", 1)
    with pytest.raises(CaseSyntaxError, match=r"line 1[0-9]"):
        parse_case_matpower(text)


def test_matpower_missing_block():
    text = MATPOWER_3BUS.replace("mpc.gencost", "mpc.ignoredcost")
    with pytest.raises(CaseSyntaxError, match="missing MATPOWER blocks"):
        parse_case_matpower(text)


def test_matpower_unsupported_cost_model():
    text = MATPOWER_3BUS.replace("2 0 0 3 0.02 30 5", "1 0 0 3 0.02 30 5")
    with pytest.raises(CaseValidationError, match="cost model 2"):
        parse_case_matpower(text)


def test_matpower_ignores_unknown_fields_with_warning(caplog):
    text = MATPOWER_3BUS + "\nmpc.bus_name = [ 1; 2; 3 ];\n"
    with caplog.at_level("WARNING"):
        case = parse_case_matpower(text)
    assert case.n_bus == 3
    assert any("bus_name" in rec.message for rec in caplog.records)


def test_round_trip_json(rng):
    for _ in range(10):
        case = random_case(rng)
        again = parse_case(serialize_case(case), "json")
        assert again == case
        assert case_hash(again) == case_hash(case)


def test_matpower_and_json_agree_on_same_network():
    from_m = parse_case_matpower(MATPOWER_3BUS)
    as_json = serialize_case(from_m)
    assert parse_case(as_json, "json") == from_m


def test_hash_sensitive_to_data():
    case = triangle_case()
    doc = json.loads(serialize_case(case))
    doc["branches"][0]["limit_mw"] = 131.0
    other = parse_case_json(json.dumps(doc))
    assert case_hash(other) != case_hash(case)


def test_duplicate_generator_bus_rejected():
    with pytest.raises(CaseValidationError, match="one generator per bus"):
        build_case(
            100.0,
            buses=[(1, 0.0), (2, 10.0)],
            branches=[(1, 2, 0.1, 50.0)],
            generators=[
                (1, 0.0, 50.0, (0.0, 1.0, 0.0)),
                (1, 0.0, 50.0, (0.0, 1.0, 0.0)),
            ],
            slack_bus_id=1,
        )


def test_overlay_scales_and_overrides():
    case = triangle_case()
    overlay = Overlay.from_dict(
        {"load_scale": 1.5, "limit_scale": 0.5, "branch_limits_mw": {"2": 77.0}}
    )
    out = apply_overlay(case, overlay)
    assert out.default_loads_mw() == [0.0, 90.0, 60.0]
    assert [b.limit_mw for b in out.branches] == [65.0, 65.0, 77.0]
    assert out.generators == case.generators


def test_overlay_validation_still_applies():
    case = triangle_case()
    with pytest.raises(CaseValidationError):
        apply_overlay(case, Overlay(limit_scale=-1.0))
