import math

import numpy as np
import pytest

from radopf.cases import synthetic_feeder_matpower
from radopf.errors import ParseError
from radopf.matpower import import_matpower, write_matpower
from radopf.transform import injections


def _case_text(branch_rows, bus_rows=None, gen_rows=None, extra=""):
    bus_rows = bus_rows or [[1, 3, 0, 0, 0, 0, 1, 1, 0, 12.47, 1, 1.05, 0.95],
                            [2, 1, 20, 5, 0, 0, 1, 1, 0, 12.47, 1, 1.05, 0.95]]
    gen_rows = gen_rows or [[1, 0, 0, 80, -80, 1, 100, 1, 100, 0]]
    return write_matpower({"baseMVA": 100, "bus": bus_rows, "gen": gen_rows, "branch": branch_rows}) + extra


def _branch(r=0.03, x=0.04, b=0.0, tap=0.0, shift=0.0, angmin=-60.0, angmax=60.0, status=1):
    return [1, 2, r, x, b, 0, 0, 0, tap, shift, status, angmin, angmax]


def test_admittance_mapping():
    case, report = import_matpower(_case_text([_branch()]))
    assert report.ok
    e = case.edges[0]
    assert e.g == pytest.approx(12.0, rel=1e-14) and e.b == pytest.approx(16.0, rel=1e-14)
    assert e.theta_max == pytest.approx(math.pi / 3, rel=1e-14)


def test_bus_bounds_from_loads_and_generators():
    case, _ = import_matpower(_case_text([_branch()]))
    slack, load = case.buses
    assert case.slack_bus == 1
    # gen row: QMAX 80, QMIN -80, PMAX 100, PMIN 0 (MW on a 100 MVA base)
    assert (slack.p_min, slack.p_max) == (0.0, 1.0)
    assert (slack.q_min, slack.q_max) == (-0.8, 0.8)
    assert load.p_min == load.p_max == pytest.approx(-0.2)
    assert load.q_min == load.q_max == pytest.approx(-0.05)


def test_load_tolerance_opens_fixed_loads():
    case, _ = import_matpower(_case_text([_branch()]), load_tolerance=1e-3)
    load = case.buses[1]
    assert load.p_min == pytest.approx(-0.201) and load.p_max == pytest.approx(-0.199)
    assert case.buses[0].p_min == 0.0  # a genuine range is left alone


def test_tap_zero_is_silent_and_tap_is_warned():
    _, report = import_matpower(_case_text([_branch(tap=0.0)]))
    assert not any("tap" in w for w in report.warnings)
    _, report = import_matpower(_case_text([_branch(tap=1.0)]))
    assert not any("tap" in w for w in report.warnings)
    _, report = import_matpower(_case_text([_branch(tap=0.95)]))
    assert any("tap ignored" in w for w in report.warnings)


def test_other_ignored_fields_warn():
    _, report = import_matpower(_case_text([_branch(b=0.01, shift=2.0)], extra="mpc.gencost = [2 0 0 2 1 0];\n"))
    text = " | ".join(report.warnings)
    for word in ("line charging ignored", "phase shift ignored", "gencost ignored", "voltage-magnitude"):
        assert word in text


def test_angle_defaults():
    case, _ = import_matpower(_case_text([_branch(angmin=0, angmax=0)]), default_angle=0.5)
    assert (case.edges[0].theta_min, case.edges[0].theta_max) == (-0.5, 0.5)
    case, _ = import_matpower(_case_text([_branch(angmin=-360, angmax=360)]), default_angle=0.4)
    assert (case.edges[0].theta_min, case.edges[0].theta_max) == (-0.4, 0.4)
    case, _ = import_matpower(_case_text([_branch(angmin=-30, angmax=20)]))
    assert case.edges[0].theta_min == pytest.approx(-math.pi / 6)
    assert case.edges[0].theta_max == pytest.approx(math.radians(20))


def test_out_of_service_branch_is_skipped_and_breaks_tree():
    _, report = import_matpower(_case_text([_branch(status=0)]))
    assert not report.ok
    assert any(rule == "not a tree" for rule, _, _ in report.violations)


def test_parse_errors():
    with pytest.raises(ParseError):
        import_matpower("mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0];\n")
    with pytest.raises(ParseError):
        import_matpower(_case_text([_branch(r=0.0, x=0.0)]))
    with pytest.raises(ParseError):
        import_matpower(_case_text([_branch()], gen_rows=[[9, 0, 0, 1, -1, 1, 100, 1, 1, 0]]))
    with pytest.raises(ParseError):
        import_matpower(_case_text([_branch()]).replace("0.03", "abc", 1))


def test_comments_are_stripped():
    text = "% a comment with mpc.bus = [ 9 9 ];\n" + _case_text([_branch()])
    case, report = import_matpower(text)
    assert case.n_buses == 2 and report.ok


def test_synthetic_feeder_imports_as_tree():
    case, report = import_matpower(synthetic_feeder_matpower(40, seed=3), load_tolerance=1e-3)
    assert report.ok
    assert case.n_buses == 40 and case.n_edges == 39


def test_injections_match_complex_power_flow():
    """Per-branch AC power with |V| = 1, evaluated in complex arithmetic."""
    rng = np.random.default_rng(7)
    for _ in range(20):
        r, x = rng.uniform(0.001, 0.1), rng.uniform(0.001, 0.1)
        theta = rng.uniform(-1.0, 1.0)
        case, _ = import_matpower(_case_text([_branch(r=r, x=x)]))
        y = 1.0 / complex(r, x)
        v1, v2 = 1.0 + 0j, complex(math.cos(-theta), math.sin(-theta))
        s1 = v1 * np.conj(y * (v1 - v2))
        s2 = v2 * np.conj(y * (v2 - v1))
        p, q = injections(case, [math.sin(theta)])
        np.testing.assert_allclose(p, [s1.real, s2.real], rtol=0, atol=1e-12 * max(1, abs(y)))
        np.testing.assert_allclose(q, [s1.imag, s2.imag], rtol=0, atol=1e-12 * max(1, abs(y)))
