import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypertwin.engine import last_beat
from hypertwin.model import state_names
from hypertwin.observables import (HEALTHY_RANGES, BodyMetrics, MissingVariableError, NonPeriodicTraceError,
                                   OutputReport, SchemaError, compute_outputs, output_names,
                                   polygon_area, pv_loop_area, range_check)


def _with_column(trace, name, values):
    """Copy of the last beat of ``trace`` with one state column replaced."""
    b = last_beat(trace)
    states = b.states.copy()
    states[:, state_names(b.variant).index(name)] = values
    return replace(b, states=states)


def test_output_counts(nc_report, c_report):
    assert len(nc_report) == 45 == len(output_names("NC"))
    assert len(c_report) == 46 == len(output_names("C"))
    assert list(c_report)[-1] == "S_f"


def test_nc_report_has_no_shunt_fraction(nc_report):
    with pytest.raises(MissingVariableError):
        nc_report["S_f"]


def test_healthy_shunt_fraction_in_range(c_report):
    assert 0.0 <= c_report["S_f"] <= 0.05


def test_rectangular_loop_area():
    V = [50, 150, 150, 50]
    p = [10, 10, 110, 110]
    assert abs(polygon_area(V, p)) / 1000 == pytest.approx(10.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 40), st.integers(0, 1000), st.integers(0, 2**32 - 1))
def test_polygon_area_rotation_and_reversal(n, shift, seed):
    rng = np.random.default_rng(seed)
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    r = rng.uniform(0.5, 2.0, n)
    x, y = r * np.cos(ang), r * np.sin(ang)
    a = polygon_area(x, y)
    k = shift % n
    assert polygon_area(np.roll(x, k), np.roll(y, k)) == pytest.approx(a, rel=1e-12, abs=1e-12)
    assert polygon_area(x[::-1], y[::-1]) == pytest.approx(-a, rel=1e-12, abs=1e-12)


def test_work_is_loop_area(nc_trace, nc_report):
    assert nc_report["LV_SW"] == pytest.approx(pv_loop_area(nc_trace, "LV"))
    assert nc_report["LV_SW"] > nc_report["RV_SW"] > 0


def test_open_loop_is_rejected(nc_trace):
    b = last_beat(nc_trace)
    V = b["V_LV"].copy()
    V[-1] += 0.5 * np.ptp(V)
    with pytest.raises(NonPeriodicTraceError):
        pv_loop_area(_with_column(nc_trace, "V_LV", V), "LV")


def test_constant_arterial_pressure(nc_trace, nc_params):
    tr = _with_column(nc_trace, "p_AR_SYS", np.full(len(last_beat(nc_trace).time), 100.0))
    rep = compute_outputs(tr, nc_params)
    assert rep["SAP_max"] == rep["SAP_min"] == 100.0
    assert rep["SAP_mean"] == pytest.approx(100.0)


def test_ejection_fraction_of_halving_volume(nc_trace, nc_params):
    b = last_beat(nc_trace)
    phase = 2 * np.pi * (b.time - b.time[0]) / nc_params.T_HB
    V = 75 + 25 * np.cos(phase)  # 100 down to 50 and back
    rep = compute_outputs(_with_column(nc_trace, "V_LV", V), nc_params)
    assert rep["LV_EF"] == pytest.approx(50.0)


@pytest.mark.parametrize("which", ["nc", "c"])
def test_volume_identities(which, request):
    rep = request.getfixturevalue(f"{which}_report")
    for v in ("LV", "RV"):
        assert rep[f"{v}_ISV"] == pytest.approx(rep[f"{v}_IEDV"] - rep[f"{v}_IESV"], rel=1e-9)
        assert rep[f"{v}_EF"] * rep[f"{v}_IEDV"] == pytest.approx(100 * rep[f"{v}_ISV"], rel=1e-9)
        assert 0 <= rep[f"{v}_EF"] <= 100
    for a in ("LA", "RA"):
        assert 0 <= rep[f"{a}_TotEF"] <= 100
        assert rep[f"{a}_IVmin"] <= rep[f"{a}_IVpreAC"] <= rep[f"{a}_IVmax"]
    assert rep["max_grad_p_rAV"] >= 0


def test_indexed_volumes_scale_with_body_size(nc_trace, nc_params, nc_report):
    rep = compute_outputs(nc_trace, nc_params, BodyMetrics(nc_report.bsa * 2))
    assert rep["LV_IEDV"] == pytest.approx(nc_report["LV_IEDV"] / 2)
    assert rep["LV_EF"] == pytest.approx(nc_report["LV_EF"])


def test_body_metrics_validation():
    with pytest.raises(ValueError):
        BodyMetrics(0.0)


def test_range_check_flags_high_systolic_pressure(nc_report):
    values = dict(nc_report)
    values["SAP_max"] = 150.0
    verdicts, all_in = range_check(OutputReport("NC", values))
    assert verdicts["SAP_max"] == "above"
    assert not all_in


def test_range_check_name_mismatch():
    with pytest.raises(SchemaError):
        range_check({"foo": 1.0})


def test_ranges_are_ordered():
    assert all(r.lo <= r.hi for r in HEALTHY_RANGES.values())


def test_report_json_round_trip(c_report):
    back = OutputReport.from_json(c_report.to_json())
    assert back.to_dict() == c_report.to_dict()
    assert list(json.loads(c_report.to_json())["outputs"]) == list(output_names("C"))


def test_range_check_marks_nan_as_undefined(nc_report):
    values = dict(nc_report)
    values["RV_EF"] = float("nan")
    verdicts, all_in = range_check(OutputReport("NC", values))
    assert verdicts["RV_EF"] == "undefined"
    assert not all_in
