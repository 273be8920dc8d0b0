import numpy as np
import pytest

from hypertwin.engine import (IntegrationConfig, SimulationDivergence, SimulationTrace, WindowError,
                              last_beat, simulate)
from hypertwin.model import stressed_volume
from hypertwin.observables import compute_outputs
from hypertwin.params import VariantError
from hypertwin.presets import healthy, initial_state


def test_healthy_nc_converges_within_200_beats(nc_trace):
    assert nc_trace.converged
    assert nc_trace.n_beats <= 200


def test_healthy_c_converges(c_trace):
    assert c_trace.converged
    assert c_trace.substeps > 1  # stiff capillary bed needs sub-stepping


def test_config_validation():
    with pytest.raises(ValueError):
        IntegrationConfig(dt=0)
    with pytest.raises(ValueError):
        IntegrationConfig(max_heartbeats=1)
    with pytest.raises(ValueError):
        IntegrationConfig(convergence_tol=0)


def test_unforced_model_settles_to_equilibrium():
    p = healthy("NC").with_values({f"chambers.{c}.Ea": 0.0 for c in ("LA", "LV", "RA", "RV")})
    tr = simulate(p, cfg=IntegrationConfig(max_heartbeats=300))
    assert tr.converged
    b = last_beat(tr)
    for q in ("Q_MV", "Q_AV", "Q_TV", "Q_PV"):
        assert np.ptp(b[q]) < 1.0  # no pulsatility left
    leak = max(abs(b["Q_AV"]).max(), abs(b["Q_PV"]).max())
    assert leak < 200.0


def test_halving_dt_changes_sap_max_by_less_than_a_tenth_percent(nc_params, nc_report):
    fine = simulate(nc_params, cfg=IntegrationConfig(dt=5e-4))
    rep = compute_outputs(fine, nc_params)
    assert abs(rep["SAP_max"] / nc_report["SAP_max"] - 1) < 1e-3


def test_last_beat_window_and_idempotence(nc_params):
    tr = simulate(nc_params, cfg=IntegrationConfig(heartbeats_to_keep=5, min_heartbeats=5))
    assert tr.n_kept_beats == 5
    b = last_beat(tr)
    spb = round(nc_params.T_HB / tr.dt)
    assert len(b.time) == spb + 1
    assert b.time[-1] - b.time[0] == pytest.approx(nc_params.T_HB)
    bb = last_beat(b)
    np.testing.assert_array_equal(bb.time, b.time)
    np.testing.assert_array_equal(bb.states, b.states)


def test_last_beat_on_empty_trace_raises(nc_trace):
    from dataclasses import replace
    empty = replace(nc_trace, beat_starts=np.array([0]))
    with pytest.raises(WindowError):
        last_beat(empty)


def test_converged_window_is_periodic(nc_trace):
    b = last_beat(nc_trace)
    first, last = b.states[0], b.states[-1]
    assert np.all(np.abs(last - first) / (np.abs(last) + 1) < 1e-3)


def test_beat_boundaries_align_with_heart_period(c_trace):
    T, dt = c_trace.T_HB, c_trace.dt
    for k in c_trace.beat_starts:
        t = c_trace.time[k]
        m = round(t / T)
        assert abs(t - m * T) < dt / 2


def test_identical_inputs_give_identical_traces(nc_params):
    a = simulate(nc_params)
    b = simulate(nc_params)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.algebraic, b.algebraic)


@pytest.mark.parametrize("variant", ["NC", "C"])
def test_stressed_volume_drift_per_beat(variant):
    p = healthy(variant)
    tr = simulate(p, cfg=IntegrationConfig(heartbeats_to_keep=3, min_heartbeats=3))
    sv = stressed_volume(p, tr.states)
    drift = np.abs(sv[tr.beat_starts[1:]] - sv[tr.beat_starts[:-1]]) / abs(sv[0])
    assert drift.max() < 1e-6


def test_trace_csv_round_trip(nc_trace):
    text = nc_trace.to_csv()
    back = SimulationTrace.from_csv(text, nc_trace.T_HB)
    assert back.to_csv() == text
    np.testing.assert_array_equal(back.states, nc_trace.states)


def test_wrong_initial_state_dimension():
    with pytest.raises(VariantError):
        simulate(healthy("C"), initial_state("NC"))


def test_divergence_names_component_and_time():
    # forcing a single RK4 substep far outside the stability interval blows up
    cfg = IntegrationConfig(substeps=1, dt=1e-3)
    with pytest.raises(SimulationDivergence) as err:
        simulate(healthy("C"), cfg=cfg)
    assert err.value.component in ("V_LA", "V_LV", "V_RA", "V_RV", "p_AR_SYS", "p_VEN_SYS", "p_AR_PUL",
                                   "p_VEN_PUL", "Q_AR_SYS", "Q_VEN_SYS", "Q_AR_PUL", "Q_VEN_PUL",
                                   "p_C_SYS", "p_C_PUL")
    assert err.value.time >= 0
