"""Time-domain loop: events, stepping, logging, CSV, and summaries."""

import math
import os
from dataclasses import replace

import pytest

from droopsim.droop import (
    Setpoints,
    controller_step,
    default_gains,
    initial_state,
    nominal_peak_amplitude,
)
from droopsim.errors import InvalidParameterError, SimulationAbort
from droopsim.powerflow import LineModel, LoadModel
from droopsim.scenario import InverterConfig, Scenario
from droopsim.simulator import (
    apply_events,
    emf_phasor,
    final_state,
    initial_sim_state,
    read_timeseries_csv,
    run,
    solve_at,
    step,
    summarize,
    write_timeseries_csv,
    write_waveform_csv,
)
from droopsim.waveform import synth_three_phase

V_NOM = 400.0
E_NOM = nominal_peak_amplitude(V_NOM)


def make_inverter(p0=5000.0, q0=2500.0, delta0=0.0, e0=E_NOM,
                  r=0.5, x=2.5, p_rated=10000.0, q_rated=5000.0):
    return InverterConfig(
        setpoints=Setpoints(f0=60.0, v0=V_NOM, p0=p0, q0=q0,
                            delta0=delta0, e0=e0),
        gains=default_gains(p_rated, q_rated, V_NOM, x),
        line=LineModel(r_ohm=r, x_ohm=x),
        p_rated_w=p_rated,
        q_rated_var=q_rated,
    )


def make_scenario(n_inv=2, schedule=None, mode="islanded", t_end=1.0,
                  calibrate=False, **inv_kw):
    if schedule is None:
        schedule = ((0.0, LoadModel(10000.0, 5000.0, V_NOM)),)
    return Scenario(
        v_nominal_ll=V_NOM,
        frequency=60.0,
        inverters=tuple(make_inverter(**inv_kw) for _ in range(n_inv)),
        schedule=tuple(schedule),
        mode=mode,
        dt_s=0.001,
        t_end_s=t_end,
        tau_s=0.1,
        calibrate=calibrate,
    )


TABLE_SCHEDULE = (
    (0.0, LoadModel(10000.0, 5000.0, V_NOM)),
    (1.0, LoadModel(20000.0, 10000.0, V_NOM)),
    (2.0, LoadModel(10000.0, 5000.0, V_NOM)),
)


def test_apply_events_single_entry():
    schedule = ((0.0, LoadModel(10000.0, 5000.0, V_NOM)),)
    assert apply_events(schedule, 0.0).p_rated_w == 10000.0
    assert apply_events(schedule, 99.0).p_rated_w == 10000.0


def test_apply_events_step_windows():
    assert apply_events(TABLE_SCHEDULE, 0.5).p_rated_w == 10000.0
    assert apply_events(TABLE_SCHEDULE, 1.5).p_rated_w == 20000.0
    assert apply_events(TABLE_SCHEDULE, 2.5).p_rated_w == 10000.0
    # boundaries are closed on the left: the new load applies exactly at
    # its start time
    assert apply_events(TABLE_SCHEDULE, 1.0).p_rated_w == 20000.0
    assert apply_events(TABLE_SCHEDULE, 2.0).p_rated_w == 10000.0
    assert apply_events(TABLE_SCHEDULE, 0.999).p_rated_w == 10000.0


def test_apply_events_rejects_early_query():
    with pytest.raises(InvalidParameterError):
        apply_events(TABLE_SCHEDULE, -0.001)
    with pytest.raises(InvalidParameterError):
        apply_events((), 0.0)


def test_zero_load_equilibrium_is_invariant():
    # an unloaded inverter at its setpoint must not move at all
    sc = make_scenario(n_inv=1, p0=0.0, q0=0.0,
                       schedule=((0.0, LoadModel(0.0, 0.0, V_NOM)),))
    state = initial_sim_state(sc)
    first = state.controllers[0]
    for _ in range(50):
        state = step(state, sc)
    last = state.controllers[0]
    assert abs(last.delta_ref - first.delta_ref) < 1e-12
    assert abs(last.e_ref - first.e_ref) < 1e-12
    assert abs(last.p_filt - first.p_filt) < 1e-12
    assert abs(last.q_filt - first.q_filt) < 1e-12


def test_one_step_matches_manual_composition():
    sc = make_scenario()
    state0 = initial_sim_state(sc)
    sol = solve_at(sc, state0.controllers, 0.0)
    expected = []
    for inv, ctrl, s in zip(sc.inverters, state0.controllers, sol.s_out):
        expected.append(controller_step(
            ctrl, s[0], s[1], inv.setpoints.v0, inv.gains, inv.setpoints,
            sc.dt_s, sc.tau_s))
    state1 = step(state0, sc)
    assert state1.t == sc.dt_s
    for got, want in zip(state1.controllers, expected):
        assert got == want
    # the carried solution corresponds to the new controller refs
    check = solve_at(sc, state1.controllers, state1.t)
    assert abs(complex(check.v_pcc) - complex(state1.v_pcc)) < 1e-12


def test_run_is_deterministic():
    sc = make_scenario(t_end=0.2)
    a = run(sc)
    b = run(sc)
    assert a.rows == b.rows


def test_symmetric_inverters_share_exactly():
    sc = make_scenario(t_end=0.3, schedule=TABLE_SCHEDULE)
    ts = run(sc)
    for row in ts.rows:
        p1, p2 = row[1], row[6]
        assert abs(p1 - p2) < 1e-9 * (abs(p1) + abs(p2))


def test_t_end_zero_gives_single_row():
    sc = make_scenario(t_end=0.0)
    ts = run(sc)
    assert len(ts.rows) == 1
    assert ts.rows[0][0] == 0.0


def test_log_decimation_row_count():
    sc = replace(make_scenario(t_end=0.1), log_decimation=10)
    ts = run(sc)
    # steps 0..100, logged every 10th
    assert len(ts.rows) == 11
    assert ts.rows[1][0] == 0.01


def test_final_steady_state_is_dt_independent():
    coarse = make_scenario(t_end=1.5)
    fine = replace(coarse, dt_s=0.0005)
    p_coarse = final_state(coarse).last_solution.s_out[0][0]
    p_fine = final_state(fine).last_solution.s_out[0][0]
    assert abs(p_coarse - p_fine) < 0.001 * abs(p_coarse)


def test_timeseries_csv_round_trip(tmp_path):
    sc = make_scenario(t_end=0.05)
    ts = run(sc)
    path = os.path.join(tmp_path, "out.csv")
    write_timeseries_csv(ts, path)
    back = read_timeseries_csv(path)
    assert back.n_inverters == ts.n_inverters
    assert back.rows == ts.rows


def test_timeseries_csv_bytes_stable(tmp_path):
    sc = make_scenario(t_end=0.05)
    p1 = os.path.join(tmp_path, "a.csv")
    p2 = os.path.join(tmp_path, "b.csv")
    write_timeseries_csv(run(sc), p1)
    write_timeseries_csv(run(sc), p2)
    with open(p1, "rb") as fh:
        b1 = fh.read()
    with open(p2, "rb") as fh:
        b2 = fh.read()
    assert b1 == b2


def test_csv_reader_rejects_malformed(tmp_path):
    path = os.path.join(tmp_path, "bad.csv")
    with open(path, "w") as fh:
        fh.write("a,b,c\n1,2,3\n")
    with pytest.raises(InvalidParameterError):
        read_timeseries_csv(path)
    with open(path, "w") as fh:
        fh.write("")
    with pytest.raises(InvalidParameterError):
        read_timeseries_csv(path)


def test_csv_reader_rejects_short_row(tmp_path):
    sc = make_scenario(t_end=0.01)
    path = os.path.join(tmp_path, "out.csv")
    write_timeseries_csv(run(sc), path)
    with open(path, "a") as fh:
        fh.write("1.0,2.0\n")
    with pytest.raises(InvalidParameterError):
        read_timeseries_csv(path)


def test_waveform_csv(tmp_path):
    sc = make_scenario(t_end=0.05)
    ts = run(sc)
    path = os.path.join(tmp_path, "wf.csv")
    write_waveform_csv(ts, 1, path, sc.frequency,
                       phase_order=sc.phase_order)
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "t_s,va_v,vb_v,vc_v"
    # 64 samples per 60 Hz cycle across 0.05 s
    dt_w = 1.0 / (64 * 60.0)
    expected_rows = int(0.05 / dt_w) + 1
    assert len(lines) - 1 == expected_rows
    first = [float(v) for v in lines[1].split(",")]
    sample = synth_three_phase(ts.rows[0][3], ts.rows[0][4], 60.0, 0.0)
    assert abs(first[1] - sample.va) < 1e-9
    assert abs(first[2] - sample.vb) < 1e-9
    with pytest.raises(InvalidParameterError):
        write_waveform_csv(ts, 5, path, sc.frequency)


def test_abort_on_amplitude_collapse():
    sc = make_scenario(t_end=1.0)
    bad_gains = type(sc.inverters[0].gains)(
        k_pf=5e-5, k_qv=4e-3, k_fp=20000.0, k_vq=250.0,
        k_pdelta=4.6875e-06, k_qe=1.0)
    inv = InverterConfig(
        setpoints=sc.inverters[0].setpoints, gains=bad_gains,
        line=sc.inverters[0].line, p_rated_w=10000.0, q_rated_var=5000.0)
    sc = replace(sc, inverters=(inv, inv))
    with pytest.raises(SimulationAbort) as err:
        run(sc)
    assert "t = " in str(err.value)


def test_grid_connected_stays_at_setpoints():
    sc = make_scenario(mode="grid_connected", t_end=0.5, calibrate=True,
                       p0=4000.0, q0=1500.0,
                       schedule=((0.0, LoadModel(6000.0, 2500.0, V_NOM)),))
    state = final_state(sc)
    for i in range(2):
        p, q = state.last_solution.s_out[i]
        assert abs(p - 4000.0) < 1e-6 * 4000.0
        assert abs(q - 1500.0) < 1e-6 * 1500.0


def test_emf_phasor_is_rms():
    ctrl = initial_state(Setpoints(f0=60.0, v0=V_NOM, p0=0.0, q0=0.0,
                                   delta0=0.25, e0=E_NOM))
    ph = emf_phasor(ctrl)
    assert abs(ph.mag - E_NOM / math.sqrt(2.0)) < 1e-12
    assert abs(ph.angle - 0.25) < 1e-12


def test_summarize_reports_segments():
    sc = make_scenario(t_end=3.0, schedule=TABLE_SCHEDULE, calibrate=True)
    ts = run(sc)
    segments, v_min = summarize(ts, sc)
    assert len(segments) == 3
    assert segments[1].final_p_w[0] > segments[0].final_p_w[0]
    assert segments[1].final_v_pcc_ll < segments[0].final_v_pcc_ll
    assert v_min <= segments[1].final_v_pcc_ll
    assert 0.0 < segments[1].settle_s < 1.0
