"""Fixed-step time-domain loop coupling the controllers to the network.

Each step solves the algebraic star network at the controllers' current
voltage references, feeds every controller its own terminal powers, and
advances all controllers by dt.  Controllers never see each other, only
the network couples them.

The logged time series is self-consistent row by row: re-solving the
network from a row's (e_ref, delta_ref) columns and the load active at
that row's time reproduces the row's power and voltage columns exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from droopsim.droop import ControllerState, controller_step, initial_state
from droopsim.errors import (
    DegenerateNetworkError,
    InvalidParameterError,
    SimulationAbort,
)
from droopsim.powerflow import (
    LineModel,
    Phasor,
    SQRT3,
    solve_star_network,
)
from droopsim.scenario import Scenario, validate_scenario
from droopsim.waveform import synth_three_phase

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SimState:
    """Snapshot of the whole plant between steps."""

    t: float
    controllers: tuple
    v_pcc: Phasor
    last_solution: object = None


@dataclass
class TimeSeries:
    """Per-step log.

    Column layout: t_s, then for each inverter i the five columns
    p_out_w_i, q_out_var_i, e_ref_v_i, delta_ref_rad_i, f_meas_hz_i,
    then v_pcc_rms_ll_v, load_p_w, load_q_var.
    """

    n_inverters: int
    rows: list

    @property
    def column_names(self):
        names = ["t_s"]
        for i in range(1, self.n_inverters + 1):
            names += [f"p_out_w_{i}", f"q_out_var_{i}", f"e_ref_v_{i}",
                      f"delta_ref_rad_{i}", f"f_meas_hz_{i}"]
        names += ["v_pcc_rms_ll_v", "load_p_w", "load_q_var"]
        return names

    def column(self, name: str):
        idx = self.column_names.index(name)
        return [row[idx] for row in self.rows]


def apply_events(schedule, t: float):
    """Active load at time t: the entry with the largest t_start <= t.

    Intervals are closed on the left, so querying exactly at a switch
    time returns the new load.
    """
    if len(schedule) == 0:
        raise InvalidParameterError("empty load schedule")
    if t < schedule[0][0]:
        raise InvalidParameterError(
            f"t = {t} is before the first load entry at {schedule[0][0]}")
    active = schedule[0][1]
    for t_start, load in schedule:
        if t_start <= t:
            active = load
        else:
            break
    return active


def emf_phasor(ctrl: ControllerState) -> Phasor:
    """Line-to-neutral RMS phasor behind the line for one controller."""
    return Phasor.from_polar(ctrl.e_ref / SQRT2, ctrl.delta_ref)


def network_inputs(sc: Scenario, controllers):
    """EMF and line lists for the star solve, grid branch appended last."""
    emfs = [emf_phasor(c) for c in controllers]
    lines = [inv.line for inv in sc.inverters]
    if sc.mode == "grid_connected":
        emfs.append(Phasor.from_polar(sc.v_nominal_ll / SQRT3, 0.0))
        lines.append(LineModel(r_ohm=0.0, x_ohm=sc.grid_x_ohm))
    return emfs, lines


def solve_at(sc: Scenario, controllers, t: float):
    """Network solution for the given controller refs and the load at t."""
    from droopsim.powerflow import load_admittance

    load = apply_events(sc.schedule, t)
    emfs, lines = network_inputs(sc, controllers)
    try:
        sol = solve_star_network(emfs, lines, load_admittance(load))
    except DegenerateNetworkError as exc:
        raise SimulationAbort(f"network solve failed: {exc}", t)
    return sol


def step(state: SimState, sc: Scenario) -> SimState:
    """Advance the whole plant by one dt."""
    sol = state.last_solution
    if sol is None:
        sol = solve_at(sc, state.controllers, state.t)

    grid_f = sc.frequency if sc.mode == "grid_connected" else None
    new_controllers = []
    for i, (inv, ctrl) in enumerate(zip(sc.inverters, state.controllers)):
        p_out, q_out = sol.s_out[i]
        # The restoration layer's voltage input: islanded controllers
        # regulate their own magnitude reading to the setpoint, grid-tied
        # ones see the stiff grid, so in both cases the signal is the
        # nominal voltage and the reactive reference stays pinned to q0.
        v_meas = inv.setpoints.v0 if grid_f is None else sc.v_nominal_ll
        nxt = controller_step(ctrl, p_out, q_out, v_meas, inv.gains,
                              inv.setpoints, sc.dt_s, sc.tau_s,
                              grid_frequency=grid_f)
        if not (math.isfinite(nxt.delta_ref) and math.isfinite(nxt.e_ref)
                and math.isfinite(nxt.p_filt) and math.isfinite(nxt.q_filt)
                and math.isfinite(nxt.f_meas)):
            raise SimulationAbort(
                f"inverter {i + 1} controller state went non-finite", state.t)
        if nxt.e_ref <= 0.0:
            raise SimulationAbort(
                f"inverter {i + 1} amplitude reference collapsed to "
                f"{nxt.e_ref}", state.t)
        new_controllers.append(nxt)

    # advance on the exact time grid k * dt so load-switch times are hit
    # exactly instead of drifting by accumulated rounding
    k_next = int(round(state.t / sc.dt_s)) + 1
    t_next = k_next * sc.dt_s
    sol_next = solve_at(sc, new_controllers, t_next)
    return SimState(t=t_next, controllers=tuple(new_controllers),
                    v_pcc=sol_next.v_pcc, last_solution=sol_next)


def initial_sim_state(sc: Scenario) -> SimState:
    controllers = tuple(initial_state(inv.setpoints) for inv in sc.inverters)
    sol = solve_at(sc, controllers, 0.0)
    return SimState(t=0.0, controllers=controllers, v_pcc=sol.v_pcc,
                    last_solution=sol)


def resolve_setpoints(sc: Scenario) -> Scenario:
    """Scenario with (delta0, e0) replaced by calibrated values.

    Calibration solves for the EMF angles and amplitudes that deliver
    exactly (p0, q0) per inverter against a stiff reference at nominal
    voltage, with the t = 0 load attached.  With calibration off the
    configured (delta0_rad, e0_v) values are used as-is.
    """
    if not sc.calibrate:
        return sc
    from droopsim.oracle import calibrate_setpoints

    cal = calibrate_setpoints(sc)
    inverters = []
    for inv, (delta0, e0) in zip(sc.inverters, cal):
        sp = replace(inv.setpoints, delta0=delta0, e0=e0)
        inverters.append(replace(inv, setpoints=sp))
    return replace(sc, inverters=tuple(inverters))


def _log_row(state: SimState, sol, n_inv: int):
    row = [state.t]
    for i in range(n_inv):
        ctrl = state.controllers[i]
        p_out, q_out = sol.s_out[i]
        row += [p_out, q_out, ctrl.e_ref, ctrl.delta_ref, ctrl.f_meas]
    row += [sol.v_pcc.mag * SQRT3, sol.s_load[0], sol.s_load[1]]
    return row


def run(sc: Scenario, calibrated: bool = False) -> TimeSeries:
    """Run a scenario from t = 0 to t_end and return the logged series.

    Setpoint calibration is applied first unless the scenario disables
    it or the caller says it already happened.  A non-finite state or a
    degenerate network aborts with the simulation time in the message.
    """
    validate_scenario(sc)
    if not calibrated:
        sc = resolve_setpoints(sc)

    n_steps = int(round(sc.t_end_s / sc.dt_s))
    n_inv = len(sc.inverters)
    state = initial_sim_state(sc)
    ts = TimeSeries(n_inverters=n_inv, rows=[])

    for k in range(n_steps + 1):
        if k % sc.log_decimation == 0:
            ts.rows.append(_log_row(state, state.last_solution, n_inv))
        if k == n_steps:
            break
        state = step(state, sc)
    return ts


def final_state(sc: Scenario, calibrated: bool = False) -> SimState:
    """Run like :func:`run` but return the end state instead of the log."""
    validate_scenario(sc)
    if not calibrated:
        sc = resolve_setpoints(sc)
    n_steps = int(round(sc.t_end_s / sc.dt_s))
    state = initial_sim_state(sc)
    for _ in range(n_steps):
        state = step(state, sc)
    return state


def write_timeseries_csv(ts: TimeSeries, path: str):
    """Write the log as CSV: LF lines, '.' decimals, shortest round-trip
    float formatting, so identical runs give byte-identical files."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(ts.column_names) + "\n")
        for row in ts.rows:
            fh.write(",".join(repr(v) for v in row) + "\n")


def read_timeseries_csv(path: str) -> TimeSeries:
    """Parse a CSV written by :func:`write_timeseries_csv`."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise InvalidParameterError(f"{path}: empty CSV")
    header = lines[0].split(",")
    extra = len(header) - 4
    if extra < 5 or extra % 5 != 0:
        raise InvalidParameterError(
            f"{path}: header does not look like a simulation log "
            f"({len(header)} columns)")
    n_inv = extra // 5
    expected = TimeSeries(n_inverters=n_inv, rows=[]).column_names
    if header != expected:
        raise InvalidParameterError(
            f"{path}: unexpected header {header[:4]}...")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise InvalidParameterError(
                f"{path}:{lineno}: expected {len(header)} fields, got "
                f"{len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise InvalidParameterError(
                f"{path}:{lineno}: non-numeric field")
    if not rows:
        raise InvalidParameterError(f"{path}: no data rows")
    return TimeSeries(n_inverters=n_inv, rows=rows)


@dataclass(frozen=True)
class SegmentSummary:
    t_start: float
    t_end: float
    settle_s: float          # time from segment start into the 2% band
    final_p_w: tuple         # per-inverter P at segment end
    final_q_var: tuple
    final_v_pcc_ll: float


def summarize(ts: TimeSeries, sc: Scenario, band: float = 0.02):
    """Per-segment steady states and settling times from a logged run.

    Settling is measured per load segment: the first logged time after
    which every inverter's active power stays within ``band`` of its
    value at the segment end.  Returns (segments, min PCC voltage).
    """
    times = [row[0] for row in ts.rows]
    v_col = ts.column("v_pcc_rms_ll_v")
    boundaries = [t for t, _ in sc.schedule] + [math.inf]
    segments = []
    for si in range(len(sc.schedule)):
        t_lo, t_hi = boundaries[si], boundaries[si + 1]
        idx = [i for i, t in enumerate(times) if t_lo <= t < t_hi]
        if not idx:
            continue
        last = idx[-1]
        finals_p = []
        finals_q = []
        for inv in range(1, ts.n_inverters + 1):
            finals_p.append(ts.rows[last][ts.column_names.index(
                f"p_out_w_{inv}")])
            finals_q.append(ts.rows[last][ts.column_names.index(
                f"q_out_var_{inv}")])
        # walk backward to the last out-of-band sample
        settle_idx = idx[0]
        for i in reversed(idx):
            out = False
            for inv in range(ts.n_inverters):
                p = ts.rows[i][1 + 5 * inv]
                ref = max(abs(finals_p[inv]), 1e-9)
                if abs(p - finals_p[inv]) > band * ref:
                    out = True
                    break
            if out:
                settle_idx = min(i + 1, last)
                break
        segments.append(SegmentSummary(
            t_start=times[idx[0]],
            t_end=times[last],
            settle_s=times[settle_idx] - t_lo,
            final_p_w=tuple(finals_p),
            final_q_var=tuple(finals_q),
            final_v_pcc_ll=v_col[last],
        ))
    return segments, min(v_col)


def write_waveform_csv(ts: TimeSeries, inverter: int, path: str,
                       f_nominal: float, phase_order: str = "acb",
                       samples_per_cycle: int = 64):
    """Instantaneous three-phase voltages for one inverter.

    The phasor log is zero-order-held between rows and rendered against
    a nominal-frequency carrier at ``samples_per_cycle`` points per
    cycle.  Columns: t_s, va_v, vb_v, vc_v.
    """
    if not (1 <= inverter <= ts.n_inverters):
        raise InvalidParameterError(
            f"inverter index {inverter} out of range 1..{ts.n_inverters}")
    if samples_per_cycle < 2:
        raise InvalidParameterError(
            f"need at least 2 samples per cycle, got {samples_per_cycle}")
    e_col = ts.column(f"e_ref_v_{inverter}")
    d_col = ts.column(f"delta_ref_rad_{inverter}")
    times = [row[0] for row in ts.rows]
    t_end = times[-1]
    dt_w = 1.0 / (f_nominal * samples_per_cycle)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t_s,va_v,vb_v,vc_v\n")
        j = 0
        k = 0
        while True:
            t = k * dt_w
            if t > t_end:
                break
            while j + 1 < len(times) and times[j + 1] <= t:
                j += 1
            sample = synth_three_phase(e_col[j], d_col[j], f_nominal, t,
                                       phase_order=phase_order)
            fh.write(f"{t!r},{sample.va!r},{sample.vb!r},{sample.vc!r}\n")
            k += 1
