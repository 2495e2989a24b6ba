"""Independent steady-state analysis of the droop-plus-network loop.

This module never integrates in time.  It treats the controller's own
update equations as an algebraic fixed-point problem

    delta_i = delta0_i - k_pdelta_i * (p0_i - P_i(delta, e))
    e_i     = e0_i     - k_qe_i     * (q0_i - Q_i(delta, e))

(the restoration layer collapses to p_ref = p0, q_ref = q0 at steady
state, because the angle rate is zero and the voltage input sits at
nominal) and solves it by damped fixed-point iteration.  That makes it
a genuinely independent check on the time-domain simulator: same
equations, entirely different solution path.

Also here: Newton calibration of (delta0, e0) against a stiff reference
so a scenario starts at its intended operating point, and a loop-gain
estimate that predicts whether the fixed point is attracting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from droopsim.errors import (
    DivergenceError,
    InfeasibleTargetError,
    InvalidParameterError,
)
from droopsim.powerflow import (
    LineModel,
    Phasor,
    SQRT3,
    complex_line_flow,
    load_admittance,
    solve_star_network,
)
from droopsim.scenario import Scenario

SQRT2 = math.sqrt(2.0)

FD_STEP = 1e-6          # finite-difference step, radians or volts
NEWTON_MAX_ITER = 50
NEWTON_RTOL = 1e-9
FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 10000
DAMPING = 0.5
SYMMETRY_SEED = 1e-3    # start offset exciting inter-inverter modes


@dataclass(frozen=True)
class SteadyState:
    """Converged operating point of every inverter plus the bus voltage.

    Angles in radians, amplitudes in per-phase peak volts, powers as
    three-phase totals.  ``residual`` is the largest remaining mismatch
    of the fixed-point equations at the returned point.
    """

    deltas: tuple
    e_refs: tuple
    p_out: tuple
    q_out: tuple
    v_pcc: Phasor
    residual: float
    iterations: int


@dataclass(frozen=True)
class StabilityReport:
    """Loop gain k_pdelta * dP/ddelta per inverter at an operating point.

    Gains below 1 mean the droop update is a contraction there and the
    fixed point attracts; at 1 the loop is marginal.
    """

    loop_gains: tuple
    stable: bool


def _network_parts(sc: Scenario, load):
    """Line list and load admittance, grid branch appended when tied."""
    lines = [inv.line for inv in sc.inverters]
    grid_emf = None
    if sc.mode == "grid_connected":
        lines = lines + [LineModel(r_ohm=0.0, x_ohm=sc.grid_x_ohm)]
        grid_emf = Phasor.from_polar(sc.v_nominal_ll / SQRT3, 0.0)
    return lines, grid_emf, load_admittance(load)


def _solve(sc: Scenario, deltas, e_refs, lines, grid_emf, load_y):
    emfs = [Phasor.from_polar(e / SQRT2, d) for d, e in zip(deltas, e_refs)]
    if grid_emf is not None:
        emfs = emfs + [grid_emf]
    return solve_star_network(emfs, lines, load_y)


def steady_state_solve(sc: Scenario, load=None, damping: float = DAMPING,
                       tol: float = FIXED_POINT_TOL,
                       max_iter: int = FIXED_POINT_MAX_ITER) -> SteadyState:
    """Fixed point of the droop equations against the solved network.

    Parameters
    ----------
    sc : Scenario
        Inverters, gains, setpoints, and mode.  Iteration starts from
        each inverter's (delta0, e0).
    load : LoadModel, optional
        Load to solve against; defaults to the scenario's t = 0 load.
    damping : float
        Fraction of the raw update applied per iteration.  1.0 is the
        bare controller map; 0.5 (default) also converges in mildly
        unstable-looking cases while leaving the fixed point unchanged.
    tol : float
        Convergence threshold on the largest raw equation mismatch.
    max_iter : int
        Iteration budget before declaring divergence.

    Raises
    ------
    DivergenceError
        If the mismatch is not below ``tol`` after ``max_iter`` rounds.
        The error carries a :class:`StabilityReport` evaluated at the
        starting point so the caller can tell "unstable operating
        point" from "slow convergence".

    Notes
    -----
    With two or more inverters the start is nudged by an alternating
    offset of ``SYMMETRY_SEED`` (radians, and relative on amplitude).
    A perfectly symmetric scenario otherwise produces bitwise-identical
    iterates for every inverter, and the inter-inverter mode that
    actually goes unstable above loop gain 1 would never be excited;
    the solve would then report convergence for gains that no physical
    (never exactly symmetric) system tolerates.  The offset decays when
    the fixed point is stable and leaves its location unchanged.
    """
    if load is None:
        load = sc.schedule[0][1]
    lines, grid_emf, load_y = _network_parts(sc, load)

    n = len(sc.inverters)
    deltas = np.array([inv.setpoints.delta0 for inv in sc.inverters])
    e_refs = np.array([inv.setpoints.e0 for inv in sc.inverters])
    if n > 1:
        signs = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n)])
        deltas = deltas + SYMMETRY_SEED * signs
        e_refs = e_refs * (1.0 + SYMMETRY_SEED * signs)
    k_pd = np.array([inv.gains.k_pdelta for inv in sc.inverters])
    k_qe = np.array([inv.gains.k_qe for inv in sc.inverters])
    p0 = np.array([inv.setpoints.p0 for inv in sc.inverters])
    q0 = np.array([inv.setpoints.q0 for inv in sc.inverters])
    d0 = np.array([inv.setpoints.delta0 for inv in sc.inverters])
    e0 = np.array([inv.setpoints.e0 for inv in sc.inverters])

    for it in range(1, max_iter + 1):
        sol = _solve(sc, deltas, e_refs, lines, grid_emf, load_y)
        p = np.array([sol.s_out[i][0] for i in range(n)])
        q = np.array([sol.s_out[i][1] for i in range(n)])
        g_delta = d0 - k_pd * (p0 - p)
        g_e = e0 - k_qe * (q0 - q)
        mismatch = max(np.max(np.abs(g_delta - deltas)),
                       np.max(np.abs(g_e - e_refs)))
        if mismatch < tol:
            return SteadyState(
                deltas=tuple(deltas.tolist()),
                e_refs=tuple(e_refs.tolist()),
                p_out=tuple(p.tolist()),
                q_out=tuple(q.tolist()),
                v_pcc=sol.v_pcc,
                residual=float(mismatch),
                iterations=it,
            )
        if not (np.all(np.isfinite(g_delta)) and np.all(np.isfinite(g_e))):
            break
        deltas = deltas + damping * (g_delta - deltas)
        e_refs = e_refs + damping * (g_e - e_refs)

    report = _margin_at(sc, tuple(d0.tolist()), tuple(e0.tolist()), load)
    raise DivergenceError(
        f"steady-state iteration did not converge within {max_iter} "
        f"iterations (last mismatch {mismatch:.3e}); loop gains at the "
        f"starting point: {[f'{g:.3f}' for g in report.loop_gains]}",
        report=report)


def _margin_at(sc: Scenario, deltas, e_refs, load) -> StabilityReport:
    """Loop gains with the bus voltage frozen at the operating point.

    The droop update sees the network through dP_i/ddelta_i.  Holding
    V_pcc fixed isolates the gain an individual controller experiences;
    it also matches the differential-mode eigenvalue of the coupled
    update closely, which is the mode that actually goes unstable.
    """
    lines, grid_emf, load_y = _network_parts(sc, load)
    sol = _solve(sc, deltas, e_refs, lines, grid_emf, load_y)
    v_pcc = sol.v_pcc

    gains = []
    for i, inv in enumerate(sc.inverters):
        e_rms = e_refs[i] / SQRT2
        hi = Phasor.from_polar(e_rms, deltas[i] + FD_STEP)
        lo = Phasor.from_polar(e_rms, deltas[i] - FD_STEP)
        p_hi, _ = complex_line_flow(hi, v_pcc, inv.line)
        p_lo, _ = complex_line_flow(lo, v_pcc, inv.line)
        slope = (p_hi - p_lo) / (2.0 * FD_STEP)
        gains.append(inv.gains.k_pdelta * slope)
    return StabilityReport(loop_gains=tuple(gains),
                           stable=all(g < 1.0 for g in gains))


def stability_margin(sc: Scenario, at: SteadyState,
                     load=None) -> StabilityReport:
    """Loop-gain report at a solved steady state (see :func:`_margin_at`)."""
    if load is None:
        load = sc.schedule[0][1]
    return _margin_at(sc, at.deltas, at.e_refs, load)


def calibrate_setpoints(sc: Scenario, targets=None):
    """Solve for (delta0, e0) that hit the power targets exactly.

    The network for calibration is every inverter plus a stiff source at
    nominal voltage behind the scenario's grid reactance, with the t = 0
    load attached.  The stiff source anchors the angle reference and
    absorbs the slack power, which is what makes an exact per-inverter
    (P, Q) assignment solvable; islanded scenarios use the same anchor
    as a commissioning reference and then drift slightly once the anchor
    is removed.

    Parameters
    ----------
    sc : Scenario
    targets : sequence of (P, Q), optional
        Per-inverter targets; defaults to each inverter's (p0, q0).

    Returns
    -------
    list of (delta0, e0)
        Angle in radians, amplitude in per-phase peak volts.

    Raises
    ------
    InfeasibleTargetError
        Singular Jacobian, an angle beyond pi/2, or no convergence.
    """
    n = len(sc.inverters)
    if targets is None:
        targets = [(inv.setpoints.p0, inv.setpoints.q0)
                   for inv in sc.inverters]
    if len(targets) != n:
        raise InfeasibleTargetError(
            f"got {len(targets)} targets for {n} inverters")

    lines = [inv.line for inv in sc.inverters] + [
        LineModel(r_ohm=0.0, x_ohm=sc.grid_x_ohm)]
    grid_emf = Phasor.from_polar(sc.v_nominal_ll / SQRT3, 0.0)
    load_y = load_admittance(sc.schedule[0][1])

    target_vec = np.array([v for pq in targets for v in pq])
    scale = np.array([max(math.hypot(*pq), 1.0) for pq in targets
                      for _ in range(2)])

    def residual(x):
        deltas = x[0::2]
        e_refs = x[1::2]
        emfs = [Phasor.from_polar(e / SQRT2, d)
                for d, e in zip(deltas, e_refs)] + [grid_emf]
        sol = solve_star_network(emfs, lines, load_y)
        out = np.empty(2 * n)
        for i in range(n):
            out[2 * i] = sol.s_out[i][0]
            out[2 * i + 1] = sol.s_out[i][1]
        return out - target_vec

    x = np.empty(2 * n)
    x[0::2] = 0.0
    x[1::2] = sc.v_nominal_ll / SQRT3 * SQRT2

    for _ in range(NEWTON_MAX_ITER):
        r = residual(x)
        if np.max(np.abs(r) / scale) < NEWTON_RTOL:
            return [(float(x[2 * i]), float(x[2 * i + 1])) for i in range(n)]
        jac = np.empty((2 * n, 2 * n))
        for j in range(2 * n):
            xp = x.copy()
            xm = x.copy()
            xp[j] += FD_STEP
            xm[j] -= FD_STEP
            jac[:, j] = (residual(xp) - residual(xm)) / (2.0 * FD_STEP)
        try:
            dx = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            raise InfeasibleTargetError(
                "calibration Jacobian is singular; targets cannot be "
                "assigned independently on this network")
        x = x - dx
        if np.max(np.abs(x[0::2])) > math.pi / 2.0:
            raise InfeasibleTargetError(
                "calibration pushed an angle beyond pi/2; target exceeds "
                "the line transfer limit")
        if np.any(x[1::2] <= 0.0):
            raise InfeasibleTargetError(
                "calibration collapsed an amplitude to zero or below")

    raise InfeasibleTargetError(
        f"calibration did not converge in {NEWTON_MAX_ITER} Newton steps")


@dataclass(frozen=True)
class SweepPoint:
    """One grid point of a parameter sweep.

    Steady-state fields are NaN when the fixed-point solve diverged;
    ``loop_gain`` is then evaluated at the starting point instead of the
    (unreachable) fixed point.
    """

    value: float
    converged: bool
    loop_gain: float
    p_out: tuple
    q_out: tuple
    v_pcc_ll: float


SWEEPABLE = ("k_pdelta", "k_qe", "tau_s", "line_x_ohm")


def _with_parameter(sc: Scenario, name: str, value: float) -> Scenario:
    if name == "tau_s":
        return replace(sc, tau_s=value)
    if name == "line_x_ohm":
        inverters = tuple(
            replace(inv, line=LineModel(r_ohm=inv.line.r_ohm, x_ohm=value))
            for inv in sc.inverters)
        return replace(sc, inverters=inverters)
    if name in ("k_pdelta", "k_qe"):
        inverters = tuple(
            replace(inv, gains=replace(inv.gains, **{name: value}))
            for inv in sc.inverters)
        return replace(sc, inverters=inverters)
    raise InvalidParameterError(
        f"parameter {name!r} is not sweepable; choose from {SWEEPABLE}")


def sweep_parameter(sc: Scenario, name: str, lo: float, hi: float,
                    steps: int):
    """Evaluate the steady-state oracle across a parameter grid.

    Applies ``name`` = value uniformly to every inverter (or the
    scenario for ``tau_s``), runs :func:`steady_state_solve` against the
    t = 0 load, and records the outcome.  Divergence is recorded, never
    raised, so the full stability boundary shows up in one table.
    """
    if name not in SWEEPABLE:
        raise InvalidParameterError(
            f"parameter {name!r} is not sweepable; choose from {SWEEPABLE}")
    if steps < 1:
        raise InvalidParameterError(f"steps must be >= 1, got {steps}")
    n = len(sc.inverters)
    nan_tuple = tuple([math.nan] * n)
    values = np.linspace(lo, hi, steps)
    points = []
    for value in values:
        mod = _with_parameter(sc, name, float(value))
        load = mod.schedule[0][1]
        try:
            ss = steady_state_solve(mod, load)
            report = _margin_at(mod, ss.deltas, ss.e_refs, load)
            points.append(SweepPoint(
                value=float(value),
                converged=True,
                loop_gain=max(report.loop_gains),
                p_out=ss.p_out,
                q_out=ss.q_out,
                v_pcc_ll=ss.v_pcc.mag * SQRT3,
            ))
        except DivergenceError as exc:
            points.append(SweepPoint(
                value=float(value),
                converged=False,
                loop_gain=max(exc.report.loop_gains),
                p_out=nan_tuple,
                q_out=nan_tuple,
                v_pcc_ll=math.nan,
            ))
    return points
