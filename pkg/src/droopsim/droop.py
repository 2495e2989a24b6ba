"""Per-inverter droop controller.

Two layers run every step.  The restoration layer turns frequency and
voltage deviation into corrected power references:

    p_ref = P0 - k_fp * (f0 - f_meas)
    q_ref = Q0 - k_vq * (V0 - v_meas)

The droop layer turns the power error into the voltage reference handed
to the modulator, adjusting the angle directly instead of integrating a
frequency offset:

    delta_ref = delta0 - k_pdelta * (p_ref - p_filt)
    e_ref     = E0     - k_qE     * (q_ref - q_filt)

Measured powers are smoothed by first-order low-pass filters, which is
what gives the closed loop its dynamics.  Measured frequency is the
filtered rate of change of the controller's own reference angle (there
is no other local frequency signal), or the grid frequency when tied.

``e_ref`` and ``E0`` are per-phase peak amplitudes, the number that
multiplies the sine in the waveform synthesis.  Divide by sqrt(2) for
RMS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from droopsim.errors import ConfigurationError, InvalidParameterError

TWO_PI = 2.0 * math.pi
SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)

# Conventional droop sizing: 0.5 Hz frequency deviation and 5% voltage
# deviation at rated power, and a design loop gain of 0.3 for the angle
# and magnitude branches (must stay below 1 for a stable fixed point).
FREQ_DEVIATION_HZ = 0.5
VOLT_DEVIATION_FRAC = 0.05
DESIGN_LOOP_GAIN = 0.3


@dataclass(frozen=True)
class DroopGains:
    """All six controller constants.  Every gain must be positive."""

    k_pf: float       # Hz/W, frequency droop slope
    k_qv: float       # V/var, voltage droop slope
    k_fp: float       # W/Hz, restoration gain
    k_vq: float       # var/V, restoration gain
    k_pdelta: float   # rad/W, angle droop gain
    k_qe: float       # V/var, magnitude droop gain

    def __post_init__(self):
        for name in ("k_pf", "k_qv", "k_fp", "k_vq", "k_pdelta", "k_qe"):
            v = getattr(self, name)
            if not (v > 0.0) or not math.isfinite(v):
                raise InvalidParameterError(
                    f"droop gain {name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class Setpoints:
    """Nominal operating point of one inverter.

    f0 in Hz, v0 in volts line-to-line RMS, p0/q0 three-phase watts/vars,
    delta0 in radians, e0 in volts per-phase peak.
    """

    f0: float
    v0: float
    p0: float
    q0: float
    delta0: float
    e0: float

    def __post_init__(self):
        if self.f0 <= 0.0:
            raise InvalidParameterError(f"f0 must be positive, got {self.f0}")
        if self.v0 <= 0.0:
            raise InvalidParameterError(f"v0 must be positive, got {self.v0}")
        if self.e0 <= 0.0:
            raise InvalidParameterError(f"e0 must be positive, got {self.e0}")


def nominal_peak_amplitude(v_ll: float) -> float:
    """Per-phase peak amplitude of a system at ``v_ll`` volts line-to-line."""
    return v_ll / SQRT3 * SQRT2


def default_gains(p_rated_w: float, q_rated_var: float, v0_ll: float,
                  line_x_ohm: float) -> DroopGains:
    """Gain set from the conventional deviation-at-rated sizing rule.

    The droop slopes give 0.5 Hz and 5% voltage deviation at rated power;
    the restoration gains are their inverses.  The angle and magnitude
    gains are sized for a loop gain of 0.3 through the line reactance:
    k_pdelta * dP/ddelta = 0.3 with dP/ddelta ~ 3 * V_ln^2 / X, and the
    analogous rule on the magnitude branch in peak-amplitude units.
    """
    if p_rated_w <= 0.0 or q_rated_var <= 0.0:
        raise InvalidParameterError(
            "rated powers must be positive to derive default gains, got "
            f"P={p_rated_w}, Q={q_rated_var}")
    if v0_ll <= 0.0 or line_x_ohm <= 0.0:
        raise InvalidParameterError(
            f"need positive voltage and reactance, got v0={v0_ll}, "
            f"x={line_x_ohm}")
    v_ln = v0_ll / SQRT3
    return DroopGains(
        k_pf=FREQ_DEVIATION_HZ / p_rated_w,
        k_qv=VOLT_DEVIATION_FRAC * v0_ll / q_rated_var,
        k_fp=p_rated_w / FREQ_DEVIATION_HZ,
        k_vq=q_rated_var / (VOLT_DEVIATION_FRAC * v0_ll),
        k_pdelta=DESIGN_LOOP_GAIN * line_x_ohm / (3.0 * v_ln * v_ln),
        k_qe=DESIGN_LOOP_GAIN * SQRT2 * line_x_ohm / (3.0 * v_ln),
    )


@dataclass(frozen=True)
class MeasurementFilter:
    """First-order low-pass filter state (forward-Euler discretization)."""

    tau: float
    state: float = 0.0

    def __post_init__(self):
        if self.tau <= 0.0:
            raise InvalidParameterError(
                f"filter time constant must be positive, got {self.tau}")


def lowpass_update(filt: MeasurementFilter, u: float,
                   dt: float) -> MeasurementFilter:
    """One explicit-Euler step: state += (dt/tau) * (u - state).

    dt must be strictly below tau or the discrete filter is unstable,
    so that case is rejected outright.
    """
    if dt <= 0.0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    if dt >= filt.tau:
        raise ConfigurationError(
            f"dt = {dt} must be smaller than the filter time constant "
            f"tau = {filt.tau} (explicit-Euler stability guard)")
    return replace(filt, state=filt.state + (dt / filt.tau) * (u - filt.state))


@dataclass(frozen=True)
class ControllerState:
    """Dynamic state of one controller between steps."""

    p_filt: float
    q_filt: float
    delta_ref: float
    e_ref: float
    f_meas: float
    prev_delta_ref: float


def initial_state(setpoints: Setpoints) -> ControllerState:
    """State at the calibrated operating point with filters pre-loaded."""
    return ControllerState(
        p_filt=setpoints.p0,
        q_filt=setpoints.q0,
        delta_ref=setpoints.delta0,
        e_ref=setpoints.e0,
        f_meas=setpoints.f0,
        prev_delta_ref=setpoints.delta0,
    )


def freq_droop_char(p: float, gains: DroopGains, sp: Setpoints) -> float:
    """Frequency droop characteristic f = f0 - k_pf * (p - P0)."""
    return sp.f0 - gains.k_pf * (p - sp.p0)


def volt_droop_char(q: float, gains: DroopGains, sp: Setpoints) -> float:
    """Voltage droop characteristic v = V0 - k_qv * (q - Q0)."""
    return sp.v0 - gains.k_qv * (q - sp.q0)


def restoration_refs(f_meas: float, v_meas: float, gains: DroopGains,
                     sp: Setpoints):
    """Corrected power references from measured frequency and voltage.

    At nominal frequency and voltage this returns exactly (P0, Q0), which
    is what pins the grid-tied operating point to the setpoints.
    """
    p_ref = sp.p0 - gains.k_fp * (sp.f0 - f_meas)
    q_ref = sp.q0 - gains.k_vq * (sp.v0 - v_meas)
    return (p_ref, q_ref)


def droop_refs(p_ref: float, q_ref: float, p_filt: float, q_filt: float,
               gains: DroopGains, sp: Setpoints):
    """Angle and amplitude references from the filtered power errors."""
    delta_ref = sp.delta0 - gains.k_pdelta * (p_ref - p_filt)
    e_ref = sp.e0 - gains.k_qe * (q_ref - q_filt)
    return (delta_ref, e_ref)


def measured_frequency(state: ControllerState, dt: float, f0: float) -> float:
    """Raw local frequency estimate before filtering.

    The only frequency information available locally is how fast the
    controller is slewing its own reference angle, so

        f_raw = f0 + (delta_ref - prev_delta_ref) / (2 * pi * dt)
    """
    if dt <= 0.0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    return f0 + (state.delta_ref - state.prev_delta_ref) / (TWO_PI * dt)


def controller_step(state: ControllerState, p_out: float, q_out: float,
                    v_meas: float, gains: DroopGains, sp: Setpoints,
                    dt: float, tau: float,
                    grid_frequency: float | None = None) -> ControllerState:
    """Advance one controller by one step of size dt.

    Update order is fixed: power filters first, then the frequency
    estimate, then restoration, then the droop layer.  ``grid_frequency``
    switches the frequency measurement: None means islanded (use the
    angle-rate estimate), a number means grid-tied (frequency is imposed
    by the grid).

    Raw measurements in, new state out; the function is pure.
    """
    p_f = lowpass_update(MeasurementFilter(tau, state.p_filt), p_out, dt)
    q_f = lowpass_update(MeasurementFilter(tau, state.q_filt), q_out, dt)

    if grid_frequency is None:
        f_raw = measured_frequency(state, dt, sp.f0)
        f_meas = lowpass_update(
            MeasurementFilter(tau, state.f_meas), f_raw, dt).state
    else:
        f_meas = grid_frequency

    p_ref, q_ref = restoration_refs(f_meas, v_meas, gains, sp)
    delta_ref, e_ref = droop_refs(
        p_ref, q_ref, p_f.state, q_f.state, gains, sp)

    return ControllerState(
        p_filt=p_f.state,
        q_filt=q_f.state,
        delta_ref=delta_ref,
        e_ref=e_ref,
        f_meas=f_meas,
        prev_delta_ref=state.delta_ref,
    )
