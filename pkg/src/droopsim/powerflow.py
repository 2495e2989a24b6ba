"""Phasor arithmetic and the algebraic solve of a star-connected network.

All electrical quantities follow one convention throughout the package:

* phasors are per-phase line-to-neutral RMS, positive sequence;
* configured voltages are line-to-line RMS (divide by sqrt(3) internally);
* powers P and Q are three-phase totals unless a function says otherwise.

The network is a star: every source feeds a common load bus (the PCC)
through its own series R + jX line, and a single constant-impedance load
hangs on that bus.  That topology has a closed-form solution, so each
solve is a handful of complex operations and no iteration is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from droopsim.errors import DegenerateNetworkError, InvalidParameterError

SQRT3 = math.sqrt(3.0)

# Denominators smaller than this (relative to the summed branch admittance
# magnitudes) mean the bus equation is numerically singular.
_SINGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class Phasor:
    """Complex RMS quantity (voltage or current) in rectangular form.

    Attributes
    ----------
    re, im : float
        Real and imaginary parts, volts or amps.
    """

    re: float
    im: float

    @staticmethod
    def from_polar(mag: float, angle: float) -> "Phasor":
        """Build a phasor from magnitude and angle in radians."""
        return Phasor(mag * math.cos(angle), mag * math.sin(angle))

    @staticmethod
    def from_complex(z: complex) -> "Phasor":
        return Phasor(z.real, z.imag)

    @property
    def mag(self) -> float:
        return math.hypot(self.re, self.im)

    @property
    def angle(self) -> float:
        """Angle in radians in (-pi, pi]."""
        return math.atan2(self.im, self.re)

    def __complex__(self) -> complex:
        return complex(self.re, self.im)


@dataclass(frozen=True)
class LineModel:
    """Series impedance of one feeder line.

    Attributes
    ----------
    r_ohm : float
        Series resistance, ohms.  Must be >= 0.
    x_ohm : float
        Series reactance, ohms.  Must be > 0.
    """

    r_ohm: float
    x_ohm: float

    def __post_init__(self):
        if self.x_ohm <= 0.0:
            raise InvalidParameterError(
                f"line reactance must be positive, got {self.x_ohm}")
        if self.r_ohm < 0.0:
            raise InvalidParameterError(
                f"line resistance must be non-negative, got {self.r_ohm}")

    @property
    def z(self) -> complex:
        return complex(self.r_ohm, self.x_ohm)


@dataclass(frozen=True)
class LoadModel:
    """Constant-impedance load defined by its ratings at a reference voltage.

    Attributes
    ----------
    p_rated_w : float
        Three-phase active power drawn at exactly ``v_ref_ll`` volts.
    q_rated_var : float
        Three-phase reactive power at ``v_ref_ll`` (inductive positive).
    v_ref_ll : float
        Line-to-line RMS voltage at which the ratings apply.
    """

    p_rated_w: float
    q_rated_var: float
    v_ref_ll: float

    def __post_init__(self):
        if self.v_ref_ll <= 0.0:
            raise InvalidParameterError(
                f"load reference voltage must be positive, got {self.v_ref_ll}")
        if self.p_rated_w < 0.0:
            raise InvalidParameterError(
                f"load active power must be non-negative, got {self.p_rated_w}")


@dataclass(frozen=True)
class NetworkSolution:
    """Result of one star-network solve.

    Attributes
    ----------
    v_pcc : Phasor
        Load-bus voltage, per-phase line-to-neutral RMS.
    currents : tuple of Phasor
        Branch current of each source, source-to-bus direction.
    s_out : tuple of (float, float)
        Three-phase (P, Q) injected at each source terminal.
    s_load : (float, float)
        Three-phase (P, Q) consumed by the load.
    s_losses : tuple of (float, float)
        Three-phase (P, Q) dissipated in each line.
    """

    v_pcc: Phasor
    currents: tuple
    s_out: tuple
    s_load: tuple
    s_losses: tuple


def load_admittance(load: LoadModel) -> complex:
    """Per-phase admittance equivalent of a rated load.

    The load is fixed impedance: Y = (P - jQ) / (3 * V_ln^2) with
    V_ln = v_ref_ll / sqrt(3), so a bus held at exactly the reference
    voltage draws exactly the rated powers.  At any other voltage the
    drawn power scales with the voltage squared.
    """
    if load.v_ref_ll <= 0.0:
        raise InvalidParameterError(
            f"load reference voltage must be positive, got {load.v_ref_ll}")
    v_ln = load.v_ref_ll / SQRT3
    return complex(load.p_rated_w, -load.q_rated_var) / (3.0 * v_ln * v_ln)


def solve_star_network(emfs, lines, load_y: complex) -> NetworkSolution:
    """Solve the single-bus star network exactly.

    Parameters
    ----------
    emfs : sequence of Phasor
        Source EMFs behind each line, per-phase line-to-neutral RMS.
    lines : sequence of LineModel
        One line per source, same order.
    load_y : complex
        Per-phase load admittance at the PCC (0 for open circuit).

    Returns
    -------
    NetworkSolution

    Notes
    -----
    Kirchhoff at the single bus gives

        V_pcc = (sum_i E_i / Z_i) / (sum_i 1 / Z_i + Y_load)

    and everything else follows from Ohm's law.  Powers use the
    three-phase convention S = 3 * V * conj(I).
    """
    if len(emfs) == 0:
        raise InvalidParameterError("need at least one source")
    if len(emfs) != len(lines):
        raise InvalidParameterError(
            f"got {len(emfs)} EMFs but {len(lines)} lines")

    zs = [line.z for line in lines]
    for z in zs:
        if abs(z) == 0.0:
            raise InvalidParameterError("zero line impedance")

    y_sum = sum(1.0 / z for z in zs)
    den = y_sum + load_y
    scale = sum(abs(1.0 / z) for z in zs) + abs(load_y)
    if abs(den) <= _SINGULAR_RTOL * scale:
        raise DegenerateNetworkError(
            "star network bus equation is singular "
            f"(|denominator| = {abs(den):.3e})")

    e = [complex(p) for p in emfs]
    v_pcc = sum(ei / zi for ei, zi in zip(e, zs)) / den

    currents = []
    s_out = []
    s_losses = []
    for ei, zi in zip(e, zs):
        i = (ei - v_pcc) / zi
        currents.append(Phasor.from_complex(i))
        s = 3.0 * ei * i.conjugate()
        s_out.append((s.real, s.imag))
        # squared magnitude via multiplication: on absurd inputs it
        # overflows to inf instead of raising, so callers can keep
        # their own non-finite handling
        loss = 3.0 * (i.real * i.real + i.imag * i.imag) * zi
        s_losses.append((loss.real, loss.imag))

    mag2 = v_pcc.real * v_pcc.real + v_pcc.imag * v_pcc.imag
    s_load_c = 3.0 * mag2 * load_y.conjugate()

    return NetworkSolution(
        v_pcc=Phasor.from_complex(v_pcc),
        currents=tuple(currents),
        s_out=tuple(s_out),
        s_load=(s_load_c.real, s_load_c.imag),
        s_losses=tuple(s_losses),
    )


def power_balance_residual(sol: NetworkSolution) -> float:
    """Relative power-balance mismatch of a solution.

    Returns max(|sum P_out - P_load - P_loss|, |sum Q_out - ...|) divided
    by the total apparent power, so a clean solve is ~1e-16 and anything
    above 1e-9 indicates a bug.
    """
    p_out = sum(s[0] for s in sol.s_out)
    q_out = sum(s[1] for s in sol.s_out)
    p_loss = sum(s[0] for s in sol.s_losses)
    q_loss = sum(s[1] for s in sol.s_losses)
    dp = p_out - sol.s_load[0] - p_loss
    dq = q_out - sol.s_load[1] - q_loss
    total = math.hypot(p_out, q_out) + math.hypot(*sol.s_load)
    if total == 0.0:
        return max(abs(dp), abs(dq))
    return max(abs(dp), abs(dq)) / total


def complex_line_flow(v_send: Phasor, v_recv: Phasor, line: LineModel):
    """Exact three-phase sending-end power over a series impedance.

    S = 3 * V_send * conj((V_send - V_recv) / Z); returns (P, Q) in watts
    and vars.  Works for any R >= 0, so it is the lossy generalization of
    :func:`lossless_line_flow`.
    """
    z = line.z
    if abs(z) == 0.0:
        raise InvalidParameterError("zero line impedance")
    vs = complex(v_send)
    vr = complex(v_recv)
    s = 3.0 * vs * ((vs - vr) / z).conjugate()
    return (s.real, s.imag)


def lossless_line_flow(v1_mag: float, v2_mag: float, delta: float, x: float):
    """Textbook per-phase power transfer over a pure reactance.

    P = v1 * v2 * sin(delta) / x
    Q = v1^2 / x - v1 * v2 * cos(delta) / x

    ``delta`` is the angle of the sending voltage ahead of the receiving
    one.  Both results are per-phase; multiply by 3 for a balanced
    three-phase total.
    """
    if x <= 0.0:
        raise InvalidParameterError(f"reactance must be positive, got {x}")
    p = v1_mag * v2_mag * math.sin(delta) / x
    q = v1_mag * v1_mag / x - v1_mag * v2_mag * math.cos(delta) / x
    return (p, q)


def small_angle_flow(p: float, q: float, v1: float, v2: float, x: float):
    """Linearized inversion of the lossless flow equations.

    For small angles sin(delta) ~ delta and cos(delta) ~ 1, which turns
    the per-phase flow equations into

        delta = x * p / (v1 * v2)
        v1 - v2 = x * q / v1

    Returns (delta, dv).  Good to about 1% for delta below 0.1 rad.
    """
    if x <= 0.0:
        raise InvalidParameterError(f"reactance must be positive, got {x}")
    if v1 <= 0.0 or v2 <= 0.0:
        raise InvalidParameterError(
            f"voltages must be positive, got v1={v1}, v2={v2}")
    delta = x * p / (v1 * v2)
    dv = x * q / v1
    return (delta, dv)
