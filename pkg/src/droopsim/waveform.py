"""Three-phase reference-voltage synthesis and RMS extraction.

The dynamic model runs entirely on phasors; these helpers exist to
render (e_ref, delta_ref) as instantaneous waveforms and to check RMS
identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from droopsim.errors import InvalidParameterError

TWO_PI = 2.0 * math.pi
DEG120 = TWO_PI / 3.0


@dataclass(frozen=True)
class ThreePhaseSample:
    t: float
    va: float
    vb: float
    vc: float


def synth_three_phase(e_ref: float, delta_ref: float, f: float, t: float,
                      phase_order: str = "acb") -> ThreePhaseSample:
    """Instantaneous balanced three-phase set at time t.

    va = E * sin(w*t + delta) with w = 2*pi*f, and the other two phases
    displaced by 120 degrees.  The default order "acb" puts +120 on
    phase b and -120 on phase c, so the rotation sequence in time is
    a, c, b.  Pass "abc" for the conventional positive sequence.
    """
    if e_ref <= 0.0:
        raise InvalidParameterError(f"amplitude must be positive, got {e_ref}")
    if f <= 0.0:
        raise InvalidParameterError(f"frequency must be positive, got {f}")
    if phase_order not in ("acb", "abc"):
        raise InvalidParameterError(
            f"phase_order must be 'acb' or 'abc', got {phase_order!r}")
    base = TWO_PI * f * t + delta_ref
    shift = DEG120 if phase_order == "acb" else -DEG120
    return ThreePhaseSample(
        t=t,
        va=e_ref * math.sin(base),
        vb=e_ref * math.sin(base + shift),
        vc=e_ref * math.sin(base - shift),
    )


def rms_periodic(samples) -> float:
    """RMS of uniformly spaced samples spanning exactly one period."""
    n = len(samples)
    if n == 0:
        raise InvalidParameterError("need at least one sample for RMS")
    return math.sqrt(sum(s * s for s in samples) / n)
