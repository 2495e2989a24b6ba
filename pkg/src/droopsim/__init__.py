"""Phasor-domain simulator for parallel droop-controlled inverters.

Subpackages cover the algebraic network solve (:mod:`droopsim.powerflow`),
the per-inverter two-layer droop controller (:mod:`droopsim.droop`),
three-phase reference synthesis (:mod:`droopsim.waveform`), the fixed-step
time-domain loop (:mod:`droopsim.simulator`), an independent steady-state
solver (:mod:`droopsim.oracle`), and a command-line front end
(:mod:`droopsim.cli`).
"""

from droopsim.errors import (
    ConfigurationError,
    DegenerateNetworkError,
    DivergenceError,
    DroopsimError,
    InfeasibleTargetError,
    InvalidParameterError,
    ScenarioParseError,
    SimulationAbort,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DegenerateNetworkError",
    "DivergenceError",
    "DroopsimError",
    "InfeasibleTargetError",
    "InvalidParameterError",
    "ScenarioParseError",
    "SimulationAbort",
    "__version__",
]
