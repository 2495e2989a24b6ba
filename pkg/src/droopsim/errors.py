"""Exception hierarchy shared by all droopsim modules."""


class DroopsimError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(DroopsimError, ValueError):
    """A numeric argument violates a documented precondition."""


class ConfigurationError(DroopsimError):
    """A scenario or solver setting is inconsistent (e.g. dt >= tau)."""


class ScenarioParseError(DroopsimError):
    """A scenario file could not be parsed; message carries file:line."""


class DegenerateNetworkError(DroopsimError):
    """The star network has no solvable bus equation (singular denominator)."""


class SimulationAbort(DroopsimError):
    """The time-domain loop hit a non-finite or non-physical state.

    Carries the simulation time at which the abort happened.
    """

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (at t = {t:.6f} s)")
        self.t = t


class DivergenceError(DroopsimError):
    """The steady-state fixed-point iteration failed to converge.

    The attached stability report tells the caller whether the operating
    point was expected to be unstable.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class InfeasibleTargetError(DroopsimError):
    """Setpoint calibration cannot meet the requested power targets."""
