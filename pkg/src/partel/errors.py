"""Exception types shared across the package."""


class PartelError(Exception):
    pass


class ValidationError(PartelError, ValueError):
    """An input violates a type invariant."""


class ScenarioFormatError(PartelError, ValueError):
    """A scenario file could not be parsed; ``field`` names the offending key."""

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or f"malformed scenario file: bad or missing field {field!r}")


class InfeasibleError(PartelError):
    """No allocation meets the requested target (or the latency is below the power floor)."""


class UndefinedLatencyError(PartelError, ValueError):
    """A subcarrier carries load at zero rate."""


class DegenerateDualError(PartelError, ValueError):
    """The power multiplier is zero, so the water level is undefined."""
