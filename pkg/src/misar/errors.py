"""Exception hierarchy shared by all modules.

Each class carries the process exit code the command-line front end uses
when the exception escapes a subcommand.
"""


class MisarError(Exception):
    exit_code = 1


class ConfigError(MisarError, ValueError):
    """Invalid configuration value or malformed config file."""

    exit_code = 3


class DataFormatError(MisarError, ValueError):
    """Bad magic, unsupported version, truncated payload, mismatched fingerprint."""

    exit_code = 4


class NumericalError(MisarError, RuntimeError):
    """A numerical stage could not produce a valid result."""

    exit_code = 5


class GeometryError(ConfigError):
    pass


class IdentifiabilityError(NumericalError):
    """Calibration problem is degenerate (too few or collinear grid points)."""


class CoverageError(MisarError, ValueError):
    """A trajectory does not cover the requested timestamps."""

    exit_code = 4


class StageError(MisarError):
    """Failure inside a named pipeline stage; keeps the cause's exit code."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
