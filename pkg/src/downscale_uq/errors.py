"""Exception hierarchy shared by the library and the CLI exit-code mapping."""

from __future__ import annotations


class DownscaleError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class GridMismatchError(DownscaleError, ValueError):
    exit_code = 4


class ShapeMismatchError(DownscaleError, ValueError):
    exit_code = 4


class ZeroVarianceError(DownscaleError, ValueError):
    exit_code = 4


class StandardizationError(DownscaleError, ValueError):
    exit_code = 4


class ContainerFormatError(DownscaleError, ValueError):
    """Raised for malformed GFLD1 files (bad magic, truncation, NaN payload)."""

    exit_code = 6


class NonFiniteError(DownscaleError, ValueError):
    exit_code = 4


class ConfigError(DownscaleError, ValueError):
    exit_code = 4


class MechanismError(DownscaleError, ValueError):
    """Wrong mechanism kind for an operation, or a kind/plan mismatch."""

    exit_code = 5


class ClimatologyMismatchError(DownscaleError, ValueError):
    exit_code = 5


class TrainingDivergedError(DownscaleError, RuntimeError):
    exit_code = 7


class DegenerateForecastError(DownscaleError, ValueError):
    exit_code = 4
