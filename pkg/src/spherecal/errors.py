"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI: ConfigError -> 1 (usage),
DataFormatError -> 2 (data), SolveError / InitializationError -> 3 (solver).
"""

from __future__ import annotations


class SpherecalError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SpherecalError):
    """Invalid configuration or unusable argument combination."""


class DataFormatError(SpherecalError):
    """Malformed input file or inconsistent dataset."""


class DegenerateGeometryError(SpherecalError):
    """Geometric input outside the domain of an operation (zero ray, collinear triple)."""


class SphereDomainError(SpherecalError):
    """Corrected image point lies outside the spherical image surface (r > c)."""


class InitializationError(SpherecalError):
    """Pose bootstrap failed for an exposure."""


class SolveError(SpherecalError):
    """Adjustment could not proceed (datum deficiency, divergence, bad numerics)."""

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
