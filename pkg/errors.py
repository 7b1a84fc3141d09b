# errors.py
"""
Exception hierarchy shared by the simulator modules.

main.py maps the families onto process exit codes:
 - ConfigError     -> 2
 - NumericalError  -> 3
 - OSError         -> 4
"""

from __future__ import annotations

from typing import Optional

__all__ = [
    "SimulationError", "ConfigError", "NumericalError",
    "NoCrossingError", "FitError", "BasisTooSmallError",
    "TruncationError", "CalibrationError",
]


class SimulationError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigError(SimulationError, ValueError):
    """
    Invalid experiment configuration.

    `line` is the 1-based line of the offending entry in the config file
    when it can be located, `source` the file it came from.
    """

    def __init__(self, message: str, line: Optional[int] = None,
                 source: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.source = source

    def __str__(self) -> str:
        where = self.source or "<config>"
        if self.line is not None:
            return f"{where}:{self.line}: {self.message}"
        return f"{where}: {self.message}"


class NumericalError(SimulationError, RuntimeError):
    """A computation could not produce a trustworthy number."""


class NoCrossingError(NumericalError):
    """A coherence curve never reaches the coherence threshold."""


class FitError(NumericalError):
    """Nonlinear fit is underdetermined or did not converge."""


class BasisTooSmallError(NumericalError):
    """Motional basis truncation tail exceeds its tolerance."""


class TruncationError(NumericalError):
    """Overlap matrix columns lost too much norm to truncation."""


class CalibrationError(NumericalError):
    """Calibration target cannot be bracketed or was not reached."""
