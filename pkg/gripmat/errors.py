"""Exception hierarchy for gripmat."""

from __future__ import annotations

from pathlib import Path
from typing import Any


class GripmatError(RuntimeError):
    """Base class for all gripmat failures."""


class FileError(GripmatError):
    """An error tied to a file, optionally at a line number."""

    def __init__(self, message: str, path: Path | str, line: int | None = None):
        self.path = Path(path)
        self.line = line
        self.message = message
        location = f"{self.path}:{line}" if line is not None else str(self.path)
        super().__init__(f"{location}: {message}")


class ManifestError(FileError):
    """A manifest, profile or sample document is missing or malformed."""


class CsvParseError(FileError):
    """A raw cycle CSV row could not be parsed."""


class CycleValidationError(FileError, ValueError):
    """Parsed samples violate the raw cycle invariants."""


class ProfileError(GripmatError, ValueError):
    """A device profile or sample spec violates its invariants."""


class ConfigError(GripmatError, ValueError):
    """Settings could not be loaded."""


class ParameterError(GripmatError, ValueError):
    """A numeric routine was called with invalid parameters."""


class CalibrationError(GripmatError, ValueError):
    """A force has no effort under the device calibration."""


class GenerationError(GripmatError, ValueError):
    """Synthetic cycle parameters produce an invalid profile."""

    def __init__(self, message: str, sample_index: int | None = None):
        self.sample_index = sample_index
        super().__init__(message)


class GeometryError(GripmatError, ValueError):
    """Contact geometry is degenerate."""


class NoContactError(GripmatError):
    """No sample qualifies as the moment of contact."""


class InsufficientDataError(GripmatError):
    """Too few samples for the requested estimate."""


class InsufficientDeformationError(InsufficientDataError):
    """The compression phase spans too little strain."""


class InsufficientCompressionError(InsufficientDataError):
    """The compression phase does not reach the requested strain."""


class PhaseError(GripmatError):
    """A required compression or decompression phase is missing."""


class HysteresisAnomalyError(GripmatError):
    """Decompression stress lies above compression stress."""


class RankDeficiencyError(GripmatError):
    """Regression inputs do not determine the requested coefficients."""


class UnsupportedModeError(GripmatError):
    """The device sampling mode cannot support the requested estimate."""


class FitDomainError(GripmatError):
    """No sample remains inside the model's log domain."""


class ConvergenceError(GripmatError):
    """An iterative fit did not converge; carries the best iterate."""

    def __init__(self, message: str, best: Any = None):
        self.best = best
        super().__init__(message)


class ClassConfigError(GripmatError, ValueError):
    """A material class configuration is inconsistent."""


class SeparabilityError(ClassConfigError):
    """Labelled classes overlap in stiffness."""

    def __init__(self, message: str, pairs: list[tuple[str, str]]):
        self.pairs = pairs
        super().__init__(message)


class IdentifiabilityError(GripmatError):
    """A damping rule was applied to a fit whose damping is not identifiable."""
