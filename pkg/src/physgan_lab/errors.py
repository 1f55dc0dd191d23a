"""Exception hierarchy shared by every physgan_lab module."""

from pathlib import Path
from typing import Any, Optional


class PhysganLabError(Exception):
    """Base class for all errors raised by physgan_lab."""


class DimensionError(PhysganLabError, ValueError):
    """Shapes or frame geometry do not agree."""


class NumericError(PhysganLabError, ArithmeticError):
    """A value became non-finite or an operation left its domain."""


class ContractError(PhysganLabError):
    """A precondition of an operation was violated by the caller."""


class ConfigurationError(PhysganLabError, ValueError):
    """Configuration values are missing, mistyped or out of range."""


class GeometryError(PhysganLabError, ValueError):
    """A quadrilateral or homography is degenerate."""

    def __init__(self, message: str, frame_index: Optional[int] = None) -> None:
        if frame_index is not None:
            message = f"frame {frame_index}: {message}"
        super().__init__(message)
        self.frame_index = frame_index


class IngestionError(PhysganLabError):
    """A slice directory could not be read."""


class TrainingError(PhysganLabError):
    """Steering model training diverged."""

    def __init__(self, message: str, checkpoint: Optional[Path] = None, losses: Optional[list[float]] = None) -> None:
        super().__init__(message)
        self.checkpoint = checkpoint
        self.losses = losses or []


class AttackError(PhysganLabError):
    """An attack produced a non-finite loss and was aborted."""

    def __init__(self, message: str, partial: Any = None) -> None:
        super().__init__(message)
        self.partial = partial


class SimulationError(PhysganLabError):
    """The closed-loop simulation state became non-finite."""

    def __init__(self, message: str, trajectory: Any = None) -> None:
        super().__init__(message)
        self.trajectory = trajectory
