"""Exception types raised across the toolkit."""

from typing import Optional


class TexAnomError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class ConfigurationError(TexAnomError):
    """Raised when a configuration value cannot be used."""

    exit_code = 2


class ImageFormatError(TexAnomError):
    """Raised when an image file has an unsupported mode or bit depth."""

    exit_code = 2


class DatasetError(TexAnomError):
    """Raised when a dataset layout is incomplete or inconsistent."""

    exit_code = 2


class ContractViolationError(TexAnomError):
    """Raised when arrays passed between components have the wrong shape."""

    exit_code = 2


class DegenerateInputError(TexAnomError):
    """Raised when an input is too small for the requested operation."""

    exit_code = 2


class ModelFormatError(TexAnomError):
    """Raised when a model file is truncated or has the wrong header."""

    exit_code = 2


class EvaluationError(TexAnomError):
    """Raised when ground truth does not allow a metric to be computed."""

    exit_code = 2


class CalibrationError(TexAnomError):
    """Raised when no normal pixels are available to calibrate a threshold."""

    exit_code = 3


class TrainingError(TexAnomError):
    """Raised when an optimizer step receives a non-finite gradient."""

    exit_code = 3

    def __init__(self, message: str, layer: Optional[str] = None):
        super().__init__(message)
        self.layer = layer


class TrainingDivergedError(TrainingError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"Training diverged at epoch {epoch}, batch {batch}: loss={loss}"
        )
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
