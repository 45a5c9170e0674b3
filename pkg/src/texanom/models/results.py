"""Run artifacts: training history, calibration record and evaluation report."""

import csv
import io
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

COVERAGE_DEFINITION = (
    "coverage(C) = |C intersect predicted| / |C| per 8-connected ground-truth "
    "component; median pooled over all defects of all test images"
)


class TrainingHistory(BaseModel):
    """Per-epoch mean training loss and learning rate."""

    loss: str = Field(..., description="Loss the model was trained with")
    epoch_losses: List[float] = Field(default_factory=list)
    learning_rates: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_lengths(self) -> "TrainingHistory":
        if len(self.epoch_losses) != len(self.learning_rates):
            raise ValueError("epoch_losses and learning_rates must have equal length")
        return self

    @property
    def epochs(self) -> int:
        return len(self.epoch_losses)

    def to_csv(self) -> str:
        """CSV text with one row per epoch: ``epoch,loss,learning_rate``."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["epoch", "loss", "learning_rate"])
        for epoch, (value, lr) in enumerate(zip(self.epoch_losses, self.learning_rates)):
            writer.writerow([epoch, repr(float(value)), repr(float(lr))])
        return buffer.getvalue()


class CalibrationRecord(BaseModel):
    """Threshold chosen on validation normal pixels."""

    model_config = ConfigDict(frozen=True)

    gamma: float = Field(..., description="Threshold on anomaly scores (score >= gamma)")
    target_fpr: float = Field(..., gt=0, lt=1)
    achieved_fpr: float = Field(..., ge=0, le=1)
    normal_pixels: int = Field(..., ge=1)
    validation_hash: str = Field(default="", description="SHA-256 of the validation set")


class EvalReport(BaseModel):
    """Pixel-level ROC metrics and defect coverage over a test set."""

    auc: float = Field(..., ge=0, le=1)
    normalized_auc_03: float = Field(..., ge=0, le=1)
    fpr_max: float = Field(default=0.3, gt=0, le=1)
    coverages: List[float] = Field(default_factory=list)
    median_coverage: Optional[float] = Field(default=None, ge=0, le=1)
    gamma: Optional[float] = None
    positive_pixels: int = Field(default=0, ge=0)
    negative_pixels: int = Field(default=0, ge=0)
    image_count: int = Field(default=0, ge=0)
    config_hash: str = ""
    coverage_definition: str = COVERAGE_DEFINITION

    @field_validator("coverages")
    @classmethod
    def validate_coverages(cls, v):
        """Validate each coverage is a fraction."""
        if any(c < 0 or c > 1 for c in v):
            raise ValueError("coverages must lie in [0, 1]")
        return v
