"""Image-shaped domain types: intensity images, anomaly maps and masks."""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self):
        return self.data.shape

    @staticmethod
    def _check_2d(v: np.ndarray) -> np.ndarray:
        if v.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("height and width must be at least 1")
        return v


class GrayImage(_ArrayModel):
    """Single-channel intensity image with values in [0, 1]."""

    data: np.ndarray = Field(..., description="float64 array of shape (height, width)")

    @field_validator("data", mode="before")
    @classmethod
    def as_float(cls, v):
        return np.ascontiguousarray(v, dtype=np.float64)

    @field_validator("data")
    @classmethod
    def validate_data(cls, v):
        """Validate shape and intensity range."""
        cls._check_2d(v)
        if not np.all(np.isfinite(v)):
            raise ValueError("image contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        return v


class AnomalyMap(_ArrayModel):
    """Per-pixel anomaly scores."""

    data: np.ndarray = Field(..., description="float64 scores of shape (height, width)")

    @field_validator("data", mode="before")
    @classmethod
    def as_float(cls, v):
        return np.ascontiguousarray(v, dtype=np.float64)

    @field_validator("data")
    @classmethod
    def validate_data(cls, v):
        """Validate shape and finiteness."""
        cls._check_2d(v)
        if not np.all(np.isfinite(v)):
            raise ValueError("anomaly map contains non-finite scores")
        return v


class AnomalyMask(_ArrayModel):
    """Binary per-pixel labeling, 1 inside anomalous regions."""

    data: np.ndarray = Field(..., description="bool array of shape (height, width)")

    @field_validator("data", mode="before")
    @classmethod
    def as_bool(cls, v):
        return np.ascontiguousarray(np.asarray(v) != 0)

    @field_validator("data")
    @classmethod
    def validate_data(cls, v):
        """Validate shape."""
        return cls._check_2d(v)

    @property
    def positive_count(self) -> int:
        return int(self.data.sum())
