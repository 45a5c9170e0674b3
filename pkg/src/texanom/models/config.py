"""Configuration schemas for decomposition, losses, the network, training and inference."""

from pathlib import Path
from typing import Any, List, Literal, Optional, Sequence, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationInfo,
    field_validator,
    model_validator,
)

LossName = Literal["cwssim", "ssim", "mse"]
MorphologyName = Literal["erosion", "opening", "closing", "dilation"]
FirstSubband = Literal["dft", "highpass"]

DEFAULT_WIDTHS = (32, 64, 128, 256, 512)


class DecomposerConfig(BaseModel):
    """Subband decomposition settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    orientations: int = Field(default=6, ge=1, description="Number of orientations O")
    scales: int = Field(default=5, ge=2, description="Number of scales S")
    input_shape: Tuple[int, int] = Field(
        default=(256, 256), description="Input height and width in pixels"
    )
    first_subband: FirstSubband = Field(
        default="dft", description="Construction of the first subband"
    )

    @model_validator(mode="before")
    @classmethod
    def accept_input_size(cls, data: Any) -> Any:
        """Allow ``input_size`` as shorthand for a square input."""
        if isinstance(data, dict) and "input_size" in data:
            data = dict(data)
            size = data.pop("input_size")
            data.setdefault("input_shape", (size, size))
        return data

    @field_validator("input_shape", mode="before")
    @classmethod
    def expand_square(cls, v):
        if isinstance(v, int):
            return (v, v)
        return v

    @field_validator("input_shape")
    @classmethod
    def validate_input_shape(cls, v):
        """Validate spatial size is positive."""
        if v[0] < 1 or v[1] < 1:
            raise ValueError("input_shape must be positive")
        return v

    @property
    def subband_count(self) -> int:
        return self.orientations * (self.scales - 2) + 2


class CwssimConfig(BaseModel):
    """CW-SSIM window settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    window_size: int = Field(default=7, ge=2, description="Window size R")
    stability: float = Field(default=0.01, gt=0, description="Stability constant K")
    stride: int = Field(default=1, ge=1, description="Window stride in pixels")


class SsimConfig(BaseModel):
    """Gaussian-window SSIM settings for the SSIM baseline loss."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    window_size: int = Field(default=11, ge=1)
    sigma: float = Field(default=1.5, gt=0)
    k1: float = Field(default=0.01, gt=0)
    k2: float = Field(default=0.03, gt=0)
    data_range: float = Field(default=1.0, gt=0)

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


class LayerSpec(BaseModel):
    """One convolution or transposed convolution of the autoencoder."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["conv", "deconv"] = Field(..., description="Layer type")
    in_channels: int = Field(..., ge=1)
    out_channels: int = Field(..., ge=1)
    kernel: int = Field(default=4, ge=1)
    stride: int = Field(default=2, ge=1)
    padding: int = Field(default=1, ge=0)
    activation: Literal["leaky_relu", "sigmoid", "identity"] = "leaky_relu"

    @property
    def param_count(self) -> int:
        return self.kernel * self.kernel * self.in_channels * self.out_channels + (
            self.out_channels
        )

    def output_size(self, n: int) -> Optional[int]:
        """Spatial output size for input size ``n``, or None if not exact."""
        if self.kind == "conv":
            span = n + 2 * self.padding - self.kernel
            if span < 0 or span % self.stride:
                return None
            return span // self.stride + 1
        out = (n - 1) * self.stride - 2 * self.padding + self.kernel
        return out if out > 0 else None


class ArchitectureSpec(BaseModel):
    """Layer list of the convolutional autoencoder."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    layers: List[LayerSpec] = Field(..., min_length=2)
    leaky_slope: float = Field(default=0.2, ge=0)

    @model_validator(mode="before")
    @classmethod
    def expand_widths(cls, data: Any) -> Any:
        """Expand the compact ``widths`` form into a mirrored layer list."""
        if isinstance(data, dict) and "widths" in data:
            data = dict(data)
            widths = data.pop("widths")
            in_channels = data.pop("in_channels", 1)
            data["layers"] = _mirrored_layers(widths, in_channels)
        return data

    @model_validator(mode="after")
    def validate_chain(self) -> "ArchitectureSpec":
        """Validate channel continuity and encoder/decoder symmetry."""
        for prev, layer in zip(self.layers, self.layers[1:]):
            if prev.out_channels != layer.in_channels:
                raise ValueError(
                    f"layer with {layer.in_channels} input channels follows "
                    f"a layer with {prev.out_channels} output channels"
                )
        kinds = [layer.kind for layer in self.layers]
        n_conv = kinds.count("conv")
        if kinds != ["conv"] * n_conv + ["deconv"] * (len(kinds) - n_conv):
            raise ValueError("all conv layers must precede all deconv layers")
        if n_conv == 0 or n_conv == len(kinds):
            raise ValueError("architecture needs both an encoder and a decoder")
        if self.layers[0].in_channels != self.layers[-1].out_channels:
            raise ValueError("decoder output channels must equal input channels")
        return self

    @classmethod
    def from_widths(
        cls, widths: Sequence[int] = DEFAULT_WIDTHS, in_channels: int = 1
    ) -> "ArchitectureSpec":
        return cls(layers=_mirrored_layers(widths, in_channels))

    @classmethod
    def default(cls) -> "ArchitectureSpec":
        return cls.from_widths(DEFAULT_WIDTHS)

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def encoder_depth(self) -> int:
        return sum(1 for layer in self.layers if layer.kind == "conv")

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    def layer_names(self) -> List[str]:
        names = []
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                names.append(f"encoder.{i}")
            else:
                names.append(f"decoder.{i - self.encoder_depth}")
        return names

    def spatial_trace(self, n: int) -> Optional[List[int]]:
        """Spatial sizes through the network, or None if any layer is inexact."""
        sizes = [n]
        for layer in self.layers:
            nxt = layer.output_size(sizes[-1])
            if nxt is None:
                return None
            sizes.append(nxt)
        return sizes


def _mirrored_layers(widths: Sequence[int], in_channels: int) -> List[dict]:
    widths = [int(w) for w in widths]
    if not widths:
        raise ValueError("widths must not be empty")
    layers = []
    prev = in_channels
    for w in widths:
        layers.append({"kind": "conv", "in_channels": prev, "out_channels": w})
        prev = w
    for w in list(reversed(widths[:-1])) + [in_channels]:
        layers.append({"kind": "deconv", "in_channels": prev, "out_channels": w})
        prev = w
    layers[-1]["activation"] = "sigmoid"
    return layers


class TrainConfig(BaseModel):
    """Training hyperparameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    loss: LossName = Field(default="cwssim", description="Training loss")
    epochs: int = Field(default=400, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    lr_decay: float = Field(default=0.5, gt=0, le=1)
    lr_decay_every: int = Field(default=20, ge=1)
    batch_size: int = Field(default=8, ge=1)
    patch_size: int = Field(default=256, ge=1)
    patch_count: int = Field(default=50_000, ge=0)
    seed: Optional[int] = Field(default=None, ge=0)
    threads: int = Field(default=1, ge=1)
    decomposer: DecomposerConfig = Field(default_factory=DecomposerConfig)
    ssim: SsimConfig = Field(default_factory=SsimConfig)

    def learning_rate_at(self, epoch: int) -> float:
        """Learning rate for a 0-indexed epoch."""
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)

    def decomposer_for_patches(self) -> DecomposerConfig:
        return self.decomposer.model_copy(
            update={"input_shape": (self.patch_size, self.patch_size)}
        )


class InferenceConfig(BaseModel):
    """Full-image scoring, calibration and post-processing settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    patch_size: int = Field(default=256, ge=1)
    stride: int = Field(default=16, ge=1)
    fusion_scales: List[int] = Field(default=[7, 8, 9], min_length=1)
    orientations: int = Field(default=6, ge=1)
    window_size: int = Field(default=7, ge=2)
    window_stride: int = Field(default=1, ge=1)
    stability: float = Field(default=0.01, gt=0)
    first_subband: FirstSubband = "dft"
    target_fpr: float = Field(default=0.05, gt=0, lt=1)
    erosion_radius: int = Field(default=10, ge=0)
    morphology: MorphologyName = "erosion"
    batch_size: int = Field(default=8, ge=1)
    threads: int = Field(default=1, ge=1)

    @field_validator("fusion_scales")
    @classmethod
    def validate_scales(cls, v):
        """Validate every fused scale count is at least 2."""
        if any(s < 2 for s in v):
            raise ValueError("all fusion scales must be >= 2")
        return v

    @model_validator(mode="after")
    def validate_stride(self) -> "InferenceConfig":
        if self.stride > self.patch_size:
            raise ValueError("stride must not exceed patch_size")
        return self

    def cwssim_config(self) -> CwssimConfig:
        return CwssimConfig(
            window_size=self.window_size,
            stability=self.stability,
            stride=self.window_stride,
        )

    def decomposer_config(self, scales: int, shape: Tuple[int, int]) -> DecomposerConfig:
        return DecomposerConfig(
            orientations=self.orientations,
            scales=scales,
            input_shape=shape,
            first_subband=self.first_subband,
        )


class PatchSampler(BaseModel):
    """Random patch cropping settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    patch_size: int = Field(default=256, ge=1)
    count: int = Field(default=50_000, ge=0)
    rng_seed: int = Field(default=0, ge=0)


def _resolve(path: Any, info: ValidationInfo) -> Any:
    base = (info.context or {}).get("base_dir")
    if base is None or path is None:
        return path
    p = Path(path)
    return p if p.is_absolute() else Path(base) / p


class DatasetConfig(BaseModel):
    """Dataset location and validation split."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    root: Path = Field(..., description="MVTec-layout dataset root")
    category: Optional[str] = Field(
        default=None, description="Optional sub-directory of the root"
    )
    validation: List[Tuple[Path, Path]] = Field(
        default_factory=list, description="(image, ground-truth mask) pairs"
    )
    limit_train: Optional[int] = Field(default=None, ge=1)
    limit_test: Optional[int] = Field(default=None, ge=1)

    @field_validator("root", mode="before")
    @classmethod
    def resolve_root(cls, v, info: ValidationInfo):
        return _resolve(v, info)

    @field_validator("validation", mode="before")
    @classmethod
    def resolve_validation(cls, v, info: ValidationInfo):
        if not isinstance(v, list):
            return v
        return [
            tuple(_resolve(p, info) for p in pair) if isinstance(pair, (list, tuple)) else pair
            for pair in v
        ]

    @field_validator("root")
    @classmethod
    def validate_root(cls, v):
        """Validate the dataset root exists."""
        if not v.is_dir():
            raise ValueError(f"dataset root does not exist: {v}")
        return v

    @property
    def category_root(self) -> Path:
        return self.root / self.category if self.category else self.root


class RunConfig(BaseModel):
    """Everything needed to reproduce a training, calibration or evaluation run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(default=0, ge=0, description="Top-level seed")
    output_dir: Path = Field(default=Path("runs/latest"))
    dataset: DatasetConfig
    architecture: ArchitectureSpec = Field(default_factory=ArchitectureSpec.default)
    train: TrainConfig = Field(default_factory=TrainConfig)
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    cwssim: CwssimConfig = Field(default_factory=CwssimConfig)

    @field_validator("output_dir", mode="before")
    @classmethod
    def resolve_output_dir(cls, v, info: ValidationInfo):
        return _resolve(v, info)

    def train_config(self) -> TrainConfig:
        """Training config with the top-level seed filled in."""
        if self.train.seed is None:
            return self.train.model_copy(update={"seed": self.seed})
        return self.train
