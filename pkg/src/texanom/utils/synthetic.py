"""Procedural textures, inserted defects and MVTec-layout toy datasets."""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import tomli_w
from scipy import ndimage

from ..models.images import AnomalyMask
from .image_io import save_image, save_mask
from .seeding import derive_rng

logger = logging.getLogger(__name__)

DEFECT_KINDS = ("flat", "rotated")
DESK_WIDTHS = (8, 16, 32)
CONFIG_NAME = "config.toml"
SYNTHETIC = "synthetic"


def stripe_texture(
    shape: Tuple[int, int],
    rng: np.random.Generator,
    period: float = 8.0,
    angle: float = np.pi / 4,
    contrast: float = 0.35,
    noise: float = 0.02,
) -> np.ndarray:
    """Oriented sinusoidal stripes with random phase and mild pixel noise."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    along = xx * np.cos(angle) + yy * np.sin(angle)
    carrier = np.sin(2.0 * np.pi * along / period + phase)
    image = 0.5 + contrast * carrier + noise * rng.standard_normal(shape)
    return np.clip(image, 0.0, 1.0)


def noise_texture(
    shape: Tuple[int, int], rng: np.random.Generator, sigma: float = 1.5
) -> np.ndarray:
    """Band-limited noise: difference of Gaussians of white noise, scaled to [0, 1]."""
    white = rng.standard_normal(shape)
    fine = ndimage.gaussian_filter(white, sigma, mode="wrap")
    coarse = ndimage.gaussian_filter(white, 2.0 * sigma, mode="wrap")
    band = fine - coarse
    lo, hi = band.min(), band.max()
    return (band - lo) / (hi - lo) if hi > lo else np.full(shape, 0.5)


def _defect_box(
    shape: Tuple[int, int], size: int, rng: np.random.Generator
) -> Tuple[slice, slice]:
    h, w = shape
    size = min(size, h, w)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return slice(top, top + size), slice(left, left + size)


def insert_flat_square(
    image: np.ndarray, rng: np.random.Generator, size: int = 24
) -> Tuple[np.ndarray, np.ndarray]:
    """Replace a random square with its mean intensity."""
    out = image.copy()
    mask = np.zeros(image.shape, dtype=bool)
    box = _defect_box(image.shape, size, rng)
    out[box] = image[box].mean()
    mask[box] = True
    return out, mask


def insert_rotated_patch(
    image: np.ndarray, rng: np.random.Generator, size: int = 24, angle: float = 90.0
) -> Tuple[np.ndarray, np.ndarray]:
    """Replace a random square with a rotated copy of itself."""
    out = image.copy()
    mask = np.zeros(image.shape, dtype=bool)
    box = _defect_box(image.shape, size, rng)
    rotated = ndimage.rotate(image[box], angle, reshape=False, order=1, mode="reflect")
    out[box] = np.clip(rotated, 0.0, 1.0)
    mask[box] = True
    return out, mask


class SyntheticDefectGenerator:
    """Inserts flat or rotated-patch defects into texture images."""

    def __init__(self, size: int = 24, kinds: Sequence[str] = DEFECT_KINDS):
        unknown = set(kinds) - set(DEFECT_KINDS)
        if unknown:
            raise ValueError(f"unknown defect kinds: {sorted(unknown)}")
        self.size = size
        self.kinds = tuple(kinds)

    def generate(
        self, image: np.ndarray, rng: np.random.Generator, kind: Optional[str] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        kind = kind or self.kinds[int(rng.integers(0, len(self.kinds)))]
        if kind == "flat":
            return insert_flat_square(image, rng, self.size)
        return insert_rotated_patch(image, rng, self.size)


def desk_config(
    image_size: int, patch_size: int, validation: List[Tuple[str, str]]
) -> dict:
    """Reduced-scale run configuration for a synthetic dataset directory."""
    return {
        "seed": 0,
        "output_dir": "runs/latest",
        "dataset": {"root": ".", "validation": [list(pair) for pair in validation]},
        "architecture": {"widths": list(DESK_WIDTHS)},
        "train": {
            "loss": "cwssim",
            "epochs": 20,
            "patch_size": patch_size,
            "patch_count": 2000,
            "decomposer": {"orientations": 4, "scales": 3},
        },
        "inference": {
            "patch_size": patch_size,
            "stride": 16,
            "fusion_scales": [3, 4, 5] if image_size >= 64 else [3],
            "erosion_radius": 2,
        },
        "cwssim": {"window_size": 7},
    }


def write_synthetic_dataset(
    root: Union[str, Path],
    seed: int = 0,
    image_size: int = 128,
    train_count: int = 10,
    test_good_count: int = 5,
    defect_count: int = 10,
    validation_count: int = 4,
    defect_size: int = 24,
    patch_size: int = 64,
) -> Path:
    """Write an MVTec-layout stripe-texture dataset and a ready-to-run config.

    Layout: ``train/good``, ``test/good``, ``test/<kind>`` with masks in
    ``ground_truth/<kind>/<stem>_mask.png``, plus ``validation/`` images and
    masks kept out of the test split.

    Returns:
        Path of the written ``config.toml``.
    """
    root = Path(root)
    rng = derive_rng(seed, SYNTHETIC)
    shape = (image_size, image_size)
    generator = SyntheticDefectGenerator(size=defect_size)

    for i in range(train_count):
        save_image(stripe_texture(shape, rng), root / "train" / "good" / f"{i:03d}.png")
    for i in range(test_good_count):
        save_image(stripe_texture(shape, rng), root / "test" / "good" / f"{i:03d}.png")
    for i in range(defect_count):
        kind = DEFECT_KINDS[i % len(DEFECT_KINDS)]
        image, mask = generator.generate(stripe_texture(shape, rng), rng, kind)
        save_image(image, root / "test" / kind / f"{i:03d}.png")
        _save_mask(mask, root / "ground_truth" / kind / f"{i:03d}_mask.png")

    validation = []
    for i in range(validation_count):
        image, mask = generator.generate(stripe_texture(shape, rng), rng)
        image_rel = f"validation/{i:03d}.png"
        mask_rel = f"validation/{i:03d}_mask.png"
        save_image(image, root / image_rel)
        _save_mask(mask, root / mask_rel)
        validation.append((image_rel, mask_rel))

    config_path = root / CONFIG_NAME
    with open(config_path, "wb") as f:
        tomli_w.dump(desk_config(image_size, patch_size, validation), f)
    logger.info(
        "Wrote synthetic dataset to %s (%d train, %d test, %d validation)",
        root,
        train_count,
        test_good_count + defect_count,
        validation_count,
    )
    return config_path


def _save_mask(mask: np.ndarray, path: Union[str, Path]) -> Path:
    return save_mask(AnomalyMask(data=mask), path)
