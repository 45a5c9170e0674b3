"""Dataset indexing (MVTec layout) and random patch sampling."""

import logging
from collections import abc
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..models.config import DatasetConfig, PatchSampler
from ..models.errors import ConfigurationError, DatasetError
from ..models.images import AnomalyMask, GrayImage
from .image_io import load_image, load_mask
from .seeding import SAMPLING, derive_rng

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")
NORMAL_DIR = "good"


class DatasetIndex(BaseModel):
    """Image paths for the training, validation and test roles."""

    model_config = ConfigDict(frozen=True)

    train_normal: List[Path] = Field(default_factory=list)
    validation_defective: List[Tuple[Path, Path]] = Field(default_factory=list)
    test: List[Tuple[Path, Optional[Path]]] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_paths(self) -> "DatasetIndex":
        """Validate every path exists and validation/test do not overlap."""
        referenced = list(self.train_normal)
        for image, mask in self.validation_defective:
            referenced += [image, mask]
        for image, mask in self.test:
            referenced += [image] + ([mask] if mask is not None else [])
        missing = [str(p) for p in referenced if not Path(p).is_file()]
        if missing:
            raise ValueError(f"missing files: {', '.join(missing[:5])}")

        validation = {Path(img).resolve() for img, _ in self.validation_defective}
        overlap = [str(img) for img, _ in self.test if Path(img).resolve() in validation]
        if overlap:
            raise ValueError(f"validation and test sets overlap: {', '.join(overlap[:5])}")
        return self


def _list_images(directory: Path) -> List[Path]:
    if not directory.is_dir():
        return []
    images = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in IMAGE_SUFFIXES:
            images.append(path)
        elif path.is_file():
            logger.warning("Skipping non-image file %s", path)
    return images


def _evenly_spaced(items: Sequence, limit: Optional[int]) -> List:
    if limit is None or limit >= len(items):
        return list(items)
    picks = np.linspace(0, len(items) - 1, num=limit).round().astype(int)
    return [items[i] for i in picks]


class DataLoader:
    """Builds a DatasetIndex from an MVTec-layout directory and caches images."""

    def __init__(self, config: DatasetConfig):
        """
        Initialize with a dataset configuration.

        Args:
            config: Dataset root, optional category and validation split
        """
        self.config = config
        self.root = config.category_root
        self._images: Dict[Path, GrayImage] = {}
        self.index = self._build_index()

    def _build_index(self) -> DatasetIndex:
        if not self.root.is_dir():
            raise DatasetError(f"Dataset directory not found: {self.root}")

        train = _list_images(self.root / "train" / NORMAL_DIR)
        if not train:
            raise DatasetError(f"No training images under {self.root / 'train' / NORMAL_DIR}")
        train = _evenly_spaced(train, self.config.limit_train)

        validation = [(Path(img), Path(mask)) for img, mask in self.config.validation]
        excluded = {img.resolve() for img, _ in validation}

        test: List[Tuple[Path, Optional[Path]]] = []
        test_root = self.root / "test"
        defect_dirs = []
        if test_root.is_dir():
            defect_dirs = sorted(p for p in test_root.iterdir() if p.is_dir())
        for defect_dir in defect_dirs:
            for image in _list_images(defect_dir):
                if image.resolve() in excluded:
                    continue
                if defect_dir.name == NORMAL_DIR:
                    test.append((image, None))
                    continue
                mask = self.root / "ground_truth" / defect_dir.name / f"{image.stem}_mask.png"
                if not mask.is_file():
                    raise DatasetError(f"Missing ground-truth mask for {image}: {mask}")
                test.append((image, mask))
        test = _evenly_spaced(test, self.config.limit_test)

        try:
            index = DatasetIndex(
                train_normal=train, validation_defective=validation, test=test
            )
        except ValueError as e:
            raise DatasetError(str(e)) from e

        logger.info(
            "Indexed %d training, %d validation and %d test images under %s",
            len(index.train_normal),
            len(index.validation_defective),
            len(index.test),
            self.root,
        )
        return index

    def get_image(self, path: Path) -> GrayImage:
        """Load an image once and serve it from the cache afterwards."""
        path = Path(path)
        if path not in self._images:
            self._images[path] = load_image(path)
        return self._images[path]

    def get_mask(self, path: Optional[Path], shape: Tuple[int, int]) -> AnomalyMask:
        """Ground-truth mask, or an all-normal mask when ``path`` is None."""
        if path is None:
            return AnomalyMask(data=np.zeros(shape, dtype=bool))
        mask = load_mask(path)
        if mask.shape != tuple(shape):
            raise DatasetError(
                f"Mask {path} has shape {mask.shape}, image has shape {tuple(shape)}"
            )
        return mask


class PatchSet(abc.Sequence):
    """Lazily cropped patches addressed by (image, top, left) positions."""

    def __init__(self, images: List[np.ndarray], positions: np.ndarray, patch_size: int):
        self.images = images
        self.positions = positions
        self.patch_size = patch_size

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    def _crop(self, k: int) -> np.ndarray:
        img, top, left = (int(v) for v in self.positions[k])
        p = self.patch_size
        return self.images[img][top : top + p, left : left + p]

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        return GrayImage(data=self._crop(k))

    def batch(self, indices: Sequence[int]) -> np.ndarray:
        """Stack the selected patches into a (B, p, p) float64 array."""
        p = self.patch_size
        out = np.empty((len(indices), p, p), dtype=np.float64)
        for i, k in enumerate(indices):
            out[i] = self._crop(int(k))
        return out


def sample_patches(
    index: DatasetIndex,
    sampler: PatchSampler,
    loader: Optional[DataLoader] = None,
    worker: int = 0,
) -> PatchSet:
    """Draw ``sampler.count`` patches uniformly over images and positions.

    Sampling is with replacement; the same (index, sampler, worker) always
    yields the same positions.

    Raises:
        ConfigurationError: If a training image is smaller than the patch size.
    """
    p = sampler.patch_size
    images = []
    for path in index.train_normal:
        image = loader.get_image(path) if loader is not None else load_image(path)
        if image.height < p or image.width < p:
            raise ConfigurationError(
                f"Training image {path} is {image.height}x{image.width}, "
                f"smaller than patch size {p}"
            )
        images.append(image.data)

    rng = derive_rng(sampler.rng_seed, SAMPLING, worker)
    if sampler.count == 0 or not images:
        return PatchSet(images, np.zeros((0, 3), dtype=np.int64), p)

    max_top = np.array([img.shape[0] - p for img in images], dtype=np.int64)
    max_left = np.array([img.shape[1] - p for img in images], dtype=np.int64)
    which = rng.integers(0, len(images), size=sampler.count)
    tops = rng.integers(0, max_top[which] + 1)
    lefts = rng.integers(0, max_left[which] + 1)
    positions = np.stack([which, tops, lefts], axis=1).astype(np.int64)
    logger.info("Sampled %d patches of %dx%d from %d images", sampler.count, p, p, len(images))
    return PatchSet(images, positions, p)
