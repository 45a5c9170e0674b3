"""Anomaly detection service combining a trained model, inference and evaluation."""

import hashlib
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from ..models.config import InferenceConfig
from ..models.errors import ConfigurationError
from ..models.images import AnomalyMap, AnomalyMask, GrayImage
from ..models.results import CalibrationRecord, EvalReport
from ..utils.data_loader import DataLoader
from ..utils.image_io import load_image, load_mask, write_anomaly_map
from ..utils.log_config import progress_enabled
from ..utils.model_io import load_model
from .metrics import ScoreTally, defect_coverage, partial_auc_normalized, roc_curve
from .network import ModelParams
from .pipeline import (
    anomaly_map,
    binarize_and_erode,
    calibrate_threshold,
    empirical_fpr,
    normal_pixel_scores,
    reconstruct_full,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def file_set_hash(paths: Sequence[PathLike]) -> str:
    """SHA-256 over the names and contents of ``paths`` in the given order."""
    digest = hashlib.sha256()
    for path in paths:
        path = Path(path)
        digest.update(path.name.encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()


class AnomalyDetector:
    """Main service for scoring, calibrating and evaluating with one model."""

    def __init__(self, model: ModelParams, cfg: Optional[InferenceConfig] = None):
        """
        Initialize the detector with a model and inference settings.

        Args:
            model: Trained autoencoder parameters
            cfg: Inference settings (defaults if omitted)

        Raises:
            ConfigurationError: If the model cannot process ``cfg.patch_size`` patches.
        """
        self.model = model
        self.cfg = cfg or InferenceConfig()
        trace = model.architecture.spatial_trace(self.cfg.patch_size)
        if trace is None or trace[-1] != self.cfg.patch_size:
            raise ConfigurationError(
                f"model architecture does not accept {self.cfg.patch_size}x"
                f"{self.cfg.patch_size} patches"
            )

    @classmethod
    def from_file(cls, model_path: PathLike, cfg: Optional[InferenceConfig] = None):
        return cls(load_model(model_path), cfg)

    def reconstruct(self, image: GrayImage) -> GrayImage:
        return reconstruct_full(image, self.model, self.cfg)

    def score(self, image: GrayImage) -> AnomalyMap:
        """
        Reconstruct an image and compute its anomaly map.

        Args:
            image: Gray image at least one pixel in each dimension

        Returns:
            Per-pixel anomaly scores with the image's shape
        """
        return anomaly_map(image, self.reconstruct(image), self.cfg)

    def mask(
        self, scores: AnomalyMap, gamma: float, radius: Optional[int] = None
    ) -> AnomalyMask:
        """Threshold a map at ``gamma`` and apply the configured morphology."""
        radius = self.cfg.erosion_radius if radius is None else radius
        return binarize_and_erode(scores, gamma, radius, self.cfg.morphology)

    def calibrate(
        self,
        validation: Sequence[Tuple[PathLike, PathLike]],
        target_fpr: Optional[float] = None,
    ) -> CalibrationRecord:
        """
        Choose gamma so the pooled normal validation pixels reach the target FPR.

        Args:
            validation: (image path, ground-truth mask path) pairs

        Raises:
            CalibrationError: If the validation set has no normal pixel.
        """
        target = self.cfg.target_fpr if target_fpr is None else target_fpr
        maps, masks = [], []
        for image_path, mask_path in self._progress(validation, "calibrate"):
            maps.append(self.score(load_image(image_path)))
            masks.append(load_mask(mask_path))
        pool = normal_pixel_scores(maps, masks)
        gamma = calibrate_threshold(pool, target)
        paths = [p for pair in validation for p in pair]
        return CalibrationRecord(
            gamma=gamma,
            target_fpr=target,
            achieved_fpr=empirical_fpr(pool, gamma),
            normal_pixels=int(pool.size),
            validation_hash=file_set_hash(paths),
        )

    def evaluate(
        self,
        loader: DataLoader,
        gamma: Optional[float] = None,
        fpr_max: float = 0.3,
        map_dir: Optional[PathLike] = None,
        config_hash: str = "",
    ) -> EvalReport:
        """
        Score every test image of ``loader`` and pool pixels into one report.

        Coverage is computed only when ``gamma`` is given.

        Raises:
            EvaluationError: If the pooled pixels hold a single class.
        """
        tally = ScoreTally.empty()
        coverages: List[float] = []
        test = loader.index.test
        for image_path, mask_path in self._progress(test, "evaluate"):
            image = loader.get_image(image_path)
            scores = self.score(image)
            gt = loader.get_mask(mask_path, image.shape)
            tally = tally.merge(ScoreTally.from_arrays(scores.data, gt.data))
            if map_dir is not None:
                name = f"{Path(image_path).parent.name}_{Path(image_path).stem}.tam"
                write_anomaly_map(scores, Path(map_dir) / name)
            if gamma is not None and gt.positive_count > 0:
                coverages += defect_coverage(gt, self.mask(scores, gamma)).coverages

        curve = roc_curve(tally)
        report = EvalReport(
            auc=curve.auc,
            normalized_auc_03=partial_auc_normalized(curve, fpr_max),
            fpr_max=fpr_max,
            coverages=coverages,
            median_coverage=float(np.median(coverages)) if coverages else None,
            gamma=gamma,
            positive_pixels=tally.positive_count,
            negative_pixels=tally.negative_count,
            image_count=len(test),
            config_hash=config_hash,
        )
        logger.info(
            "Evaluated %d images: AUC %.4f, normalized partial AUC %.4f",
            report.image_count,
            report.auc,
            report.normalized_auc_03,
        )
        return report

    def _progress(self, items, desc: str):
        return tqdm(items, desc=desc, unit="image", disable=not progress_enabled(logger))
