"""Pixel-level ROC analysis and per-defect coverage."""

from dataclasses import dataclass
from typing import Iterable, List, Literal, Optional, Union

import numpy as np
from scipy import ndimage
from sklearn.metrics import auc as trapezoid_area

from ..models.errors import ConfigurationError, ContractViolationError, EvaluationError
from ..models.images import AnomalyMask

Connectivity = Literal[4, 8]


@dataclass(frozen=True)
class ScoreTally:
    """Distinct scores (ascending) with their positive and negative pixel counts.

    Tallies built per image and merged give exactly the counts of the pooled
    pixels, so ROC curves do not depend on how pixels were grouped.
    """

    scores: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    @classmethod
    def empty(cls) -> "ScoreTally":
        return cls(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_arrays(cls, scores: np.ndarray, labels: np.ndarray) -> "ScoreTally":
        scores = np.asarray(scores, dtype=np.float64).ravel()
        labels = np.asarray(labels).ravel().astype(bool)
        if scores.shape != labels.shape:
            raise ContractViolationError(
                f"{scores.size} scores but {labels.size} labels"
            )
        if not np.all(np.isfinite(scores)):
            raise EvaluationError("scores must be finite")
        unique, inverse = np.unique(scores, return_inverse=True)
        positives = np.bincount(inverse[labels], minlength=unique.size)
        negatives = np.bincount(inverse[~labels], minlength=unique.size)
        return cls(unique, positives.astype(np.int64), negatives.astype(np.int64))

    def merge(self, other: "ScoreTally") -> "ScoreTally":
        scores = np.concatenate([self.scores, other.scores])
        unique, inverse = np.unique(scores, return_inverse=True)
        positives = np.zeros(unique.size, dtype=np.int64)
        negatives = np.zeros(unique.size, dtype=np.int64)
        np.add.at(positives, inverse, np.concatenate([self.positives, other.positives]))
        np.add.at(negatives, inverse, np.concatenate([self.negatives, other.negatives]))
        return ScoreTally(unique, positives, negatives)

    @property
    def positive_count(self) -> int:
        return int(self.positives.sum())

    @property
    def negative_count(self) -> int:
        return int(self.negatives.sum())


def merge_tallies(tallies: Iterable[ScoreTally]) -> ScoreTally:
    merged = ScoreTally.empty()
    for tally in tallies:
        merged = merged.merge(tally)
    return merged


@dataclass(frozen=True)
class RocCurve:
    """(FPR, TPR) points from (0, 0) to (1, 1); thresholds are ``score >= t``."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    @property
    def auc(self) -> float:
        return float(trapezoid_area(self.fpr, self.tpr))


def roc_curve(
    scores: Union[np.ndarray, ScoreTally], labels: Optional[np.ndarray] = None
) -> RocCurve:
    """Threshold sweep over distinct scores; tied scores form one step.

    Args:
        scores: Per-pixel scores (with ``labels``) or a prebuilt ScoreTally

    Raises:
        EvaluationError: If the labels contain only one class.
    """
    if isinstance(scores, ScoreTally):
        tally = scores
    else:
        if labels is None:
            raise ContractViolationError("labels are required with raw scores")
        tally = ScoreTally.from_arrays(scores, labels)
    n_pos, n_neg = tally.positive_count, tally.negative_count
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError(
            f"ROC needs both classes, got {n_pos} positive and {n_neg} negative pixels"
        )
    tp = np.cumsum(tally.positives[::-1])
    fp = np.cumsum(tally.negatives[::-1])
    fpr = np.concatenate([[0.0], fp / n_neg])
    tpr = np.concatenate([[0.0], tp / n_pos])
    thresholds = np.concatenate([[np.inf], tally.scores[::-1]])
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds)


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    return roc_curve(scores, labels).auc


def partial_auc_normalized(curve: RocCurve, fpr_max: float = 0.3) -> float:
    """Area under the curve for FPR in [0, fpr_max], divided by ``fpr_max``."""
    if not 0.0 < fpr_max <= 1.0:
        raise ConfigurationError(f"fpr_max must lie in (0, 1], got {fpr_max}")
    fpr, tpr = curve.fpr, curve.tpr
    k = int(np.searchsorted(fpr, fpr_max, side="right"))
    x, y = fpr[:k], tpr[:k]
    if k < fpr.size and x[-1] < fpr_max:
        t = (fpr_max - fpr[k - 1]) / (fpr[k] - fpr[k - 1])
        cut = tpr[k - 1] + t * (tpr[k] - tpr[k - 1])
        x = np.append(x, fpr_max)
        y = np.append(y, cut)
    return float(trapezoid_area(x, y)) / fpr_max


@dataclass(frozen=True)
class ComponentLabels:
    """Component label image (0 = background, 1..count in raster order)."""

    labels: np.ndarray
    count: int

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.count + 1)[1:]


def _structure(connectivity: Connectivity) -> np.ndarray:
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    raise ConfigurationError(f"connectivity must be 4 or 8, got {connectivity}")


def connected_components(
    mask: Union[AnomalyMask, np.ndarray], connectivity: Connectivity = 8
) -> ComponentLabels:
    """Label connected regions; label k is the k-th component met in a raster scan."""
    data = mask.data if isinstance(mask, AnomalyMask) else np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(data, structure=_structure(connectivity))
    if count > 1:
        found, first = np.unique(labels.ravel(), return_index=True)
        keep = found > 0
        order = found[keep][np.argsort(first[keep])]
        remap = np.zeros(count + 1, dtype=labels.dtype)
        remap[order] = np.arange(1, count + 1, dtype=labels.dtype)
        labels = remap[labels]
    return ComponentLabels(labels=labels, count=int(count))


@dataclass(frozen=True)
class CoverageResult:
    coverages: List[float]
    median: float


def defect_coverage(
    gt: AnomalyMask, pred: AnomalyMask, connectivity: Connectivity = 8
) -> CoverageResult:
    """Fraction of each ground-truth component covered by the prediction.

    Raises:
        EvaluationError: If the ground truth has no anomalous pixel.
    """
    if gt.shape != pred.shape:
        raise ContractViolationError(f"mask shapes differ: {gt.shape} vs {pred.shape}")
    components = connected_components(gt, connectivity)
    if components.count == 0:
        raise EvaluationError("ground-truth mask contains no defect")
    hits = np.bincount(
        components.labels[pred.data], minlength=components.count + 1
    )[1:]
    coverages = (hits / components.sizes).tolist()
    return CoverageResult(coverages=coverages, median=float(np.median(coverages)))
