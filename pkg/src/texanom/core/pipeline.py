"""Full-image inference: patch reconstruction, anomaly maps, thresholding."""

import logging
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from skimage.morphology import disk

from ..models.config import DecomposerConfig, InferenceConfig, MorphologyName
from ..models.errors import CalibrationError, ContractViolationError, DegenerateInputError
from ..models.images import AnomalyMap, AnomalyMask, GrayImage
from .network import ModelParams, reconstruct
from .pyramid import Decomposer
from .similarity import covering_window_mean, cwssim_subband_map

logger = logging.getLogger(__name__)

Reconstructor = Callable[[np.ndarray], np.ndarray]


def _axis_starts(dim: int, patch: int, stride: int) -> List[int]:
    if dim < patch:
        raise DegenerateInputError(f"image side {dim} is smaller than patch size {patch}")
    starts = list(range(0, dim - patch + 1, stride))
    if starts[-1] != dim - patch:
        starts.append(dim - patch)
    return starts


def patch_grid(h: int, w: int, patch: int, stride: int) -> List[Tuple[int, int]]:
    """Top-left corners of stride-spaced patches covering an h x w image.

    A final start flush with the far edge is added on each axis whose span
    is not a multiple of the stride.

    Raises:
        DegenerateInputError: If the image is smaller than the patch.
    """
    rows = _axis_starts(h, patch, stride)
    cols = _axis_starts(w, patch, stride)
    return [(top, left) for top in rows for left in cols]


def _pad_to(data: np.ndarray, h: int, w: int) -> np.ndarray:
    pad_h = max(0, h - data.shape[0])
    pad_w = max(0, w - data.shape[1])
    if pad_h == 0 and pad_w == 0:
        return data
    return np.pad(data, ((0, pad_h), (0, pad_w)), mode="reflect")


def reconstruct_full(
    image: GrayImage,
    m: Optional[ModelParams],
    cfg: InferenceConfig,
    reconstructor: Optional[Reconstructor] = None,
) -> GrayImage:
    """Reconstruct a full image from overlapping patches.

    Every output pixel is the mean of that pixel over all patches covering
    it. Images smaller than the patch are reflect-padded and cropped back.

    Args:
        reconstructor: Maps a (B, p, p) batch to its reconstruction; defaults
            to the autoencoder forward pass of ``m``
    """
    p = cfg.patch_size
    if reconstructor is None:
        trace = m.architecture.spatial_trace(p)
        if trace is None or trace[-1] != p:
            raise ContractViolationError(
                f"model cannot reconstruct patches of size {p}x{p}"
            )

        def reconstructor(batch):
            return reconstruct(batch, m)

    h, w = image.shape
    data = _pad_to(image.data, max(h, p), max(w, p))
    positions = patch_grid(data.shape[0], data.shape[1], p, cfg.stride)
    batches = [
        positions[i : i + cfg.batch_size] for i in range(0, len(positions), cfg.batch_size)
    ]

    def run(batch):
        crops = np.stack([data[t : t + p, c : c + p] for t, c in batch])
        out = np.asarray(reconstructor(crops), dtype=np.float64)
        if out.shape != crops.shape:
            raise ContractViolationError(
                f"reconstructor returned shape {out.shape}, expected {crops.shape}"
            )
        return out

    if cfg.threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outputs = list(pool.map(run, batches))
    else:
        outputs = [run(batch) for batch in batches]

    acc = np.zeros(data.shape)
    count = np.zeros(data.shape)
    for batch, out in zip(batches, outputs):
        for (t, c), patch in zip(batch, out):
            acc[t : t + p, c : c + p] += patch
            count[t : t + p, c : c + p] += 1.0
    logger.debug("Reconstructed %dx%d image from %d patches", h, w, len(positions))
    return GrayImage(data=np.clip(acc / count, 0.0, 1.0)[:h, :w])


@lru_cache(maxsize=16)
def _decomposer(config: DecomposerConfig) -> Decomposer:
    return Decomposer(config)


def _scale_score(
    x: np.ndarray, y: np.ndarray, cfg: InferenceConfig, scales: int
) -> np.ndarray:
    """``1 - mean over subbands`` of per-pixel covering-window CW-SSIM at one S."""
    h, w = x.shape
    factor = 2 ** (scales - 1)
    ph, pw = -(-h // factor) * factor, -(-w // factor) * factor
    xp, yp = _pad_to(x, ph, pw), _pad_to(y, ph, pw)

    decomposer = _decomposer(cfg.decomposer_config(scales, (ph, pw)))
    window_cfg = cfg.cwssim_config()
    dx = decomposer.decompose(xp)
    dy = decomposer.decompose(yp)
    total = np.zeros((ph, pw))
    for m, (xs, ys) in enumerate(zip(dx, dy)):
        sim = cwssim_subband_map(xs, ys, window_cfg, clip_window=True)
        pixel = covering_window_mean(sim)
        f = decomposer.scale_factor(m)
        total += np.repeat(np.repeat(pixel, f, axis=0), f, axis=1)
    score = 1.0 - total / decomposer.subband_count
    return score[:h, :w]


def anomaly_map(
    image: GrayImage, reconstruction: GrayImage, cfg: InferenceConfig
) -> AnomalyMap:
    """Multi-scale CW-SSIM anomaly map of ``image`` against its reconstruction.

    For each S in ``cfg.fusion_scales`` the pair is reflect-padded to a
    multiple of 2**(S-1) and decomposed; each subband's window scores are
    averaged per pixel over the windows covering it, replicated to image
    resolution, and averaged over subbands. The map is the mean over S of
    ``1 - that average``, cropped to the image.

    Scoring is always CW-SSIM, whichever loss the model was trained with,
    so MSE- and SSIM-trained baselines are evaluated under the same maps.

    Raises:
        ContractViolationError: If the two images differ in shape.
    """
    if image.shape != reconstruction.shape:
        raise ContractViolationError(
            f"image {image.shape} and reconstruction {reconstruction.shape} differ in shape"
        )
    x, y = image.data, reconstruction.data

    def run(scales: int) -> np.ndarray:
        return _scale_score(x, y, cfg, scales)

    if cfg.threads > 1 and len(cfg.fusion_scales) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            per_scale = list(pool.map(run, cfg.fusion_scales))
    else:
        per_scale = [run(s) for s in cfg.fusion_scales]

    fused = np.zeros(x.shape)
    for score in per_scale:
        fused += score
    fused /= len(per_scale)
    return AnomalyMap(data=np.maximum(fused, 0.0))


def normal_pixel_scores(
    maps: Sequence[AnomalyMap], masks: Sequence[AnomalyMask]
) -> np.ndarray:
    """Pool the scores of every ground-truth normal pixel."""
    if len(maps) != len(masks):
        raise ContractViolationError(f"{len(maps)} maps but {len(masks)} masks")
    pooled = []
    for anomaly, mask in zip(maps, masks):
        if anomaly.shape != mask.shape:
            raise ContractViolationError(
                f"map {anomaly.shape} and mask {mask.shape} differ in shape"
            )
        pooled.append(anomaly.data[~mask.data])
    return np.concatenate(pooled) if pooled else np.zeros(0)


def empirical_fpr(normal_scores: np.ndarray, gamma: float) -> float:
    normal_scores = np.asarray(normal_scores)
    return float(np.count_nonzero(normal_scores >= gamma)) / normal_scores.size


def calibrate_threshold(normal_scores: np.ndarray, target_fpr: float = 0.05) -> float:
    """Smallest quantile threshold whose FPR (score >= gamma) stays at or below target.

    Raises:
        CalibrationError: If there are no normal pixels.
    """
    pool = np.asarray(normal_scores, dtype=np.float64).ravel()
    if pool.size == 0:
        raise CalibrationError("no normal pixels available for calibration")
    gamma = float(np.quantile(pool, 1.0 - target_fpr, method="higher"))
    if empirical_fpr(pool, gamma) > target_fpr:
        # ties at the quantile: step just above the tied value
        gamma = float(np.nextafter(gamma, np.inf))
    logger.info(
        "Calibrated gamma=%.6g on %d normal pixels (FPR %.4f, target %.4f)",
        gamma,
        pool.size,
        empirical_fpr(pool, gamma),
        target_fpr,
    )
    return gamma


def binarize_and_erode(
    anomaly: AnomalyMap,
    gamma: float,
    radius: int = 10,
    morphology: MorphologyName = "erosion",
) -> AnomalyMask:
    """Threshold at ``score >= gamma`` and apply a disk morphology (radius 0: none)."""
    mask = anomaly.data >= gamma
    if radius <= 0:
        return AnomalyMask(data=mask)
    se = disk(radius).astype(bool)
    if morphology == "erosion":
        out = ndimage.binary_erosion(mask, structure=se, border_value=0)
    elif morphology == "dilation":
        out = ndimage.binary_dilation(mask, structure=se)
    elif morphology == "opening":
        eroded = ndimage.binary_erosion(mask, structure=se, border_value=0)
        out = ndimage.binary_dilation(eroded, structure=se)
    else:
        dilated = ndimage.binary_dilation(mask, structure=se)
        out = ndimage.binary_erosion(dilated, structure=se, border_value=1)
    return AnomalyMask(data=out)
