"""Structural similarity indices, reconstruction losses and their gradients.

Gradients are taken with respect to the reconstruction ``y``. For complex
quantities the real and imaginary parts are independent real variables and
gradients are returned packed as ``d/dRe + 1j * d/dIm``.
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve

from ..models.config import CwssimConfig, DecomposerConfig, LossName, SsimConfig
from ..models.errors import ConfigurationError, ContractViolationError, DegenerateInputError
from .pyramid import Decomposer, build_decomposer

Scalar = Union[float, np.ndarray]


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ContractViolationError(f"shape mismatch: {a.shape} vs {b.shape}")


def _per_sample(values: np.ndarray) -> Scalar:
    return float(values) if np.ndim(values) == 0 else values


def cwssim_window(wx: np.ndarray, wy: np.ndarray, K: float) -> float:
    """CW-SSIM of two complex windows: (2|<wx,wy>| + K) / (|wx|^2 + |wy|^2 + K)."""
    wx = np.asarray(wx, dtype=np.complex128)
    wy = np.asarray(wy, dtype=np.complex128)
    _check_same_shape(wx, wy)
    cross = np.vdot(wx, wy)
    energy_x = np.vdot(wx, wx).real
    energy_y = np.vdot(wy, wy).real
    return float((2.0 * abs(cross) + K) / (energy_x + energy_y + K))


def _window_sum(a: np.ndarray, window: Tuple[int, int], stride: int) -> np.ndarray:
    rh, rw = window
    rows = sliding_window_view(a, rh, axis=-2)[..., ::stride, :, :].sum(axis=-1)
    return sliding_window_view(rows, rw, axis=-1)[..., ::stride, :].sum(axis=-1)


def _window_sum_adjoint(
    g: np.ndarray, shape: Tuple[int, int], window: Tuple[int, int], stride: int
) -> np.ndarray:
    """Scatter per-window values back onto every pixel each window covers."""
    rh, rw = window
    h, w = shape
    lead = g.shape[:-2]
    starts = np.zeros(lead + (h - rh + 1, w - rw + 1), dtype=g.dtype)
    starts[..., ::stride, ::stride] = g
    pad = [(0, 0)] * len(lead) + [(rh - 1, rh - 1), (rw - 1, rw - 1)]
    return _window_sum(np.pad(starts, pad), window, 1)


@dataclass(frozen=True)
class SimilarityMap:
    """CW-SSIM scores on the window grid of one subband."""

    scores: np.ndarray
    window: Tuple[int, int]
    stride: int
    subband_shape: Tuple[int, int]

    @property
    def window_count(self) -> int:
        return int(self.scores.shape[-2] * self.scores.shape[-1])


def covering_window_mean(sim: SimilarityMap) -> np.ndarray:
    """Mean score of the windows covering each pixel of the subband.

    Pixels past the last strided window take the mean of all window scores.
    """
    shape = sim.subband_shape
    num = _window_sum_adjoint(sim.scores, shape, sim.window, sim.stride)
    den = _window_sum_adjoint(np.ones_like(sim.scores), shape, sim.window, sim.stride)
    fallback = np.broadcast_to(sim.scores.mean(axis=(-2, -1))[..., None, None], num.shape)
    return np.divide(num, den, out=np.array(fallback), where=den > 0)


def _window_shape(shape: Tuple[int, int], size: int, clip: bool) -> Tuple[int, int]:
    h, w = shape
    if not clip and (h < size or w < size):
        raise DegenerateInputError(
            f"subband of size {h}x{w} is smaller than the {size}x{size} window"
        )
    return min(size, h), min(size, w)


@dataclass
class _SubbandTerms:
    cross: np.ndarray
    denominator: np.ndarray
    scores: np.ndarray
    window: Tuple[int, int]


def _subband_terms(
    xs: np.ndarray, ys: np.ndarray, cfg: CwssimConfig, clip_window: bool
) -> _SubbandTerms:
    _check_same_shape(xs, ys)
    window = _window_shape(xs.shape[-2:], cfg.window_size, clip_window)
    cross = _window_sum(np.conj(xs) * ys, window, cfg.stride)
    energy_x = _window_sum((np.conj(xs) * xs).real, window, cfg.stride)
    energy_y = _window_sum((np.conj(ys) * ys).real, window, cfg.stride)
    K = cfg.stability
    denominator = energy_x + energy_y + K
    scores = (2.0 * np.abs(cross) + K) / denominator
    return _SubbandTerms(cross, denominator, scores, window)


def cwssim_subband_map(
    xs: np.ndarray,
    ys: np.ndarray,
    cfg: Optional[CwssimConfig] = None,
    clip_window: bool = False,
) -> SimilarityMap:
    """Window-wise CW-SSIM between two subbands of shape (..., h, w).

    Raises:
        DegenerateInputError: If the subband is smaller than the window and
            ``clip_window`` is False.
    """
    cfg = cfg or CwssimConfig()
    terms = _subband_terms(np.asarray(xs), np.asarray(ys), cfg, clip_window)
    return SimilarityMap(terms.scores, terms.window, cfg.stride, tuple(xs.shape[-2:]))


def _cwssim_value_and_grad(
    x: np.ndarray,
    y: np.ndarray,
    decomposer: Decomposer,
    cfg: CwssimConfig,
    with_grad: bool,
):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_shape(x, y)
    dx = decomposer.decompose(x)
    dy = decomposer.decompose(y)
    M = len(dx)

    index = 0.0
    cotangent = []
    for xs, ys in zip(dx, dy):
        terms = _subband_terms(xs, ys, cfg, clip_window=False)
        index = index + terms.scores.mean(axis=(-2, -1))
        if not with_grad:
            continue
        L = terms.scores.shape[-2] * terms.scores.shape[-1]
        magnitude = np.abs(terms.cross)
        phase = np.divide(
            terms.cross,
            magnitude,
            out=np.zeros_like(terms.cross),
            where=magnitude > 0,
        )
        coef_x = 2.0 * phase / (terms.denominator * L)
        coef_y = 2.0 * terms.scores / (terms.denominator * L)
        shape = xs.shape[-2:]
        grad_index = xs * _window_sum_adjoint(
            coef_x, shape, terms.window, cfg.stride
        ) - ys * _window_sum_adjoint(coef_y, shape, terms.window, cfg.stride)
        cotangent.append(-grad_index / M)

    loss = 1.0 - index / M
    grad = decomposer.adjoint(cotangent) if with_grad else None
    return loss, grad


def cwssim_index(
    x: np.ndarray, y: np.ndarray, decomposer: Decomposer, cfg: Optional[CwssimConfig] = None
) -> Scalar:
    """Mean CW-SSIM over windows and subbands (one value per sample)."""
    loss, _ = _cwssim_value_and_grad(x, y, decomposer, cfg or CwssimConfig(), False)
    return _per_sample(1.0 - loss)


def cwssim_loss(
    x: np.ndarray, y: np.ndarray, decomposer: Decomposer, cfg: Optional[CwssimConfig] = None
) -> Scalar:
    """``1 - mean_m mean_l CW-SSIM(x^m_l, y^m_l)`` per sample."""
    loss, _ = _cwssim_value_and_grad(x, y, decomposer, cfg or CwssimConfig(), False)
    return _per_sample(loss)


def cwssim_loss_grad(
    x: np.ndarray, y: np.ndarray, decomposer: Decomposer, cfg: Optional[CwssimConfig] = None
) -> np.ndarray:
    """Exact gradient of :func:`cwssim_loss` with respect to ``y``.

    For a batch, entry ``b`` is the gradient of sample ``b``'s own loss.
    """
    _, grad = _cwssim_value_and_grad(x, y, decomposer, cfg or CwssimConfig(), True)
    return grad


def mse_loss(x: np.ndarray, y: np.ndarray) -> Scalar:
    """Mean squared difference per sample."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_shape(x, y)
    return _per_sample(((y - x) ** 2).mean(axis=(-2, -1)))


def mse_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_shape(x, y)
    n = x.shape[-2] * x.shape[-1]
    return 2.0 * (y - x) / n


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian window."""
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_value_and_grad(x, y, cfg: SsimConfig, with_grad: bool):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_shape(x, y)
    if min(x.shape[-2:]) < cfg.window_size:
        raise DegenerateInputError(
            f"patch of size {x.shape[-2]}x{x.shape[-1]} is smaller than the "
            f"{cfg.window_size}x{cfg.window_size} SSIM window"
        )
    window = gaussian_window(cfg.window_size, cfg.sigma)
    window = window.reshape((1,) * (x.ndim - 2) + window.shape)

    def filt(a):
        return fftconvolve(a, window, mode="valid", axes=(-2, -1))

    def filt_adjoint(g):
        return fftconvolve(g, window, mode="full", axes=(-2, -1))

    mx, my = filt(x), filt(y)
    exx, eyy, exy = filt(x * x), filt(y * y), filt(x * y)
    var_x = exx - mx * mx
    var_y = eyy - my * my
    cov = exy - mx * my

    a1 = 2.0 * mx * my + cfg.c1
    a2 = 2.0 * cov + cfg.c2
    b1 = mx * mx + my * my + cfg.c1
    b2 = var_x + var_y + cfg.c2
    ssim_map = (a1 * a2) / (b1 * b2)
    index = ssim_map.mean(axis=(-2, -1))
    if not with_grad:
        return index, None

    w = 1.0 / (ssim_map.shape[-2] * ssim_map.shape[-1])
    d_a1 = a2 / (b1 * b2)
    d_a2 = a1 / (b1 * b2)
    d_b1 = -ssim_map / b1
    d_b2 = -ssim_map / b2
    d_my = w * (2.0 * mx * d_a1 - 2.0 * mx * d_a2 + 2.0 * my * d_b1 - 2.0 * my * d_b2)
    d_eyy = w * d_b2
    d_exy = w * 2.0 * d_a2
    grad = filt_adjoint(d_my) + 2.0 * y * filt_adjoint(d_eyy) + x * filt_adjoint(d_exy)
    return index, grad


def ssim_index(x: np.ndarray, y: np.ndarray, cfg: Optional[SsimConfig] = None) -> Scalar:
    """Mean local SSIM with a Gaussian window."""
    index, _ = _ssim_value_and_grad(x, y, cfg or SsimConfig(), False)
    return _per_sample(index)


def ssim_loss(x: np.ndarray, y: np.ndarray, cfg: Optional[SsimConfig] = None) -> Scalar:
    index, _ = _ssim_value_and_grad(x, y, cfg or SsimConfig(), False)
    return _per_sample(1.0 - index)


def ssim_grad(x: np.ndarray, y: np.ndarray, cfg: Optional[SsimConfig] = None) -> np.ndarray:
    """Gradient of :func:`ssim_loss` with respect to ``y``."""
    _, grad = _ssim_value_and_grad(x, y, cfg or SsimConfig(), True)
    return -grad


class ReconstructionLoss:
    """Per-sample loss between patches ``x`` and reconstructions ``y``."""

    name: LossName

    def value(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value_and_grad(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class CwssimLoss(ReconstructionLoss):
    name = "cwssim"

    def __init__(self, decomposer: Decomposer, cfg: Optional[CwssimConfig] = None):
        self.decomposer = decomposer
        self.cfg = cfg or CwssimConfig()

    def value(self, x, y):
        loss, _ = _cwssim_value_and_grad(x, y, self.decomposer, self.cfg, False)
        return np.asarray(loss)

    def value_and_grad(self, x, y):
        loss, grad = _cwssim_value_and_grad(x, y, self.decomposer, self.cfg, True)
        return np.asarray(loss), grad


class SsimLoss(ReconstructionLoss):
    name = "ssim"

    def __init__(self, cfg: Optional[SsimConfig] = None):
        self.cfg = cfg or SsimConfig()

    def value(self, x, y):
        index, _ = _ssim_value_and_grad(x, y, self.cfg, False)
        return 1.0 - index

    def value_and_grad(self, x, y):
        index, grad = _ssim_value_and_grad(x, y, self.cfg, True)
        return 1.0 - index, -grad


class MseLoss(ReconstructionLoss):
    name = "mse"

    def value(self, x, y):
        return np.asarray(mse_loss(x, y))

    def value_and_grad(self, x, y):
        return np.asarray(mse_loss(x, y)), mse_grad(x, y)


def make_loss(
    name: LossName,
    decomposer: Optional[DecomposerConfig] = None,
    cwssim: Optional[CwssimConfig] = None,
    ssim: Optional[SsimConfig] = None,
) -> ReconstructionLoss:
    """Build one of the supported training losses by name."""
    if name == "cwssim":
        if decomposer is None:
            raise ConfigurationError("the cwssim loss needs a decomposer configuration")
        return CwssimLoss(build_decomposer(decomposer), cwssim)
    if name == "ssim":
        return SsimLoss(ssim)
    if name == "mse":
        return MseLoss()
    raise ConfigurationError(f"unknown loss '{name}'")
