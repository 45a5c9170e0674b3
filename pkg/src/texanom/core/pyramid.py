"""Complex multi-scale, multi-orientation subband decomposition.

A patch is split into ``M = O(S-2) + 2`` complex subbands: the first subband
(centered orthonormal DFT of the patch, or a high-pass residual), ``O``
oriented Gabor responses at each of ``S-2`` dyadic scales reached by 2x2
average pooling, and the low-pass residual after one more pooling. The map is
linear, so :meth:`Decomposer.adjoint` is its exact transpose and does not
depend on the input.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.fft import fft2, fftshift, ifft2, ifftshift
from scipy.signal import fftconvolve

from ..models.config import DecomposerConfig
from ..models.errors import ConfigurationError, ContractViolationError

KERNEL_SIZE = 7
CENTER_FREQUENCY = np.pi / 2
BANDWIDTH_OCTAVES = 1.0


def subband_count(orientations: int, scales: int) -> int:
    """Number of subbands ``O(S-2) + 2``."""
    if orientations < 1:
        raise ConfigurationError(f"orientations must be >= 1, got {orientations}")
    if scales < 2:
        raise ConfigurationError(
            f"scales must be >= 2 to hold the first and last subbands, got {scales}"
        )
    return orientations * (scales - 2) + 2


def gabor_kernel(
    theta: float,
    size: int = KERNEL_SIZE,
    frequency: float = CENTER_FREQUENCY,
    bandwidth: float = BANDWIDTH_OCTAVES,
) -> np.ndarray:
    """Zero-mean, unit-energy complex Gabor kernel oriented at ``theta``.

    Columns run along +x and rows along -y, so the kernel at ``pi/2`` is the
    counter-clockwise ``np.rot90`` of the kernel at 0.
    """
    half = size // 2
    coords = np.arange(size, dtype=np.float64) - half
    u = coords[None, :]
    v = -coords[:, None]
    spread = (2.0**bandwidth + 1.0) / (2.0**bandwidth - 1.0)
    sigma = np.sqrt(2.0 * np.log(2.0)) / frequency * spread
    envelope = np.exp(-(u**2 + v**2) / (2.0 * sigma**2))
    carrier = np.exp(1j * frequency * (u * np.cos(theta) + v * np.sin(theta)))
    dc = (envelope * carrier).sum() / envelope.sum()
    kernel = envelope * (carrier - dc)
    return kernel / np.linalg.norm(kernel)


@dataclass(frozen=True)
class SubbandTag:
    kind: str  # "first", "oriented" or "last"
    scale: int
    orientation: Optional[int] = None


@dataclass(frozen=True)
class SubbandDecomposition:
    """Ordered complex subbands with their scale/orientation tags."""

    subbands: List[np.ndarray]
    tags: List[SubbandTag]
    config: DecomposerConfig

    def __len__(self) -> int:
        return len(self.subbands)

    def __getitem__(self, m: int) -> np.ndarray:
        return self.subbands[m]

    def __iter__(self):
        return iter(self.subbands)


def _pool(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    return x.reshape(x.shape[:-2] + (h // 2, 2, w // 2, 2)).mean(axis=(-3, -1))


def _pool_adjoint(g: np.ndarray) -> np.ndarray:
    return 0.25 * np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)


def _reflect_fold_matrix(n: int, pad: int) -> np.ndarray:
    """0/1 matrix summing a reflect-padded axis back onto its source pixels."""
    source = np.pad(np.arange(n), pad, mode="reflect")
    fold = np.zeros((n, n + 2 * pad))
    fold[source, np.arange(n + 2 * pad)] = 1.0
    return fold


class Decomposer:
    """Reusable decomposition for one input shape; immutable after construction."""

    def __init__(self, config: DecomposerConfig):
        """
        Precompute the oriented kernels and per-scale padding maps.

        Raises:
            ConfigurationError: If the input shape is not divisible by 2**(S-1).
        """
        h, w = config.input_shape
        factor = 2 ** (config.scales - 1)
        if h % factor or w % factor:
            raise ConfigurationError(
                f"input shape {h}x{w} is not divisible by 2**(S-1) = {factor}"
            )
        self.config = config
        self.pad = KERNEL_SIZE // 2

        self.angles = np.arange(config.orientations) * np.pi / config.orientations
        self.angles.setflags(write=False)
        self.kernels = np.stack([gabor_kernel(theta) for theta in self.angles])
        self.kernels.setflags(write=False)
        self._flipped = self.kernels[:, ::-1, ::-1].copy()

        self.tags: List[SubbandTag] = [SubbandTag("first", 0)]
        self.shapes: List[Tuple[int, int]] = [(h, w)]
        self._pad_index = {}
        self._fold = {}
        for s in range(1, config.scales - 1):
            hs, ws = h >> s, w >> s
            for o in range(config.orientations):
                self.tags.append(SubbandTag("oriented", s, o))
                self.shapes.append((hs, ws))
            self._pad_index[s] = (
                np.pad(np.arange(hs), self.pad, mode="reflect"),
                np.pad(np.arange(ws), self.pad, mode="reflect"),
            )
            self._fold[s] = (
                _reflect_fold_matrix(hs, self.pad),
                _reflect_fold_matrix(ws, self.pad),
            )
        last = config.scales - 1
        self.tags.append(SubbandTag("last", last))
        self.shapes.append((h >> last, w >> last))

    @property
    def subband_count(self) -> int:
        return len(self.tags)

    def scale_factor(self, m: int) -> int:
        """Pixels of the input per subband pixel along each axis."""
        return 2 ** self.tags[m].scale

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[-2:] != tuple(self.config.input_shape):
            raise ContractViolationError(
                f"decomposer expects trailing shape {tuple(self.config.input_shape)}, "
                f"got {x.shape}"
            )
        return x

    def _first(self, x: np.ndarray) -> np.ndarray:
        if self.config.first_subband == "dft":
            return fftshift(fft2(x, norm="ortho"), axes=(-2, -1))
        return (x - _pool_adjoint(4.0 * _pool(x))).astype(np.complex128)

    def _first_adjoint(self, g: np.ndarray) -> np.ndarray:
        if self.config.first_subband == "dft":
            return ifft2(ifftshift(g, axes=(-2, -1)), norm="ortho").real
        r = g.real
        return r - _pool_adjoint(4.0 * _pool(r))

    def _oriented(self, x: np.ndarray, s: int) -> np.ndarray:
        rows, cols = self._pad_index[s]
        padded = x[..., rows, :][..., cols]
        lead = padded.ndim - 2
        kernels = self._flipped.reshape((1,) * lead + self._flipped.shape)
        return fftconvolve(padded[..., None, :, :], kernels, mode="valid", axes=(-2, -1))

    def _oriented_adjoint(self, g: np.ndarray, s: int) -> np.ndarray:
        lead = g.ndim - 3
        kernels = self.kernels.reshape((1,) * lead + self.kernels.shape)
        padded = fftconvolve(np.conj(g), kernels, mode="full", axes=(-2, -1)).real
        padded = padded.sum(axis=-3)
        fold_rows, fold_cols = self._fold[s]
        return np.matmul(np.matmul(fold_rows, padded), fold_cols.T)

    def decompose(self, x: np.ndarray) -> SubbandDecomposition:
        """Decompose an image or a batch of images of shape (..., h, w)."""
        x = self._check_input(x)
        subbands = [self._first(x)]
        current = x
        for s in range(1, self.config.scales - 1):
            current = _pool(current)
            response = self._oriented(current, s)
            subbands.extend(response[..., o, :, :] for o in range(self.config.orientations))
        subbands.append(_pool(current).astype(np.complex128))
        return SubbandDecomposition(subbands=subbands, tags=list(self.tags), config=self.config)

    def adjoint(
        self, cotangent: Union[SubbandDecomposition, Sequence[np.ndarray]]
    ) -> np.ndarray:
        """Transpose of :meth:`decompose` under the real inner product.

        Complex coefficients count as (real, imaginary) pairs, so
        ``<decompose(x), g> == <x, adjoint(g)>`` for real ``x``.
        """
        g = list(cotangent.subbands if isinstance(cotangent, SubbandDecomposition) else cotangent)
        if len(g) != self.subband_count:
            raise ContractViolationError(
                f"expected {self.subband_count} cotangent subbands, got {len(g)}"
            )
        g = [np.asarray(band) for band in g]
        lead = g[0].shape[:-2]
        for band, shape in zip(g, self.shapes):
            if band.shape != lead + shape:
                raise ContractViolationError(
                    f"cotangent subband has shape {band.shape}, expected {lead + shape}"
                )

        O = self.config.orientations
        grad = np.real(g[-1]).astype(np.float64)
        for s in range(self.config.scales - 2, 0, -1):
            grad = _pool_adjoint(grad)
            start = 1 + (s - 1) * O
            block = np.stack(g[start : start + O], axis=-3)
            grad = grad + self._oriented_adjoint(block, s)
        return _pool_adjoint(grad) + self._first_adjoint(g[0])


def build_decomposer(config: DecomposerConfig) -> Decomposer:
    """Construct a decomposer holding precomputed kernels for ``config``."""
    return Decomposer(config)
