"""Convolutional autoencoder with exact reverse-mode gradients.

Kernels are stored as ``(out_channels, in_channels, k, k)`` for every layer.
A transposed convolution is the adjoint of the convolution whose kernel is
``kernel.transpose(1, 0, 2, 3)``, so both layer kinds share the same two
primitives: :func:`_correlate` and :func:`_scatter`.

Parameters are held in float32 (the model file precision); all arithmetic
runs in float64. Every batch is processed sample by sample so a batch result
is bit-identical to stacking single-sample results.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..models.config import ArchitectureSpec, LayerSpec
from ..models.errors import ContractViolationError
from ..utils.seeding import INIT, derive_rng

logger = logging.getLogger(__name__)

PARAM_DTYPE = np.float32


@dataclass(frozen=True)
class ModelParams:
    """Immutable snapshot of autoencoder weights plus training metadata."""

    architecture: ArchitectureSpec
    kernels: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    epochs_seen: int = 0
    seed: Optional[int] = None

    def __post_init__(self):
        layers = self.architecture.layers
        if len(self.kernels) != len(layers) or len(self.biases) != len(layers):
            raise ContractViolationError(
                f"expected {len(layers)} layers, got {len(self.kernels)} kernels "
                f"and {len(self.biases)} biases"
            )
        for name, layer, k, b in zip(
            self.architecture.layer_names(), layers, self.kernels, self.biases
        ):
            expected = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            if k.shape != expected or b.shape != (layer.out_channels,):
                raise ContractViolationError(
                    f"{name}: kernel {k.shape} / bias {b.shape} do not match {expected}"
                )
            if not (np.all(np.isfinite(k)) and np.all(np.isfinite(b))):
                raise ContractViolationError(f"{name}: parameters are not finite")
            k.setflags(write=False)
            b.setflags(write=False)

    @property
    def param_count(self) -> int:
        return int(sum(k.size + b.size for k, b in zip(self.kernels, self.biases)))

    @property
    def layer_names(self) -> List[str]:
        return self.architecture.layer_names()

    def tensors(self) -> Iterator[Tuple[str, np.ndarray]]:
        """(name, array) pairs in declaration order: kernel then bias per layer."""
        for name, k, b in zip(self.layer_names, self.kernels, self.biases):
            yield f"{name}.kernel", k
            yield f"{name}.bias", b

    def with_values(
        self, kernels: Tuple[np.ndarray, ...], biases: Tuple[np.ndarray, ...]
    ) -> "ModelParams":
        return replace(self, kernels=tuple(kernels), biases=tuple(biases))

    def with_metadata(self, epochs_seen: int, seed: Optional[int]) -> "ModelParams":
        return replace(self, epochs_seen=epochs_seen, seed=seed)


@dataclass(frozen=True)
class ParamGrads:
    """Gradients for every kernel and bias, aligned with ModelParams."""

    kernels: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]


@dataclass
class _SampleTrace:
    inputs: List[np.ndarray] = field(default_factory=list)
    outputs: List[np.ndarray] = field(default_factory=list)


@dataclass(frozen=True)
class ForwardCache:
    """Per-sample layer inputs and outputs recorded by :func:`forward`."""

    params: ModelParams
    traces: Tuple[_SampleTrace, ...]
    input_shape: Tuple[int, ...]

    @property
    def batch_size(self) -> int:
        return len(self.traces)


def init_model(
    spec: ArchitectureSpec, seed: int, dtype=PARAM_DTYPE
) -> ModelParams:
    """Uniform fan-in scaled kernels (bound ``1/sqrt(in * k * k)``), zero biases."""
    rng = derive_rng(seed, INIT)
    kernels, biases = [], []
    for layer in spec.layers:
        shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
        bound = 1.0 / np.sqrt(layer.in_channels * layer.kernel * layer.kernel)
        kernels.append(rng.uniform(-bound, bound, size=shape).astype(dtype))
        biases.append(np.zeros(layer.out_channels, dtype=dtype))
    params = ModelParams(spec, tuple(kernels), tuple(biases), epochs_seen=0, seed=seed)
    logger.debug("Initialized %d parameters with seed %d", params.param_count, seed)
    return params


def _correlate(x: np.ndarray, kernel: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Strided cross-correlation of (C, H, W) with (O, C, k, k) -> (O, Ho, Wo)."""
    k = kernel.shape[-1]
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    return np.tensordot(kernel, windows, axes=([1, 2, 3], [0, 3, 4]))


def _correlate_kernel_grad(
    x: np.ndarray, g: np.ndarray, k: int, stride: int, padding: int
) -> np.ndarray:
    """Gradient of ``<g, _correlate(x, K)>`` with respect to K."""
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    return np.tensordot(g, windows, axes=([1, 2], [1, 2]))


def _scatter(
    g: np.ndarray, kernel: np.ndarray, stride: int, padding: int, out_hw: Tuple[int, int]
) -> np.ndarray:
    """Adjoint of :func:`_correlate` in its input: (O, Ho, Wo) -> (C, H, W)."""
    k = kernel.shape[-1]
    ho, wo = g.shape[-2:]
    h, w = out_hw
    cols = np.tensordot(kernel, g, axes=([0], [0]))
    span_h = max(h + 2 * padding, (ho - 1) * stride + k)
    span_w = max(w + 2 * padding, (wo - 1) * stride + k)
    acc = np.zeros((kernel.shape[1], span_h, span_w))
    for i in range(k):
        for j in range(k):
            acc[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, i, j]
    return acc[:, padding : padding + h, padding : padding + w]


def _activate(a: np.ndarray, activation: str, slope: float) -> np.ndarray:
    if activation == "leaky_relu":
        return np.where(a > 0, a, slope * a)
    if activation == "sigmoid":
        return expit(a)
    return a


def _activation_grad(
    a_out: np.ndarray, g: np.ndarray, activation: str, slope: float
) -> np.ndarray:
    if activation == "leaky_relu":
        return np.where(a_out > 0, g, slope * g)
    if activation == "sigmoid":
        return g * a_out * (1.0 - a_out)
    return g


def _layer_forward(layer: LayerSpec, x: np.ndarray, kernel: np.ndarray, bias: np.ndarray):
    if layer.kind == "conv":
        pre = _correlate(x, kernel, layer.stride, layer.padding)
    else:
        h, w = (layer.output_size(n) for n in x.shape[-2:])
        pre = _scatter(x, kernel.transpose(1, 0, 2, 3), layer.stride, layer.padding, (h, w))
    return pre + bias[:, None, None]


def _layer_backward(
    layer: LayerSpec, x: np.ndarray, kernel: np.ndarray, g: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Input, kernel and bias gradients for the pre-activation cotangent ``g``."""
    k, s, p = layer.kernel, layer.stride, layer.padding
    d_bias = g.sum(axis=(1, 2))
    if layer.kind == "conv":
        d_kernel = _correlate_kernel_grad(x, g, k, s, p)
        d_x = _scatter(g, kernel, s, p, x.shape[-2:])
    else:
        adjoint_kernel = kernel.transpose(1, 0, 2, 3)
        d_kernel = _correlate_kernel_grad(g, x, k, s, p).transpose(1, 0, 2, 3)
        d_x = _correlate(g, adjoint_kernel, s, p)
    return d_x, d_kernel, d_bias


def _as_channels(x: np.ndarray, spec: ArchitectureSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and spec.in_channels == 1:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ContractViolationError(
            f"expected a batch of shape (B, {spec.in_channels}, H, W), got {x.shape}"
        )
    for n in x.shape[-2:]:
        trace = spec.spatial_trace(n)
        if trace is None or trace[-1] != n:
            raise ContractViolationError(
                f"input size {n} is not divisible by 2**{spec.encoder_depth}"
            )
    return x


def forward(
    x: np.ndarray, m: ModelParams
) -> Tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Run a batch through the encoder and decoder.

    Args:
        x: Patches of shape (B, H, W) or (B, C, H, W)

    Returns:
        (latent batch, reconstruction batch shaped like ``x``, cache)

    Raises:
        ContractViolationError: If the spatial size does not survive the
            encoder exactly.
    """
    spec = m.architecture
    batch = _as_channels(x, spec)
    kernels = [k.astype(np.float64) for k in m.kernels]
    biases = [b.astype(np.float64) for b in m.biases]
    depth = spec.encoder_depth

    latents, outputs, traces = [], [], []
    for sample in batch:
        trace = _SampleTrace()
        a = sample
        for i, layer in enumerate(spec.layers):
            trace.inputs.append(a)
            pre = _layer_forward(layer, a, kernels[i], biases[i])
            a = _activate(pre, layer.activation, spec.leaky_slope)
            trace.outputs.append(a)
            if i == depth - 1:
                latents.append(a)
        outputs.append(a)
        traces.append(trace)

    reconstruction = np.stack(outputs)
    if np.ndim(x) == 3:
        reconstruction = reconstruction[:, 0]
    cache = ForwardCache(params=m, traces=tuple(traces), input_shape=tuple(np.shape(x)))
    return np.stack(latents), reconstruction, cache


def _sample_backward(
    spec: ArchitectureSpec, kernels: List[np.ndarray], trace: _SampleTrace, g: np.ndarray
):
    d_kernels = [None] * len(spec.layers)
    d_biases = [None] * len(spec.layers)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        g = _activation_grad(trace.outputs[i], g, layer.activation, spec.leaky_slope)
        g, d_kernels[i], d_biases[i] = _layer_backward(layer, trace.inputs[i], kernels[i], g)
    return d_kernels, d_biases


def backward(
    cache: ForwardCache,
    grad_output: np.ndarray,
    params: Optional[ModelParams] = None,
    threads: int = 1,
) -> ParamGrads:
    """Parameter gradients of ``sum_b <grad_output[b], reconstruction[b]>``.

    Per-sample gradients are computed (concurrently when ``threads > 1``) and
    summed in sample order, so the result does not depend on ``threads``.

    Raises:
        ContractViolationError: If ``grad_output`` does not match the cached
            forward pass or ``params`` is not the model that produced it.
    """
    if params is not None and params is not cache.params:
        raise ContractViolationError("forward cache was produced by different parameters")
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != cache.input_shape:
        raise ContractViolationError(
            f"output gradient has shape {grad_output.shape}, "
            f"forward pass produced {cache.input_shape}"
        )
    if grad_output.ndim == 3:
        grad_output = grad_output[:, None]

    spec = cache.params.architecture
    kernels = [k.astype(np.float64) for k in cache.params.kernels]

    def run(b: int):
        return _sample_backward(spec, kernels, cache.traces[b], grad_output[b])

    if threads > 1 and cache.batch_size > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_sample = list(pool.map(run, range(cache.batch_size)))
    else:
        per_sample = [run(b) for b in range(cache.batch_size)]

    d_kernels = [np.zeros(k.shape) for k in kernels]
    d_biases = [np.zeros(b.shape, dtype=np.float64) for b in cache.params.biases]
    for sample_kernels, sample_biases in per_sample:
        for i in range(len(d_kernels)):
            d_kernels[i] += sample_kernels[i]
            d_biases[i] += sample_biases[i]
    return ParamGrads(tuple(d_kernels), tuple(d_biases))


def reconstruct(x: np.ndarray, m: ModelParams) -> np.ndarray:
    """Reconstruction only; convenience wrapper around :func:`forward`."""
    _, y, _ = forward(x, m)
    return y
