"""ADAM with bias correction."""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..models.errors import ContractViolationError, TrainingError
from .network import ModelParams, ParamGrads

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass(frozen=True)
class AdamState:
    """Step counter and float64 moment estimates, one entry per tensor."""

    step: int
    first: Tuple[np.ndarray, ...]
    second: Tuple[np.ndarray, ...]


def init_adam(params: ModelParams) -> AdamState:
    zeros = tuple(np.zeros(t.shape) for _, t in params.tensors())
    return AdamState(step=0, first=zeros, second=tuple(np.zeros_like(z) for z in zeros))


def _interleave(grads: ParamGrads) -> Tuple[np.ndarray, ...]:
    out = []
    for k, b in zip(grads.kernels, grads.biases):
        out += [k, b]
    return tuple(out)


def adam_step(
    params: ModelParams,
    grads: ParamGrads,
    state: AdamState,
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPSILON,
) -> Tuple[ModelParams, AdamState]:
    """Apply one ADAM update and return the new parameters and state.

    Raises:
        TrainingError: If any gradient entry is non-finite; ``layer`` names
            the offending layer.
        ContractViolationError: If gradient shapes do not match the parameters.
    """
    names = params.layer_names
    tensors = [t for _, t in params.tensors()]
    flat_grads = _interleave(grads)
    if len(flat_grads) != len(tensors):
        raise ContractViolationError(
            f"expected gradients for {len(tensors)} tensors, got {len(flat_grads)}"
        )
    for i, (t, g) in enumerate(zip(tensors, flat_grads)):
        if g.shape != t.shape:
            raise ContractViolationError(
                f"{names[i // 2]}: gradient shape {g.shape} != parameter shape {t.shape}"
            )
        if not np.all(np.isfinite(g)):
            layer = names[i // 2]
            raise TrainingError(f"non-finite gradient in layer {layer}", layer=layer)

    step = state.step + 1
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step
    updated, first, second = [], [], []
    for t, g, m, v in zip(tensors, flat_grads, state.first, state.second):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        delta = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        updated.append((t.astype(np.float64) - delta).astype(t.dtype))
        first.append(m)
        second.append(v)

    new_params = params.with_values(tuple(updated[0::2]), tuple(updated[1::2]))
    return new_params, AdamState(step=step, first=tuple(first), second=tuple(second))
