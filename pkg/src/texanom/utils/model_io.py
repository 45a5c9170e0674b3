"""Self-describing binary model files.

Layout (little-endian throughout)::

    b"CWAE"
    header      version u16, layer count u32, leaky slope f64,
                epochs seen u32, seed present u8, seed u64
    layers      kind u8, in u32, out u32, kernel u16, stride u16,
                padding u16, activation u8       (one record per layer)
    tensors     kernel f32[out, in, k, k], bias f32[out]  (per layer, in order)
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import ValidationError

from ..core.network import PARAM_DTYPE, ModelParams
from ..models.config import ArchitectureSpec
from ..models.errors import ContractViolationError, ModelFormatError

logger = logging.getLogger(__name__)

MAGIC = b"CWAE"
FORMAT_VERSION = 1

_HEADER = np.dtype(
    [
        ("version", "<u2"),
        ("layers", "<u4"),
        ("leaky_slope", "<f8"),
        ("epochs_seen", "<u4"),
        ("has_seed", "u1"),
        ("seed", "<u8"),
    ]
)
_LAYER = np.dtype(
    [
        ("kind", "u1"),
        ("in_channels", "<u4"),
        ("out_channels", "<u4"),
        ("kernel", "<u2"),
        ("stride", "<u2"),
        ("padding", "<u2"),
        ("activation", "u1"),
    ]
)
_KINDS = ("conv", "deconv")
_ACTIVATIONS = ("leaky_relu", "sigmoid", "identity")
_TENSOR = np.dtype("<f4")


def save_model(m: ModelParams, path: Union[str, Path]) -> Path:
    """Write ``m`` to ``path``; the file carries its own architecture."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spec = m.architecture
    header = np.array(
        [
            (
                FORMAT_VERSION,
                len(spec.layers),
                spec.leaky_slope,
                m.epochs_seen,
                m.seed is not None,
                m.seed or 0,
            )
        ],
        dtype=_HEADER,
    )
    layers = np.array(
        [
            (
                _KINDS.index(layer.kind),
                layer.in_channels,
                layer.out_channels,
                layer.kernel,
                layer.stride,
                layer.padding,
                _ACTIVATIONS.index(layer.activation),
            )
            for layer in spec.layers
        ],
        dtype=_LAYER,
    )
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header.tobytes())
        f.write(layers.tobytes())
        for _, tensor in m.tensors():
            f.write(np.ascontiguousarray(tensor, dtype=_TENSOR).tobytes())
    logger.info("Saved model with %d parameters to %s", m.param_count, path)
    return path


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.path = path
        self.offset = 0

    def take(self, dtype: np.dtype, count: int, what: str) -> np.ndarray:
        size = dtype.itemsize * count
        if self.offset + size > len(self.raw):
            raise ModelFormatError(f"{self.path}: file is truncated while reading {what}")
        out = np.frombuffer(self.raw, dtype=dtype, count=count, offset=self.offset)
        self.offset += size
        return out


def load_model(path: Union[str, Path]) -> ModelParams:
    """Read a model file written by :func:`save_model`.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ModelFormatError: On a wrong magic or version, a truncated file,
            trailing bytes or an invalid architecture descriptor.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    reader = _Reader(raw, path)
    reader.offset = len(MAGIC)

    header = reader.take(_HEADER, 1, "header")[0]
    if int(header["version"]) != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported format version {int(header['version'])}"
        )
    records = reader.take(_LAYER, int(header["layers"]), "layer descriptors")
    try:
        spec = ArchitectureSpec(
            layers=[
                {
                    "kind": _KINDS[int(r["kind"])],
                    "in_channels": int(r["in_channels"]),
                    "out_channels": int(r["out_channels"]),
                    "kernel": int(r["kernel"]),
                    "stride": int(r["stride"]),
                    "padding": int(r["padding"]),
                    "activation": _ACTIVATIONS[int(r["activation"])],
                }
                for r in records
            ],
            leaky_slope=float(header["leaky_slope"]),
        )
    except (IndexError, ValidationError) as e:
        raise ModelFormatError(f"{path}: invalid architecture descriptor ({e})") from e

    kernels, biases = [], []
    for name, layer in zip(spec.layer_names(), spec.layers):
        shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
        k = reader.take(_TENSOR, int(np.prod(shape)), f"{name} kernel")
        b = reader.take(_TENSOR, layer.out_channels, f"{name} bias")
        kernels.append(k.reshape(shape).astype(PARAM_DTYPE))
        biases.append(b.astype(PARAM_DTYPE))
    if reader.offset != len(raw):
        raise ModelFormatError(
            f"{path}: {len(raw) - reader.offset} unexpected trailing bytes"
        )

    seed = int(header["seed"]) if int(header["has_seed"]) else None
    try:
        params = ModelParams(
            spec,
            tuple(kernels),
            tuple(biases),
            epochs_seen=int(header["epochs_seen"]),
            seed=seed,
        )
    except ContractViolationError as e:
        raise ModelFormatError(f"{path}: {e}") from e
    logger.info("Loaded model with %d parameters from %s", params.param_count, path)
    return params
