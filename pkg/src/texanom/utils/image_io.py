"""Image decoding, gray conversion and anomaly-map serialization."""

import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..models.errors import ImageFormatError
from ..models.images import AnomalyMap, AnomalyMask, GrayImage

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAP_MAGIC = b"TAM1"
_MAP_HEADER = np.dtype([("height", "<u4"), ("width", "<u4")])
_SUPPORTED_MODES = {"L", "P", "RGB"}
_INTENSITY_SCALE = 255.0  # 2**8 - 1


def rgb_to_gray(r, g, b):
    """ITU-R BT.601 luma of channels in [0, 1]; works on scalars and arrays."""
    gray = (299.0 * np.asarray(r) + 587.0 * np.asarray(g) + 114.0 * np.asarray(b)) / 1000.0
    gray = np.clip(gray, 0.0, 1.0)
    return float(gray) if gray.ndim == 0 else gray


def load_image(path: PathLike) -> GrayImage:
    """Decode an 8-bit grayscale or RGB image into a [0, 1] GrayImage.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ImageFormatError: If the file is not an 8-bit grayscale/RGB image.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Image file not found: {path}")

    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode not in _SUPPORTED_MODES:
                raise ImageFormatError(
                    f"{path}: unsupported image mode '{mode}' "
                    f"(bit depth/format must be 8-bit grayscale or RGB)"
                )
            if mode == "P":
                img = img.convert("RGB")
                mode = "RGB"
            pixels = np.asarray(img)
    except UnidentifiedImageError as e:
        raise ImageFormatError(f"{path}: cannot decode image file ({e})") from e

    if pixels.dtype != np.uint8:
        raise ImageFormatError(f"{path}: unsupported sample type {pixels.dtype}")

    values = pixels.astype(np.float64) / _INTENSITY_SCALE
    if mode == "RGB":
        values = rgb_to_gray(values[..., 0], values[..., 1], values[..., 2])
    return GrayImage(data=values)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] values to 8 bits with round-half-to-even."""
    return np.rint(np.clip(values, 0.0, 1.0) * _INTENSITY_SCALE).astype(np.uint8)


def save_image(image: Union[GrayImage, np.ndarray], path: PathLike) -> Path:
    """Write a [0, 1] image as an 8-bit grayscale PNG."""
    data = image.data if isinstance(image, GrayImage) else np.asarray(image)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(data)).save(path)
    return path


def save_mask(mask: AnomalyMask, path: PathLike) -> Path:
    """Write a binary mask as an 8-bit PNG with values 0 and 255."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.data.astype(np.uint8) * 255).save(path)
    return path


def load_mask(path: PathLike) -> AnomalyMask:
    """Read a ground-truth mask; any nonzero pixel is anomalous."""
    return AnomalyMask(data=load_image(path).data > 0)


def preview_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_preview.png")


def map_preview(scores: np.ndarray) -> np.ndarray:
    """Min-max scale scores to 8 bits; constant maps become all zeros."""
    lo = float(scores.min())
    hi = float(scores.max())
    if hi <= lo:
        return np.zeros(scores.shape, dtype=np.uint8)
    return np.rint((scores - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_anomaly_map(anomaly_map: AnomalyMap, path: PathLike) -> Tuple[Path, Path]:
    """Write the lossless map file and its 8-bit preview.

    The map file holds the magic bytes ``TAM1``, height and width as
    little-endian u32, then row-major little-endian float32 scores.

    Returns:
        Paths of the map file and the preview PNG.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scores = anomaly_map.data
    header = np.array([(scores.shape[0], scores.shape[1])], dtype=_MAP_HEADER)
    with open(path, "wb") as f:
        f.write(MAP_MAGIC)
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(scores, dtype="<f4").tobytes())

    preview = preview_path(path)
    Image.fromarray(map_preview(scores)).save(preview)
    logger.debug("Wrote anomaly map %s (%dx%d)", path, *scores.shape)
    return path, preview


def read_anomaly_map(path: PathLike) -> AnomalyMap:
    """Read a map file written by :func:`write_anomaly_map`."""
    raw = Path(path).read_bytes()
    offset = len(MAP_MAGIC) + _MAP_HEADER.itemsize
    if len(raw) < offset or raw[: len(MAP_MAGIC)] != MAP_MAGIC:
        raise ImageFormatError(f"{path}: not an anomaly map file")
    header = np.frombuffer(raw, dtype=_MAP_HEADER, count=1, offset=len(MAP_MAGIC))[0]
    height, width = int(header["height"]), int(header["width"])
    expected = offset + 4 * height * width
    if len(raw) != expected:
        raise ImageFormatError(
            f"{path}: expected {expected} bytes for a {height}x{width} map, "
            f"found {len(raw)}"
        )
    scores = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(height, width)
    return AnomalyMap(data=scores)
