"""Grayscale PNG export of wavelet sub-bands and attention maps."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from matplotlib import image as mpimg

from .errors import ShapeError
from .model import MswtModel, attention_maps, model_forward
from .tensor import Tensor
from .wavelet import BANDS, decompose

logger = logging.getLogger(__name__)


def _normalise(array: np.ndarray) -> np.ndarray:
    low, high = float(array.min()), float(array.max())
    if high <= low:
        return np.zeros_like(array)
    return (array - low) / (high - low)


def save_gray(array: np.ndarray, path: Path) -> Path:
    """Min-max scale a 2-D array and write it as a grayscale PNG."""
    path.parent.mkdir(parents=True, exist_ok=True)
    mpimg.imsave(path, _normalise(array), cmap="gray", vmin=0.0, vmax=1.0)
    return path


def dump_subbands(image: np.ndarray, out: str | Path, depth: int = 3) -> list[Path]:
    """Write every level's LL/LH/HL/HH (averaged over channels) as ``level<k>_<band>.png``."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        msg = f"Expected a (C, H, W) image, got {image.shape}."
        raise ShapeError(msg)
    pyramid = decompose(Tensor(image[None]), depth)
    out = Path(out)
    paths = []
    for level in range(1, depth + 1):
        for band in BANDS:
            coefficients = pyramid[level].band(band).data[0].mean(axis=0)
            paths.append(save_gray(coefficients, out / f"level{level}_{band}.png"))
    logger.info("wrote %d sub-band images to %s", len(paths), out)
    return paths


def attention_mass(attn: np.ndarray, height: int, width: int) -> np.ndarray:
    """Head-averaged attention received by each key position, on the ``(height, width)`` grid."""
    if attn.ndim != 4 or attn.shape[-1] != height * width:
        msg = f"Attention {attn.shape} does not cover a {height}x{width} grid."
        raise ShapeError(msg)
    return attn[0].mean(axis=0).sum(axis=0).reshape(height, width)


def export_attention(model: MswtModel, image: np.ndarray, out: str | Path) -> list[Path]:
    """Run ``model`` on one image and write each fused level's attention maps as ``level<k>_<kind>.png``."""
    image = np.asarray(image, dtype=np.float64)
    _, fusions = model_forward(Tensor(image[None]), model, training=False)
    out = Path(out)
    paths = []
    for level, maps in attention_maps(fusions).items():
        height, width = fusions[level].fused.shape[2:]
        for kind, attn in maps.items():
            paths.append(save_gray(attention_mass(attn, height, width), out / f"level{level}_{kind}.png"))
    logger.info("wrote %d attention maps to %s", len(paths), out)
    return paths


__all__ = ["attention_mass", "dump_subbands", "export_attention", "save_gray"]
