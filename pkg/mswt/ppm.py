"""Binary 8-bit PPM (P6) reader and writer for ``(3, H, W)`` float images in ``[0, 1]``."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

MAXVAL = 255


def quantize(image: np.ndarray) -> np.ndarray:
    """Round-to-nearest 8-bit quantization of a ``(3, H, W)`` image, returned as ``(H, W, 3)`` bytes."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        msg = f"Expected a (3, H, W) image, got shape {image.shape}."
        raise ShapeError(msg)
    if not np.all(np.isfinite(image)):
        msg = "Image contains NaN or infinite values."
        raise FormatError(msg)
    levels = np.floor(np.clip(image, 0.0, 1.0) * MAXVAL + 0.5)
    return np.ascontiguousarray(levels.transpose(1, 2, 0), dtype=np.uint8)


def encode_ppm(image: np.ndarray) -> bytes:
    pixels = quantize(image)
    height, width = pixels.shape[:2]
    return f"P6\n{width} {height}\n{MAXVAL}\n".encode("ascii") + pixels.tobytes()


def write_ppm(image: np.ndarray, path: str | Path) -> Path:
    """Write ``image`` as a P6 file and return the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(image))
    return path


def _header_tokens(payload: bytes) -> tuple[list[bytes], int]:
    """Split the four header fields off ``payload``; returns them and the raster offset.

    Comments run from ``#`` to the end of the line. Exactly one whitespace byte
    separates the maxval from the raster.
    """
    tokens: list[bytes] = []
    offset = 0
    while len(tokens) < 4:
        if offset >= len(payload):
            msg = "Truncated PPM header."
            raise FormatError(msg)
        byte = payload[offset : offset + 1]
        if byte.isspace():
            offset += 1
        elif byte == b"#":
            newline = payload.find(b"\n", offset)
            offset = len(payload) if newline < 0 else newline + 1
        else:
            start = offset
            while offset < len(payload) and not payload[offset : offset + 1].isspace():
                offset += 1
            tokens.append(payload[start:offset])
    if offset >= len(payload):
        msg = "PPM header is not followed by a raster."
        raise FormatError(msg)
    return tokens, offset + 1


def decode_ppm(payload: bytes) -> np.ndarray:
    """Decode P6 bytes to a ``(3, H, W)`` float64 image in ``[0, 1]``.

    Raises
    ------
    FormatError
        On a wrong magic number, a non-integer or non-positive extent, a maxval
        other than 255, or a truncated raster.
    """
    tokens, offset = _header_tokens(payload)
    if tokens[0] != b"P6":
        msg = f"Unsupported magic number {tokens[0]!r}; only binary P6 is read."
        raise FormatError(msg)
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError as err:
        msg = f"Malformed PPM header fields {tokens[1:]!r}."
        raise FormatError(msg) from err
    if width < 1 or height < 1:
        msg = f"PPM extents must be positive, got {width}x{height}."
        raise FormatError(msg)
    if maxval != MAXVAL:
        msg = f"Only 8-bit PPM (maxval {MAXVAL}) is supported, got maxval {maxval}."
        raise FormatError(msg)
    expected = 3 * width * height
    raster = payload[offset : offset + expected]
    if len(raster) < expected:
        msg = f"Truncated PPM raster: {len(raster)} of {expected} bytes."
        raise FormatError(msg)
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / MAXVAL


def read_ppm(path: str | Path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


__all__ = ["MAXVAL", "decode_ppm", "encode_ppm", "quantize", "read_ppm", "write_ppm"]
