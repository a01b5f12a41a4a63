"""Bit-exact binary checkpoints of model parameters and buffers.

Layout (little-endian): magic ``b"MSWT"``, ``u32`` version, ``u32`` tensor
count, then per tensor ``u16`` name length, UTF-8 name, ``u8`` rank, ``rank``
``u32`` extents and the float64 payload. The model configuration travels as
rank-1 tensors named ``config.<field>``.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .model import ABLATION_MODES, ModelConfig, MswtModel, build_model

logger = logging.getLogger(__name__)

MAGIC = b"MSWT"
VERSION = 1
CONFIG_PREFIX = "config."
_CONFIG_FIELDS = (
    "image_size",
    "widths",
    "embed_dims",
    "heads",
    "ffn_expansion",
    "mode",
    "fusion_levels",
    "max_tokens",
    "seed",
    "image_channels",
    "num_classes",
)


def _config_arrays(config: ModelConfig) -> list[tuple[str, np.ndarray]]:
    arrays = []
    for name in _CONFIG_FIELDS:
        value = getattr(config, name)
        if name == "mode":
            value = ABLATION_MODES.index(value)
        arrays.append((CONFIG_PREFIX + name, np.atleast_1d(np.asarray(value, dtype=np.float64))))
    return arrays


def _config_from_arrays(arrays: dict[str, np.ndarray]) -> ModelConfig:
    values = {}
    for name in _CONFIG_FIELDS:
        key = CONFIG_PREFIX + name
        if key not in arrays:
            msg = f"Checkpoint lacks configuration entry {key!r}."
            raise FormatError(msg)
        entry = [int(value) for value in arrays[key] if np.isfinite(value)]
        if not entry or len(entry) != arrays[key].size:
            msg = f"Configuration entry {key!r} is empty or non-finite."
            raise FormatError(msg)
        if name == "mode":
            if not 0 <= entry[0] < len(ABLATION_MODES):
                msg = f"Unknown ablation mode index {entry[0]}."
                raise FormatError(msg)
            values[name] = ABLATION_MODES[entry[0]]
        elif name in {"widths", "embed_dims", "heads"}:
            values[name] = tuple(entry)
        else:
            values[name] = entry[0]
    try:
        return ModelConfig(**values)
    except ConfigError as err:
        msg = f"Checkpoint carries an invalid configuration: {err}"
        raise FormatError(msg) from err


def encode_checkpoint(model: MswtModel) -> bytes:
    entries = _config_arrays(model.config) + [(name, tensor.data) for name, tensor in model.named_tensors()]
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, array in entries:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.payload):
            msg = f"Truncated checkpoint: needed {count} bytes at offset {self.offset}."
            raise FormatError(msg)
        chunk = self.payload[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str) -> tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(payload: bytes) -> MswtModel:
    """Rebuild a model from checkpoint bytes.

    Raises
    ------
    FormatError
        On a bad magic or version, truncation, a non-UTF-8, unknown or missing
        tensor name, an invalid configuration block, or a shape mismatch.
    """
    reader = _Reader(payload)
    if reader.take(len(MAGIC)) != MAGIC:
        msg = "Not an MSWT checkpoint (bad magic bytes)."
        raise FormatError(msg)
    version, count = reader.unpack("<II")
    if version != VERSION:
        msg = f"Unsupported checkpoint version {version}; expected {VERSION}."
        raise FormatError(msg)

    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        raw_name = reader.take(name_length)
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError as err:
            msg = f"Tensor name at offset {reader.offset - name_length} is not valid UTF-8."
            raise FormatError(msg) from err
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.offset != len(payload):
        msg = f"{len(payload) - reader.offset} trailing bytes after the last tensor."
        raise FormatError(msg)

    model = build_model(_config_from_arrays(arrays))
    expected = dict(model.named_tensors())
    for name, array in arrays.items():
        if name.startswith(CONFIG_PREFIX):
            continue
        if name not in expected:
            msg = f"Unknown tensor name {name!r} in checkpoint."
            raise FormatError(msg)
        target = expected.pop(name)
        if target.shape != array.shape:
            msg = f"Tensor {name!r} has shape {array.shape}, model expects {target.shape}."
            raise FormatError(msg)
        target.data = np.ascontiguousarray(array)
    if expected:
        msg = f"Checkpoint is missing {len(expected)} tensors, e.g. {next(iter(expected))!r}."
        raise FormatError(msg)
    return model


def save_checkpoint(model: MswtModel, path: str | Path) -> Path:
    """Write ``model`` to ``path``; optimizer state is not stored."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_checkpoint(model)
    path.write_bytes(payload)
    logger.debug("wrote checkpoint %s (%d bytes)", path, len(payload))
    return path


def load_checkpoint(path: str | Path) -> MswtModel:
    path = Path(path)
    model = decode_checkpoint(path.read_bytes())
    logger.debug("loaded checkpoint %s", path)
    return model


__all__ = [
    "MAGIC",
    "VERSION",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
]
