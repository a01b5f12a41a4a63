from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import numpy as np
import pytest

from mswt.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from mswt.errors import FormatError
from mswt.model import ModelConfig, MswtModel, build_model, model_forward
from mswt.tensor import Tensor


def test_save_load_save_is_byte_identical(small_model: MswtModel, tmp_path: Path) -> None:
    small_model.parameters()["classifier.bias"].data = np.array([0.125, -3.5e-7])
    first = save_checkpoint(small_model, tmp_path / "a.mswt")
    second = save_checkpoint(load_checkpoint(first), tmp_path / "nested" / "b.mswt")
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes().startswith(MAGIC)


def test_loaded_model_predicts_identically(small_config: ModelConfig, rng: np.random.Generator) -> None:
    model = build_model(dataclasses.replace(small_config, mode="cma_only", fusion_levels=2, seed=5))
    images = Tensor(rng.uniform(0.0, 1.0, (2, 3, 16, 16)))
    model_forward(images, model, training=True)
    restored = decode_checkpoint(encode_checkpoint(model))
    assert restored.config == model.config
    expected, _ = model_forward(images, model)
    actual, _ = model_forward(images, restored)
    np.testing.assert_array_equal(actual.data, expected.data)


def test_bad_magic_and_version(small_model: MswtModel) -> None:
    payload = encode_checkpoint(small_model)
    with pytest.raises(FormatError, match="magic"):
        decode_checkpoint(b"XXXX" + payload[4:])
    with pytest.raises(FormatError, match="version"):
        decode_checkpoint(MAGIC + struct.pack("<I", 2) + payload[8:])


def test_truncated_and_trailing_bytes(small_model: MswtModel) -> None:
    payload = encode_checkpoint(small_model)
    with pytest.raises(FormatError, match="Truncated"):
        decode_checkpoint(payload[:-3])
    with pytest.raises(FormatError, match="trailing"):
        decode_checkpoint(payload + b"\x00")


def _entry(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode()
    header = struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", array.ndim)
    return header + struct.pack(f"<{array.ndim}I", *array.shape) + array.astype("<f8").tobytes()


def _with_extra(payload: bytes, extra: bytes) -> bytes:
    (count,) = struct.unpack("<I", payload[8:12])
    return payload[:8] + struct.pack("<I", count + 1) + payload[12:] + extra


def test_unknown_tensor_name(small_model: MswtModel) -> None:
    payload = _with_extra(encode_checkpoint(small_model), _entry("bogus.weight", np.zeros(2)))
    with pytest.raises(FormatError, match="Unknown tensor"):
        decode_checkpoint(payload)


def test_duplicate_entry_with_wrong_shape(small_model: MswtModel) -> None:
    payload = _with_extra(encode_checkpoint(small_model), _entry("classifier.bias", np.zeros(3)))
    with pytest.raises(FormatError, match="shape"):
        decode_checkpoint(payload)


def test_missing_tensor(small_model: MswtModel) -> None:
    payload = encode_checkpoint(small_model)
    last = small_model.named_tensors()[-1]
    size = len(_entry(last[0], last[1].data))
    (count,) = struct.unpack("<I", payload[8:12])
    truncated = payload[:8] + struct.pack("<I", count - 1) + payload[12:-size]
    with pytest.raises(FormatError, match="missing"):
        decode_checkpoint(truncated)


def _replace_config_value(payload: bytes, field: str, old: float, new: float) -> bytes:
    header = f"config.{field}".encode() + struct.pack("<BI", 1, 1)
    assert payload.count(header + struct.pack("<d", old)) == 1
    return payload.replace(header + struct.pack("<d", old), header + struct.pack("<d", new))


def test_tensor_name_that_is_not_utf8(small_model: MswtModel) -> None:
    payload = bytearray(encode_checkpoint(small_model))
    payload[14] = 0xFF
    with pytest.raises(FormatError, match="UTF-8"):
        decode_checkpoint(bytes(payload))


def test_corrupt_configuration_block(small_model: MswtModel) -> None:
    payload = encode_checkpoint(small_model)
    with pytest.raises(FormatError, match="mode index"):
        decode_checkpoint(_replace_config_value(payload, "mode", 0.0, 99.0))
    with pytest.raises(FormatError, match="invalid configuration"):
        decode_checkpoint(_replace_config_value(payload, "fusion_levels", 3.0, 9.0))
    with pytest.raises(FormatError, match="non-finite"):
        decode_checkpoint(_replace_config_value(payload, "seed", 0.0, float("nan")))
