"""Named-tensor checkpoint container.

Binary layout, all integers little-endian:

    magic b"CFCK" | u16 version | u32 tensor count
    per tensor: u16 name length | name utf-8 | u8 dtype code |
                u8 ndim | u32 per dimension | raw values, little-endian

A JSON sidecar (same path + ".json") carries the ModelConfig and any
extra metadata, so a checkpoint can be rebuilt without the code that
wrote it.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .autodiff import Tensor
from .resnet import ModelConfig, ResNet, build_model

MAGIC = b"CFCK"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
    np.dtype("<i4"): 3,
    np.dtype("u1"): 4,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def save_checkpoint(path, model: ResNet, extra: dict | None = None) -> None:
    path = Path(path)
    state = model.state_dict()
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(state))]
    for name, tensor in state.items():
        data = np.ascontiguousarray(tensor.data)
        if data.dtype.byteorder == ">":
            data = data.astype(data.dtype.newbyteorder("<"))
        code = _DTYPE_CODES.get(np.dtype(data.dtype.str.replace(">", "<")))
        if code is None:
            raise CheckpointError(f"unsupported dtype {data.dtype} for tensor {name}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())

    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)

    sidecar = {
        "format_version": VERSION,
        "model_config": dataclasses.asdict(model.config),
        "extra": extra or {},
    }
    side_tmp = Path(str(path) + ".json.tmp")
    side_tmp.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    os.replace(side_tmp, Path(str(path) + ".json"))


def read_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: checkpoint not found")
    data = path.read_bytes()
    if len(data) < 10 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 10
    tensors: dict[str, np.ndarray] = {}

    def need(n: int) -> int:
        if offset + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        return offset + n

    for _ in range(count):
        offset = need(2)
        (name_len,) = struct.unpack_from("<H", data, offset - 2)
        offset = need(name_len)
        name = data[offset - name_len:offset].decode("utf-8")
        offset = need(2)
        code, ndim = struct.unpack_from("<BB", data, offset - 2)
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype code {code} for tensor {name}")
        offset = need(4 * ndim)
        shape = struct.unpack_from(f"<{ndim}I", data, offset - 4 * ndim)
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        offset = need(nbytes)
        values = np.frombuffer(data[offset - nbytes:offset], dtype=dtype).reshape(shape)
        tensors[name] = values.copy()
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return tensors


def read_sidecar(path) -> dict:
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise CheckpointError(f"{sidecar_path}: missing checkpoint sidecar")
    try:
        return json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{sidecar_path}: invalid sidecar JSON: {exc}") from exc


def load_checkpoint(path) -> tuple[ResNet, dict]:
    """Rebuild the model a checkpoint describes and load its tensors."""
    sidecar = read_sidecar(path)
    try:
        config = ModelConfig(**sidecar["model_config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: sidecar lacks a usable model_config: {exc}") from exc
    model = build_model(config)
    tensors = read_tensors(path)
    try:
        model.load_state(tensors)
    except Exception as exc:
        raise CheckpointError(f"{path}: state does not fit the declared config: {exc}") from exc
    model.eval()
    return model, sidecar.get("extra", {})
