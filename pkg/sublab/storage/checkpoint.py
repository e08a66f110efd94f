"""Binary model checkpoints.

Layout: an 8-byte little-endian header length, a UTF-8 JSON header
``{format, role, seed, config, tensors: [{name, shape}]}``, then each tensor as
raw little-endian float64 in header order.
"""

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ValidationError

from sublab.exceptions import StorageError
from sublab.models.transformer import ModelParams
from sublab.schemas.model import ModelConfig

FORMAT = "sublab-ckpt/1"
_LEN = struct.Struct("<Q")
_DTYPE = np.dtype("<f8")


class TensorEntry(BaseModel):
    name: str
    shape: list[int]


class CheckpointHeader(BaseModel):
    format: str = FORMAT
    role: str
    seed: int
    config: ModelConfig
    tensors: list[TensorEntry]
    extra: dict[str, Any] = {}


def save_checkpoint(
    params: ModelParams, path: Path, role: str, extra: dict[str, Any] | None = None
) -> Path:
    header = CheckpointHeader(
        role=role,
        seed=params.config.seed,
        config=params.config,
        tensors=[TensorEntry(name=k, shape=list(v.shape)) for k, v in params.tensors.items()],
        extra=extra or {},
    )
    raw = json.dumps(header.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_LEN.pack(len(raw)))
        fh.write(raw)
        for value in params.tensors.values():
            fh.write(np.ascontiguousarray(value, dtype=_DTYPE).tobytes())
    return path


def load_checkpoint(path: Path) -> tuple[ModelParams, CheckpointHeader]:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < _LEN.size:
        raise StorageError(f"{path}: truncated checkpoint header")
    (size,) = _LEN.unpack_from(blob)
    start = _LEN.size + size
    try:
        header = CheckpointHeader.model_validate_json(blob[_LEN.size : start])
    except ValidationError as exc:
        raise StorageError(f"{path}: malformed checkpoint header: {exc}") from exc
    if header.format != FORMAT:
        raise StorageError(f"{path}: unsupported checkpoint format {header.format!r}")

    tensors: dict[str, np.ndarray[Any, np.dtype[np.float64]]] = {}
    offset = start
    for entry in header.tensors:
        count = int(np.prod(entry.shape, dtype=np.int64))
        end = offset + count * _DTYPE.itemsize
        if end > len(blob):
            raise StorageError(f"{path}: tensor {entry.name} runs past the end of file")
        data = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=offset)
        tensors[entry.name] = data.astype(np.float64).reshape(entry.shape)
        offset = end
    if offset != len(blob):
        raise StorageError(f"{path}: {len(blob) - offset} trailing bytes")
    return ModelParams(header.config, tensors), header
