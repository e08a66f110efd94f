"""Embedding, label and basis dumps: headerless CSV plus a JSON sidecar."""

from pathlib import Path

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field, ValidationError

from sublab.exceptions import StorageError
from sublab.tensor import Array


class MatrixMeta(BaseModel):
    model_id: str
    split: str
    n: int = Field(ge=0)
    d: int = Field(ge=1)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_matrix(path: Path, values: npt.ArrayLike, model_id: str, split: str = "val") -> Path:
    m = np.asarray(values, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise StorageError(f"only matrices can be dumped, got shape {m.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    # repr precision keeps the float64 round trip exact.
    np.savetxt(path, m, delimiter=",", fmt="%.17g")
    meta = MatrixMeta(model_id=model_id, split=split, n=m.shape[0], d=m.shape[1])
    _sidecar(path).write_text(meta.model_dump_json(indent=2), encoding="utf-8")
    return path


def load_matrix(path: Path) -> tuple[Array, MatrixMeta | None]:
    """Read a dump; the sidecar is optional but, when present, must agree."""
    try:
        m = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise StorageError(f"cannot read matrix {path}: {exc}") from exc
    sidecar = _sidecar(path)
    if not sidecar.exists():
        return m, None
    try:
        meta = MatrixMeta.model_validate_json(sidecar.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise StorageError(f"malformed sidecar {sidecar}: {exc}") from exc
    if meta.n == 0:
        m = m.reshape(0, meta.d)
    if m.shape != (meta.n, meta.d):
        raise StorageError(f"{path}: shape {m.shape}, sidecar says ({meta.n}, {meta.d})")
    return m, meta


def load_labels(path: Path) -> npt.NDArray[np.int64]:
    m, _ = load_matrix(path)
    if m.shape[1] != 1:
        raise StorageError(f"{path}: labels must be a single column, got {m.shape[1]}")
    labels = m[:, 0]
    if not np.all(labels == np.round(labels)):
        raise StorageError(f"{path}: labels must be integers")
    return labels.astype(np.int64)
