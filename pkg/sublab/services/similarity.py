"""Representation similarity: global linear CKA, trait-subspace CKA, CCA rho_max."""

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.linalg

from sublab.exceptions import ContractError, ShapeError, UndefinedSimilarityError
from sublab.schemas.reports import SimilarityReport
from sublab.services.probes import DEFAULT_L2, fit_logistic
from sublab.tensor import Array

ORTHONORMAL_TOL = 1e-10


@dataclass(frozen=True)
class TraitBasis:
    """Orthonormal d x k basis of the teacher's private-label directions."""

    U: Array
    source: str = "teacher"
    probe_accuracy: float | None = None
    probe_bias: float = 0.0
    probe_norm: float = 1.0

    def __post_init__(self) -> None:
        if self.U.ndim != 2 or self.U.shape[1] < 1 or self.U.shape[1] > self.U.shape[0]:
            raise ShapeError(f"basis must be d x k with 1 <= k <= d, got {self.U.shape}")
        gram = self.U.T @ self.U
        if np.abs(gram - np.eye(self.k)).max() > ORTHONORMAL_TOL:
            raise ContractError("basis columns are not orthonormal")

    @property
    def k(self) -> int:
        return int(self.U.shape[1])

    @property
    def d(self) -> int:
        return int(self.U.shape[0])

    def project(self, features: npt.ArrayLike) -> Array:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f"cannot project {x.shape} onto a basis over d={self.d}")
        out: Array = x @ self.U
        return out


def _center(x: npt.ArrayLike, name: str) -> Array:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be an (n, p) matrix, got shape {m.shape}")
    if m.shape[0] < 2:
        raise ContractError(f"{name}: similarity needs at least 2 rows")
    out: Array = m - m.mean(axis=0, keepdims=True)
    return out


def linear_cka(x: npt.ArrayLike, y: npt.ArrayLike) -> float:
    """``||X^T Y||_F^2 / (||X^T X||_F ||Y^T Y||_F)`` on column-centered inputs."""
    xc, yc = _center(x, "X"), _center(y, "Y")
    if xc.shape[0] != yc.shape[0]:
        raise ShapeError(f"row counts differ: {xc.shape[0]} vs {yc.shape[0]}")
    xx = np.linalg.norm(xc.T @ xc)
    yy = np.linalg.norm(yc.T @ yc)
    if xx == 0.0 or yy == 0.0:
        raise UndefinedSimilarityError("a representation is constant after centering")
    cross = np.linalg.norm(xc.T @ yc) ** 2
    return float(np.clip(cross / (xx * yy), 0.0, 1.0))


def trait_basis(
    teacher_cls: npt.ArrayLike,
    y_priv: npt.ArrayLike,
    k: int = 1,
    l2: float = DEFAULT_L2,
) -> TraitBasis:
    """QR-orthonormalised probe directions for the private label.

    For ``k > 1`` each further direction is the probe refit after projecting
    the earlier directions out of the features.
    """
    x = np.asarray(teacher_cls, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"teacher CLS must be (n, d), got {x.shape}")
    if not 1 <= k <= x.shape[1]:
        raise ContractError(f"k must lie in [1, {x.shape[1]}], got {k}")

    first = fit_logistic(x, y_priv, l2)
    norm = float(np.linalg.norm(first.weights))
    if norm == 0.0:
        raise ContractError("probe weights vanished; the teacher CLS carries no trait signal")
    directions = [first.weights]
    for _ in range(1, k):
        q, _ = scipy.linalg.qr(np.column_stack(directions), mode="economic")
        residual = x - (x @ q) @ q.T
        directions.append(fit_logistic(residual, y_priv, l2).weights)

    w = np.column_stack(directions)
    q, r = scipy.linalg.qr(w, mode="economic")
    # QR fixes columns only up to sign; align each with its probe direction.
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return TraitBasis(
        U=q * signs,
        probe_accuracy=first.accuracy(x, y_priv),
        probe_bias=first.bias,
        probe_norm=norm,
    )


def subspace_cka(z_t: npt.ArrayLike, z_s: npt.ArrayLike, basis: TraitBasis) -> float:
    """Linear CKA between the two embeddings projected onto ``basis``."""
    return linear_cka(basis.project(z_t), basis.project(z_s))


def _inv_sqrt(cov: Array) -> Array:
    evals, evecs = scipy.linalg.eigh(cov)
    floor = np.finfo(np.float64).eps * max(float(evals.max()), 1.0)
    evals = np.maximum(evals, floor)
    out: Array = (evecs / np.sqrt(evals)) @ evecs.T
    return out


def cca_rho_max(x: npt.ArrayLike, y: npt.ArrayLike, ridge: float = 1e-6) -> float:
    """Largest canonical correlation, ridge-whitened on each side."""
    xc, yc = _center(x, "X"), _center(y, "Y")
    n = xc.shape[0]
    if yc.shape[0] != n:
        raise ShapeError(f"row counts differ: {n} vs {yc.shape[0]}")
    if n <= max(xc.shape[1], yc.shape[1]):
        raise ContractError(
            f"CCA needs more samples than features: n={n}, p={xc.shape[1]}, q={yc.shape[1]}"
        )
    if ridge < 0:
        raise ContractError(f"ridge must be >= 0, got {ridge}")
    cxx = xc.T @ xc / (n - 1) + ridge * np.eye(xc.shape[1])
    cyy = yc.T @ yc / (n - 1) + ridge * np.eye(yc.shape[1])
    cxy = xc.T @ yc / (n - 1)
    if not (np.trace(cxx) > 0 and np.trace(cyy) > 0):
        raise UndefinedSimilarityError("a representation is constant after centering")
    whitened = _inv_sqrt(cxx) @ cxy @ _inv_sqrt(cyy)
    return float(np.clip(scipy.linalg.svdvals(whitened)[0], 0.0, 1.0))


def similarity_report(
    teacher_cls: npt.ArrayLike,
    student_cls: npt.ArrayLike,
    basis: TraitBasis,
    cca_ridge: float = 1e-6,
) -> SimilarityReport:
    return SimilarityReport(
        global_cka=linear_cka(teacher_cls, student_cls),
        subspace_cka=subspace_cka(teacher_cls, student_cls, basis),
        rho_max=cca_rho_max(teacher_cls, student_cls, cca_ridge),
        k=basis.k,
        cca_ridge=cca_ridge,
    )
