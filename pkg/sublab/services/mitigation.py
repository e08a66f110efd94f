"""Leakage-suppression loss terms added to the distillation objective."""

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from sublab import tensor as T
from sublab.exceptions import DegenerateInputError, ShapeError
from sublab.rng import numpy_generator
from sublab.services.similarity import TraitBasis
from sublab.tensor import Array, IntArray, Tape, Tensor

DISC_WEIGHT = "disc.weight"
DISC_BIAS = "disc.bias"


@dataclass
class Discriminator:
    """Linear d -> 2 classifier of the private label from student CLS."""

    params: dict[str, Array]

    @classmethod
    def init(cls, d: int, seed: int, std: float = 0.02) -> "Discriminator":
        rng = numpy_generator(seed)
        return cls({DISC_WEIGHT: rng.normal(0.0, std, size=(d, 2)), DISC_BIAS: np.zeros(2)})

    @property
    def d(self) -> int:
        return int(self.params[DISC_WEIGHT].shape[0])

    def watch(self, tape: Tape) -> dict[str, Tensor]:
        return {name: tape.variable(value) for name, value in self.params.items()}

    def logits(self, cls: Array) -> Array:
        out: Array = cls @ self.params[DISC_WEIGHT] + self.params[DISC_BIAS]
        return out

    def predict(self, cls: Array) -> IntArray:
        return np.argmax(self.logits(cls), axis=1)

    def accuracy(self, cls: Array, y_priv: npt.ArrayLike) -> float:
        y = np.asarray(y_priv)
        return float(np.mean(self.predict(cls) == y)) if y.size else 0.0


def _check_basis(cls: Tensor, basis: TraitBasis) -> None:
    if cls.ndim != 2 or cls.shape[1] != basis.U.shape[0]:
        raise ShapeError(
            f"CLS of shape {cls.shape} does not match a basis over d={basis.U.shape[0]}"
        )


def projection_penalty(cls_s: Tensor, basis: TraitBasis, alpha: float) -> Tensor:
    """``alpha * mean_i ||U^T cls_i||^2``."""
    _check_basis(cls_s, basis)
    coords = cls_s @ basis.U
    return alpha * T.mean(T.reduce_sum(T.square(coords), axis=1))


def adversarial_loss(
    cls_s: Tensor,
    y_priv: npt.ArrayLike,
    disc_weights: Mapping[str, Tensor],
    lambda_adv: float,
) -> Tensor:
    """Discriminator cross-entropy on gradient-reversed CLS.

    The discriminator tensors get the ordinary minimizing gradient; the encoder
    gets it negated and scaled by ``lambda_adv``.
    """
    y = np.asarray(y_priv, dtype=np.int64)
    if np.unique(y).size < 2:
        raise DegenerateInputError("adversarial loss needs both private classes in the batch")
    weight = disc_weights[DISC_WEIGHT]
    if cls_s.ndim != 2 or weight.shape[0] != cls_s.shape[1]:
        raise ShapeError(f"discriminator over d={weight.shape[0]} got CLS {cls_s.shape}")
    reversed_cls = T.grad_reverse(cls_s, lambda_adv)
    logits = reversed_cls @ weight + disc_weights[DISC_BIAS]
    return T.softmax_cross_entropy(logits, y)


def rrr_penalty(
    cls_s: Tensor,
    pub_logits: Tensor,
    targets: npt.ArrayLike,
    w_pub: Tensor,
    basis: TraitBasis,
    lambda_rrr: float,
) -> Tensor:
    """``lambda * mean_i ||U^T W_pub (softmax(z_i) - onehot(t_i))||^2``.

    ``W_pub (p - y)`` is the gradient of the public cross-entropy with respect
    to CLS when the head is the bias-free linear map ``cls @ W_pub``.
    """
    _check_basis(cls_s, basis)
    t = np.asarray(targets, dtype=np.int64)
    n, classes = pub_logits.shape
    if t.shape != (n,) or n != cls_s.shape[0]:
        raise ShapeError(f"{t.shape} targets for {n} public logit rows")
    if w_pub.shape != (cls_s.shape[1], classes):
        raise ShapeError(f"public head {w_pub.shape} does not map CLS to {classes} classes")
    residual = T.softmax(pub_logits, axis=-1) - np.eye(classes)[t]
    grads = residual @ T.transpose(w_pub)
    return lambda_rrr * T.mean(T.reduce_sum(T.square(grads @ basis.U), axis=1))
