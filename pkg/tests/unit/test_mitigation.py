import numpy as np
import pytest

from sublab import tensor as T
from sublab.exceptions import DegenerateInputError, ShapeError
from sublab.services.mitigation import (
    DISC_BIAS,
    DISC_WEIGHT,
    Discriminator,
    adversarial_loss,
    projection_penalty,
    rrr_penalty,
)
from sublab.services.similarity import TraitBasis
from sublab.tensor import Tape, Tensor
from tests.helpers import numeric_gradient, rel_error


@pytest.fixture
def basis() -> TraitBasis:
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(5, 2)))
    return TraitBasis(U=q)


def test_projection_penalty_hand_value() -> None:
    u = np.array([[0.6], [0.8], [0.0]])
    loss = projection_penalty(Tensor(0.2 * u.T), TraitBasis(U=u), alpha=1e-2)
    assert loss.item() == pytest.approx(4e-4, abs=1e-15)


def test_projection_penalty_vanishes_off_the_subspace() -> None:
    u = np.eye(3)[:, :1]
    cls = Tensor([[0.0, 1.0, -2.0], [0.0, 5.0, 3.0]])
    assert projection_penalty(cls, TraitBasis(U=u), alpha=1.0).item() == 0.0


def test_projection_penalty_gradient(basis) -> None:
    cls = np.random.default_rng(1).normal(size=(4, 5))
    tape = Tape()
    x = tape.variable(cls)
    grad = tape.gradient(projection_penalty(x, basis, 0.3), {"x": x})["x"]
    numeric = numeric_gradient(
        lambda v: projection_penalty(Tensor(v), basis, 0.3).item(), cls.copy()
    )
    assert rel_error(grad, numeric) < 1e-6


def test_projection_penalty_checks_width(basis) -> None:
    with pytest.raises(ShapeError):
        projection_penalty(Tensor(np.zeros((2, 4))), basis, 1.0)


def test_untrained_discriminator_is_uniform() -> None:
    rng = np.random.default_rng(2)
    cls = Tensor(rng.normal(size=(64, 8)))
    y = np.tile([0, 1], 32)
    disc = Discriminator.init(8, seed=0, std=1e-8)
    tape = Tape()
    loss = adversarial_loss(cls, y, disc.watch(tape), lambda_adv=0.1)
    assert loss.item() == pytest.approx(np.log(2.0), abs=1e-6)


def test_adversarial_gradients_are_reversed_for_the_encoder() -> None:
    rng = np.random.default_rng(3)
    cls_value = rng.normal(size=(6, 4))
    y = np.array([0, 1, 0, 1, 1, 0])
    disc = Discriminator.init(4, seed=5, std=0.5)

    def grads(lam: float) -> dict[str, np.ndarray]:
        tape = Tape()
        cls = tape.variable(cls_value)
        weights = disc.watch(tape)
        loss = adversarial_loss(cls, y, weights, lam)
        return tape.gradient(loss, {"cls": cls, **weights})

    plain_tape = Tape()
    cls = plain_tape.variable(cls_value)
    logits = cls @ Tensor(disc.params[DISC_WEIGHT]) + disc.params[DISC_BIAS]
    plain = plain_tape.gradient(T.softmax_cross_entropy(logits, y), {"cls": cls})["cls"]

    reversed_ = grads(0.1)
    np.testing.assert_allclose(reversed_["cls"], -0.1 * plain, atol=1e-14)
    assert np.any(reversed_[DISC_WEIGHT] != 0)
    np.testing.assert_array_equal(grads(0.0)["cls"], np.zeros_like(cls_value))
    np.testing.assert_allclose(grads(0.0)[DISC_WEIGHT], reversed_[DISC_WEIGHT])


def test_adversarial_loss_needs_both_classes() -> None:
    disc = Discriminator.init(3, seed=0)
    with pytest.raises(DegenerateInputError):
        adversarial_loss(Tensor(np.zeros((4, 3))), [1, 1, 1, 1], disc.watch(Tape()), 0.1)


def test_adversarial_loss_checks_width() -> None:
    disc = Discriminator.init(3, seed=0)
    with pytest.raises(ShapeError):
        adversarial_loss(Tensor(np.zeros((2, 5))), [0, 1], disc.watch(Tape()), 0.1)


def test_discriminator_accuracy() -> None:
    disc = Discriminator({DISC_WEIGHT: np.array([[-1.0, 1.0]]), DISC_BIAS: np.zeros(2)})
    cls = np.array([[-2.0], [3.0], [1.0]])
    assert disc.accuracy(cls, [0, 1, 0]) == pytest.approx(2 / 3)
    assert disc.d == 1


def _rrr_oracle(logits, targets, w_pub, u, lam) -> float:
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    total = 0.0
    for i in range(len(targets)):
        onehot = np.zeros(logits.shape[1])
        onehot[targets[i]] = 1.0
        g = w_pub @ (p[i] - onehot)
        total += float(np.sum((u.T @ g) ** 2))
    return lam * total / len(targets)


def test_rrr_penalty_matches_closed_form(basis) -> None:
    rng = np.random.default_rng(4)
    cls = rng.normal(size=(7, 5))
    w_pub = rng.normal(size=(5, 2))
    logits = cls @ w_pub
    targets = rng.integers(0, 2, size=7)
    value = rrr_penalty(
        Tensor(cls), Tensor(logits), targets, Tensor(w_pub), basis, 0.5
    ).item()
    assert value == pytest.approx(_rrr_oracle(logits, targets, w_pub, basis.U, 0.5), rel=1e-10)


def test_rrr_penalty_vanishes_when_saturated(basis) -> None:
    w_pub = np.random.default_rng(5).normal(size=(5, 2))
    logits = np.array([[40.0, -40.0], [-40.0, 40.0]])
    value = rrr_penalty(
        Tensor(np.zeros((2, 5))), Tensor(logits), [0, 1], Tensor(w_pub), basis, 1.0
    ).item()
    assert value < 1e-20


def test_rrr_penalty_vanishes_for_head_orthogonal_to_basis() -> None:
    u = np.eye(4)[:, :1]
    w_pub = np.zeros((4, 2))
    w_pub[1:, :] = np.random.default_rng(6).normal(size=(3, 2))
    logits = np.random.default_rng(7).normal(size=(3, 2))
    value = rrr_penalty(
        Tensor(np.ones((3, 4))), Tensor(logits), [0, 1, 1], Tensor(w_pub), TraitBasis(U=u), 1.0
    ).item()
    assert value == 0.0


def test_rrr_penalty_shape_errors(basis) -> None:
    cls, logits = Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        rrr_penalty(cls, logits, [0, 1, 1], Tensor(np.zeros((5, 2))), basis, 1.0)
    with pytest.raises(ShapeError):
        rrr_penalty(cls, logits, [0, 1], Tensor(np.zeros((4, 2))), basis, 1.0)
