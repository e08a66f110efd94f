from collections.abc import Callable

import numpy as np
import pytest

from sublab import tensor as T
from sublab.exceptions import ContractError, InputDomainError, ShapeError
from sublab.tensor import Array, Tape, Tensor, backward
from tests.helpers import numeric_gradient, rel_error

rng = np.random.default_rng(0)


def _weighted(out: Tensor) -> Tensor:
    # A fixed random weighting turns any output into a scalar with a
    # non-degenerate gradient (plain sums vanish through softmax).
    w = np.random.default_rng(123).normal(size=out.shape)
    return T.reduce_sum(out * w)


def assert_gradients(fn: Callable[..., Tensor], *inputs: Array, tol: float = 1e-6) -> None:
    tape = Tape()
    watched = {f"x{i}": tape.variable(x) for i, x in enumerate(inputs)}
    grads = tape.gradient(fn(*watched.values()), watched)
    for i, x in enumerate(inputs):

        def f(v: Array, i: int = i) -> float:
            args = [Tensor(a) for a in inputs]
            args[i] = Tensor(v)
            return fn(*args).item()

        numeric = numeric_gradient(f, x.copy())
        assert rel_error(grads[f"x{i}"], numeric) < tol, f"input {i}"


def away_from_zero(shape: tuple[int, ...]) -> Array:
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 0.1, 0.5, x)


@pytest.mark.parametrize(
    "fn, shapes",
    [
        (lambda a, b: _weighted(a + b), [(3, 4), (4,)]),
        (lambda a, b: _weighted(a - b), [(3, 4), (3, 1)]),
        (lambda a, b: _weighted(a * b), [(3, 4), (3, 4)]),
        (lambda a: _weighted(T.square(a)), [(5,)]),
        (lambda a: _weighted(T.gelu(a)), [(2, 5)]),
        (lambda a: _weighted(-a), [(2, 3)]),
    ],
)
def test_elementwise_gradients(fn, shapes) -> None:
    assert_gradients(fn, *(rng.normal(size=s) for s in shapes))


def test_division_gradient() -> None:
    a = rng.normal(size=(3, 2))
    b = 2.0 + rng.random(size=(3, 2))
    assert_gradients(lambda x, y: _weighted(x / y), a, b)


def test_relu_gradient_away_from_the_kink() -> None:
    assert_gradients(lambda x: _weighted(T.relu(x)), away_from_zero((4, 3)))


@pytest.mark.parametrize(
    "fn, shapes",
    [
        (lambda a, b: _weighted(a @ b), [(3, 4), (4, 2)]),
        (lambda a, b: _weighted(a @ b), [(2, 3, 4), (4, 5)]),
        (lambda a, b: _weighted(a @ b), [(2, 3, 4), (2, 4, 3)]),
        (lambda a: _weighted(T.transpose(a, (1, 0, 2))), [(2, 3, 4)]),
        (lambda a: _weighted(T.reshape(a, (6, 2))), [(3, 4)]),
        (lambda a: _weighted(a[:, 1]), [(3, 4)]),
        (lambda a: _weighted(T.reduce_sum(a, axis=1)), [(3, 4)]),
        (lambda a: _weighted(T.mean(a, axis=0, keepdims=True)), [(3, 4)]),
        (lambda a: _weighted(T.softmax(a)), [(3, 4)]),
    ],
)
def test_shape_and_reduction_gradients(fn, shapes) -> None:
    assert_gradients(fn, *(rng.normal(size=s) for s in shapes), tol=1e-5)


def test_embedding_gradient_accumulates_repeated_ids() -> None:
    ids = np.array([[0, 2, 2], [1, 0, 2]])
    assert_gradients(lambda t: _weighted(T.embedding(t, ids)), rng.normal(size=(4, 3)))


def test_layer_norm_gradient() -> None:
    x, g, b = rng.normal(size=(2, 3, 5)), rng.normal(size=5), rng.normal(size=5)
    assert_gradients(lambda a, gain, bias: _weighted(T.layer_norm(a, gain, bias)), x, g, b, tol=1e-5)


def test_cross_entropy_gradient_and_value() -> None:
    logits = rng.normal(size=(6, 2))
    labels = np.array([0, 1, 1, 0, 1, 0])
    assert_gradients(lambda z: T.softmax_cross_entropy(z, labels), logits)
    uniform = T.softmax_cross_entropy(np.zeros((4, 2)), [0, 1, 0, 1])
    assert uniform.item() == pytest.approx(np.log(2))


@pytest.mark.parametrize("direction", ["student_teacher", "teacher_student"])
@pytest.mark.parametrize("temperature", [1.0, 2.5])
def test_kl_gradient(direction, temperature) -> None:
    teacher = rng.normal(size=(5, 2))
    assert_gradients(
        lambda s: T.kl_divergence(s, teacher, temperature, direction),
        rng.normal(size=(5, 2)),
    )


def test_kl_is_zero_for_identical_logits_and_positive_otherwise() -> None:
    z = rng.normal(size=(4, 2))
    assert T.kl_divergence(z, z).item() == 0.0
    assert T.kl_divergence(z, z + np.array([1.0, -1.0])).item() > 0.0


def test_kl_rejects_non_positive_temperature() -> None:
    with pytest.raises(ContractError):
        T.kl_divergence(np.zeros((2, 2)), np.zeros((2, 2)), temperature=0.0)


def test_grad_reverse_is_identity_forward_and_negated_backward() -> None:
    tape = Tape()
    x = tape.variable(rng.normal(size=(3, 2)))
    out = T.grad_reverse(x, 0.3)
    np.testing.assert_array_equal(out.data, x.data)
    grads = tape.gradient(T.reduce_sum(T.square(out)), {"x": x})
    np.testing.assert_allclose(grads["x"], -0.3 * 2 * x.data)


def test_grad_reverse_with_zero_lambda_blocks_the_gradient() -> None:
    tape = Tape()
    x = tape.variable(rng.normal(size=(3,)))
    grads = tape.gradient(T.reduce_sum(T.grad_reverse(x, 0.0)), {"x": x})
    assert not grads["x"].any()


def test_grad_reverse_rejects_negative_lambda() -> None:
    with pytest.raises(InputDomainError):
        T.grad_reverse(np.ones(2), -1.0)


def test_fan_out_accumulates() -> None:
    tape = Tape()
    x = tape.variable(np.array([1.0, 2.0]))
    grads = tape.gradient(T.reduce_sum(x * x + x), {"x": x})
    np.testing.assert_allclose(grads["x"], [3.0, 5.0])


def test_unused_source_gets_zero_gradient() -> None:
    tape = Tape()
    x, y = tape.variable(np.ones(2)), tape.variable(np.ones(3))
    grads = tape.gradient(T.reduce_sum(x), {"x": x, "y": y})
    np.testing.assert_array_equal(grads["y"], np.zeros(3))


def test_gradient_requires_scalar_loss() -> None:
    tape = Tape()
    x = tape.variable(np.ones(2))
    with pytest.raises(ContractError):
        tape.gradient(x * 2.0, {"x": x})


def test_backward_of_a_constant_is_zero() -> None:
    x = Tensor(np.ones(3))
    grads = backward(T.reduce_sum(x), {"x": x})
    np.testing.assert_array_equal(grads["x"], np.zeros(3))


def test_operands_from_two_tapes_are_rejected() -> None:
    a, b = Tape().variable(np.ones(2)), Tape().variable(np.ones(2))
    with pytest.raises(ContractError):
        T.add(a, b)


@pytest.mark.parametrize(
    "fn",
    [
        lambda: T.matmul(np.ones((2, 3)), np.ones((2, 3))),
        lambda: T.add(np.ones((2, 3)), np.ones((4,))),
        lambda: T.reshape(np.ones((2, 3)), (4, 2)),
        lambda: T.softmax_cross_entropy(np.ones((3, 2)), [0, 1]),
    ],
)
def test_shape_mismatches_raise(fn) -> None:
    with pytest.raises(ShapeError):
        fn()


def test_cross_entropy_rejects_out_of_range_labels() -> None:
    with pytest.raises(InputDomainError):
        T.softmax_cross_entropy(np.zeros((2, 2)), [0, 2])


def test_embedding_rejects_out_of_range_ids() -> None:
    with pytest.raises(InputDomainError):
        T.embedding(np.zeros((4, 2)), [[0, 4]])
