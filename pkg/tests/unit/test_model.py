import numpy as np
import pytest
from pydantic import ValidationError

from sublab import tensor as T
from sublab.exceptions import ContractError, InputDomainError, ShapeError
from sublab.models.transformer import (
    PRIVATE_HEAD,
    PUBLIC_HEAD,
    ModelParams,
    apply_model,
    clone_student_from_teacher,
    encode,
    forward,
    init_params,
    parameter_names,
)
from sublab.schemas.model import Activation, ModelConfig
from sublab.services.corpus import Example, generate_corpus
from sublab.tensor import Tape, Tensor
from tests.helpers import numeric_gradient, rel_error, tiny_model_config


@pytest.fixture
def batch() -> np.ndarray:
    return generate_corpus(0, 6).tokens


def test_init_is_seeded() -> None:
    a = init_params(tiny_model_config(seed=1))
    b = init_params(tiny_model_config(seed=1))
    c = init_params(tiny_model_config(seed=2))
    assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a)
    assert not np.array_equal(a.tensors["tok_emb"], c.tensors["tok_emb"])


def test_parameter_layout() -> None:
    config = tiny_model_config()
    params = init_params(config)
    assert list(params.tensors) == parameter_names(config, private_head=True)
    assert params.tensors[PUBLIC_HEAD].shape == (config.d, 2)
    np.testing.assert_array_equal(params.tensors["ln_final.gain"], np.ones(config.d))
    np.testing.assert_array_equal(params.tensors["layers.0.ln1.bias"], np.zeros(config.d))


def test_forward_shapes(batch) -> None:
    config = tiny_model_config()
    out = forward(init_params(config), batch)
    assert out.cls.shape == (6, config.d)
    assert out.logits_pub.shape == (6, 2)
    assert out.logits_priv is not None
    assert out.logits_priv.shape == (6, 2)


def test_heads_are_linear_in_cls(batch) -> None:
    params = init_params(tiny_model_config())
    out = forward(params, batch)
    np.testing.assert_allclose(out.logits_pub.data, out.cls.data @ params.tensors[PUBLIC_HEAD])


def test_student_clone_drops_the_private_head_only(batch) -> None:
    teacher = init_params(tiny_model_config())
    student = clone_student_from_teacher(teacher)
    assert not student.has_private_head
    assert set(student) == set(teacher) - {PRIVATE_HEAD}
    student.tensors["tok_emb"][0, 0] += 1.0
    assert teacher.tensors["tok_emb"][0, 0] != student.tensors["tok_emb"][0, 0]
    t_out, s_out = forward(teacher, batch), forward(clone_student_from_teacher(teacher), batch)
    np.testing.assert_array_equal(t_out.logits_pub.data, s_out.logits_pub.data)
    assert s_out.logits_priv is None


def test_clone_requires_a_two_headed_teacher() -> None:
    student = init_params(tiny_model_config(), private_head=False)
    with pytest.raises(ContractError):
        clone_student_from_teacher(student)


def test_encode_matches_unbatched_forward(batch) -> None:
    params = init_params(tiny_model_config())
    enc = encode(params, batch, batch_size=4)
    np.testing.assert_allclose(enc.cls, forward(params, batch).cls.data, atol=1e-10)


def test_rejects_out_of_vocabulary_ids() -> None:
    params = init_params(tiny_model_config())
    with pytest.raises(InputDomainError):
        forward(params, [[0, 1, 2, 16]])


def test_rejects_too_long_sequences() -> None:
    params = init_params(tiny_model_config())
    with pytest.raises(ShapeError):
        forward(params, np.zeros((1, 9), dtype=np.int64))


def test_config_requires_heads_to_divide_width() -> None:
    with pytest.raises(ValidationError):
        ModelConfig(d=10, heads=3)


def test_init_std_at_full_width() -> None:
    params = init_params(ModelConfig(d=128, seed=4))
    weights = np.concatenate(
        [v.ravel() for k, v in params.tensors.items() if not k.endswith((".gain", ".bias"))]
    )
    assert abs(weights.mean()) < 1e-3
    assert 0.015 <= weights.std() <= 0.025


def test_rows_are_independent(batch) -> None:
    params = init_params(tiny_model_config())
    out = forward(params, batch).logits_pub.data
    order = np.array([3, 0, 5, 1, 4, 2])
    np.testing.assert_allclose(forward(params, batch[order]).logits_pub.data, out[order], atol=1e-10)
    doubled = forward(params, np.vstack([batch, batch[:1]])).logits_pub.data
    np.testing.assert_allclose(doubled[-1], doubled[0], atol=1e-10)
    np.testing.assert_allclose(doubled[:-1], out, atol=1e-10)


def test_zero_public_head_gives_uniform_predictions(batch) -> None:
    params = init_params(tiny_model_config())
    params.tensors[PUBLIC_HEAD][:] = 0.0
    logits = forward(params, batch).logits_pub
    np.testing.assert_array_equal(logits.data, np.zeros((6, 2)))
    np.testing.assert_allclose(T.softmax(logits).data, 0.5)


def test_cls_depends_on_the_third_token() -> None:
    params = init_params(tiny_model_config())
    rows = np.array([Example.from_tokens(1, 2, c).token_ids for c in (3, 4)])
    cls = forward(params, rows).cls.data
    assert not np.allclose(cls[0], cls[1])


GRADIENT_CONFIG = ModelConfig(d=4, layers=1, heads=2, ffn_mult=1, seed=3, init_std=0.5)


@pytest.mark.parametrize("name", parameter_names(GRADIENT_CONFIG, private_head=True))
@pytest.mark.parametrize("activation", [Activation.GELU, Activation.RELU])
def test_full_model_loss_gradient(batch, activation, name) -> None:
    config = GRADIENT_CONFIG.model_copy(update={"activation": activation})
    params = init_params(config)
    y_pub, y_priv = np.array([0, 1, 1, 0, 1, 0]), np.array([1, 1, 0, 0, 1, 0])

    def loss_of(weights: dict[str, Tensor]) -> Tensor:
        out = apply_model(weights, config, batch)
        assert out.logits_priv is not None
        return T.softmax_cross_entropy(out.logits_pub, y_pub) + T.softmax_cross_entropy(
            out.logits_priv, y_priv
        )

    tape = Tape()
    watched = params.watch(tape)
    grads = tape.gradient(loss_of(watched), watched)

    def f(value: np.ndarray) -> float:
        tensors = dict(params.tensors)
        tensors[name] = value
        return loss_of(ModelParams(config, tensors).constants()).item()

    numeric = numeric_gradient(f, params.tensors[name].copy())
    assert rel_error(grads[name], numeric) < 1e-4
