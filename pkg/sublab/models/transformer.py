"""Pre-norm transformer encoder with a pooled CLS vector and linear task heads.

The pooled representation is the final hidden state at position 0, after the
final layer norm. Heads are bias-free linear maps ``logits = cls @ W`` so every
logit is linear in ``cls``.
"""

from collections.abc import Iterator, Mapping
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from sublab import tensor as T
from sublab.exceptions import ContractError, InputDomainError, ShapeError
from sublab.rng import numpy_generator
from sublab.schemas.model import Activation, ModelConfig
from sublab.tensor import Array, Tape, Tensor

PUBLIC_HEAD = "head.pub"
PRIVATE_HEAD = "head.priv"
NUM_CLASSES = 2


def parameter_names(config: ModelConfig, private_head: bool) -> list[str]:
    """Fixed parameter ordering; checkpoints and init draws follow it."""
    names = ["tok_emb", "pos_emb"]
    for layer in range(config.layers):
        p = f"layers.{layer}"
        names += [
            f"{p}.ln1.gain",
            f"{p}.ln1.bias",
            f"{p}.attn.q",
            f"{p}.attn.k",
            f"{p}.attn.v",
            f"{p}.attn.o",
            f"{p}.ln2.gain",
            f"{p}.ln2.bias",
            f"{p}.ffn.w1",
            f"{p}.ffn.w2",
        ]
    names += ["ln_final.gain", "ln_final.bias", PUBLIC_HEAD]
    if private_head:
        names.append(PRIVATE_HEAD)
    return names


def parameter_shape(config: ModelConfig, name: str) -> tuple[int, ...]:
    d, hidden = config.d, config.d * config.ffn_mult
    leaf = name.rsplit(".", 2)
    if name == "tok_emb":
        return (config.vocab_size, d)
    if name == "pos_emb":
        return (config.max_len, d)
    if name in (PUBLIC_HEAD, PRIVATE_HEAD):
        return (d, NUM_CLASSES)
    if name.endswith((".gain", ".bias")):
        return (d,)
    if leaf[-2:] == ["ffn", "w1"]:
        return (d, hidden)
    if leaf[-2:] == ["ffn", "w2"]:
        return (hidden, d)
    if leaf[-2] == "attn":
        return (d, d)
    raise KeyError(name)


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Array]

    @property
    def has_private_head(self) -> bool:
        return PRIVATE_HEAD in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def watch(self, tape: Tape) -> dict[str, Tensor]:
        return {name: tape.variable(value) for name, value in self.tensors.items()}

    def constants(self) -> dict[str, Tensor]:
        return {name: Tensor(value) for name, value in self.tensors.items()}

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


@dataclass(frozen=True)
class ForwardOut:
    cls: Tensor
    logits_pub: Tensor
    logits_priv: Tensor | None


def init_params(config: ModelConfig, private_head: bool = True) -> ModelParams:
    """Scaled-normal weights (std ``init_std``), unit gains and zero biases."""
    rng = numpy_generator(config.seed)
    tensors: dict[str, Array] = {}
    for name in parameter_names(config, private_head):
        shape = parameter_shape(config, name)
        if name.endswith(".gain"):
            tensors[name] = np.ones(shape)
        elif name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, config.init_std, size=shape)
    return ModelParams(config, tensors)


def clone_student_from_teacher(teacher: ModelParams) -> ModelParams:
    """Deep copy of the backbone and public head; the private head is dropped."""
    if not teacher.has_private_head:
        raise ContractError("clone_student_from_teacher expects a two-headed teacher")
    return ModelParams(
        teacher.config,
        {k: v.copy() for k, v in teacher.tensors.items() if k != PRIVATE_HEAD},
    )


def _check_batch(config: ModelConfig, batch: npt.ArrayLike) -> npt.NDArray[np.int64]:
    ids = np.asarray(batch, dtype=np.int64)
    if ids.ndim != 2:
        raise ShapeError(f"batch must be a (n, length) id matrix, got shape {ids.shape}")
    if ids.shape[1] > config.max_len:
        raise ShapeError(f"sequence length {ids.shape[1]} exceeds max_len {config.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise InputDomainError(f"token ids must lie in [0, {config.vocab_size})")
    return ids


def _attention(
    w: Mapping[str, Tensor], prefix: str, x: Tensor, config: ModelConfig
) -> Tensor:
    n, length, d = x.shape
    h, dh = config.heads, config.head_dim

    def split_heads(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (n, length, h, dh)), (0, 2, 1, 3))

    q = split_heads(x @ w[f"{prefix}.q"])
    k = split_heads(x @ w[f"{prefix}.k"])
    v = split_heads(x @ w[f"{prefix}.v"])
    scores = (q @ T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    context = T.softmax(scores, axis=-1) @ v
    merged = T.reshape(T.transpose(context, (0, 2, 1, 3)), (n, length, d))
    return merged @ w[f"{prefix}.o"]


def apply_model(
    weights: Mapping[str, Tensor], config: ModelConfig, batch: npt.ArrayLike
) -> ForwardOut:
    """Forward pass over explicit weight tensors (watched or constant)."""
    ids = _check_batch(config, batch)
    length = ids.shape[1]
    act = T.gelu if config.activation is Activation.GELU else T.relu

    hidden = T.embedding(weights["tok_emb"], ids) + weights["pos_emb"][:length]
    for layer in range(config.layers):
        p = f"layers.{layer}"
        normed = T.layer_norm(hidden, weights[f"{p}.ln1.gain"], weights[f"{p}.ln1.bias"])
        hidden = hidden + _attention(weights, f"{p}.attn", normed, config)
        normed = T.layer_norm(hidden, weights[f"{p}.ln2.gain"], weights[f"{p}.ln2.bias"])
        hidden = hidden + act(normed @ weights[f"{p}.ffn.w1"]) @ weights[f"{p}.ffn.w2"]
    hidden = T.layer_norm(hidden, weights["ln_final.gain"], weights["ln_final.bias"])

    cls = hidden[:, 0, :]
    logits_priv = cls @ weights[PRIVATE_HEAD] if PRIVATE_HEAD in weights else None
    return ForwardOut(cls=cls, logits_pub=cls @ weights[PUBLIC_HEAD], logits_priv=logits_priv)


def forward(params: ModelParams, batch: npt.ArrayLike) -> ForwardOut:
    return apply_model(params.constants(), params.config, batch)


@dataclass(frozen=True)
class Encoded:
    cls: Array
    logits_pub: Array
    logits_priv: Array | None


def encode(params: ModelParams, tokens: npt.ArrayLike, batch_size: int = 128) -> Encoded:
    """Frozen-model CLS vectors and logits for a whole dataset, in batches."""
    ids = np.asarray(tokens, dtype=np.int64)
    weights = params.constants()
    cls, pub, priv = [], [], []
    for start in range(0, ids.shape[0], batch_size):
        out = apply_model(weights, params.config, ids[start : start + batch_size])
        cls.append(out.cls.data)
        pub.append(out.logits_pub.data)
        if out.logits_priv is not None:
            priv.append(out.logits_priv.data)
    d = params.config.d
    return Encoded(
        cls=np.concatenate(cls) if cls else np.zeros((0, d)),
        logits_pub=np.concatenate(pub) if pub else np.zeros((0, NUM_CLASSES)),
        logits_priv=np.concatenate(priv) if priv else None,
    )
