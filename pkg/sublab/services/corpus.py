"""Synthetic corpus with disentangled public and private labels.

Each example is the fixed-length sequence ``CLS a b then c ; report status``.
The public label is the equality test ``a == b``; the private label is the
pseudorandom parity ``(hash64(a + c) + b) mod 2``.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from sublab.exceptions import ContractError, InputDomainError
from sublab.log import get_logger
from sublab.rng import Xoshiro256, hash64, numpy_generator
from sublab.schemas.corpus import SplitSpec, Variant
from sublab.tensor import IntArray

log = get_logger(__name__)

NUM_CONTENT = 10
DIFFDATA_OFFSET = 0x5EED


@dataclass(frozen=True)
class Vocab:
    content_tokens: tuple[str, ...] = tuple("ABCDEFGHIJ")
    special_tokens: tuple[str, ...] = ("[CLS]", ";", "then", "report", "status", "[PAD]")

    @property
    def size(self) -> int:
        return len(self.content_tokens) + len(self.special_tokens)

    def id_of(self, token: str) -> int:
        if token in self.content_tokens:
            return self.content_tokens.index(token)
        return NUM_CONTENT + self.special_tokens.index(token)

    def token_of(self, token_id: int) -> str:
        if 0 <= token_id < NUM_CONTENT:
            return self.content_tokens[token_id]
        if NUM_CONTENT <= token_id < self.size:
            return self.special_tokens[token_id - NUM_CONTENT]
        raise InputDomainError(f"token id {token_id} is outside the vocabulary")

    def decode(self, ids: tuple[int, ...]) -> str:
        return " ".join(self.token_of(i) for i in ids)


VOCAB = Vocab()
CLS_ID = VOCAB.id_of("[CLS]")
SEP_ID = VOCAB.id_of(";")
THEN_ID = VOCAB.id_of("then")
REPORT_ID = VOCAB.id_of("report")
STATUS_ID = VOCAB.id_of("status")
PAD_ID = VOCAB.id_of("[PAD]")
SEQ_LEN = 8


def _check_token(name: str, value: int) -> None:
    if not 0 <= value < NUM_CONTENT:
        raise InputDomainError(f"{name}={value} is not a content token id (0..9)")


def public_label(a: int, b: int) -> int:
    _check_token("a", a)
    _check_token("b", b)
    return int(a == b)


def private_label(a: int, b: int, c: int) -> int:
    _check_token("a", a)
    _check_token("b", b)
    _check_token("c", c)
    return (hash64(a + c) + b) % 2


@dataclass(frozen=True)
class Example:
    a: int
    b: int
    c: int
    y_pub: int
    y_priv: int

    @classmethod
    def from_tokens(cls, a: int, b: int, c: int) -> "Example":
        return cls(a, b, c, public_label(a, b), private_label(a, b, c))

    @property
    def token_ids(self) -> tuple[int, ...]:
        return (CLS_ID, self.a, self.b, THEN_ID, self.c, SEP_ID, REPORT_ID, STATUS_ID)


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of examples with array views for training."""

    name: str
    examples: tuple[Example, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.examples)

    @cached_property
    def tokens(self) -> IntArray:
        return np.array([e.token_ids for e in self.examples], dtype=np.int64).reshape(
            len(self.examples), SEQ_LEN
        )

    @cached_property
    def y_pub(self) -> IntArray:
        return np.array([e.y_pub for e in self.examples], dtype=np.int64)

    @cached_property
    def y_priv(self) -> IntArray:
        return np.array([e.y_priv for e in self.examples], dtype=np.int64)


@dataclass(frozen=True)
class Corpus(Dataset):
    seed: int = 0
    variant: Variant = Variant.BASE
    balance_public: bool = True


class Splits(NamedTuple):
    train: Dataset
    val: Dataset
    test: Dataset


def generate_corpus(
    seed: int,
    size: int,
    variant: Variant = Variant.BASE,
    balance_public: bool = True,
) -> Corpus:
    """Sample ``size`` examples from the xoshiro256** stream of ``seed``.

    DIFFDATA shifts the seed by a fixed offset. With ``balance_public`` the
    event ``a == b`` has probability exactly 0.5; otherwise ``b`` is uniform.
    """
    if size < 1:
        raise ContractError(f"corpus size must be >= 1, got {size}")
    stream_seed = seed + DIFFDATA_OFFSET if variant is Variant.DIFFDATA else seed
    rng = Xoshiro256(stream_seed)
    examples = []
    for _ in range(size):
        a = rng.randbelow(NUM_CONTENT)
        if not balance_public:
            b = rng.randbelow(NUM_CONTENT)
        elif rng.random() < 0.5:
            b = a
        else:
            b = (a + 1 + rng.randbelow(NUM_CONTENT - 1)) % NUM_CONTENT
        c = rng.randbelow(NUM_CONTENT)
        examples.append(Example.from_tokens(a, b, c))
    corpus = Corpus(
        name=variant.value.lower(),
        examples=tuple(examples),
        seed=seed,
        variant=variant,
        balance_public=balance_public,
    )
    log.debug(
        "generated corpus",
        extra={"seed": seed, "size": size, "variant": variant.value, "balance": balance_public},
    )
    return corpus


def split(corpus: Dataset, spec: SplitSpec) -> Splits:
    """Seeded shuffle, then contiguous train/val/test blocks by ``spec.ratios``."""
    n = len(corpus)
    if n == 0:
        raise ContractError("cannot split an empty corpus")
    order = numpy_generator(spec.split_seed).permutation(n)
    n_train = round(spec.ratios[0] * n)
    n_val = min(round(spec.ratios[1] * n), n - n_train)
    bounds = (0, n_train, n_train + n_val, n)
    parts = [
        Dataset(
            name=f"{corpus.name}/{part}",
            examples=tuple(corpus.examples[i] for i in order[lo:hi]),
        )
        for part, lo, hi in zip(("train", "val", "test"), bounds, bounds[1:], strict=False)
    ]
    return Splits(*parts)


def enumerate_triples() -> list[Example]:
    """All 1000 (a, b, c) triples, in lexicographic order."""
    return [
        Example.from_tokens(a, b, c)
        for a in range(NUM_CONTENT)
        for b in range(NUM_CONTENT)
        for c in range(NUM_CONTENT)
    ]
