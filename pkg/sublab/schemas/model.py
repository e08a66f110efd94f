from enum import StrEnum
from typing import Self

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Activation(StrEnum):
    GELU = "gelu"
    RELU = "relu"


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    d: int = Field(default=128, ge=2)
    layers: int = Field(default=2, ge=1)
    heads: int = Field(default=2, ge=1)
    ffn_mult: int = Field(default=4, ge=1)
    vocab_size: int = Field(default=16, ge=16)
    max_len: int = Field(default=8, ge=8)
    seed: int = Field(default=0, ge=0)
    activation: Activation = Activation.GELU
    init_std: float = Field(default=0.02, gt=0)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> Self:
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d // self.heads
