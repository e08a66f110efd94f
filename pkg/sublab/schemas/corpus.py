from enum import StrEnum
from typing import Self

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Variant(StrEnum):
    BASE = "BASE"
    DIFFDATA = "DIFFDATA"


class SplitSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    split_seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _ratios_partition_one(self) -> Self:
        if any(r <= 0 for r in self.ratios) or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be positive and sum to 1: {self.ratios}")
        return self


class CorpusMeta(BaseModel):
    """JSON sidecar written next to an exported corpus CSV."""

    seed: int = Field(ge=0)
    variant: Variant
    balance: bool
    size: int = Field(ge=1)
