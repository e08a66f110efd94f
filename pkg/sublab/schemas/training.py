from enum import StrEnum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class BaseInit(StrEnum):
    SAME_BASE = "SAME_BASE"
    DIFF_BASE = "DIFF_BASE"


class DataRegime(StrEnum):
    SAME = "SAME"
    DIFFDATA = "DIFFDATA"


class Condition(BaseModel):
    """One cell of the initialization × data design.

    ``student_seed`` only matters for DIFF_BASE; when left unset the harness
    derives it from the master seed and the condition name. ``label``
    distinguishes repeated cells, e.g. two independently seeded DIFF_BASE
    students.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    base: BaseInit
    data: DataRegime = DataRegime.SAME
    student_seed: int | None = Field(default=None, ge=0)
    label: str | None = None

    @property
    def name(self) -> str:
        name = self.base.value
        if self.data is DataRegime.DIFFDATA:
            name += "_DIFFDATA"
        if self.label:
            name += f"#{self.label}"
        return name

    @classmethod
    def parse(cls, name: str, student_seed: int | None = None) -> "Condition":
        """Inverse of ``name``: ``DIFF_BASE_DIFFDATA#2`` etc."""
        cell, _, label = name.partition("#")
        data = DataRegime.SAME
        if cell.endswith("_DIFFDATA"):
            cell, data = cell.removesuffix("_DIFFDATA"), DataRegime.DIFFDATA
        return cls(
            base=BaseInit(cell), data=data, student_seed=student_seed, label=label or None
        )


def ablation_conditions() -> list[Condition]:
    return [
        Condition(base=BaseInit.SAME_BASE),
        Condition(base=BaseInit.SAME_BASE, data=DataRegime.DIFFDATA),
        Condition(base=BaseInit.DIFF_BASE),
        Condition(base=BaseInit.DIFF_BASE, data=DataRegime.DIFFDATA),
    ]


def seed_effect_conditions() -> list[Condition]:
    return [
        Condition(base=BaseInit.SAME_BASE),
        Condition(base=BaseInit.DIFF_BASE, label="1"),
        Condition(base=BaseInit.DIFF_BASE, label="2"),
    ]


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lr: float = Field(default=3e-4, gt=0)
    epochs: int = Field(default=15, ge=1)
    batch_size: int = Field(default=128, ge=1)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.999, gt=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)
    kd_temperature: float = Field(default=1.0, gt=0)
    kl_direction: Literal["student_teacher", "teacher_student"] = "student_teacher"
    # Students are KD-only by default; a positive weight adds hard-label CE.
    student_hard_label_weight: float = Field(default=0.0, ge=0)
    # Mini-batch order; seeded apart from weight init so conditions share it.
    shuffle_seed: int = Field(default=0, ge=0)
    eval_batch_size: int = Field(default=128, ge=1)


class EpochRecord(BaseModel):
    epoch: int
    loss: float
    pub_acc: float
    val_pub_acc: float
    priv_acc: float | None = None
    val_priv_acc: float | None = None
    public_match: float | None = None
    disc_acc: float | None = None


class History(BaseModel):
    role: str
    records: list[EpochRecord] = []

    @property
    def monotone_fidelity(self) -> bool:
        """Public match never drops by more than 0.02 between epochs."""
        matches = [r.public_match for r in self.records if r.public_match is not None]
        return all(b >= a - 0.02 for a, b in zip(matches, matches[1:], strict=False))
