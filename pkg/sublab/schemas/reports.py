from typing import Literal

from pydantic import BaseModel, Field

from sublab.schemas.mitigation import MitigationConfig
from sublab.schemas.training import Condition

type Interval = tuple[float, float]


class LeakageReport(BaseModel):
    probe_acc: float
    tau: float
    tau_ci: Interval
    resid_probe_acc: float
    tau_resid: float
    tau_resid_ci: Interval
    l2: float
    fold_seed: int
    bootstrap_seed: int
    n_boot: int
    n_probe_train: int
    n_probe_test: int

    @property
    def tau_gap(self) -> float:
        return abs(self.tau - self.tau_resid)


class SimilarityReport(BaseModel):
    global_cka: float = Field(ge=0, le=1)
    subspace_cka: float = Field(ge=0, le=1)
    rho_max: float = Field(ge=0, le=1)
    k: int = 1
    cca_ridge: float = 1e-6
    centering: Literal["per_split"] = "per_split"


class StageError(BaseModel):
    stage: str
    error: str
    detail: str


class TeacherReport(BaseModel):
    public_val_acc: float
    private_head_val_acc: float
    private_probe_acc: float
    trait_basis_k: int
    checkpoint: str
    history: str


class ConditionReport(BaseModel):
    """Metrics of one distilled student, all on ``eval_split``."""

    name: str
    condition: Condition
    mitigation: MitigationConfig
    status: Literal["ok", "partial"] = "ok"
    error: StageError | None = None
    eval_split: str = "val"
    student_init_seed: int | None = None
    fold_seed: int | None = None
    bootstrap_seed: int | None = None

    global_cka: float | None = None
    subspace_cka: float | None = None
    rho_max: float | None = None
    tau: float | None = None
    tau_ci: Interval | None = None
    tau_resid: float | None = None
    tau_resid_ci: Interval | None = None
    probe_acc: float | None = None
    public_match: float | None = None
    monotone_fidelity: bool | None = None
    teacher_private_probe_acc: float | None = None
    # The discriminator trained alongside the student, scored on eval CLS.
    # ADVERSARIAL runs train it against the encoder; NONE runs only observe.
    disc_val_acc: float | None = None

    checkpoint: str | None = None
    history: str | None = None

    @property
    def tau_gap(self) -> float | None:
        if self.tau is None or self.tau_resid is None:
            return None
        return abs(self.tau - self.tau_resid)


class RunReport(BaseModel):
    config_hash: str
    master_seed: int
    partial: bool = False
    error: StageError | None = None
    teacher: TeacherReport | None = None
    conditions: list[ConditionReport] = []
    probe_l2: float
    n_boot: int
    trait_k: int
    eval_batch_size: int
    wall_time_s: float = 0.0

    def deterministic_json(self) -> str:
        """Serialization that two runs of the same config must agree on."""
        return self.model_dump_json(exclude={"wall_time_s"}, indent=2)

    def condition(self, name: str) -> ConditionReport | None:
        return next((c for c in self.conditions if c.name == name), None)


class SweepReport(BaseModel):
    config_hash: str
    seeds: list[int]
    reports: list[RunReport]


class FigureRow(BaseModel):
    condition: str
    subspace_cka: float
    tau_resid: float
    ci_lo: float
    ci_hi: float


class ClaimCheck(BaseModel):
    name: str
    status: Literal["passed", "failed", "skipped"]
    observed: dict[str, float] = {}
    expected: str


class ClaimsReport(BaseModel):
    n_reports: int
    enough_seeds: bool
    medians: dict[str, dict[str, float]]
    checks: list[ClaimCheck]

    @property
    def passed(self) -> bool:
        return all(c.status != "failed" for c in self.checks)
