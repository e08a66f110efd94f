from enum import StrEnum

from pydantic import BaseModel, ConfigDict, Field


class MitigationMode(StrEnum):
    NONE = "NONE"
    PROJECTION = "PROJECTION"
    ADVERSARIAL = "ADVERSARIAL"
    RRR = "RRR"


class MitigationConfig(BaseModel):
    # The trait basis is estimated from the teacher at run time and handed to
    # distillation separately; ``requires_basis`` says when it is mandatory.
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: MitigationMode = MitigationMode.NONE
    alpha: float = Field(default=1e-2, ge=0)
    lambda_adv: float = Field(default=0.1, ge=0)
    lambda_rrr: float = Field(default=1e-2, ge=0)

    @property
    def requires_basis(self) -> bool:
        return self.mode in (MitigationMode.PROJECTION, MitigationMode.RRR)

    @property
    def uses_private_labels(self) -> bool:
        return self.mode is MitigationMode.ADVERSARIAL

    @property
    def white_box(self) -> bool:
        # Every mitigation reads the teacher trait basis or the private labels.
        return self.mode is not MitigationMode.NONE
