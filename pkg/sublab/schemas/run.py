import hashlib
import json
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from sublab.rng import derive_seed
from sublab.schemas.mitigation import MitigationConfig, MitigationMode
from sublab.schemas.model import ModelConfig
from sublab.schemas.training import Condition, TrainConfig, ablation_conditions

type Profile = Literal["default", "fast"]


class CorpusSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    size: int = Field(default=10_000, ge=10)
    # None: derive from the master seed's "corpus" stream.
    seed: int | None = Field(default=None, ge=0)
    balance_public: bool = True


class RunConfig(BaseModel):
    """Everything that determines a run; serialises to the CLI config file."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    master_seed: int = Field(default=0, ge=0)
    corpus: CorpusSettings = CorpusSettings()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    # Student schedule; None reuses ``train``.
    student_train: TrainConfig | None = None
    conditions: list[Condition] = Field(default_factory=ablation_conditions)
    mitigation: MitigationConfig = MitigationConfig()
    # Extra SAME_BASE students, one per listed mode, paired with the NONE run.
    mitigations: list[MitigationMode] = []
    bootstrap_n: int = Field(default=200, ge=1)
    probe_l2: float = Field(default=1e-3, gt=0)
    trait_k: int = Field(default=1, ge=1)
    cca_ridge: float = Field(default=1e-6, ge=0)
    # Relative names resolve under the OUTPUT_DIR setting.
    output_dir: str = "default"

    def config_hash(self) -> str:
        # The output location does not change any number in the report.
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def stream_seed(self, name: str) -> int:
        return derive_seed(self.master_seed, name)

    @property
    def corpus_seed(self) -> int:
        if self.corpus.seed is not None:
            return self.corpus.seed
        return self.stream_seed("corpus")

    @property
    def student_schedule(self) -> TrainConfig:
        return self.student_train or self.train

    @classmethod
    def profile(cls, name: Profile | str, **overrides: object) -> "RunConfig":
        """Named presets: ``default`` desk scale, ``fast`` for CI."""
        if name == "default":
            base = cls()
        elif name == "fast":
            base = cls(
                corpus=CorpusSettings(size=2_000),
                model=ModelConfig(d=64),
                output_dir="fast",
            )
        else:
            raise ValueError(f"Unknown profile {name!r}. Must be 'default' or 'fast'.")
        return cls.model_validate({**base.model_dump(), **overrides}) if overrides else base
