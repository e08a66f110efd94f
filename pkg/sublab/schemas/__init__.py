from sublab.schemas.corpus import CorpusMeta, SplitSpec, Variant
from sublab.schemas.mitigation import MitigationConfig, MitigationMode
from sublab.schemas.model import Activation, ModelConfig
from sublab.schemas.reports import (
    ClaimCheck,
    ClaimsReport,
    ConditionReport,
    FigureRow,
    LeakageReport,
    RunReport,
    SimilarityReport,
    StageError,
    SweepReport,
    TeacherReport,
)
from sublab.schemas.run import CorpusSettings, RunConfig
from sublab.schemas.training import (
    BaseInit,
    Condition,
    DataRegime,
    EpochRecord,
    History,
    TrainConfig,
)

__all__ = [
    "Activation",
    "BaseInit",
    "ClaimCheck",
    "ClaimsReport",
    "Condition",
    "ConditionReport",
    "CorpusMeta",
    "CorpusSettings",
    "DataRegime",
    "EpochRecord",
    "FigureRow",
    "History",
    "LeakageReport",
    "MitigationConfig",
    "MitigationMode",
    "ModelConfig",
    "RunConfig",
    "RunReport",
    "SimilarityReport",
    "SplitSpec",
    "StageError",
    "SweepReport",
    "TeacherReport",
    "TrainConfig",
    "Variant",
]
