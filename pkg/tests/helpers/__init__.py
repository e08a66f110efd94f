from tests.helpers.factories import (
    planted_trait,
    tiny_corpora,
    tiny_model_config,
    tiny_run_config,
    tiny_splits,
    tiny_train_config,
)
from tests.helpers.oracles import (
    hsic_cka,
    lstsq_residual,
    numeric_gradient,
    rel_error,
    splitmix64_first,
)

__all__ = [
    "hsic_cka",
    "lstsq_residual",
    "numeric_gradient",
    "planted_trait",
    "rel_error",
    "splitmix64_first",
    "tiny_corpora",
    "tiny_model_config",
    "tiny_run_config",
    "tiny_splits",
    "tiny_train_config",
]
