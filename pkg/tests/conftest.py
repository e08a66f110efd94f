import pytest

from sublab.config import Settings, get_settings
from sublab.schemas.run import RunConfig
from sublab.services.corpus import Splits
from sublab.services.training import CorpusVariants, TrainResult, train_teacher
from tests.helpers import tiny_corpora, tiny_model_config, tiny_run_config, tiny_train_config


@pytest.fixture
def test_settings() -> Settings:
    return get_settings("test")


@pytest.fixture(scope="session")
def corpora() -> CorpusVariants:
    return tiny_corpora()


@pytest.fixture(scope="session")
def splits(corpora: CorpusVariants) -> Splits:
    return corpora.base


# Training is the slow part of the suite; one tiny teacher serves every test
# that only needs "a trained teacher".
@pytest.fixture(scope="session")
def trained_teacher(splits: Splits) -> TrainResult:
    return train_teacher(splits, tiny_model_config(), tiny_train_config())


@pytest.fixture
def run_config() -> RunConfig:
    return tiny_run_config()
