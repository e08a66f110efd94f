from dataclasses import dataclass
from pathlib import Path

import pytest

from sublab.schemas.reports import RunReport
from sublab.services.harness import run_experiment
from tests.helpers import tiny_run_config


@dataclass
class TinyRun:
    out: Path
    report: RunReport


# One full tiny experiment shared by every test that only reads its outputs.
@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory: pytest.TempPathFactory) -> TinyRun:
    out = tmp_path_factory.mktemp("tiny-run")
    return TinyRun(out=out, report=run_experiment(tiny_run_config(), out))
