import json
from pathlib import Path

from pydantic import BaseModel, ValidationError

from sublab.exceptions import StorageError
from sublab.schemas.reports import RunReport
from sublab.schemas.training import History


def write_json(path: Path, model: BaseModel) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def read_report(path: Path) -> RunReport:
    try:
        return RunReport.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read report {path}: {exc}") from exc
    except ValidationError as exc:
        raise StorageError(f"{path} is not a run report: {exc}") from exc


def read_reports(paths: list[Path]) -> list[RunReport]:
    """Read run reports; a sweep file contributes every report it lists."""
    reports: list[RunReport] = []
    for path in paths:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise StorageError(f"cannot read {path}: {exc}") from exc
        items = data.get("reports") if isinstance(data, dict) and "reports" in data else [data]
        try:
            reports.extend(RunReport.model_validate(item) for item in items)
        except ValidationError as exc:
            raise StorageError(f"{path} does not hold run reports: {exc}") from exc
    return reports


def write_history(path: Path, history: History) -> Path:
    """One JSON object per epoch."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in history.records:
            fh.write(record.model_dump_json() + "\n")
    return path


def read_history(path: Path, role: str) -> History:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
        return History.model_validate(
            {"role": role, "records": [json.loads(line) for line in lines if line.strip()]}
        )
    except (OSError, ValueError) as exc:
        raise StorageError(f"cannot read history {path}: {exc}") from exc
