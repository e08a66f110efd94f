import csv
from pathlib import Path

from sublab.exceptions import InputDomainError, StorageError
from sublab.schemas.corpus import CorpusMeta
from sublab.services.corpus import Corpus, Example

CSV_HEADER = ("a", "b", "c", "y_pub", "y_priv")


def save_corpus(corpus: Corpus, directory: Path, name: str | None = None) -> Path:
    """Write ``<name>.csv`` plus its ``<name>.json`` sidecar; returns the CSV path."""
    directory.mkdir(parents=True, exist_ok=True)
    stem = name or corpus.name
    csv_path = directory / f"{stem}.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows((e.a, e.b, e.c, e.y_pub, e.y_priv) for e in corpus.examples)
    meta = CorpusMeta(
        seed=corpus.seed,
        variant=corpus.variant,
        balance=corpus.balance_public,
        size=len(corpus),
    )
    csv_path.with_suffix(".json").write_text(meta.model_dump_json(indent=2), encoding="utf-8")
    return csv_path


def _parse_row(row: dict[str, str], line: int) -> Example:
    try:
        a, b, c, y_pub, y_priv = (int(row[key]) for key in CSV_HEADER)
        example = Example.from_tokens(a, b, c)
    except (KeyError, TypeError, ValueError, InputDomainError) as exc:
        raise StorageError(f"corpus line {line}: {exc}") from exc
    if (example.y_pub, example.y_priv) != (y_pub, y_priv):
        raise StorageError(f"corpus line {line}: stored labels disagree with (a, b, c)")
    return example


def load_corpus(csv_path: Path) -> Corpus:
    """Read a corpus back and check it against its sidecar."""
    sidecar = csv_path.with_suffix(".json")
    try:
        meta = CorpusMeta.model_validate_json(sidecar.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise StorageError(f"missing corpus sidecar {sidecar}") from exc
    except ValueError as exc:
        raise StorageError(f"malformed corpus sidecar {sidecar}: {exc}") from exc

    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise StorageError(f"{csv_path}: expected header {','.join(CSV_HEADER)}")
        examples = tuple(_parse_row(row, i) for i, row in enumerate(reader, start=2))
    if len(examples) != meta.size:
        raise StorageError(f"{csv_path}: {len(examples)} rows, sidecar says {meta.size}")
    return Corpus(
        name=csv_path.stem,
        examples=examples,
        seed=meta.seed,
        variant=meta.variant,
        balance_public=meta.balance,
    )

