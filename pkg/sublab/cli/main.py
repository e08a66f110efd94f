"""``sublab`` command line: every stage of the pipeline as a subcommand."""

import argparse
import json
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

from pydantic import BaseModel, ValidationError

from sublab import __version__
from sublab.cli.error_handlers import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, handle_error
from sublab.config import settings
from sublab.exceptions import StorageError
from sublab.log import get_logger, set_level
from sublab.schemas.corpus import Variant
from sublab.schemas.mitigation import MitigationMode
from sublab.schemas.run import RunConfig
from sublab.schemas.training import Condition
from sublab.services import claims, harness
from sublab.services.corpus import VOCAB, generate_corpus
from sublab.services.probes import measure_leakage
from sublab.services.similarity import TraitBasis, similarity_report, trait_basis
from sublab.storage.corpus_io import save_corpus
from sublab.storage.matrices import load_labels, load_matrix
from sublab.storage.reports import read_reports, write_json
from sublab.tensor import Array

log = get_logger(__name__)

type Handler = Callable[[argparse.Namespace], int]


class UsageError(Exception):
    """Bad command-line input that argparse itself cannot detect."""


def load_config(value: str) -> RunConfig:
    """A profile name (``default``, ``fast``) or a path to a RunConfig JSON file."""
    path = Path(value)
    if path.suffix == ".json" or path.is_file():
        try:
            return RunConfig.model_validate_json(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise StorageError(f"cannot read config {path}: {exc}") from exc
        except ValidationError as exc:
            raise StorageError(f"invalid config {path}: {exc}") from exc
    try:
        return RunConfig.profile(value)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _emit(model: BaseModel) -> None:
    print(model.model_dump_json(indent=2))


def _out_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    return Path(args.out) if args.out is not None else harness.run_dir(config)


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.corpus_seed
    size = args.size or config.corpus.size
    corpus = generate_corpus(seed, size, Variant(args.variant), config.corpus.balance_public)
    out = Path(args.out)
    csv_path = save_corpus(corpus, out)
    if args.literal:
        lines = (VOCAB.decode(e.token_ids) for e in corpus.examples)
        csv_path.with_suffix(".txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(json.dumps({"corpus": str(csv_path), "size": len(corpus), "seed": seed}))
    return EXIT_OK


def cmd_train_teacher(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out = _out_dir(args, config)
    corpora = harness.prepare_corpora(config)
    teacher = harness.fit_teacher(config, corpora, out)
    _emit(teacher.report)
    return EXIT_OK


def cmd_distill(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out = _out_dir(args, config)
    try:
        condition = Condition.parse(args.condition, args.student_seed)
    except ValueError as exc:
        raise UsageError(f"unknown condition {args.condition!r}") from exc
    mitigation = config.mitigation.model_copy(update={"mode": MitigationMode(args.mitigation)})
    config = config.model_copy(update={"mitigation": mitigation})
    name = condition.name
    if mitigation.mode is not MitigationMode.NONE:
        name += f"+{mitigation.mode}"

    corpora = harness.prepare_corpora(config)
    teacher = harness.load_teacher(config, corpora, Path(args.teacher), out)
    report = harness.run_condition(config, harness.Job(name, condition, mitigation), teacher, corpora, out)
    _emit(report)
    return EXIT_FAILURE if report.status == "partial" else EXIT_OK


def cmd_probe(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    cls, _ = load_matrix(Path(args.embeddings))
    labels = load_labels(Path(args.labels))
    covariates = load_matrix(Path(args.residualize))[0] if args.residualize else None
    report = measure_leakage(
        cls,
        labels,
        covariates,
        fold_seed=args.fold_seed if args.fold_seed is not None else config.stream_seed("probe_folds"),
        bootstrap_seed=config.stream_seed("bootstrap"),
        n_boot=args.n_boot or config.bootstrap_n,
        l2=config.probe_l2,
    )
    _emit(report)
    return EXIT_OK


def _teacher_basis_beside(teacher_path: Path, z_t: Array, config: RunConfig) -> TraitBasis:
    """The basis a run dumped next to its teacher embeddings, else one fit on its labels."""
    dumped = teacher_path.parent / harness.BASIS_FILE
    if dumped.is_file():
        u, _ = load_matrix(dumped)
        return TraitBasis(U=u, source=str(dumped))
    labels = teacher_path.parent / harness.LABELS_FILE
    if labels.is_file():
        return trait_basis(z_t, load_labels(labels), config.trait_k, config.probe_l2)
    raise UsageError(
        f"--basis teacher needs --labels, or {harness.BASIS_FILE} or {harness.LABELS_FILE} "
        f"next to {teacher_path}"
    )


def cmd_similarity(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    teacher_path, student_path = (Path(p) for p in args.embeddings)
    z_t, _ = load_matrix(teacher_path)
    z_s, _ = load_matrix(student_path)
    basis: TraitBasis
    if args.basis != "teacher":
        u, _ = load_matrix(Path(args.basis))
        basis = TraitBasis(U=u, source=str(args.basis))
    elif args.labels is not None:
        basis = trait_basis(z_t, load_labels(Path(args.labels)), config.trait_k, config.probe_l2)
    else:
        basis = _teacher_basis_beside(teacher_path, z_t, config)
    _emit(similarity_report(z_t, z_s, basis, config.cca_ridge))
    return EXIT_OK


def cmd_run_all(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out = _out_dir(args, config)
    report = harness.run_experiment(config, out)
    print(json.dumps({"report": str(out / "report.json"), "partial": report.partial}))
    return EXIT_FAILURE if report.partial else EXIT_OK


def cmd_figure(args: argparse.Namespace) -> int:
    reports = read_reports([Path(p) for p in args.reports])
    rows = harness.emit_figure_data(reports, Path(args.out), render_svg=not args.no_svg)
    print(json.dumps({"figure": args.out, "rows": len(rows)}))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out = _out_dir(args, config)
    sweep = harness.run_sweep(config, args.seeds, out)
    result = claims.evaluate_claims(sweep.reports)
    write_json(out / "claims.json", result)
    harness.emit_figure_data(sweep.reports, out / "figure.csv")
    _emit(result)
    return EXIT_FAILURE if any(r.partial for r in sweep.reports) else EXIT_OK


def cmd_claims(args: argparse.Namespace) -> int:
    result = claims.evaluate_claims(read_reports([Path(p) for p in args.reports]))
    _emit(result)
    if args.strict and not result.passed:
        return EXIT_FAILURE
    return EXIT_OK


def _add_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        default="default",
        help="Profile name ('default', 'fast') or path to a RunConfig JSON file.",
    )


def build_argparser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sublab", description="Subliminal-transfer laboratory: teacher, students, leakage."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler: Handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _add_config(p)
        p.set_defaults(handler=handler)
        return p

    p = command("gen-corpus", cmd_gen_corpus, "Generate and export a corpus.")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--variant", default="BASE", choices=[v.value for v in Variant])
    p.add_argument("--literal", action="store_true", help="Also write decoded token sequences.")

    p = command("train-teacher", cmd_train_teacher, "Train the two-headed teacher.")
    p.add_argument("--out")

    p = command("distill", cmd_distill, "Distill one student from a teacher checkpoint.")
    p.add_argument("--teacher", required=True)
    p.add_argument("--condition", required=True, help="e.g. SAME_BASE, DIFF_BASE_DIFFDATA#2")
    p.add_argument("--student-seed", type=int)
    p.add_argument("--mitigation", default="NONE", choices=[m.value for m in MitigationMode])
    p.add_argument("--out")

    p = command("probe", cmd_probe, "Leakage tau / tau_resid on an embedding dump.")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--residualize", help="Covariates to regress out, e.g. teacher logits.")
    p.add_argument("--fold-seed", type=int)
    p.add_argument("--n-boot", type=int)

    p = command("similarity", cmd_similarity, "CKA, subspace CKA and rho_max of two dumps.")
    p.add_argument("--embeddings", nargs=2, required=True, metavar=("TEACHER", "STUDENT"))
    p.add_argument("--basis", default="teacher", help="'teacher' or a basis CSV.")
    p.add_argument(
        "--labels",
        help=f"Private labels; default: the run's {harness.BASIS_FILE} or {harness.LABELS_FILE}.",
    )

    p = command("run-all", cmd_run_all, "Full experiment: teacher, all conditions, reports.")
    p.add_argument("--out")

    p = command("figure", cmd_figure, "Scatter data from one or more run reports.")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-svg", action="store_true")

    p = command("sweep", cmd_sweep, "Run the experiment for several master seeds.")
    p.add_argument("--seeds", nargs="+", type=int, required=True)
    p.add_argument("--out")

    p = command("claims", cmd_claims, "Check the leakage claims over run or sweep reports.")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--strict", action="store_true", help="Exit 1 when a check fails.")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_argparser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    set_level(settings.LOG_LEVEL)
    log.info("command", extra={"command": args.command})
    try:
        code: int = args.handler(args)
    except UsageError as exc:
        print(json.dumps({"error": "UsageError", "detail": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    except harness.StageFailed as exc:
        # Report the error the stage wrapped, not the wrapper.
        return handle_error(exc.__cause__ or exc)
    except Exception as exc:
        return handle_error(exc)
    return code
