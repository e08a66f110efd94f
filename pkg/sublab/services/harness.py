"""End-to-end experiment runs: one teacher, every condition, reports on disk.

All randomness comes from ``RunConfig.master_seed`` through named streams, so
an identical config reproduces an identical report. A failing stage never
aborts the run; it is recorded on the affected entry and the report is still
written.
"""

import csv
import time
from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sublab.config import settings
from sublab.exceptions import ContractError
from sublab.log import get_logger, run_context
from sublab.models.transformer import ModelParams, encode
from sublab.schemas.corpus import SplitSpec, Variant
from sublab.schemas.mitigation import MitigationConfig, MitigationMode
from sublab.schemas.reports import (
    ConditionReport,
    FigureRow,
    RunReport,
    StageError,
    SweepReport,
    TeacherReport,
)
from sublab.schemas.run import RunConfig
from sublab.schemas.training import BaseInit, Condition, DataRegime, History, TrainConfig
from sublab.services.corpus import Splits, generate_corpus, split
from sublab.services.probes import leakage_tau, measure_leakage
from sublab.services.similarity import TraitBasis, similarity_report, trait_basis
from sublab.services.training import (
    CorpusVariants,
    distill_student,
    teacher_private_head_accuracy,
    train_teacher,
)
from sublab.storage.checkpoint import load_checkpoint, save_checkpoint
from sublab.storage.matrices import save_matrix
from sublab.storage.reports import write_history, write_json
from sublab.tensor import Array, IntArray

log = get_logger(__name__)

EVAL_SPLIT = "val"
# Dumped next to the teacher embeddings.
LABELS_FILE = "y_priv.csv"
BASIS_FILE = "trait_basis.csv"


class StageFailed(Exception):
    def __init__(self, error: StageError) -> None:
        super().__init__(error.detail)
        self.error = error


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Turn any failure inside the block into a ``StageFailed`` tagged ``name``."""
    try:
        yield
    except StageFailed:
        raise
    except Exception as exc:
        detail = getattr(exc, "detail", None) or str(exc)
        log.error("stage failed", extra={"stage": name}, exc_info=exc)
        raise StageFailed(
            StageError(stage=name, error=type(exc).__name__, detail=detail)
        ) from exc


def slug(name: str) -> str:
    return name.lower().replace("#", "-").replace("+", "-")


@dataclass
class Job:
    name: str
    condition: Condition
    mitigation: MitigationConfig


def plan_jobs(config: RunConfig) -> list[Job]:
    """Listed conditions, then one paired SAME_BASE run per extra mitigation."""
    jobs: list[Job] = []
    for condition in config.conditions:
        name = condition.name
        if config.mitigation.mode is not MitigationMode.NONE:
            name += f"+{config.mitigation.mode}"
        jobs.append(Job(name, condition, config.mitigation))
    for mode in config.mitigations:
        if mode is MitigationMode.NONE:
            continue
        job = Job(
            f"{BaseInit.SAME_BASE}+{mode}",
            Condition(base=BaseInit.SAME_BASE),
            config.mitigation.model_copy(update={"mode": mode}),
        )
        if all(j.name != job.name for j in jobs):
            jobs.append(job)
    return jobs


def student_seed(config: RunConfig, condition: Condition) -> int | None:
    if condition.base is BaseInit.SAME_BASE:
        return None
    if condition.student_seed is not None:
        return condition.student_seed
    return config.stream_seed(f"student_init/{condition.name}")


def _schedules(config: RunConfig) -> tuple[TrainConfig, TrainConfig]:
    shuffle = {"shuffle_seed": config.stream_seed("shuffle")}
    return (
        config.train.model_copy(update=shuffle),
        config.student_schedule.model_copy(update=shuffle),
    )


def prepare_corpora(config: RunConfig) -> CorpusVariants:
    spec = SplitSpec(split_seed=config.stream_seed("split"))

    def splits(variant: Variant) -> Splits:
        corpus = generate_corpus(
            config.corpus_seed, config.corpus.size, variant, config.corpus.balance_public
        )
        return split(corpus, spec)

    return CorpusVariants(base=splits(Variant.BASE), diffdata=splits(Variant.DIFFDATA))


@dataclass
class TeacherArtifacts:
    params: ModelParams
    history: History
    basis: TraitBasis
    val_cls: Array
    val_logits: Array
    y_priv: IntArray
    report: TeacherReport


def describe_teacher(
    config: RunConfig,
    params: ModelParams,
    history: History,
    corpora: CorpusVariants,
    out_dir: Path,
    *,
    checkpoint: str,
    history_path: str,
) -> TeacherArtifacts:
    """Teacher metrics, trait basis and eval-split dumps for a trained teacher."""
    val = corpora.base.val
    with stage("teacher_eval"):
        enc = encode(params, val.tokens, config.train.eval_batch_size)
        basis = trait_basis(enc.cls, val.y_priv, k=config.trait_k, l2=config.probe_l2)
        fold_seed = config.stream_seed("probe_folds")
        probe = leakage_tau(enc.cls, val.y_priv, fold_seed, config.probe_l2)
        public_acc = float(np.mean(np.argmax(enc.logits_pub, axis=1) == val.y_pub))
        private_head_acc = teacher_private_head_accuracy(params, val)
    with stage("teacher_persist"):
        emb = out_dir / "embeddings"
        save_matrix(emb / "teacher.csv", enc.cls, "teacher", EVAL_SPLIT)
        save_matrix(emb / "teacher_public_logits.csv", enc.logits_pub, "teacher", EVAL_SPLIT)
        save_matrix(emb / LABELS_FILE, val.y_priv, "labels", EVAL_SPLIT)
        save_matrix(emb / BASIS_FILE, basis.U, "teacher", EVAL_SPLIT)

    report = TeacherReport(
        public_val_acc=public_acc,
        private_head_val_acc=private_head_acc,
        private_probe_acc=probe.probe_acc,
        trait_basis_k=basis.k,
        checkpoint=checkpoint,
        history=history_path,
    )
    log.info("teacher ready", extra=report.model_dump(exclude={"checkpoint", "history"}))
    return TeacherArtifacts(
        params=params,
        history=history,
        basis=basis,
        val_cls=enc.cls,
        val_logits=enc.logits_pub,
        y_priv=val.y_priv,
        report=report,
    )


def fit_teacher(config: RunConfig, corpora: CorpusVariants, out_dir: Path) -> TeacherArtifacts:
    """Train the teacher on the BASE splits and persist it."""
    teacher_schedule, _ = _schedules(config)
    model_config = config.model.model_copy(update={"seed": config.stream_seed("teacher_init")})
    with stage("teacher"):
        result = train_teacher(corpora.base, model_config, teacher_schedule)
    with stage("teacher_persist"):
        ckpt = save_checkpoint(result.params, out_dir / "checkpoints" / "teacher.ckpt", "teacher")
        hist = write_history(out_dir / "history" / "teacher.jsonl", result.history)
    return describe_teacher(
        config,
        result.params,
        result.history,
        corpora,
        out_dir,
        checkpoint=str(ckpt.relative_to(out_dir)),
        history_path=str(hist.relative_to(out_dir)),
    )


def load_teacher(
    config: RunConfig, corpora: CorpusVariants, path: Path, out_dir: Path
) -> TeacherArtifacts:
    """Evaluate an existing teacher checkpoint instead of training one."""
    with stage("teacher_load"):
        params, header = load_checkpoint(path)
        if not params.has_private_head:
            raise ContractError(f"{path} holds a {header.role}, not a two-headed teacher")
    return describe_teacher(
        config,
        params,
        History(role=header.role),
        corpora,
        out_dir,
        checkpoint=str(path),
        history_path="",
    )


def run_condition(
    config: RunConfig,
    job: Job,
    teacher: TeacherArtifacts,
    corpora: CorpusVariants,
    out_dir: Path,
) -> ConditionReport:
    """Distill one student and measure it; failures mark the entry partial."""
    seed = student_seed(config, job.condition)
    fold_seed = config.stream_seed("probe_folds")
    bootstrap_seed = config.stream_seed("bootstrap")
    fields: dict[str, object] = {
        "name": job.name,
        "condition": job.condition,
        "mitigation": job.mitigation,
        "eval_split": EVAL_SPLIT,
        "student_init_seed": seed,
        "fold_seed": fold_seed,
        "bootstrap_seed": bootstrap_seed,
        "teacher_private_probe_acc": teacher.report.private_probe_acc,
    }
    _, schedule = _schedules(config)
    role = f"student-{slug(job.name)}"

    with run_context(run_id=config.config_hash()[:12], condition=job.name):
        try:
            with stage("distill"):
                result = distill_student(
                    teacher.params,
                    job.condition,
                    job.mitigation,
                    corpora,
                    schedule,
                    student_seed=seed if seed is not None else 0,
                    basis=teacher.basis if job.mitigation.requires_basis else None,
                    discriminator_seed=config.stream_seed("discriminator"),
                    observe_discriminator=job.mitigation.mode is MitigationMode.NONE,
                )
                final = result.history.records[-1]
                fields["public_match"] = final.public_match
                fields["monotone_fidelity"] = result.history.monotone_fidelity
            with stage("persist"):
                ckpt = out_dir / "checkpoints" / f"{role}.ckpt"
                save_checkpoint(result.params, ckpt, role, extra={"condition": job.name})
                hist = write_history(out_dir / "history" / f"{role}.jsonl", result.history)
                fields["checkpoint"] = str(ckpt.relative_to(out_dir))
                fields["history"] = str(hist.relative_to(out_dir))
                cls = encode(result.params, corpora.base.val.tokens, schedule.eval_batch_size).cls
                save_matrix(out_dir / "embeddings" / f"{role}.csv", cls, role, EVAL_SPLIT)
            if result.discriminator is not None:
                fields["disc_val_acc"] = result.discriminator.accuracy(cls, teacher.y_priv)
            with stage("probe"):
                leakage = measure_leakage(
                    cls,
                    teacher.y_priv,
                    teacher.val_logits,
                    fold_seed=fold_seed,
                    bootstrap_seed=bootstrap_seed,
                    n_boot=config.bootstrap_n,
                    l2=config.probe_l2,
                )
                fields.update(
                    probe_acc=leakage.probe_acc,
                    tau=leakage.tau,
                    tau_ci=leakage.tau_ci,
                    tau_resid=leakage.tau_resid,
                    tau_resid_ci=leakage.tau_resid_ci,
                )
            with stage("similarity"):
                sim = similarity_report(teacher.val_cls, cls, teacher.basis, config.cca_ridge)
                fields.update(sim.model_dump(include={"global_cka", "subspace_cka", "rho_max"}))
        except StageFailed as failed:
            fields.update(status="partial", error=failed.error)

    report = ConditionReport.model_validate(fields)
    log.info(
        "condition done",
        extra={
            "condition": job.name,
            "status": report.status,
            "tau": report.tau,
            "tau_resid": report.tau_resid,
            "subspace_cka": report.subspace_cka,
            "global_cka": report.global_cka,
            "public_match": report.public_match,
        },
    )
    return report


def run_dir(config: RunConfig) -> Path:
    return Path(settings.OUTPUT_DIR) / config.output_dir


def _new_report(config: RunConfig) -> RunReport:
    return RunReport(
        config_hash=config.config_hash(),
        master_seed=config.master_seed,
        probe_l2=config.probe_l2,
        n_boot=config.bootstrap_n,
        trait_k=config.trait_k,
        eval_batch_size=config.student_schedule.eval_batch_size,
    )


def run_experiment(config: RunConfig, out_dir: Path | None = None) -> RunReport:
    """Train the teacher, distill every planned student, write all outputs."""
    out = Path(out_dir) if out_dir is not None else run_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", config)
    started = time.perf_counter()
    report = _new_report(config)

    with run_context(run_id=report.config_hash[:12]):
        log.info("run started", extra={"master_seed": config.master_seed, "out": str(out)})
        try:
            with stage("corpus"):
                corpora = prepare_corpora(config)
            teacher = fit_teacher(config, corpora, out)
        except StageFailed as failed:
            report.partial, report.error = True, failed.error
        else:
            report.teacher = teacher.report
            jobs = plan_jobs(config)
            workers = max(1, min(settings.SUBLAB_THREADS, len(jobs)))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(run_condition, config, job, teacher, corpora, out)
                    for job in jobs
                ]
                report.conditions = [f.result() for f in futures]
            report.partial = any(c.status == "partial" for c in report.conditions)

        report.wall_time_s = time.perf_counter() - started
        write_json(out / "report.json", report)
        (out / "tables.md").write_text(render_tables(report), encoding="utf-8")
        emit_figure_data([report], out / "figure.csv")
        log.info(
            "run finished",
            extra={"partial": report.partial, "wall_time_s": report.wall_time_s},
        )
    return report


def figure_rows(reports: list[RunReport]) -> list[FigureRow]:
    rows: list[FigureRow] = []
    for report in reports:
        for c in report.conditions:
            if c.subspace_cka is None or c.tau_resid is None or c.tau_resid_ci is None:
                log.warning("figure row omitted", extra={"condition": c.name, "status": c.status})
                continue
            rows.append(
                FigureRow(
                    condition=c.name,
                    subspace_cka=c.subspace_cka,
                    tau_resid=c.tau_resid,
                    ci_lo=c.tau_resid_ci[0],
                    ci_hi=c.tau_resid_ci[1],
                )
            )
    return rows


def _render_svg(rows: list[FigureRow], path: Path) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib unavailable, skipping the scatter")
        return

    fig, ax = plt.subplots(figsize=(5, 4))
    for name in dict.fromkeys(r.condition for r in rows):
        group = [r for r in rows if r.condition == name]
        x = [r.subspace_cka for r in group]
        y = [r.tau_resid for r in group]
        # Raw percentile intervals need not contain the point estimate.
        err = [
            [max(r.tau_resid - r.ci_lo, 0.0) for r in group],
            [max(r.ci_hi - r.tau_resid, 0.0) for r in group],
        ]
        ax.errorbar(x, y, yerr=err, fmt="o", capsize=3, label=name)
    ax.set_xlabel("subspace CKA")
    ax.set_ylabel("residualized leakage")
    ax.legend(fontsize="small")
    fig.tight_layout()
    # Fixed hash salt and no date keep the SVG reproducible.
    with matplotlib.rc_context({"svg.hashsalt": "sublab"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_figure_data(
    reports: list[RunReport], out_csv: Path, render_svg: bool = True
) -> list[FigureRow]:
    """Scatter data (condition, subspace_cka, tau_resid, ci_lo, ci_hi) as CSV."""
    rows = figure_rows(reports)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with out_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FigureRow.model_fields)
        for row in rows:
            writer.writerow(
                (
                    row.condition,
                    *(f"{v:.6f}" for v in (row.subspace_cka, row.tau_resid, row.ci_lo, row.ci_hi)),
                )
            )
    if render_svg and rows:
        _render_svg(rows, out_csv.with_suffix(".svg"))
    return rows


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def _table(title: str, rows: list[ConditionReport]) -> list[str]:
    lines = [
        f"## {title}",
        "",
        "| Condition | Global CKA | Subspace CKA | τ | τ_resid |",
        "|---|---|---|---|---|",
    ]
    for c in rows:
        cells = (c.global_cka, c.subspace_cka, c.tau, c.tau_resid)
        lines.append(f"| {c.name} | " + " | ".join(_fmt(v) for v in cells) + " |")
    return [*lines, ""]


def render_tables(report: RunReport) -> str:
    """Markdown results tables: seed effects, data ablation and mitigations."""
    lines = [f"# Run {report.config_hash[:12]} (master seed {report.master_seed})", ""]
    if report.teacher is not None:
        t = report.teacher
        lines += [
            f"Teacher: public val acc {t.public_val_acc:.3f}, "
            f"private head {t.private_head_val_acc:.3f}, "
            f"CLS probe {t.private_probe_acc:.3f}",
            "",
        ]
    if report.error is not None:
        lines += [f"Run incomplete: {report.error.stage} failed ({report.error.detail})", ""]

    plain = [c for c in report.conditions if c.mitigation.mode is MitigationMode.NONE]
    seed_rows = [c for c in plain if c.condition.data is DataRegime.SAME]
    if seed_rows:
        lines += _table("Seed effects", seed_rows)
    if any(c.condition.data is DataRegime.DIFFDATA for c in plain):
        lines += _table("Data ablation", plain)
    mitigated = [c for c in report.conditions if c.mitigation.mode is not MitigationMode.NONE]
    if mitigated:
        baseline = [c for c in plain if c.name == BaseInit.SAME_BASE.value]
        lines += _table("Mitigations", baseline + mitigated)
    return "\n".join(lines)


def run_sweep(config: RunConfig, seeds: list[int], out_dir: Path | None = None) -> SweepReport:
    """One experiment per master seed under ``<out>/seed-<s>/``, plus ``sweep.json``."""
    out = Path(out_dir) if out_dir is not None else run_dir(config)
    reports = [
        run_experiment(config.model_copy(update={"master_seed": s}), out / f"seed-{s}")
        for s in seeds
    ]
    sweep = SweepReport(config_hash=config.config_hash(), seeds=list(seeds), reports=reports)
    write_json(out / "sweep.json", sweep)
    return sweep
