"""Median-over-seeds checks of the qualitative leakage claims.

Each check reads medians (or paired per-seed comparisons) from one or more
run reports. A check whose conditions are missing from the reports is
``skipped``; it never counts as a failure.
"""

from collections.abc import Callable
from statistics import median

from pydantic import BaseModel

from sublab.exceptions import ContractError
from sublab.log import get_logger
from sublab.schemas.mitigation import MitigationMode
from sublab.schemas.reports import ClaimCheck, ClaimsReport, ConditionReport, RunReport

log = get_logger(__name__)

SAME = "SAME_BASE"
SAME_DIFFDATA = "SAME_BASE_DIFFDATA"
DIFF = "DIFF_BASE"
MIN_SEEDS = 5
METRICS = ("tau", "tau_resid", "subspace_cka", "global_cka", "public_match")


class ClaimThresholds(BaseModel):
    public_match: float = 0.99
    leakage_gap: float = 0.05
    same_leakage: float = 0.10
    subspace_gap: float = 0.15
    global_cka: float = 0.8
    init_cka_tolerance: float = 0.1
    mitigation_fraction: float = 0.8
    tracking: float = 0.02
    teacher_probe: float = 0.65
    teacher_public: float = 0.95


def _group(name: str) -> str:
    # DIFF_BASE#1 and DIFF_BASE#2 pool into DIFF_BASE.
    head, _, tail = name.partition("+")
    cell = head.partition("#")[0]
    return f"{cell}+{tail}" if tail else cell


def _medians(reports: list[RunReport]) -> dict[str, dict[str, float]]:
    values: dict[str, dict[str, list[float]]] = {}
    for report in reports:
        for c in report.conditions:
            bucket = values.setdefault(_group(c.name), {})
            for metric in METRICS:
                value = getattr(c, metric)
                if value is not None:
                    bucket.setdefault(metric, []).append(float(value))
    return {
        group: {metric: median(v) for metric, v in metrics.items()}
        for group, metrics in sorted(values.items())
    }


def _skipped(name: str, expected: str) -> ClaimCheck:
    return ClaimCheck(name=name, status="skipped", expected=expected)


def _check(name: str, ok: bool, observed: dict[str, float], expected: str) -> ClaimCheck:
    return ClaimCheck(
        name=name, status="passed" if ok else "failed", observed=observed, expected=expected
    )


def _values(c: ConditionReport | None, metrics: tuple[str, ...]) -> dict[str, float] | None:
    if c is None:
        return None
    values = {m: getattr(c, m) for m in metrics}
    if any(v is None for v in values.values()):
        return None
    return {m: float(v) for m, v in values.items()}


def _paired(
    reports: list[RunReport],
    mode: MitigationMode,
    metrics: tuple[str, ...],
    better: Callable[[dict[str, float], dict[str, float]], bool],
) -> tuple[int, int]:
    """(seeds where the mitigated run beats its NONE pair, seeds compared)."""
    wins = total = 0
    for report in reports:
        base = _values(report.condition(SAME), metrics)
        mitigated = _values(report.condition(f"{SAME}+{mode}"), metrics)
        if base is None or mitigated is None:
            continue
        total += 1
        wins += better(mitigated, base)
    return wins, total


def evaluate_claims(
    reports: list[RunReport], thresholds: ClaimThresholds | None = None
) -> ClaimsReport:
    if not reports:
        raise ContractError("claims need at least one run report")
    th = thresholds or ClaimThresholds()
    medians = _medians(reports)
    same, same_dd, diff = medians.get(SAME, {}), medians.get(SAME_DIFFDATA, {}), medians.get(DIFF, {})
    plain = [g for g in medians if "+" not in g]
    checks: list[ClaimCheck] = []

    matches = [
        c.public_match for r in reports for c in r.conditions if c.public_match is not None
    ]
    expected = f"every student public match >= {th.public_match}"
    checks.append(
        _check("kd_fidelity", min(matches) >= th.public_match, {"min": min(matches)}, expected)
        if matches
        else _skipped("kd_fidelity", expected)
    )

    expected = (
        f"median tau_resid {SAME} - {DIFF} >= {th.leakage_gap} and {SAME} >= {th.same_leakage}"
    )
    if "tau_resid" in same and "tau_resid" in diff:
        gap = same["tau_resid"] - diff["tau_resid"]
        ok = gap >= th.leakage_gap and same["tau_resid"] >= th.same_leakage
        checks.append(_check("leakage_gap", ok, {"gap": gap, SAME: same["tau_resid"]}, expected))
    else:
        checks.append(_skipped("leakage_gap", expected))

    expected = f"median subspace CKA {SAME} - {DIFF} >= {th.subspace_gap}"
    if "subspace_cka" in same and "subspace_cka" in diff:
        gap = same["subspace_cka"] - diff["subspace_cka"]
        checks.append(_check("subspace_gap", gap >= th.subspace_gap, {"gap": gap}, expected))
    else:
        checks.append(_skipped("subspace_gap", expected))

    expected = f"median global CKA >= {th.global_cka} in every condition"
    ckas = {g: medians[g]["global_cka"] for g in plain if "global_cka" in medians[g]}
    checks.append(
        _check("global_cka_high", min(ckas.values()) >= th.global_cka, ckas, expected)
        if ckas
        else _skipped("global_cka_high", expected)
    )

    expected = (
        f"median tau_resid {SAME_DIFFDATA} >= {DIFF} and its subspace CKA within "
        f"{th.init_cka_tolerance} of {SAME}"
    )
    if all("tau_resid" in m and "subspace_cka" in m for m in (same, same_dd)) and "tau_resid" in diff:
        cka_delta = abs(same_dd["subspace_cka"] - same["subspace_cka"])
        ok = same_dd["tau_resid"] >= diff["tau_resid"] and cka_delta <= th.init_cka_tolerance
        observed = {"tau_resid_delta": same_dd["tau_resid"] - diff["tau_resid"], "cka_delta": cka_delta}
        checks.append(_check("initialization_dominance", ok, observed, expected))
    else:
        checks.append(_skipped("initialization_dominance", expected))

    expected = "PROJECTION strictly lowers subspace CKA and tau_resid versus NONE on every seed"
    wins, total = _paired(
        reports,
        MitigationMode.PROJECTION,
        ("subspace_cka", "tau_resid"),
        lambda m, b: m["subspace_cka"] < b["subspace_cka"] and m["tau_resid"] < b["tau_resid"],
    )
    checks.append(
        _check("projection_reduces", wins == total, {"wins": wins, "seeds": total}, expected)
        if total
        else _skipped("projection_reduces", expected)
    )

    for mode, name in ((MitigationMode.ADVERSARIAL, "adversarial_reduces"), (MitigationMode.RRR, "rrr_reduces")):
        expected = f"{mode} lowers tau_resid versus NONE on >= {th.mitigation_fraction:.0%} of seeds"
        wins, total = _paired(
            reports,
            mode,
            ("tau_resid",),
            lambda m, b: m["tau_resid"] < b["tau_resid"],
        )
        checks.append(
            _check(name, wins >= th.mitigation_fraction * total, {"wins": wins, "seeds": total}, expected)
            if total
            else _skipped(name, expected)
        )

    expected = (
        "ADVERSARIAL discriminator val accuracy below the NONE run's on "
        f">= {th.mitigation_fraction:.0%} of seeds"
    )
    wins, total = _paired(
        reports,
        MitigationMode.ADVERSARIAL,
        ("disc_val_acc",),
        lambda m, b: m["disc_val_acc"] < b["disc_val_acc"],
    )
    checks.append(
        _check(
            "adversarial_hides_trait",
            wins >= th.mitigation_fraction * total,
            {"wins": wins, "seeds": total},
            expected,
        )
        if total
        else _skipped("adversarial_hides_trait", expected)
    )

    expected = f"median |tau - tau_resid| <= {th.tracking} in every unmitigated condition"
    gaps = {
        g: abs(medians[g]["tau"] - medians[g]["tau_resid"])
        for g in plain
        if "tau" in medians[g] and "tau_resid" in medians[g]
    }
    checks.append(
        _check("residualizer_tracks", max(gaps.values()) <= th.tracking, gaps, expected)
        if gaps
        else _skipped("residualizer_tracks", expected)
    )

    expected = (
        f"median teacher CLS probe accuracy >= {th.teacher_probe} and public val accuracy "
        f">= {th.teacher_public}"
    )
    teachers = [r.teacher for r in reports if r.teacher is not None]
    if teachers:
        probe = median(t.private_probe_acc for t in teachers)
        public = median(t.public_val_acc for t in teachers)
        ok = probe >= th.teacher_probe and public >= th.teacher_public
        checks.append(
            _check("teacher_encodes_trait", ok, {"probe_acc": probe, "public_acc": public}, expected)
        )
    else:
        checks.append(_skipped("teacher_encodes_trait", expected))

    result = ClaimsReport(
        n_reports=len(reports),
        enough_seeds=len(reports) >= MIN_SEEDS,
        medians=medians,
        checks=checks,
    )
    if not result.enough_seeds:
        log.warning("fewer seeds than the median protocol asks for", extra={"n": len(reports)})
    return result
