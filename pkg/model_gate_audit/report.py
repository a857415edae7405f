"""Scorecard document: the JSON artifact, its schema and the derived text table."""

import hashlib
import json
import platform
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy
from pydantic import BaseModel, ConfigDict, ValidationError

from model_gate_audit import __version__
from model_gate_audit.cohort import Cohort
from model_gate_audit.errors import ConfigError, SchemaError
from model_gate_audit.runner import EvaluationResult
from model_gate_audit.stats import IntervalEstimate
from model_gate_audit.verdict import (
    DEFAULT_CRITERIA,
    CriterionResult,
    SubCriterion,
    Verdict,
    sweep_verdicts,
)


SCHEMA_VERSION = "1.0"

VerdictName = Literal["PASS", "FAIL", "INCONCLUSIVE", "DIAGNOSTIC"]
DirectionName = Literal["upper_bounded", "lower_bounded"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MetricBlock(_Strict):
    value: Optional[float]
    ci_lo: Optional[float] = None
    ci_hi: Optional[float] = None


class CriterionBlock(_Strict):
    id: str
    dimension: str
    metric: str
    threshold: float
    direction: DirectionName
    gating: bool
    ci_backed: bool
    value: Optional[float]
    ci_lo: Optional[float]
    ci_hi: Optional[float]
    p_boot: Optional[float]
    verdict: VerdictName
    reason: Optional[str]
    degenerate: bool
    point_mass: bool
    notes: List[str]
    required_n: Optional[int]
    detail: Dict[str, Any]


class DimensionBlock(_Strict):
    verdict: VerdictName
    gating: bool
    criteria: List[str]


class HolmRow(_Strict):
    id: str
    p: Optional[float]
    rank: Optional[int]
    adjusted_alpha: Optional[float]
    adjusted_p: Optional[float]
    rejected: bool
    exempt_reason: Optional[str]


class HolmBlock(_Strict):
    alpha: float
    m: int
    tests: List[HolmRow]


class CohortFingerprint(_Strict):
    n: int
    prevalence: float
    sha256: str


class BootstrapEcho(_Strict):
    replicates: int
    seed: int
    alpha: float
    method: Literal["bca", "percentile"]
    stratify_by_label: bool
    cluster_by: Optional[str]
    replicates_used: int
    discarded: int


class ConfigEcho(_Strict):
    battery: Dict[str, Any]
    thresholds: Dict[str, float]
    tau0: float
    sweep: List[float]
    delta: float
    ece_bins: int
    bootstrap: BootstrapEcho
    scorer: Optional[str]


class GroupBlock(_Strict):
    size: int
    auc: Optional[float]
    ece: float
    selection_rate: float
    small: bool
    absent_reason: Optional[str]


class SubgroupBlock(_Strict):
    auc_gap: float
    max_ece: float
    small_groups: List[str]
    evaluable_groups: List[str]
    adverse_impact_ratio: Optional[float]
    groups: Dict[str, GroupBlock]


class EquityBlock(_Strict):
    rho_need: float
    max_abs_gap: float
    proxy_is_outcome_label: bool
    gaps: Dict[str, Dict[str, float]]


class TfrBlock(_Strict):
    tau0: float
    thresholds: List[float]
    values: List[float]
    max_tfr: float
    band_max_tfr: Optional[float]


class DeployabilityBlock(_Strict):
    cohort_latency_ms: Optional[float]
    per_patient_latency_ms: Optional[float]
    per_patient_limit_ms: float
    f_top3: Optional[float]
    top3: List[str]
    attribution_provider: Optional[str]


class ContextBlock(_Strict):
    auroc: MetricBlock
    brier: MetricBlock
    prevalence: MetricBlock
    mean_rho: MetricBlock
    band_max_tfr: MetricBlock
    per_spec: Dict[str, Dict[str, MetricBlock]]
    tfr_profile: TfrBlock
    subgroups: Dict[str, SubgroupBlock]
    equity: Dict[str, EquityBlock]
    deployability: DeployabilityBlock


class RuntimeBlock(_Strict):
    package_version: str
    python: str
    numpy: str
    scipy: str
    pandas: str


class ScorecardDocument(_Strict):
    schema_version: Literal["1.0"]
    cohort: CohortFingerprint
    config: ConfigEcho
    dimensions: Dict[str, DimensionBlock]
    criteria: List[CriterionBlock]
    holm: HolmBlock
    gate: bool
    exit_code: int
    equity_disagreement: bool
    warnings: List[str]
    context: ContextBlock
    runtime: RuntimeBlock

    def criterion(self, criterion_id: str) -> CriterionBlock:
        for row in self.criteria:
            if row.id == criterion_id:
                return row
        raise ConfigError(f"unknown sub-criterion {criterion_id!r}")


def cohort_digest(cohort: Cohort) -> str:
    """Content hash of an in-memory cohort, for cohorts that never touched a file."""
    digest = hashlib.sha256()
    digest.update("\n".join(cohort.row_ids).encode("utf-8"))
    digest.update(np.ascontiguousarray(cohort.features.values).tobytes())
    digest.update(np.ascontiguousarray(cohort.labels).tobytes())
    return digest.hexdigest()


def _metric(estimates: Dict[str, IntervalEstimate], key: str) -> MetricBlock:
    estimate = estimates.get(key)
    if estimate is None:
        return MetricBlock(value=None)
    return MetricBlock(value=estimate.point, ci_lo=estimate.lo, ci_hi=estimate.hi)


def _criterion_block(row: CriterionResult) -> CriterionBlock:
    return CriterionBlock(
        id=row.id,
        dimension=row.dimension,
        metric=row.metric,
        threshold=row.threshold,
        direction=row.direction,
        gating=row.gating,
        ci_backed=row.ci_backed,
        value=row.value,
        ci_lo=row.ci_lo,
        ci_hi=row.ci_hi,
        p_boot=row.p_boot,
        verdict=row.verdict.value,
        reason=row.reason,
        degenerate=row.degenerate,
        point_mass=row.point_mass,
        notes=list(row.notes),
        required_n=row.required_n,
        detail=dict(row.detail),
    )


def _runtime() -> RuntimeBlock:
    return RuntimeBlock(
        package_version=__version__,
        python=platform.python_version(),
        numpy=np.__version__,
        scipy=scipy.__version__,
        pandas=pd.__version__,
    )


def build_document(result: EvaluationResult, cohort_sha256: str) -> ScorecardDocument:
    scorecard = result.scorecard
    estimates = result.estimates
    boot = result.bootstrap
    spec_ids = [spec["id"] for spec in result.battery["specs"]]
    latency = result.latency
    attributions = result.attributions
    d2 = estimates.get("D2")
    return ScorecardDocument(
        schema_version=SCHEMA_VERSION,
        cohort=CohortFingerprint(n=result.n, prevalence=result.prevalence, sha256=cohort_sha256),
        config=ConfigEcho(
            battery=result.battery,
            thresholds={c.id: c.threshold for c in result.criteria.values()},
            tau0=result.tau0,
            sweep=list(result.tfr_profile.thresholds),
            delta=result.delta,
            ece_bins=result.ece_bins,
            bootstrap=BootstrapEcho(
                replicates=boot.replicates,
                seed=boot.seed,
                alpha=boot.alpha,
                method=boot.method,
                stratify_by_label=boot.stratify_by_label,
                cluster_by=boot.cluster_by,
                replicates_used=result.replicates_used,
                discarded=result.discarded,
            ),
            scorer=result.scorer_descriptor,
        ),
        dimensions={
            name: DimensionBlock(verdict=d.verdict.value, gating=d.gating, criteria=list(d.criteria))
            for name, d in scorecard.dimensions.items()
        },
        criteria=[_criterion_block(row) for row in scorecard.criteria],
        holm=HolmBlock(
            alpha=scorecard.holm.alpha,
            m=scorecard.holm.m,
            tests=[
                HolmRow(
                    id=t.id,
                    p=t.p,
                    rank=t.rank,
                    adjusted_alpha=t.adjusted_alpha,
                    adjusted_p=t.adjusted_p,
                    rejected=t.rejected,
                    exempt_reason=t.exempt_reason,
                )
                for t in scorecard.holm.tests
            ],
        ),
        gate=scorecard.gate,
        exit_code=scorecard.exit_code,
        equity_disagreement=scorecard.equity_disagreement,
        warnings=list(scorecard.warnings),
        context=ContextBlock(
            auroc=_metric(estimates, "auroc"),
            brier=_metric(estimates, "brier"),
            prevalence=_metric(estimates, "prevalence"),
            mean_rho=_metric(estimates, "mean_rho"),
            band_max_tfr=_metric(estimates, "band_max_tfr"),
            per_spec={
                spec_id: {
                    "pfr": _metric(estimates, f"pfr[{spec_id}]"),
                    "rho": _metric(estimates, f"rho[{spec_id}]"),
                }
                for spec_id in spec_ids
            },
            tfr_profile=TfrBlock(
                tau0=result.tfr_profile.tau0,
                thresholds=list(result.tfr_profile.thresholds),
                values=list(result.tfr_profile.values),
                max_tfr=result.tfr_profile.max_tfr,
                band_max_tfr=result.tfr_profile.band_max_tfr,
            ),
            subgroups={
                attribute: SubgroupBlock(
                    auc_gap=report.auc_gap,
                    max_ece=report.max_ece,
                    small_groups=list(report.small_groups),
                    evaluable_groups=list(report.evaluable_groups),
                    adverse_impact_ratio=report.adverse_impact_ratio,
                    groups={
                        key: GroupBlock(
                            size=g.size,
                            auc=g.auc,
                            ece=g.ece,
                            selection_rate=g.selection_rate,
                            small=g.small,
                            absent_reason=g.absent_reason,
                        )
                        for key, g in report.groups.items()
                    },
                )
                for attribute, report in result.subgroup_reports.items()
            },
            equity={
                proxy: EquityBlock(
                    rho_need=report.rho_need,
                    max_abs_gap=report.max_abs_gap,
                    proxy_is_outcome_label=report.proxy_is_outcome_label,
                    gaps=report.gaps,
                )
                for proxy, report in result.equity_reports.items()
            },
            deployability=DeployabilityBlock(
                cohort_latency_ms=latency.cohort_latency_ms if latency else None,
                per_patient_latency_ms=latency.per_patient_latency_ms if latency else None,
                per_patient_limit_ms=result.d1_per_patient_ms,
                f_top3=d2.point if d2 is not None else None,
                top3=list(result.top3),
                attribution_provider=attributions.provider if attributions is not None else None,
            ),
        ),
        runtime=_runtime(),
    )


def dumps(document: ScorecardDocument) -> str:
    return json.dumps(document.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def write_document(document: ScorecardDocument, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(document), encoding="utf-8")


def loads(text: str) -> ScorecardDocument:
    try:
        return ScorecardDocument.model_validate_json(text)
    except ValidationError as exc:
        raise SchemaError(f"not a valid scorecard document: {exc.error_count()} problems") from exc


def read_document(path: Union[str, Path]) -> ScorecardDocument:
    return loads(Path(path).read_text(encoding="utf-8"))


def document_json_schema() -> Dict[str, Any]:
    return ScorecardDocument.model_json_schema()


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return "-"
    return f"{value:.4g}"


def render_table(document: ScorecardDocument) -> str:
    header = ("ID", "metric", "value", "95% CI", "p_boot", "threshold", "verdict", "reason")
    rows: List[Tuple[str, ...]] = [header]
    for row in document.criteria:
        ci = "-" if row.ci_lo is None else f"[{_fmt(row.ci_lo)}, {_fmt(row.ci_hi)}]"
        sign = "<=" if row.direction == "upper_bounded" else ">="
        reason = ", ".join(r for r in [row.reason or ""] + row.notes if r) or "-"
        rows.append(
            (
                row.id,
                row.metric,
                _fmt(row.value),
                ci,
                _fmt(row.p_boot),
                f"{sign} {_fmt(row.threshold)}",
                row.verdict,
                reason,
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(width) for cell, width in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * width for width in widths))
    lines.append("")
    for name, dimension in document.dimensions.items():
        lines.append(f"{name:<14} {dimension.verdict}")
    lines.append(f"gate           {'PASS' if document.gate else 'BLOCKED'} (exit {document.exit_code})")
    for warning in document.warnings:
        lines.append(f"warning: {warning}")
    return "\n".join(lines) + "\n"


def sweep_from_document(
    document: ScorecardDocument,
    criterion_id: str,
    thresholds: Sequence[float],
) -> List[Tuple[float, Verdict]]:
    row = document.criterion(criterion_id)
    base = DEFAULT_CRITERIA.get(row.id.split("[", 1)[0])
    if base is None:
        raise ConfigError(f"unknown sub-criterion {criterion_id!r}")
    criterion = SubCriterion(
        id=row.id,
        dimension=row.dimension,
        metric=row.metric,
        threshold=row.threshold,
        direction=row.direction,
        gating=row.gating,
        ci_backed=row.ci_backed,
        strict=base.strict,
    )
    if row.value is None:
        raise ConfigError(f"{criterion_id} was not evaluated in this scorecard")
    estimate = IntervalEstimate(
        point=row.value,
        lo=row.ci_lo,
        hi=row.ci_hi,
        degenerate=row.degenerate,
        point_mass=row.point_mass,
    )
    return sweep_verdicts(estimate, criterion, thresholds)
