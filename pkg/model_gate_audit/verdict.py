import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from model_gate_audit.errors import ConfigError, IncompleteScorecardError
from model_gate_audit.stats import (
    LOWER_BOUNDED,
    UPPER_BOUNDED,
    HolmFamily,
    IntervalEstimate,
    bootstrap_p,
    holm_bonferroni,
    min_holm_replicates,
    min_test_size,
)


logger = logging.getLogger("model_gate_audit")


class Verdict(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    INCONCLUSIVE = "INCONCLUSIVE"
    DIAGNOSTIC = "DIAGNOSTIC"


CI_BRACKETS_THRESHOLD = "ci_brackets_threshold"
HOLM_DISAGREEMENT = "holm_disagreement"
DEGENERATE_INTERVAL = "degenerate_interval"
BELOW_INFORMATIVE_FLOOR = "below_informative_floor"
NOT_EVALUATED = "not_evaluated"

RELIABILITY = "reliability"
INCLUSIVITY = "inclusivity"
SENSITIVITY = "sensitivity"
EQUITY = "equity"
DEPLOYABILITY = "deployability"
GATING_DIMENSIONS = (RELIABILITY, INCLUSIVITY, SENSITIVITY, DEPLOYABILITY)
DIMENSIONS = (RELIABILITY, INCLUSIVITY, SENSITIVITY, EQUITY, DEPLOYABILITY)

LATENCY_EXEMPTION = "latency is hardware-bounded and carries no bootstrap distribution"
NEAR_THRESHOLD_MARGIN = 0.005
NEAR_THRESHOLD_REPLICATES = 2000
FLOOR_DEVIATION = 0.01
EQUITY_DISAGREEMENT_CRITERION = "E1"


@dataclass(frozen=True)
class SubCriterion:
    id: str
    dimension: str
    metric: str
    threshold: float
    direction: str
    gating: bool = True
    ci_backed: bool = False
    # Point checks: PASS requires a strict inequality.
    strict: bool = False
    # Metric kind for min_test_size; None means no informative floor.
    floor_kind: Optional[str] = None

    @property
    def base_id(self) -> str:
        return self.id.split("[", 1)[0]

    def scoped(self, scope: str) -> "SubCriterion":
        return replace(self, id=f"{self.base_id}[{scope}]")


DEFAULT_CRITERIA: Dict[str, SubCriterion] = {
    c.id: c
    for c in (
        SubCriterion("R1", RELIABILITY, "pss", 0.05, UPPER_BOUNDED, ci_backed=True, strict=True, floor_kind="pss"),
        SubCriterion("R2", RELIABILITY, "min_rank_correlation", 0.95, LOWER_BOUNDED),
        SubCriterion("I1", INCLUSIVITY, "auc_gap", 0.05, UPPER_BOUNDED, ci_backed=True),
        SubCriterion("I2", INCLUSIVITY, "max_group_ece", 0.10, UPPER_BOUNDED),
        SubCriterion("S1", SENSITIVITY, "max_tfr", 0.10, UPPER_BOUNDED, ci_backed=True, floor_kind="max_tfr"),
        SubCriterion("S2", SENSITIVITY, "boundary_width", 0.15, UPPER_BOUNDED, floor_kind="boundary_width"),
        SubCriterion("E1", EQUITY, "rho_need", 0.70, LOWER_BOUNDED, gating=False, ci_backed=True),
        SubCriterion("E2", EQUITY, "max_abs_need_gap", 0.10, UPPER_BOUNDED, gating=False, ci_backed=True),
        SubCriterion("D1", DEPLOYABILITY, "cohort_latency_ms", 500.0, UPPER_BOUNDED),
        SubCriterion("D2", DEPLOYABILITY, "f_top3", 0.80, LOWER_BOUNDED),
    )
}


def default_criteria(overrides: Optional[Mapping[str, float]] = None) -> Dict[str, SubCriterion]:
    criteria = dict(DEFAULT_CRITERIA)
    for criterion_id, threshold in (overrides or {}).items():
        if criterion_id not in criteria:
            raise ConfigError(f"unknown sub-criterion {criterion_id!r}")
        criteria[criterion_id] = replace(criteria[criterion_id], threshold=float(threshold))
    return criteria


@dataclass(frozen=True)
class Classification:
    verdict: Verdict
    reason: Optional[str] = None


def _interval_rule(lo: float, hi: float, criterion: SubCriterion) -> Classification:
    threshold = criterion.threshold
    if criterion.direction == UPPER_BOUNDED:
        if hi < threshold:
            return Classification(Verdict.PASS)
        if lo > threshold:
            return Classification(Verdict.FAIL)
    else:
        if lo > threshold:
            return Classification(Verdict.PASS)
        if hi < threshold:
            return Classification(Verdict.FAIL)
    return Classification(Verdict.INCONCLUSIVE, CI_BRACKETS_THRESHOLD)


def _point_rule(value: float, criterion: SubCriterion) -> Classification:
    threshold = criterion.threshold
    if criterion.direction == UPPER_BOUNDED:
        passed = value < threshold if criterion.strict else value <= threshold
    else:
        passed = value > threshold if criterion.strict else value >= threshold
    return Classification(Verdict.PASS if passed else Verdict.FAIL)


def classify(estimate: IntervalEstimate, criterion: SubCriterion) -> Classification:
    if criterion.dimension == EQUITY:
        return Classification(Verdict.DIAGNOSTIC)
    return _decide(estimate, criterion)


def _decide(estimate: IntervalEstimate, criterion: SubCriterion) -> Classification:
    if not criterion.ci_backed:
        return _point_rule(estimate.point, criterion)
    if estimate.degenerate:
        if estimate.point_mass:
            # The sampling distribution is a point mass; its value is the interval.
            return _interval_rule(estimate.point, estimate.point, criterion)
        return Classification(Verdict.INCONCLUSIVE, DEGENERATE_INTERVAL)
    return _interval_rule(float(estimate.lo), float(estimate.hi), criterion)


def sweep_verdicts(
    estimate: IntervalEstimate,
    criterion: SubCriterion,
    thresholds: Sequence[float],
) -> List[Tuple[float, Verdict]]:
    if not criterion.ci_backed:
        raise ConfigError(f"{criterion.id} is a point check; only interval-backed criteria can be swept")
    if len(thresholds) == 0:
        raise ConfigError("threshold sweep is empty")
    table = []
    for threshold in thresholds:
        outcome = _decide(estimate, replace(criterion, threshold=float(threshold)))
        table.append((float(threshold), outcome.verdict))
    return table


@dataclass
class Measurement:
    """What the runner hands the verdict engine for one sub-criterion."""

    estimate: Optional[IntervalEstimate] = None
    skipped_reason: Optional[str] = None
    detail: Dict[str, object] = field(default_factory=dict)


@dataclass
class CriterionResult:
    id: str
    dimension: str
    metric: str
    threshold: float
    direction: str
    gating: bool
    ci_backed: bool
    value: Optional[float]
    ci_lo: Optional[float]
    ci_hi: Optional[float]
    p_boot: Optional[float]
    verdict: Verdict
    reason: Optional[str] = None
    degenerate: bool = False
    point_mass: bool = False
    notes: List[str] = field(default_factory=list)
    required_n: Optional[int] = None
    detail: Dict[str, object] = field(default_factory=dict)


@dataclass
class DimensionResult:
    name: str
    verdict: Verdict
    criteria: List[str]
    gating: bool


@dataclass
class EquityDiagnostic:
    rows: List[CriterionResult]
    disagreement: bool
    warnings: List[str] = field(default_factory=list)


@dataclass
class Scorecard:
    criteria: List[CriterionResult]
    dimensions: Dict[str, DimensionResult]
    holm: HolmFamily
    gate: bool
    equity_disagreement: bool = False
    warnings: List[str] = field(default_factory=list)

    def get(self, criterion_id: str) -> CriterionResult:
        for row in self.criteria:
            if row.id == criterion_id:
                return row
        raise KeyError(criterion_id)

    @property
    def exit_code(self) -> int:
        return gate_exit_code(self)


def gate_exit_code(scorecard: Scorecard) -> int:
    """0 when the gate passes, 1 on any gating FAIL, 3 when a gating verdict is INCONCLUSIVE."""
    verdicts = [scorecard.dimensions[name].verdict for name in GATING_DIMENSIONS]
    if Verdict.FAIL in verdicts:
        return 1
    if Verdict.INCONCLUSIVE in verdicts:
        return 3
    return 0


def _flip(direction: str) -> str:
    return LOWER_BOUNDED if direction == UPPER_BOUNDED else UPPER_BOUNDED


def _holm_p(estimate: IntervalEstimate, criterion: SubCriterion) -> Optional[float]:
    """p-value whose rejection confirms the side of the threshold the point lies on."""
    if estimate.replicates.size == 0:
        return None
    on_pass_side = _point_rule(estimate.point, replace(criterion, strict=False)).verdict == Verdict.PASS
    direction = criterion.direction if on_pass_side else _flip(criterion.direction)
    return bootstrap_p(estimate.replicates, criterion.threshold, direction)


def _result_row(criterion: SubCriterion, measurement: Measurement) -> CriterionResult:
    estimate = measurement.estimate
    if estimate is None or measurement.skipped_reason:
        verdict = Verdict.DIAGNOSTIC if criterion.dimension == EQUITY else Verdict.INCONCLUSIVE
        return CriterionResult(
            id=criterion.id,
            dimension=criterion.dimension,
            metric=criterion.metric,
            threshold=criterion.threshold,
            direction=criterion.direction,
            gating=criterion.gating,
            ci_backed=criterion.ci_backed,
            value=None,
            ci_lo=None,
            ci_hi=None,
            p_boot=None,
            verdict=verdict,
            reason=NOT_EVALUATED,
            detail=dict(measurement.detail, skipped=measurement.skipped_reason or "no estimate"),
        )
    outcome = classify(estimate, criterion)
    return CriterionResult(
        id=criterion.id,
        dimension=criterion.dimension,
        metric=criterion.metric,
        threshold=criterion.threshold,
        direction=criterion.direction,
        gating=criterion.gating,
        ci_backed=criterion.ci_backed,
        value=estimate.point,
        ci_lo=estimate.lo if criterion.ci_backed else None,
        ci_hi=estimate.hi if criterion.ci_backed else None,
        p_boot=_holm_p(estimate, criterion),
        verdict=outcome.verdict,
        reason=outcome.reason,
        degenerate=estimate.degenerate,
        point_mass=estimate.point_mass,
        detail=dict(measurement.detail),
    )


def equity_diagnostic(
    measurements: Mapping[str, Tuple[Measurement, Measurement]],
    criteria: Mapping[str, SubCriterion],
    label_proxies: Iterable[str] = (),
) -> EquityDiagnostic:
    """DIAGNOSTIC rows for every need proxy, keyed E1[proxy] and E2[proxy].

    Proxies whose rank correlations fall on both sides of the E1 threshold
    are flagged as disagreeing.
    """
    label_proxies = set(label_proxies)
    rows: List[CriterionResult] = []
    warnings: List[str] = []
    above = below = False
    for proxy, (rho, gap) in measurements.items():
        rho_row = _result_row(criteria["E1"].scoped(proxy), rho)
        gap_row = _result_row(criteria["E2"].scoped(proxy), gap)
        rows.extend([rho_row, gap_row])
        if rho_row.value is not None:
            if rho_row.value >= criteria[EQUITY_DISAGREEMENT_CRITERION].threshold:
                above = True
            else:
                below = True
        if proxy in label_proxies:
            warnings.append(
                f"need proxy {proxy!r} is the outcome label; rank correlation with it rewards "
                "reproducing historical outcomes, not need"
            )
    return EquityDiagnostic(rows=rows, disagreement=above and below, warnings=warnings)


def _dimension_verdict(verdicts: Sequence[Verdict]) -> Verdict:
    if Verdict.FAIL in verdicts:
        return Verdict.FAIL
    if Verdict.INCONCLUSIVE in verdicts:
        return Verdict.INCONCLUSIVE
    return Verdict.PASS


def assemble_scorecard(
    measurements: Mapping[str, Measurement],
    criteria: Sequence[SubCriterion],
    alpha: float = 0.05,
    equity: Optional[EquityDiagnostic] = None,
    n_eval: Optional[int] = None,
    warnings: Sequence[str] = (),
) -> Scorecard:
    """Classify every gating sub-criterion, run Holm over them and derive the gate.

    A decisive CI verdict survives only when Holm rejects the null for the
    side its point estimate lies on; otherwise it becomes INCONCLUSIVE.
    """
    gating = [c for c in criteria if c.dimension != EQUITY]
    missing = [c.id for c in gating if c.id not in measurements]
    if missing:
        raise IncompleteScorecardError(f"sub-criteria neither evaluated nor skipped: {', '.join(missing)}")
    present = {c.dimension for c in gating}
    absent = [d for d in GATING_DIMENSIONS if d not in present]
    if absent:
        raise IncompleteScorecardError(f"gating dimensions missing: {', '.join(absent)}")

    rows = [_result_row(c, measurements[c.id]) for c in gating]
    notes = list(warnings)

    family = []
    exempt: Dict[str, str] = {}
    for row, criterion in zip(rows, gating):
        if criterion.base_id == "D1":
            exempt[row.id] = LATENCY_EXEMPTION
            family.append((row.id, None))
        elif row.p_boot is None:
            exempt[row.id] = row.reason or NOT_EVALUATED
            family.append((row.id, None))
        else:
            family.append((row.id, row.p_boot))
    holm = holm_bonferroni(family, alpha=alpha, exempt_reasons=exempt)
    tested_sizes = [
        measurements[row.id].estimate.replicates.size for row in rows if holm.get(row.id).exempt_reason is None
    ]
    needed = min_holm_replicates(holm.m, alpha)
    if tested_sizes and min(tested_sizes) < needed:
        message = (
            f"B={min(tested_sizes)} floors p_boot at 1/(B+1), above the first Holm level {alpha:g}/{holm.m}; "
            f"no gating test can be confirmed, rerun with B >= {needed}"
        )
        logger.warning(message)
        notes.append(message)

    for row, criterion in zip(rows, gating):
        test = holm.get(row.id)
        if row.verdict in (Verdict.PASS, Verdict.FAIL) and test.exempt_reason is None and not test.rejected:
            logger.debug("Holm disagreement: id=%s p=%s verdict=%s", row.id, test.p, row.verdict.value)
            row.verdict = Verdict.INCONCLUSIVE
            row.reason = HOLM_DISAGREEMENT
        if criterion.floor_kind and n_eval is not None:
            row.required_n = min_test_size(criterion.floor_kind, criterion.threshold, FLOOR_DEVIATION)
            if n_eval < row.required_n:
                row.notes.append(BELOW_INFORMATIVE_FLOOR)
        if criterion.ci_backed and row.ci_lo is not None and row.ci_hi is not None:
            replicates = measurements[row.id].estimate.replicates.size
            gap = min(abs(row.ci_lo - criterion.threshold), abs(row.ci_hi - criterion.threshold))
            if gap <= NEAR_THRESHOLD_MARGIN and replicates < NEAR_THRESHOLD_REPLICATES:
                message = (
                    f"{row.id}: CI endpoint within {NEAR_THRESHOLD_MARGIN} of threshold "
                    f"{criterion.threshold:g} with B={replicates}; rerun with B >= {NEAR_THRESHOLD_REPLICATES}"
                )
                logger.warning(message)
                notes.append(message)

    equity = equity or EquityDiagnostic(rows=[], disagreement=False)
    if not equity.rows:
        for criterion in criteria:
            if criterion.dimension == EQUITY:
                equity.rows.append(_result_row(criterion, Measurement(skipped_reason="no need proxy")))
    notes.extend(equity.warnings)
    if equity.disagreement:
        notes.append("need proxies disagree on which side of the rank-correlation threshold the model falls")

    all_rows = rows + equity.rows
    dimensions: Dict[str, DimensionResult] = {}
    for name in DIMENSIONS:
        members = [r for r in all_rows if r.dimension == name]
        verdict = Verdict.DIAGNOSTIC if name == EQUITY else _dimension_verdict([r.verdict for r in members])
        dimensions[name] = DimensionResult(
            name=name,
            verdict=verdict,
            criteria=[r.id for r in members],
            gating=name in GATING_DIMENSIONS,
        )
    gate = all(dimensions[name].verdict == Verdict.PASS for name in GATING_DIMENSIONS)
    order = {name: i for i, name in enumerate(DIMENSIONS)}
    all_rows.sort(key=lambda r: order[r.dimension])
    logger.info(
        "Scorecard assembled: gate=%s %s",
        gate,
        " ".join(f"{name}={dimensions[name].verdict.value}" for name in DIMENSIONS),
    )
    return Scorecard(
        criteria=all_rows,
        dimensions=dimensions,
        holm=holm,
        gate=gate,
        equity_disagreement=equity.disagreement,
        warnings=notes,
    )
