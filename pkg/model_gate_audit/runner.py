import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from model_gate_audit.cohort import Cohort, FeatureMatrix
from model_gate_audit.errors import ConfigError, PlanError, TooSmallError, UNDEFINED_METRIC_ERRORS
from model_gate_audit.explain import AttributionMatrix, linear_attributions, shapley_sampled
from model_gate_audit.metrics import (
    DEFAULT_ECE_BINS,
    EquityReport,
    LatencyReport,
    SubgroupMetricReport,
    TfrProfile,
    auc,
    boundary_width,
    brier,
    default_sweep,
    equity_report,
    latency,
    pfr,
    pss,
    spearman,
    subgroup_report,
    tfr_sweep,
)
from model_gate_audit.perturb import GAUSSIAN_NOISE, PerturbationBattery, PerturbationSpec, apply
from model_gate_audit.scorers.base import Scorer, checked_scores
from model_gate_audit.scorers.logistic import LogisticBaseline
from model_gate_audit.scorers.score_set import ScoreSet
from model_gate_audit.stats import BootstrapConfig, IntervalEstimate, bootstrap_panel
from model_gate_audit.verdict import (
    EQUITY,
    Measurement,
    Scorecard,
    SubCriterion,
    Verdict,
    assemble_scorecard,
    default_criteria,
    equity_diagnostic,
    sweep_verdicts,
)


logger = logging.getLogger("model_gate_audit")

MIN_EVALUATION_ROWS = 10
LABEL_PROXY = "outcome_label"
MONOTONICITY_TOLERANCE = 0.002
MONOTONICITY_SEED_OFFSET = 1


@dataclass
class EvaluationPlan:
    cohort: Cohort
    battery: PerturbationBattery
    scorer: Optional[Scorer] = None
    score_set: Optional[ScoreSet] = None
    tau0: float = 0.5
    thresholds: Tuple[float, ...] = field(default_factory=default_sweep)
    delta: float = 0.05
    ece_bins: int = DEFAULT_ECE_BINS
    subgroup_attributes: Optional[Sequence[str]] = None
    proxies: Optional[Sequence[str]] = None
    include_label_proxy: bool = True
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    threshold_overrides: Dict[str, float] = field(default_factory=dict)
    per_attribute_inclusivity: bool = False
    latency_repetitions: int = 30
    latency_warmup: int = 5
    latency_clock: Optional[Callable[[], int]] = None
    # Externally measured cohort latency for score-set audits.
    latency_ms: Optional[float] = None
    d1_per_patient_ms: float = 1.0
    attributions: Optional[AttributionMatrix] = None
    background: Optional[FeatureMatrix] = None
    shapley_k: int = 32
    # Names the model in score-set audits, where no scorer object is present.
    model_descriptor: Optional[str] = None

    def attributes(self) -> List[str]:
        names = list(self.cohort.subgroups) if self.subgroup_attributes is None else list(self.subgroup_attributes)
        unknown = [a for a in names if a not in self.cohort.subgroups]
        if unknown:
            raise PlanError(f"unknown subgroup attributes: {', '.join(unknown)}")
        return names

    def need_proxies(self) -> Dict[str, np.ndarray]:
        names = list(self.cohort.need_proxies) if self.proxies is None else list(self.proxies)
        selected = {}
        for name in names:
            if name not in self.cohort.need_proxies:
                raise PlanError(f"unknown need proxy {name!r}")
            selected[name] = self.cohort.need_proxies[name]
        if self.include_label_proxy:
            selected[LABEL_PROXY] = self.cohort.labels.astype(float)
        return selected

    def validate(self) -> None:
        if self.cohort.n < MIN_EVALUATION_ROWS:
            raise TooSmallError(f"evaluation cohort has {self.cohort.n} rows, need at least {MIN_EVALUATION_ROWS}")
        if self.scorer is None and self.score_set is None:
            raise PlanError("plan needs a scorer or a score set")
        thresholds = tuple(float(t) for t in self.thresholds)
        if len(thresholds) < 2 or any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise PlanError("threshold sweep needs at least two strictly increasing thresholds")
        if not thresholds[0] <= self.tau0 <= thresholds[-1]:
            raise PlanError(f"tau0={self.tau0} lies outside the sweep range")
        if self.score_set is not None:
            if not np.array_equal(self.score_set.row_ids, self.cohort.row_ids):
                raise PlanError("score set rows are not aligned to the evaluation cohort")
            missing = [i for i in self.battery.ids if i not in self.score_set.perturbed]
            if missing:
                raise PlanError(f"score set has no column for perturbations: {', '.join(missing)}")
        default_criteria(self.threshold_overrides)
        self.attributes()


@dataclass
class EvaluationResult:
    scorecard: Scorecard
    n: int
    prevalence: float
    estimates: Dict[str, IntervalEstimate]
    tfr_profile: TfrProfile
    subgroup_reports: Dict[str, SubgroupMetricReport]
    equity_reports: Dict[str, EquityReport]
    latency: Optional[LatencyReport]
    attributions: Optional[AttributionMatrix]
    top3: Tuple[str, ...]
    battery: Dict[str, object]
    bootstrap: BootstrapConfig
    replicates_used: int
    discarded: int
    criteria: Dict[str, SubCriterion]
    tau0: float
    delta: float
    ece_bins: int
    scorer_descriptor: Optional[str] = None
    d1_per_patient_ms: float = 1.0


def _scores(plan: EvaluationPlan) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    X = plan.cohort.features
    if plan.score_set is not None:
        perturbed = {spec_id: plan.score_set.perturbed[spec_id] for spec_id in plan.battery.ids}
        return plan.score_set.baseline, perturbed
    base = checked_scores(plan.scorer.score(X), X.n, plan.scorer.descriptor)
    perturbed = {}
    for spec in plan.battery.specs:
        varied = apply(spec, X, plan.battery.master_seed)
        perturbed[spec.id] = checked_scores(plan.scorer.score(varied), X.n, plan.scorer.descriptor)
    logger.info("Battery scored: specs=%s rows=%s", len(perturbed), X.n)
    return base, perturbed


def _attributions(plan: EvaluationPlan) -> Optional[AttributionMatrix]:
    if plan.attributions is not None:
        if plan.attributions.n != plan.cohort.n:
            raise PlanError("attribution rows do not match the evaluation cohort")
        return plan.attributions
    if isinstance(plan.scorer, LogisticBaseline):
        return linear_attributions(plan.scorer, plan.cohort.features)
    if plan.scorer is not None and plan.background is not None:
        return shapley_sampled(
            plan.scorer,
            plan.cohort.features,
            plan.background,
            k=plan.shapley_k,
            seed=plan.bootstrap.seed,
        )
    return None


def _latency(plan: EvaluationPlan) -> Optional[LatencyReport]:
    if plan.latency_ms is not None:
        n = plan.cohort.n
        return LatencyReport(
            cohort_latency_ms=float(plan.latency_ms),
            per_patient_latency_ms=float(plan.latency_ms) / n,
            repetitions=0,
            warmup=0,
        )
    if plan.scorer is None:
        return None
    return latency(
        plan.scorer,
        plan.cohort.features,
        repetitions=plan.latency_repetitions,
        warmup=plan.latency_warmup,
        clock=plan.latency_clock or time.perf_counter_ns,
    )


class _Panel:
    """The full-row statistic the bootstrap resamples.

    Blocks whose metrics are undefined on the full sample are dropped up front
    so one unusable proxy does not sink the whole audit.
    """

    def __init__(
        self,
        plan: EvaluationPlan,
        base: np.ndarray,
        perturbed: Mapping[str, np.ndarray],
        proxies: Mapping[str, np.ndarray],
        attributions: Optional[AttributionMatrix],
    ) -> None:
        self.plan = plan
        self.base = base
        self.perturbed = perturbed
        self.labels = plan.cohort.labels.astype(float)
        # Integer codes keep per-replicate grouping cheap; only gaps are read back.
        self.partitions = {
            a: np.unique(plan.cohort.subgroups[a], return_inverse=True)[1].reshape(-1)
            for a in plan.attributes()
        }
        self.proxies = proxies
        self.attributions = attributions
        self.skipped: Dict[str, str] = {}
        self.blocks: List[Callable[[np.ndarray], Dict[str, float]]] = []
        full = np.arange(plan.cohort.n)
        for name, block in self._candidate_blocks():
            try:
                block(full)
            except UNDEFINED_METRIC_ERRORS as exc:
                logger.warning("Metric block skipped: block=%s reason=%s", name, exc)
                self.skipped[name] = str(exc)
                continue
            self.blocks.append(block)

    def _candidate_blocks(self):
        yield "context", self._context
        yield "reliability", self._reliability
        yield "inclusivity", self._inclusivity
        yield "sensitivity", self._sensitivity
        for proxy in self.proxies:
            yield f"equity[{proxy}]", self._equity_block(proxy)
        if self.attributions is not None:
            yield "deployability", self._deployability

    def __call__(self, rows: np.ndarray) -> Dict[str, float]:
        values: Dict[str, float] = {}
        for block in self.blocks:
            values.update(block(rows))
        return values

    def _context(self, rows: np.ndarray) -> Dict[str, float]:
        scores, labels = self.base[rows], self.labels[rows]
        return {
            "auroc": auc(scores, labels),
            "brier": brier(scores, labels),
            "prevalence": float(labels.mean()),
        }

    def _reliability(self, rows: np.ndarray) -> Dict[str, float]:
        base = self.base[rows]
        values: Dict[str, float] = {}
        flips = []
        rhos = []
        for spec_id, scores in self.perturbed.items():
            flip = pfr(base, scores[rows], self.plan.tau0)
            rho = spearman(base, scores[rows])
            values[f"pfr[{spec_id}]"] = flip
            values[f"rho[{spec_id}]"] = rho
            flips.append(flip)
            rhos.append(rho)
        values["R1"] = pss(flips)
        values["R2"] = float(min(rhos))
        values["mean_rho"] = float(np.mean(rhos))
        return values

    def _inclusivity(self, rows: np.ndarray) -> Dict[str, float]:
        scores, labels = self.base[rows], self.labels[rows]
        values: Dict[str, float] = {}
        for attribute, partition in self.partitions.items():
            report = subgroup_report(
                scores,
                labels,
                partition[rows],
                bins=self.plan.ece_bins,
                attribute=attribute,
                tau0=self.plan.tau0,
            )
            values[f"I1[{attribute}]"] = report.auc_gap
            values[f"I2[{attribute}]"] = report.max_ece
        if self.partitions:
            values["I1"] = max(values[f"I1[{a}]"] for a in self.partitions)
            values["I2"] = max(values[f"I2[{a}]"] for a in self.partitions)
        return values

    def _sensitivity(self, rows: np.ndarray) -> Dict[str, float]:
        scores = self.base[rows]
        profile = tfr_sweep(scores, self.plan.tau0, self.plan.thresholds)
        values = {
            "S1": profile.max_tfr,
            "S2": boundary_width(scores, self.plan.tau0, self.plan.delta),
        }
        if profile.band_max_tfr is not None:
            values["band_max_tfr"] = profile.band_max_tfr
        return values

    def _equity_block(self, proxy: str) -> Callable[[np.ndarray], Dict[str, float]]:
        def block(rows: np.ndarray) -> Dict[str, float]:
            report = equity_report(
                self.base[rows],
                self.proxies[proxy][rows],
                {a: p[rows] for a, p in self.partitions.items()},
                proxy_name=proxy,
                proxy_is_outcome_label=proxy == LABEL_PROXY,
            )
            return {f"E1[{proxy}]": report.rho_need, f"E2[{proxy}]": report.max_abs_gap}

        return block

    def _deployability(self, rows: np.ndarray) -> Dict[str, float]:
        f_top3, _ = self.attributions.take(rows).top3()
        return {"D2": f_top3}


def _measure(estimates: Mapping[str, IntervalEstimate], key: str, reason: str) -> Measurement:
    if key in estimates:
        return Measurement(estimate=estimates[key])
    return Measurement(skipped_reason=reason)


def evaluate_all(plan: EvaluationPlan) -> EvaluationResult:
    plan.validate()
    cohort = plan.cohort
    criteria = default_criteria(plan.threshold_overrides)
    notes: List[str] = []

    base, perturbed = _scores(plan)
    proxies = plan.need_proxies()
    if LABEL_PROXY in proxies:
        message = "Outcome label used as a need proxy; the equity diagnostic then measures label agreement"
        logger.warning(message)
        warnings.warn(message, UserWarning, stacklevel=2)
    attributions = _attributions(plan)
    latency_report = _latency(plan)

    panel = _Panel(plan, base, perturbed, proxies, attributions)
    for block, reason in panel.skipped.items():
        notes.append(f"{block} not evaluated: {reason}")
    boot = bootstrap_panel(panel, cohort.n, plan.bootstrap, labels=cohort.labels, clusters=_clusters(plan))
    estimates = boot.estimates
    if boot.discarded:
        notes.append(f"{boot.discarded} bootstrap replicates discarded as undefined")

    measurements: Dict[str, Measurement] = {}
    ordered: List[SubCriterion] = []
    for criterion_id in ("R1", "R2"):
        measurements[criterion_id] = _measure(estimates, criterion_id, "reliability metrics undefined")
        ordered.append(criteria[criterion_id])
    attributes = plan.attributes()
    for criterion_id in ("I1", "I2"):
        if plan.per_attribute_inclusivity and attributes:
            for attribute in attributes:
                scoped = criteria[criterion_id].scoped(attribute)
                measurements[scoped.id] = _measure(estimates, scoped.id, "no evaluable groups")
                ordered.append(scoped)
        else:
            reason = "no subgroup attributes" if not attributes else "no evaluable groups"
            measurements[criterion_id] = _measure(estimates, criterion_id, reason)
            ordered.append(criteria[criterion_id])
    for criterion_id in ("S1", "S2"):
        measurements[criterion_id] = _measure(estimates, criterion_id, "sensitivity metrics undefined")
        ordered.append(criteria[criterion_id])

    if latency_report is not None:
        measurements["D1"] = Measurement(
            estimate=IntervalEstimate(point=latency_report.cohort_latency_ms, lo=None, hi=None),
            detail={
                "per_patient_latency_ms": latency_report.per_patient_latency_ms,
                "per_patient_limit_ms": plan.d1_per_patient_ms,
                "per_patient_within_limit": latency_report.per_patient_latency_ms <= plan.d1_per_patient_ms,
            },
        )
    else:
        measurements["D1"] = Measurement(skipped_reason="no scorer to time and no external latency")
    ordered.append(criteria["D1"])
    top3: Tuple[str, ...] = ()
    if attributions is not None and "D2" in estimates:
        _, top3 = attributions.top3()
        measurements["D2"] = Measurement(
            estimate=estimates["D2"],
            detail={"top3": list(top3), "provider": attributions.provider},
        )
    else:
        measurements["D2"] = Measurement(skipped_reason="no attributions available")
    ordered.append(criteria["D2"])

    equity_measurements = {
        proxy: (
            _measure(estimates, f"E1[{proxy}]", "need proxy undefined"),
            _measure(estimates, f"E2[{proxy}]", "need proxy undefined"),
        )
        for proxy in proxies
    }
    equity = equity_diagnostic(
        equity_measurements,
        criteria,
        label_proxies=[LABEL_PROXY] if LABEL_PROXY in proxies else [],
    )
    ordered.extend(c for c in criteria.values() if c.dimension == EQUITY)

    scorecard = assemble_scorecard(
        measurements,
        ordered,
        alpha=plan.bootstrap.alpha,
        equity=equity,
        n_eval=cohort.n,
        warnings=notes,
    )
    full = np.arange(cohort.n)
    return EvaluationResult(
        scorecard=scorecard,
        n=cohort.n,
        prevalence=cohort.prevalence,
        estimates=estimates,
        tfr_profile=tfr_sweep(base, plan.tau0, plan.thresholds),
        subgroup_reports=_subgroup_reports(plan, base),
        equity_reports=_equity_reports(plan, base, proxies, full),
        latency=latency_report,
        attributions=attributions,
        top3=top3,
        battery=plan.battery.describe(),
        bootstrap=plan.bootstrap,
        replicates_used=boot.replicates_used,
        discarded=boot.discarded,
        criteria={c.id: c for c in ordered},
        tau0=plan.tau0,
        delta=plan.delta,
        ece_bins=plan.ece_bins,
        scorer_descriptor=plan.model_descriptor or (plan.scorer.descriptor if plan.scorer is not None else None),
        d1_per_patient_ms=plan.d1_per_patient_ms,
    )


def _clusters(plan: EvaluationPlan) -> Optional[np.ndarray]:
    name = plan.bootstrap.cluster_by
    if name is None:
        return None
    if name not in plan.cohort.subgroups:
        raise PlanError(f"cluster attribute {name!r} is not a subgroup attribute")
    return plan.cohort.subgroups[name]


def _subgroup_reports(plan: EvaluationPlan, base: np.ndarray) -> Dict[str, SubgroupMetricReport]:
    reports = {}
    for attribute in plan.attributes():
        try:
            reports[attribute] = subgroup_report(
                base,
                plan.cohort.labels,
                plan.cohort.subgroups[attribute],
                bins=plan.ece_bins,
                attribute=attribute,
                tau0=plan.tau0,
            )
        except UNDEFINED_METRIC_ERRORS:
            continue
    return reports


def _equity_reports(
    plan: EvaluationPlan,
    base: np.ndarray,
    proxies: Mapping[str, np.ndarray],
    rows: np.ndarray,
) -> Dict[str, EquityReport]:
    reports = {}
    partitions = {a: plan.cohort.subgroups[a] for a in plan.attributes()}
    for proxy, values in proxies.items():
        try:
            reports[proxy] = equity_report(
                base[rows],
                values[rows],
                partitions,
                proxy_name=proxy,
                proxy_is_outcome_label=proxy == LABEL_PROXY,
            )
        except UNDEFINED_METRIC_ERRORS:
            continue
    return reports


def threshold_sensitivity_sweep(
    source: Union[EvaluationPlan, EvaluationResult],
    criterion_id: str,
    thresholds: Sequence[float],
) -> List[Tuple[float, Verdict]]:
    """Verdict of one interval-backed criterion at each alternative threshold.

    A plan is evaluated first; a finished result is swept against its own
    intervals without resampling.
    """
    result = evaluate_all(source) if isinstance(source, EvaluationPlan) else source
    criterion = result.criteria.get(criterion_id)
    if criterion is None:
        base_id = criterion_id.split("[", 1)[0]
        criterion = default_criteria().get(base_id)
        if criterion is None:
            raise ConfigError(f"unknown sub-criterion {criterion_id!r}")
    estimate = result.estimates.get(criterion_id)
    if estimate is None:
        raise ConfigError(f"{criterion_id} has no interval in this result")
    return sweep_verdicts(estimate, criterion, thresholds)


@dataclass
class MonotonicityReport:
    rows: List[Tuple[float, float]]
    monotone: bool
    tolerance: float


def pss_monotonicity_check(
    plan: EvaluationPlan,
    sigmas: Sequence[float],
    tolerance: float = MONOTONICITY_TOLERANCE,
) -> MonotonicityReport:
    """PSS of single-spec noise batteries over increasing sigma.

    Every sigma reuses the same noise stream, so larger sigmas scale the same draws.
    """
    if not sigmas or 0.0 not in [float(s) for s in sigmas]:
        raise ConfigError("sigma list must include 0")
    if plan.scorer is None:
        raise PlanError("the monotonicity check re-scores the cohort and needs a scorer")
    X = plan.cohort.features
    base = plan.scorer.score(X)
    rows = []
    for sigma in sorted(float(s) for s in sigmas):
        spec = PerturbationSpec(
            id=f"noise_{sigma:g}",
            kind=GAUSSIAN_NOISE,
            sigma=sigma,
            seed_offset=MONOTONICITY_SEED_OFFSET,
        )
        varied = plan.scorer.score(apply(spec, X, plan.battery.master_seed))
        rows.append((sigma, pss([pfr(base, varied, plan.tau0)])))
    monotone = all(later >= earlier - tolerance for (_, earlier), (_, later) in zip(rows, rows[1:]))
    logger.info("PSS monotonicity: %s monotone=%s", " ".join(f"{s:g}:{v:.4f}" for s, v in rows), monotone)
    return MonotonicityReport(rows=rows, monotone=monotone, tolerance=tolerance)
