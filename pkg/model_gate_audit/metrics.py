"""Metric kernels for the five audit dimensions.

Every kernel is a pure function of its arrays. Kernels that can become
undefined on a resample raise one of the errors in
`model_gate_audit.errors.UNDEFINED_METRIC_ERRORS`.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata, spearmanr

from model_gate_audit.cohort import FeatureMatrix
from model_gate_audit.errors import (
    ConfigError,
    NoEvaluableGroupsError,
    ShapeError,
    UndefinedAucError,
    UndefinedCorrelationError,
)


logger = logging.getLogger("model_gate_audit")

MIN_GROUP_SIZE = 30
DEFAULT_ECE_BINS = 10
CLINICAL_BAND = (0.30, 0.70)


def default_sweep() -> Tuple[float, ...]:
    return tuple(float(t) for t in np.round(np.linspace(0.10, 0.90, 17), 10))


def _pair(a: np.ndarray, b: np.ndarray, what: str) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"{what}: length mismatch {a.shape} vs {b.shape}")
    return a, b


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores, labels = _pair(scores, labels, "auc")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError("AUC needs both classes")
    ranks = rankdata(scores)
    u_statistic = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def brier(scores: np.ndarray, labels: np.ndarray) -> float:
    scores, labels = _pair(scores, labels, "brier")
    return float(np.mean((scores - labels) ** 2))


def decisions(scores: np.ndarray, tau: float) -> np.ndarray:
    return np.asarray(scores) >= tau


def pfr(base: np.ndarray, pert: np.ndarray, tau: float) -> float:
    base, pert = _pair(base, pert, "pfr")
    if base.size == 0:
        return 0.0
    return float(np.mean(decisions(base, tau) != decisions(pert, tau)))


def pss(pfrs: Sequence[float]) -> float:
    if len(pfrs) == 0:
        raise ConfigError("PSS needs a non-empty battery")
    return float(np.mean(np.asarray(pfrs, dtype=float)))


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _pair(a, b, "spearman")
    if a.size < 2:
        raise UndefinedCorrelationError("Spearman correlation needs at least two rows")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        raise UndefinedCorrelationError("Spearman correlation is undefined for a constant vector")
    rho = spearmanr(a, b)[0]
    return float(np.clip(rho, -1.0, 1.0))


def ece(scores: np.ndarray, labels: np.ndarray, bins: int = DEFAULT_ECE_BINS) -> float:
    """Bin-weighted |mean score - event rate| over equal-width bins; empty bins weigh zero."""
    scores, labels = _pair(scores, labels, "ece")
    if bins < 1:
        raise ConfigError(f"ECE needs at least one bin, got {bins}")
    if scores.size == 0:
        return 0.0
    index = np.minimum(np.floor(scores * bins).astype(int), bins - 1)
    counts = np.bincount(index, minlength=bins)
    score_sums = np.bincount(index, weights=scores, minlength=bins)
    label_sums = np.bincount(index, weights=labels, minlength=bins)
    return float(np.abs(score_sums - label_sums).sum() / scores.size)


@dataclass
class GroupStats:
    size: int
    ece: float
    selection_rate: float
    auc: Optional[float] = None
    absent_reason: Optional[str] = None
    small: bool = False


@dataclass
class SubgroupMetricReport:
    attribute: str
    groups: Dict[str, GroupStats]
    auc_gap: float
    max_ece: float
    small_groups: List[str] = field(default_factory=list)
    evaluable_groups: List[str] = field(default_factory=list)
    adverse_impact_ratio: Optional[float] = None


def subgroup_report(
    scores: np.ndarray,
    labels: np.ndarray,
    partition: np.ndarray,
    bins: int = DEFAULT_ECE_BINS,
    attribute: str = "",
    tau0: float = 0.5,
    min_group_size: int = MIN_GROUP_SIZE,
) -> SubgroupMetricReport:
    scores, labels = _pair(scores, labels, "subgroup_report")
    partition = np.asarray(partition)
    if partition.shape != scores.shape:
        raise ShapeError("subgroup_report: partition does not cover every row")

    groups: Dict[str, GroupStats] = {}
    evaluable: List[str] = []
    small: List[str] = []
    for key in np.unique(partition):
        mask = partition == key
        g_scores, g_labels = scores[mask], labels[mask]
        stats = GroupStats(
            size=int(mask.sum()),
            ece=ece(g_scores, g_labels, bins),
            selection_rate=float(np.mean(decisions(g_scores, tau0))),
            small=bool(mask.sum() < min_group_size),
        )
        try:
            stats.auc = auc(g_scores, g_labels)
        except UndefinedAucError:
            stats.absent_reason = "single_class"
        groups[str(key)] = stats
        if stats.small:
            small.append(str(key))
        elif stats.auc is not None:
            evaluable.append(str(key))

    if not evaluable:
        raise NoEvaluableGroupsError(
            f"attribute {attribute or '?'}: no group with at least {min_group_size} rows and both classes"
        )
    aucs = [groups[key].auc for key in evaluable]
    rates = [groups[key].selection_rate for key in evaluable]
    top_rate = max(rates)
    return SubgroupMetricReport(
        attribute=attribute,
        groups=groups,
        auc_gap=float(max(aucs) - min(aucs)),
        max_ece=float(max(groups[key].ece for key in evaluable)),
        small_groups=small,
        evaluable_groups=evaluable,
        adverse_impact_ratio=float(min(rates) / top_rate) if top_rate > 0 else None,
    )


@dataclass
class TfrProfile:
    tau0: float
    thresholds: Tuple[float, ...]
    values: Tuple[float, ...]
    max_tfr: float
    band_max_tfr: Optional[float]

    @property
    def argmax_threshold(self) -> float:
        return self.thresholds[int(np.argmax(self.values))]


def tfr(scores: np.ndarray, tau: float, tau0: float) -> float:
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        return 0.0
    return float(np.mean(decisions(scores, tau) != decisions(scores, tau0)))


def tfr_sweep(
    scores: np.ndarray,
    tau0: float = 0.5,
    thresholds: Optional[Sequence[float]] = None,
    band: Tuple[float, float] = CLINICAL_BAND,
) -> TfrProfile:
    if not 0.0 < tau0 < 1.0:
        raise ConfigError(f"tau0 must lie in (0, 1), got {tau0}")
    sweep = tuple(float(t) for t in (default_sweep() if thresholds is None else thresholds))
    if len(sweep) < 2:
        raise ConfigError(f"threshold sweep needs at least two thresholds, got {len(sweep)}")
    if any(b <= a for a, b in zip(sweep, sweep[1:])):
        raise ConfigError("threshold sweep must be strictly increasing")
    scores = np.asarray(scores, dtype=float)
    values = tuple(tfr(scores, tau, tau0) for tau in sweep)
    in_band = [v for t, v in zip(sweep, values) if band[0] <= t <= band[1]]
    return TfrProfile(
        tau0=float(tau0),
        thresholds=sweep,
        values=values,
        max_tfr=float(max(values)),
        band_max_tfr=float(max(in_band)) if in_band else None,
    )


def boundary_width(scores: np.ndarray, tau0: float = 0.5, delta: float = 0.05) -> float:
    if not delta > 0.0:
        raise ConfigError(f"delta must be positive, got {delta}")
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        return 0.0
    return float(np.mean(np.abs(scores - tau0) <= delta))


@dataclass
class EquityReport:
    proxy: str
    rho_need: float
    gaps: Dict[str, Dict[str, float]]
    max_abs_gap: float
    proxy_is_outcome_label: bool = False


def normalize_proxy(proxy: np.ndarray) -> np.ndarray:
    proxy = np.asarray(proxy, dtype=float)
    if not np.all(np.isfinite(proxy)):
        raise UndefinedCorrelationError("need proxy contains non-finite values")
    low, high = float(proxy.min()), float(proxy.max())
    if high == low:
        raise UndefinedCorrelationError("need proxy is constant")
    return (proxy - low) / (high - low)


def equity_report(
    scores: np.ndarray,
    proxy: np.ndarray,
    partitions: Mapping[str, np.ndarray],
    proxy_name: str = "proxy",
    proxy_is_outcome_label: bool = False,
    min_group_size: int = MIN_GROUP_SIZE,
) -> EquityReport:
    """Need-prediction correlation and per-group need gaps.

    A negative gap means the model scores the group below its normalized need.
    The largest |gap| is taken over groups of at least `min_group_size` rows,
    or over all groups when none is that large.
    """
    scores, proxy = _pair(scores, proxy, "equity_report")
    need = normalize_proxy(proxy)
    rho = spearman(scores, need)
    gaps: Dict[str, Dict[str, float]] = {}
    large: List[float] = []
    every: List[float] = []
    for attribute, partition in partitions.items():
        partition = np.asarray(partition)
        if partition.shape != scores.shape:
            raise ShapeError(f"equity_report: partition {attribute!r} does not cover every row")
        per_group: Dict[str, float] = {}
        for key in np.unique(partition):
            mask = partition == key
            gap = float(scores[mask].mean() - need[mask].mean())
            per_group[str(key)] = gap
            every.append(abs(gap))
            if mask.sum() >= min_group_size:
                large.append(abs(gap))
        gaps[attribute] = per_group
    pool = large or every
    return EquityReport(
        proxy=proxy_name,
        rho_need=rho,
        gaps=gaps,
        max_abs_gap=float(max(pool)) if pool else 0.0,
        proxy_is_outcome_label=proxy_is_outcome_label,
    )


@dataclass
class LatencyReport:
    cohort_latency_ms: float
    per_patient_latency_ms: float
    repetitions: int
    warmup: int


def latency(
    scorer,
    X: FeatureMatrix,
    repetitions: int = 30,
    warmup: int = 5,
    clock: Callable[[], int] = time.perf_counter_ns,
) -> LatencyReport:
    """Mean wall-clock time of `repetitions` scoring calls after `warmup` untimed ones.

    `clock` returns nanoseconds.
    """
    if repetitions < 1:
        raise ConfigError(f"latency needs at least one timed call, got {repetitions}")
    for _ in range(max(warmup, 0)):
        scorer.score(X)
    timings = []
    for _ in range(repetitions):
        started = clock()
        scorer.score(X)
        timings.append((clock() - started) / 1e6)
    cohort_ms = float(np.mean(timings))
    per_patient = cohort_ms / X.n if X.n else 0.0
    logger.debug("Latency measured: n=%s R=%s mean_ms=%.6f", X.n, repetitions, cohort_ms)
    return LatencyReport(
        cohort_latency_ms=cohort_ms,
        per_patient_latency_ms=float(per_patient),
        repetitions=repetitions,
        warmup=max(warmup, 0),
    )


def top3_consistency(values: np.ndarray, feature_names: Sequence[str]) -> Tuple[float, Tuple[str, str, str]]:
    """Share of rows whose largest |attribution| falls in the global top-3 by mean |attribution|.

    Ties go to the lower column index, both globally and per row.
    """
    magnitudes = np.abs(np.asarray(values, dtype=float))
    if magnitudes.ndim != 2:
        raise ShapeError("attributions must form a matrix")
    n, d = magnitudes.shape
    if d < 3:
        raise ConfigError(f"top-3 consistency needs at least 3 features, got {d}")
    if n < 1:
        raise ConfigError("top-3 consistency needs at least one row")
    if len(feature_names) != d:
        raise ShapeError("feature names do not match attribution width")
    order = np.argsort(-magnitudes.mean(axis=0), kind="stable")[:3]
    row_top = np.argmax(magnitudes, axis=1)
    f_top3 = float(np.mean(np.isin(row_top, order)))
    names = tuple(str(feature_names[j]) for j in order)
    return f_top3, (names[0], names[1], names[2])
