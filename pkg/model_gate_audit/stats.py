"""Bootstrap intervals, bootstrap p-values, Holm step-down and test-set sizing."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from model_gate_audit.errors import UNDEFINED_METRIC_ERRORS, ConfigError


logger = logging.getLogger("model_gate_audit")

UPPER_BOUNDED = "upper_bounded"
LOWER_BOUNDED = "lower_bounded"
DIRECTIONS = (UPPER_BOUNDED, LOWER_BOUNDED)

BCA = "bca"
PERCENTILE = "percentile"

MIN_REPLICATES = 100
MAX_JACKKNIFE_ROWS = 20000

# A panel statistic maps resampled row indices to named metric values.
PanelStatistic = Callable[[np.ndarray], Mapping[str, float]]


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 1000
    seed: int = 42
    alpha: float = 0.05
    method: str = BCA
    stratify_by_label: bool = True
    # Name of a subgroup attribute whose keys define resampling clusters.
    cluster_by: Optional[str] = None
    workers: int = 1
    max_redraws: int = 10

    def __post_init__(self) -> None:
        if self.replicates < MIN_REPLICATES:
            raise ConfigError(f"bootstrap needs at least {MIN_REPLICATES} replicates, got {self.replicates}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.method not in (BCA, PERCENTILE):
            raise ConfigError(f"unknown interval method {self.method!r}")
        if self.seed < 0:
            raise ConfigError("bootstrap seed must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lo: Optional[float]
    hi: Optional[float]
    z0: float = 0.0
    accel: float = 0.0
    p_boot: Optional[float] = None
    degenerate: bool = False
    # Every replicate equals the point value.
    point_mass: bool = False
    replicates: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False, compare=False)
    discarded: int = 0

    def with_p(self, threshold: float, direction: str) -> "IntervalEstimate":
        if self.replicates.size == 0:
            return self
        return replace(self, p_boot=bootstrap_p(self.replicates, threshold, direction))


def bootstrap_p(replicates: np.ndarray, threshold: float, direction: str) -> float:
    """One-sided bootstrap p-value against the null that the metric sits on the failing side.

    upper_bounded: share of replicates at or above the threshold.
    lower_bounded: share of replicates at or below it.
    """
    values = np.asarray(replicates, dtype=float)
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}")
    count = values.size
    if count == 0:
        return 1.0
    if direction == UPPER_BOUNDED:
        share = float(np.mean(values >= threshold))
    else:
        share = float(np.mean(values <= threshold))
    return float(min(max(share, 1.0 / (count + 1)), 1.0))


def _draw_rows(
    rng: np.random.Generator,
    n: int,
    strata: Optional[List[np.ndarray]],
    clusters: Optional[List[np.ndarray]],
) -> np.ndarray:
    if clusters is not None:
        picks = rng.integers(0, len(clusters), size=len(clusters))
        return np.concatenate([clusters[i] for i in picks])
    if strata is not None:
        return np.concatenate([rng.choice(rows, size=rows.size, replace=True) for rows in strata])
    return rng.integers(0, n, size=n)


def _groups(keys: np.ndarray) -> List[np.ndarray]:
    keys = np.asarray(keys)
    return [np.flatnonzero(keys == key) for key in np.unique(keys)]


def jackknife_blocks(n: int) -> List[np.ndarray]:
    """Rows left out per jackknife pass; single rows up to 20000, contiguous blocks beyond."""
    k = max(1, math.ceil(n / MAX_JACKKNIFE_ROWS))
    return np.array_split(np.arange(n), math.ceil(n / k))


def acceleration(jackknife: np.ndarray) -> Optional[float]:
    values = np.asarray(jackknife, dtype=float)
    if values.size < 2:
        return None
    deviations = values.mean() - values
    spread = float(np.sum(deviations ** 2))
    if spread <= 0.0:
        return None
    return float(np.sum(deviations ** 3) / (6.0 * spread ** 1.5))


def interval_from_replicates(
    point: float,
    replicates: np.ndarray,
    jackknife: np.ndarray,
    alpha: float,
    method: str = BCA,
    discarded: int = 0,
) -> IntervalEstimate:
    replicates = np.asarray(replicates, dtype=float)
    count = replicates.size
    if count < 2 or np.ptp(replicates) == 0.0:
        return IntervalEstimate(
            point=point,
            lo=None,
            hi=None,
            degenerate=True,
            point_mass=bool(count > 0 and np.all(replicates == point)),
            replicates=replicates,
            discarded=discarded,
        )

    levels = np.array([alpha / 2.0, 1.0 - alpha / 2.0])
    z0 = 0.0
    accel = 0.0
    if method == BCA:
        accel_value = acceleration(jackknife)
        if accel_value is None:
            return IntervalEstimate(
                point=point,
                lo=None,
                hi=None,
                degenerate=True,
                replicates=replicates,
                discarded=discarded,
            )
        accel = accel_value
        below = (np.sum(replicates < point) + 0.5 * np.sum(replicates == point)) / count
        below = min(max(below, 0.5 / count), 1.0 - 0.5 / count)
        z0 = float(norm.ppf(below))
        if z0 != 0.0 or accel != 0.0:
            zs = z0 + norm.ppf(levels)
            levels = norm.cdf(z0 + zs / (1.0 - accel * zs))
    lo, hi = np.quantile(replicates, levels)
    # Max-over-sweep statistics can put the point outside the raw band.
    return IntervalEstimate(
        point=point,
        lo=float(min(lo, point)),
        hi=float(max(hi, point)),
        z0=z0,
        accel=accel,
        replicates=replicates,
        discarded=discarded,
    )


@dataclass
class PanelResult:
    estimates: Dict[str, IntervalEstimate]
    replicates_used: int
    discarded: int


def bootstrap_panel(
    statistic: PanelStatistic,
    n: int,
    config: BootstrapConfig,
    labels: Optional[np.ndarray] = None,
    clusters: Optional[np.ndarray] = None,
) -> PanelResult:
    """Resample rows once per replicate and evaluate every metric of the panel on them.

    Replicate b draws from the stream (seed, b, attempt), so results do not
    depend on `config.workers`. A replicate on which the statistic is undefined
    is redrawn up to `config.max_redraws` times, then discarded.
    """
    if n < 1:
        raise ConfigError("bootstrap needs at least one row")
    point = dict(statistic(np.arange(n)))
    names = list(point)

    strata = _groups(labels) if labels is not None and config.stratify_by_label else None
    cluster_rows = _groups(clusters) if clusters is not None else None

    def replicate(b: int) -> Optional[Mapping[str, float]]:
        for attempt in range(config.max_redraws + 1):
            rng = np.random.default_rng([config.seed, b, attempt])
            rows = _draw_rows(rng, n, strata, cluster_rows)
            try:
                return statistic(rows)
            except UNDEFINED_METRIC_ERRORS:
                continue
        return None

    all_rows = np.arange(n)

    def leave_out(block: np.ndarray) -> Optional[Mapping[str, float]]:
        try:
            return statistic(np.delete(all_rows, block))
        except UNDEFINED_METRIC_ERRORS:
            return None

    blocks = jackknife_blocks(n) if config.method == BCA and n > 1 else []
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            draws = list(pool.map(replicate, range(config.replicates)))
            jack = list(pool.map(leave_out, blocks))
    else:
        draws = [replicate(b) for b in range(config.replicates)]
        jack = [leave_out(block) for block in blocks]

    kept = [d for d in draws if d is not None]
    discarded = len(draws) - len(kept)
    jack_kept = [j for j in jack if j is not None]
    if discarded:
        logger.warning("Bootstrap discarded %s of %s replicates as undefined", discarded, len(draws))

    estimates = {}
    for name in names:
        estimates[name] = interval_from_replicates(
            point=float(point[name]),
            replicates=np.array([d[name] for d in kept], dtype=float),
            jackknife=np.array([j[name] for j in jack_kept], dtype=float),
            alpha=config.alpha,
            method=config.method,
            discarded=discarded,
        )
    logger.info(
        "Bootstrap done: metrics=%s replicates=%s discarded=%s jackknife=%s",
        len(names),
        len(kept),
        discarded,
        len(jack_kept),
    )
    return PanelResult(estimates=estimates, replicates_used=len(kept), discarded=discarded)


def bca_interval(
    statistic: Callable[[np.ndarray], float],
    n: int,
    config: BootstrapConfig,
    labels: Optional[np.ndarray] = None,
) -> IntervalEstimate:
    result = bootstrap_panel(lambda rows: {"value": statistic(rows)}, n, config, labels=labels)
    return result.estimates["value"]


@dataclass
class HolmTest:
    id: str
    p: Optional[float]
    rank: Optional[int]
    adjusted_alpha: Optional[float]
    adjusted_p: Optional[float]
    rejected: bool
    exempt_reason: Optional[str] = None


@dataclass
class HolmFamily:
    alpha: float
    m: int
    tests: List[HolmTest]

    def get(self, test_id: str) -> HolmTest:
        for test in self.tests:
            if test.id == test_id:
                return test
        raise KeyError(test_id)

    @property
    def rejected_ids(self) -> List[str]:
        return [t.id for t in self.tests if t.rejected]


def holm_bonferroni(
    family: Sequence[Tuple[str, Optional[float]]],
    alpha: float = 0.05,
    exempt_reasons: Optional[Mapping[str, str]] = None,
) -> HolmFamily:
    """Holm step-down over (id, p) pairs.

    Tests with p=None are exempt: they count towards m but are never tested.
    """
    if not family:
        raise ConfigError("Holm family is empty")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    exempt_reasons = dict(exempt_reasons or {})
    m = len(family)
    tested = []
    exempt = []
    for test_id, p in family:
        if p is None:
            exempt.append(test_id)
            continue
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"p-value for {test_id} outside [0, 1]: {p}")
        tested.append((test_id, float(p)))
    tested.sort(key=lambda item: item[1])

    tests: List[HolmTest] = []
    still_rejecting = True
    running_adjusted = 0.0
    for rank, (test_id, p) in enumerate(tested, start=1):
        adjusted_alpha = alpha / (m - rank + 1)
        running_adjusted = max(running_adjusted, min(1.0, p * (m - rank + 1)))
        rejected = still_rejecting and p <= adjusted_alpha
        if not rejected:
            still_rejecting = False
        tests.append(
            HolmTest(
                id=test_id,
                p=p,
                rank=rank,
                adjusted_alpha=adjusted_alpha,
                adjusted_p=running_adjusted,
                rejected=rejected,
            )
        )
    for test_id in exempt:
        tests.append(
            HolmTest(
                id=test_id,
                p=None,
                rank=None,
                adjusted_alpha=None,
                adjusted_p=None,
                rejected=False,
                exempt_reason=exempt_reasons.get(test_id, "exempt"),
            )
        )
    return HolmFamily(alpha=alpha, m=m, tests=tests)


def min_holm_replicates(m: int, alpha: float = 0.05) -> int:
    """Smallest B whose p-value floor 1/(B+1) can reach the first Holm level alpha/m."""
    if m < 1:
        raise ConfigError("Holm family is empty")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return max(int(math.ceil(m / alpha - 1e-9)) - 1, 1)


BERNOULLI_KINDS = ("pss", "max_tfr", "boundary_width", "proportion")
CORRELATION_KINDS = ("spearman",)


def min_test_size(
    metric_kind: str,
    base_rate: float,
    deviation: float,
    power: float = 0.80,
    alpha: float = 0.05,
    max_n: int = 10_000_000,
) -> int:
    """Smallest n whose interval can resolve a `deviation` from `base_rate`.

    For rate metrics the half-width z*sqrt(p(1-p)/n) is evaluated at the rate
    one deviation inside the accept region, plus a power margin of
    z_power standard errors of the half-width itself. Correlations use the
    Fisher-z variance (1 + rho^2 / 2) / (n - 3).
    """
    if deviation <= 0.0:
        raise ConfigError("deviation must be positive")
    if not 0.0 < power < 1.0 or not 0.0 < alpha < 1.0:
        raise ConfigError("power and alpha must lie in (0, 1)")
    z = float(norm.ppf(1.0 - alpha / 2.0))
    z_power = float(norm.ppf(power))

    if metric_kind in BERNOULLI_KINDS:
        rate = base_rate - deviation
        if not 0.0 < base_rate < 1.0 or not 0.0 < rate < 1.0:
            raise ConfigError("base_rate minus deviation must stay inside (0, 1)")
        variance = rate * (1.0 - rate)
        slope = z * abs(1.0 - 2.0 * rate) / 2.0

        def resolves(n: int) -> bool:
            return z * math.sqrt(variance / n) + z_power * slope / n <= deviation

    elif metric_kind in CORRELATION_KINDS:
        rho = base_rate + deviation
        if not -1.0 < base_rate < 1.0 or not -1.0 < rho < 1.0:
            raise ConfigError("base_rate plus deviation must stay inside (-1, 1)")
        spread = (z + z_power) * (1.0 - rho * rho)
        factor = 1.0 + rho * rho / 2.0

        def resolves(n: int) -> bool:
            return n > 3 and spread * math.sqrt(factor / (n - 3)) <= deviation

    else:
        raise ConfigError(f"unknown metric kind {metric_kind!r}")

    high = 4
    while not resolves(high):
        high *= 2
        if high > max_n:
            raise ConfigError("required test size exceeds the search bound")
    low = high // 2
    while low < high:
        mid = (low + high) // 2
        if resolves(mid):
            high = mid
        else:
            low = mid + 1
    return high


def empirical_coverage(
    statistic: Callable[[np.ndarray], np.ndarray],
    true_value: float,
    trials: int,
    config: BootstrapConfig,
    sample_size: int = 200,
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None,
) -> float:
    """Share of simulated trials whose interval contains `true_value`.

    `statistic` is applied along the last axis, so it evaluates a whole stack
    of replicates at once (e.g. `lambda a: a.mean(axis=-1)`). Samples come from
    `sampler(rng, size)`, standard normal by default.
    """
    if trials < 100:
        raise ConfigError(f"coverage needs at least 100 trials, got {trials}")
    draw = sampler or (lambda rng, size: rng.standard_normal(size))
    hits = 0
    for trial in range(trials):
        rng = np.random.default_rng([config.seed, trial])
        sample = np.asarray(draw(rng, sample_size), dtype=float)
        point = float(statistic(sample))
        rows = rng.integers(0, sample_size, size=(config.replicates, sample_size))
        replicates = np.asarray(statistic(sample[rows]), dtype=float)
        jackknife = np.array([]) if config.method != BCA else np.asarray(
            statistic(np.stack([np.delete(sample, i) for i in range(sample_size)])), dtype=float
        )
        estimate = interval_from_replicates(point, replicates, jackknife, config.alpha, config.method)
        if not estimate.degenerate and estimate.lo <= true_value <= estimate.hi:
            hits += 1
    coverage = hits / trials
    logger.info("Coverage audit: trials=%s alpha=%s coverage=%.4f", trials, config.alpha, coverage)
    return coverage
