"""Per-patient feature attributions: exact for the logistic baseline, sampled for any scorer."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logit

from model_gate_audit.cohort import CONTINUOUS, Cohort, FeatureMatrix
from model_gate_audit.errors import AlignmentError, ConfigError, SchemaError
from model_gate_audit.metrics import top3_consistency
from model_gate_audit.scorers.base import Scorer
from model_gate_audit.scorers.logistic import LogisticBaseline


logger = logging.getLogger("model_gate_audit")

LINEAR_EXACT = "linear_exact"
SHAPLEY_SAMPLED = "shapley_sampled"
EXTERNAL = "external"

LINKS = ("identity", "logit")
MIN_PERMUTATIONS = 16
LOGIT_EPS = 1e-12


@dataclass(frozen=True)
class AttributionMatrix:
    values: np.ndarray
    feature_names: Tuple[str, ...]
    provider: str
    reference: Optional[np.ndarray] = None
    params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.feature_names):
            raise SchemaError("attribution matrix does not match its feature names")
        if not np.all(np.isfinite(values)):
            raise SchemaError("attribution matrix contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def take(self, rows: np.ndarray) -> "AttributionMatrix":
        return AttributionMatrix(
            values=self.values[np.asarray(rows, dtype=int)],
            feature_names=self.feature_names,
            provider=self.provider,
            reference=self.reference,
            params=self.params,
        )

    def top3(self) -> Tuple[float, Tuple[str, str, str]]:
        return top3_consistency(self.values, self.feature_names)

    def describe(self) -> Dict[str, object]:
        return {"provider": self.provider, **self.params}


def background_reference(background: FeatureMatrix) -> np.ndarray:
    """Column means for continuous columns, the most frequent code otherwise.

    Ties between codes go to the smallest code.
    """
    if background.n < 1:
        raise ConfigError("background must hold at least one row")
    reference = background.values.mean(axis=0)
    for j, kind in enumerate(background.column_kinds):
        if kind != CONTINUOUS:
            codes, counts = np.unique(background.values[:, j], return_counts=True)
            reference[j] = codes[int(np.argmax(counts))]
    return reference


def linear_attributions(
    model: LogisticBaseline,
    X: FeatureMatrix,
    reference: Optional[np.ndarray] = None,
) -> AttributionMatrix:
    """w_j * (z_ij - z_ref_j) on the standardized scale; defaults to the training means.

    These are the exact Shapley values of the logit, so each row sums to
    logit(x_i) - logit(reference).
    """
    Z = model.standardize(X)
    ref = model.means if reference is None else np.asarray(reference, dtype=float)
    if ref.shape != model.means.shape:
        raise ConfigError("reference does not match the model's feature count")
    z_ref = (ref - model.means) / model.sds
    return AttributionMatrix(
        values=(Z - z_ref) * model.weights,
        feature_names=tuple(model.feature_names),
        provider=LINEAR_EXACT,
        reference=ref,
        params={"reference": "training_means" if reference is None else "supplied"},
    )


def shapley_sampled(
    scorer: Scorer,
    X: FeatureMatrix,
    background: FeatureMatrix,
    k: int = 64,
    seed: int = 42,
    link: str = "identity",
) -> AttributionMatrix:
    """Permutation-sampling Shapley values against a single background reference.

    Row i uses its own stream (seed, i), so rows can be attributed in any order.
    """
    if k < MIN_PERMUTATIONS:
        raise ConfigError(f"shapley_sampled needs k >= {MIN_PERMUTATIONS}, got {k}")
    if link not in LINKS:
        raise ConfigError(f"unknown link {link!r}")
    if background.layout() != X.layout():
        raise ConfigError("background layout does not match the attributed matrix")
    reference = background_reference(background)
    d = X.d
    steps = np.arange(d + 1)[None, :, None]
    values = np.zeros((X.n, d))

    for i in range(X.n):
        rng = np.random.default_rng([seed, i])
        order = np.argsort(rng.random((k, d)), axis=1)
        position = np.argsort(order, axis=1)
        # Step t switches the first t features of each ordering to the patient's values.
        points = np.where(position[:, None, :] < steps, X.values[i], reference)
        scores = scorer.score(X.with_values(points.reshape(k * (d + 1), d))).reshape(k, d + 1)
        if link == "logit":
            scores = logit(np.clip(scores, LOGIT_EPS, 1.0 - LOGIT_EPS))
        contributions = np.diff(scores, axis=1)
        values[i] = np.take_along_axis(contributions, position, axis=1).mean(axis=0)

    logger.info("Sampled attributions done: rows=%s features=%s k=%s link=%s", X.n, d, k, link)
    return AttributionMatrix(
        values=values,
        feature_names=X.column_names,
        provider=SHAPLEY_SAMPLED,
        reference=reference,
        params={"k": k, "seed": seed, "link": link},
    )


def write_attributions(path: Union[str, Path], attributions: AttributionMatrix, row_ids: Sequence[str]) -> None:
    if len(row_ids) != attributions.n:
        raise AlignmentError("row ids do not match the attribution rows")
    frame = pd.DataFrame(attributions.values, columns=list(attributions.feature_names))
    frame.insert(0, "id", np.asarray(row_ids).astype(str))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


def load_attributions(path: Union[str, Path], cohort: Cohort) -> AttributionMatrix:
    """Read an `id,<feature>...` attribution CSV aligned to the cohort rows."""
    path = Path(path)
    frame = pd.read_csv(path, encoding="utf-8", dtype={"id": str}, float_precision="round_trip")
    if "id" not in frame.columns:
        raise SchemaError(f"attribution file {path.name} has no 'id' column")
    ids = frame["id"].astype(str)
    if ids.duplicated().any():
        raise AlignmentError("duplicate ids in attribution file")
    if set(ids) != set(cohort.row_ids):
        raise AlignmentError("attribution file ids do not match the cohort ids")
    features = [c for c in frame.columns if c != "id"]
    aligned = frame.set_index(ids)[features].reindex(cohort.row_ids)
    return AttributionMatrix(
        values=aligned.to_numpy(dtype=float),
        feature_names=tuple(str(c) for c in features),
        provider=EXTERNAL,
        params={"source": path.name},
    )
