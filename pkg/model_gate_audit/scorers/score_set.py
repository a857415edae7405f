import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from model_gate_audit.cohort import Cohort
from model_gate_audit.errors import AlignmentError, RangeError, SchemaError


logger = logging.getLogger("model_gate_audit")

PERTURBED_PREFIX = "score@"


@dataclass(frozen=True)
class ScoreSet:
    """Precomputed scores aligned to a cohort's row order."""

    row_ids: np.ndarray
    baseline: np.ndarray
    perturbed: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.baseline.shape[0])


def _check_range(values: np.ndarray, column: str) -> None:
    if not np.all(np.isfinite(values)) or np.any(values < 0.0) or np.any(values > 1.0):
        raise RangeError(f"column {column!r} holds scores outside [0, 1]")


def load_score_set(path: Union[str, Path], cohort: Cohort) -> ScoreSet:
    path = Path(path)
    frame = pd.read_csv(path, encoding="utf-8", dtype={"id": str}, float_precision="round_trip")
    for column in ("id", "score"):
        if column not in frame.columns:
            raise SchemaError(f"score file {path.name} has no {column!r} column")
    if frame["id"].isna().any():
        raise AlignmentError("score file has rows without an id")
    ids = frame["id"].astype(str)
    duplicated = ids[ids.duplicated()].unique()
    if len(duplicated):
        raise AlignmentError(f"duplicate ids in score file: {', '.join(duplicated[:5])}")
    known = set(cohort.row_ids)
    unknown = [i for i in ids if i not in known]
    if unknown:
        raise AlignmentError(f"score file has ids not in the cohort: {', '.join(unknown[:5])}")
    if len(ids) != cohort.n:
        missing = sorted(known - set(ids))
        raise AlignmentError(f"score file is missing cohort ids: {', '.join(missing[:5])}")

    score_columns = ["score"] + [c for c in frame.columns if str(c).startswith(PERTURBED_PREFIX)]
    aligned = frame.set_index(ids)[score_columns].reindex(cohort.row_ids)
    vectors: Dict[str, np.ndarray] = {}
    for column in score_columns:
        try:
            values = pd.to_numeric(aligned[column], errors="raise").to_numpy(dtype=float)
        except (TypeError, ValueError) as exc:
            raise RangeError(f"column {column!r} holds non-numeric scores") from exc
        _check_range(values, column)
        values.flags.writeable = False
        vectors[column] = values
    score_set = ScoreSet(
        row_ids=np.array(cohort.row_ids),
        baseline=vectors.pop("score"),
        perturbed={column[len(PERTURBED_PREFIX):]: v for column, v in vectors.items()},
    )
    logger.info(
        "Score set loaded: path=%s n=%s perturbations=%s",
        path,
        score_set.n,
        ",".join(score_set.perturbed) or "-",
    )
    return score_set


def write_score_set(
    path: Union[str, Path],
    row_ids: Sequence[str],
    baseline: np.ndarray,
    perturbed: Mapping[str, np.ndarray],
) -> None:
    data: Dict[str, object] = {"id": np.asarray(row_ids).astype(str), "score": np.asarray(baseline)}
    for spec_id, values in perturbed.items():
        data[f"{PERTURBED_PREFIX}{spec_id}"] = np.asarray(values)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(data).to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
