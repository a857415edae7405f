import configparser
import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit, logit
from sklearn.model_selection import train_test_split

from model_gate_audit.errors import (
    EmptyCohortError,
    InvalidConfigError,
    SchemaError,
    StratificationError,
)


logger = logging.getLogger("model_gate_audit")

PACKAGE_RESOURCES = "model_gate_audit.resources.cohort"

CONTINUOUS = "continuous"
BINARY_FLAG = "binary_flag"
CATEGORICAL_CODE = "categorical_code"
COLUMN_KINDS = (CONTINUOUS, BINARY_FLAG, CATEGORICAL_CODE)

# CSV schema roles -> feature kinds.
FEATURE_ROLES = {
    "feature:continuous": CONTINUOUS,
    "feature:flag": BINARY_FLAG,
    "feature:categorical": CATEGORICAL_CODE,
}

AGE_BAND_BOUNDS = {
    "18-44": (18.0, 45.0),
    "45-64": (45.0, 65.0),
    "65-74": (65.0, 75.0),
    "75+": (75.0, 95.0),
}

# (flag, base prevalence) for the nine chronic conditions.
CHRONIC_CONDITIONS = (
    ("chf", 0.10),
    ("copd", 0.12),
    ("diabetes", 0.22),
    ("ckd", 0.12),
    ("hypertension", 0.45),
    ("cancer", 0.08),
    ("dementia", 0.06),
    ("stroke", 0.07),
    ("depression", 0.15),
)

# Latent outcome logit on standardized features. Age, prior hospitalizations,
# CCI, ED visits and CHF carry the weight.
OUTCOME_COEFFICIENTS = {
    "age": 1.6,
    "prior_hospitalizations": 0.9,
    "cci": 0.8,
    "ed_visits": 0.6,
    "chf": 0.7,
    "diabetes": 0.2,
    "ckd": 0.2,
    "copd": 0.15,
}
OUTCOME_NOISE_SD = 1.0

MARGINAL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    column_names: Tuple[str, ...]
    column_kinds: Tuple[str, ...]
    codebooks: Dict[str, Dict[int, str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            raise SchemaError(f"feature matrix must be 2-d, got shape {values.shape}")
        names = tuple(str(name) for name in self.column_names)
        kinds = tuple(self.column_kinds)
        if values.shape[1] < 1:
            raise SchemaError("feature matrix needs at least one column")
        if len(names) != values.shape[1] or len(kinds) != values.shape[1]:
            raise SchemaError(
                f"column metadata does not match matrix width {values.shape[1]}"
            )
        if len(set(names)) != len(names):
            raise SchemaError("feature column names must be unique")
        for name, kind in zip(names, kinds):
            if kind not in COLUMN_KINDS:
                raise SchemaError(f"column {name!r} has unknown kind {kind!r}")
        if not np.all(np.isfinite(values)):
            raise SchemaError("feature matrix contains missing or non-finite values")
        for j, kind in enumerate(kinds):
            if kind == BINARY_FLAG and not np.all(np.isin(values[:, j], (0.0, 1.0))):
                raise SchemaError(f"binary flag column {names[j]!r} holds values other than 0/1")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "column_kinds", kinds)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])

    def index_of(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown feature column {name!r}") from None

    def kind_of(self, name: str) -> str:
        return self.column_kinds[self.index_of(name)]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index_of(name)]

    def continuous_columns(self) -> List[str]:
        return [n for n, k in zip(self.column_names, self.column_kinds) if k == CONTINUOUS]

    def take(self, rows: np.ndarray) -> "FeatureMatrix":
        return self.with_values(self.values[np.asarray(rows, dtype=int)])

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(
            values=values,
            column_names=self.column_names,
            column_kinds=self.column_kinds,
            codebooks=self.codebooks,
        )

    def layout(self) -> Tuple[Tuple[str, str], ...]:
        return tuple(zip(self.column_names, self.column_kinds))


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Cohort:
    features: FeatureMatrix
    labels: np.ndarray
    subgroups: Dict[str, np.ndarray]
    need_proxies: Dict[str, np.ndarray]
    row_ids: np.ndarray

    def __post_init__(self) -> None:
        n = self.features.n
        if n < 1:
            raise EmptyCohortError("cohort has no rows")
        labels = np.asarray(self.labels)
        if labels.shape != (n,):
            raise SchemaError(f"labels have length {labels.size}, expected {n}")
        if not np.all(np.isin(labels, (0, 1))):
            raise SchemaError("labels must be binary 0/1")
        row_ids = np.asarray(self.row_ids).astype(str)
        if row_ids.shape != (n,):
            raise SchemaError(f"row_ids have length {row_ids.size}, expected {n}")
        if len(np.unique(row_ids)) != n:
            raise SchemaError("row_ids must be unique")
        subgroups: Dict[str, np.ndarray] = {}
        for attribute, keys in self.subgroups.items():
            keys = np.asarray(keys, dtype=object)
            if keys.shape != (n,):
                raise SchemaError(f"subgroup {attribute!r} has length {keys.size}, expected {n}")
            if any(k is None or (isinstance(k, float) and np.isnan(k)) or k == "" for k in keys):
                raise SchemaError(f"subgroup {attribute!r} leaves rows without a group key")
            subgroups[attribute] = _frozen(keys.astype(str))
        proxies: Dict[str, np.ndarray] = {}
        for name, values in self.need_proxies.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (n,):
                raise SchemaError(f"proxy {name!r} has length {values.size}, expected {n}")
            if not np.all(np.isfinite(values)):
                raise SchemaError(f"proxy {name!r} contains non-finite values")
            proxies[name] = _frozen(values)
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int8)))
        object.__setattr__(self, "row_ids", _frozen(row_ids))
        object.__setattr__(self, "subgroups", subgroups)
        object.__setattr__(self, "need_proxies", proxies)

    @property
    def n(self) -> int:
        return self.features.n

    @property
    def prevalence(self) -> float:
        return float(np.mean(self.labels))

    def take(self, rows: Sequence[int]) -> "Cohort":
        rows = np.asarray(rows, dtype=int)
        return Cohort(
            features=self.features.take(rows),
            labels=self.labels[rows],
            subgroups={k: v[rows] for k, v in self.subgroups.items()},
            need_proxies={k: v[rows] for k, v in self.need_proxies.items()},
            row_ids=self.row_ids[rows],
        )


@dataclass
class CohortGenConfig:
    n: int
    seed: int
    age_band: Dict[str, float]
    sex: Dict[str, float]
    race: Dict[str, float]
    insurance: Dict[str, float]
    cci_mean: float
    cci_sd: float
    bmi_mean: float
    bmi_sd: float
    deprivation_mean: float
    deprivation_sd: float
    positive_fraction: float = 0.30

    def validate(self) -> None:
        if self.n < 1:
            raise InvalidConfigError(f"n must be at least 1, got {self.n}")
        if not 0.0 < self.positive_fraction < 1.0:
            raise InvalidConfigError(
                f"positive_fraction must lie in (0, 1), got {self.positive_fraction}"
            )
        for name in ("age_band", "sex", "race", "insurance"):
            marginal = getattr(self, name)
            if not marginal:
                raise InvalidConfigError(f"{name} marginal is empty")
            if any(p < 0 for p in marginal.values()):
                raise InvalidConfigError(f"{name} marginal has negative probabilities")
            total = sum(marginal.values())
            if abs(total - 1.0) > MARGINAL_TOLERANCE:
                raise InvalidConfigError(f"{name} marginal sums to {total!r}, expected 1")
        unknown = set(self.age_band) - set(AGE_BAND_BOUNDS)
        if unknown:
            raise InvalidConfigError(f"unknown age bands: {', '.join(sorted(unknown))}")
        if "Female" not in self.sex:
            raise InvalidConfigError("sex marginal must include 'Female'")
        for name in ("cci_sd", "bmi_sd", "deprivation_sd"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be non-negative")


def _read_marginal(parser: configparser.ConfigParser, section: str) -> Dict[str, float]:
    if not parser.has_section(section):
        raise InvalidConfigError(f"cohort config is missing section [{section}]")
    try:
        return {key: float(value) for key, value in parser.items(section)}
    except ValueError as exc:
        raise InvalidConfigError(f"[{section}] holds a non-numeric probability") from exc


def cohort_config_from_ini(text: str, n: int, seed: int) -> CohortGenConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text)
        clinical = {key: float(value) for key, value in parser.items("clinical")}
        positive_fraction = parser.getfloat("cohort", "positive_fraction", fallback=0.30)
    except (configparser.Error, ValueError) as exc:
        raise InvalidConfigError(f"invalid cohort config: {exc}") from exc
    try:
        config = CohortGenConfig(
            n=n,
            seed=seed,
            positive_fraction=positive_fraction,
            age_band=_read_marginal(parser, "age_band"),
            sex=_read_marginal(parser, "sex"),
            race=_read_marginal(parser, "race"),
            insurance=_read_marginal(parser, "insurance"),
            **clinical,
        )
    except TypeError as exc:
        raise InvalidConfigError(f"invalid [clinical] section: {exc}") from exc
    config.validate()
    return config


def default_cohort_config(n: int = 10000, seed: int = 42) -> CohortGenConfig:
    text = resources.files(PACKAGE_RESOURCES).joinpath("synthetic.ini").read_text(
        encoding="utf-8"
    )
    return cohort_config_from_ini(text, n=n, seed=seed)


def _standardize(values: np.ndarray) -> np.ndarray:
    sd = float(np.std(values))
    if sd == 0.0:
        sd = 1.0
    return (values - float(np.mean(values))) / sd


def _draw_codes(rng: np.random.Generator, marginal: Dict[str, float], n: int) -> np.ndarray:
    return rng.choice(len(marginal), size=n, p=list(marginal.values()))


def _count_with_moments(rng: np.random.Generator, mean: float, sd: float, n: int) -> np.ndarray:
    variance = sd * sd
    if mean <= 0:
        return np.zeros(n)
    if variance <= mean:
        return rng.poisson(mean, size=n).astype(float)
    # Negative binomial with the requested mean and variance.
    r = mean * mean / (variance - mean)
    return rng.negative_binomial(r, r / (r + mean), size=n).astype(float)


def generate_synthetic(config: CohortGenConfig) -> Cohort:
    config.validate()
    n = config.n
    rng = np.random.default_rng(config.seed)

    band_names = list(config.age_band)
    band_codes = _draw_codes(rng, config.age_band, n)
    bounds = np.array([AGE_BAND_BOUNDS[name] for name in band_names])
    age = np.round(rng.uniform(bounds[band_codes, 0], bounds[band_codes, 1]), 1)
    age = np.minimum(age, bounds[band_codes, 1] - 0.1)

    sex_names = list(config.sex)
    sex_codes = _draw_codes(rng, config.sex, n)
    female = (sex_codes == sex_names.index("Female")).astype(float)
    race_codes = _draw_codes(rng, config.race, n)
    insurance_codes = _draw_codes(rng, config.insurance, n)

    cci = _count_with_moments(rng, config.cci_mean, config.cci_sd, n)
    age_z = _standardize(age)
    cci_z = _standardize(cci)

    flags: Dict[str, np.ndarray] = {}
    for name, base in CHRONIC_CONDITIONS:
        p = expit(logit(base) + 0.5 * cci_z + 0.4 * age_z)
        flags[name] = (rng.random(n) < p).astype(float)

    prior_hospitalizations = rng.poisson(0.3 * np.exp(0.35 * cci_z + 0.25 * age_z)).astype(float)
    ed_visits = rng.poisson(0.6 * np.exp(0.3 * cci_z)).astype(float)
    outpatient_visits = rng.poisson(4.0 * np.exp(0.2 * cci_z)).astype(float)
    bmi = np.round(np.clip(rng.normal(config.bmi_mean, config.bmi_sd, n), 15.0, 60.0), 1)
    systolic_bp = np.round(np.clip(rng.normal(128.0 + 4.0 * age_z, 16.0), 85.0, 210.0))
    deprivation = np.round(
        np.clip(rng.normal(config.deprivation_mean, config.deprivation_sd, n), 0.0, 100.0), 1
    )

    columns: List[Tuple[str, str, np.ndarray]] = [
        ("age", CONTINUOUS, age),
        ("female", BINARY_FLAG, female),
        ("race", CATEGORICAL_CODE, race_codes.astype(float)),
        ("insurance", CATEGORICAL_CODE, insurance_codes.astype(float)),
    ]
    columns.extend((name, BINARY_FLAG, flags[name]) for name, _ in CHRONIC_CONDITIONS)
    columns.extend(
        [
            ("cci", CONTINUOUS, cci),
            ("prior_hospitalizations", CONTINUOUS, prior_hospitalizations),
            ("ed_visits", CONTINUOUS, ed_visits),
            ("outpatient_visits", CONTINUOUS, outpatient_visits),
            ("bmi", CONTINUOUS, bmi),
            ("systolic_bp", CONTINUOUS, systolic_bp),
            ("deprivation_index", CONTINUOUS, deprivation),
        ]
    )
    by_name = {name: values for name, _, values in columns}

    latent = rng.normal(0.0, OUTCOME_NOISE_SD, n)
    for name, weight in OUTCOME_COEFFICIENTS.items():
        values = by_name[name]
        latent = latent + weight * (values if name in flags else _standardize(values))
    positives = int(round(n * config.positive_fraction))
    labels = np.zeros(n, dtype=np.int8)
    labels[np.argsort(-latent, kind="stable")[:positives]] = 1

    features = FeatureMatrix(
        values=np.column_stack([values for _, _, values in columns]),
        column_names=tuple(name for name, _, _ in columns),
        column_kinds=tuple(kind for _, kind, _ in columns),
        codebooks={
            "race": dict(enumerate(config.race)),
            "insurance": dict(enumerate(config.insurance)),
        },
    )
    cohort = Cohort(
        features=features,
        labels=labels,
        subgroups={
            "age_band": np.array(band_names, dtype=object)[band_codes],
            "sex": np.array(sex_names, dtype=object)[sex_codes],
            "race": np.array(list(config.race), dtype=object)[race_codes],
            "insurance": np.array(list(config.insurance), dtype=object)[insurance_codes],
        },
        need_proxies={"cci": cci},
        row_ids=np.array([f"P{i:06d}" for i in range(n)]),
    )
    logger.info(
        "Synthetic cohort generated: n=%s seed=%s positives=%s features=%s",
        n,
        config.seed,
        positives,
        features.d,
    )
    return cohort


@dataclass
class CohortSchema:
    columns: Dict[str, str]
    codebooks: Dict[str, Dict[int, str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        labels = [c for c, role in self.columns.items() if role == "label"]
        if len(labels) != 1:
            raise SchemaError(f"schema must name exactly one label column, found {len(labels)}")
        ids = [c for c, role in self.columns.items() if role == "id"]
        if len(ids) > 1:
            raise SchemaError("schema names more than one id column")
        for column, role in self.columns.items():
            if role in FEATURE_ROLES or role in ("label", "id"):
                continue
            prefix, _, name = role.partition(":")
            if prefix not in ("subgroup", "proxy") or not name:
                raise SchemaError(f"column {column!r} has unknown role {role!r}")
        if not self.feature_columns():
            raise SchemaError("schema declares no feature columns")

    @property
    def label_column(self) -> str:
        return next(c for c, role in self.columns.items() if role == "label")

    @property
    def id_column(self) -> Optional[str]:
        return next((c for c, role in self.columns.items() if role == "id"), None)

    def feature_columns(self) -> List[Tuple[str, str]]:
        return [(c, FEATURE_ROLES[r]) for c, r in self.columns.items() if r in FEATURE_ROLES]

    def tagged(self, prefix: str) -> List[Tuple[str, str]]:
        tagged = []
        for column, role in self.columns.items():
            head, _, name = role.partition(":")
            if head == prefix:
                tagged.append((column, name))
        return tagged

    @classmethod
    def from_mapping(cls, payload: Mapping[str, object]) -> "CohortSchema":
        columns = payload.get("columns")
        if not isinstance(columns, dict):
            raise SchemaError("schema must hold a 'columns' object")
        codebooks: Dict[str, Dict[int, str]] = {}
        raw_books = payload.get("codebooks") or {}
        if not isinstance(raw_books, dict):
            raise SchemaError("'codebooks' must be an object")
        for column, book in raw_books.items():
            try:
                codebooks[str(column)] = {int(code): str(label) for code, label in dict(book).items()}
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"codebook for {column!r} must map integer codes") from exc
        return cls(columns={str(k): str(v) for k, v in columns.items()}, codebooks=codebooks)

    def to_mapping(self) -> Dict[str, object]:
        return {
            "columns": dict(self.columns),
            "codebooks": {
                column: {str(code): label for code, label in book.items()}
                for column, book in self.codebooks.items()
            },
        }


def read_schema(path: Union[str, Path]) -> CohortSchema:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise SchemaError("schema file must hold a JSON object")
    return CohortSchema.from_mapping(payload)


@dataclass
class LoadedCohort:
    cohort: Cohort
    dropped_rows: int
    content_sha256: str


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    try:
        return pd.to_numeric(frame[column], errors="raise").to_numpy(dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"column {column!r} is not numeric") from exc


def _encode_categorical(
    frame: pd.DataFrame,
    column: str,
    codebook: Optional[Dict[int, str]],
) -> Tuple[np.ndarray, Dict[int, str]]:
    raw = frame[column]
    numeric = pd.to_numeric(raw, errors="coerce")
    if numeric.notna().all():
        codes = numeric.to_numpy(dtype=float)
        if not np.all(codes == np.round(codes)):
            raise SchemaError(f"categorical column {column!r} holds non-integer codes")
        book = dict(codebook or {int(c): str(int(c)) for c in np.unique(codes)})
        unknown = set(int(c) for c in np.unique(codes)) - set(book)
        if unknown:
            raise SchemaError(f"categorical column {column!r} has codes missing from its codebook")
        return codes, book
    labels = raw.astype(str)
    if codebook:
        inverse = {label: code for code, label in codebook.items()}
        missing = sorted(set(labels) - set(inverse))
        if missing:
            raise SchemaError(f"categorical column {column!r} has labels missing from its codebook")
        return labels.map(inverse).to_numpy(dtype=float), dict(codebook)
    book = dict(enumerate(sorted(set(labels))))
    inverse = {label: code for code, label in book.items()}
    return labels.map(inverse).to_numpy(dtype=float), book


def load_cohort_csv(path: Union[str, Path], schema: CohortSchema) -> LoadedCohort:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"cohort file not found: {path}")
    string_columns = [c for c, role in schema.columns.items() if role == "id" or role.startswith("subgroup:")]
    frame = pd.read_csv(path, encoding="utf-8", dtype={c: str for c in string_columns})
    missing = [c for c in schema.columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"declared columns absent from {path.name}: {', '.join(missing)}")

    selected = list(schema.columns)
    complete = frame[selected].notna().all(axis=1)
    dropped = int((~complete).sum())
    frame = frame.loc[complete].reset_index(drop=True)
    if dropped:
        logger.warning("Complete-case filter dropped %s of %s rows from %s", dropped, dropped + len(frame), path)
    if frame.empty:
        raise EmptyCohortError(f"no complete rows left in {path}")

    label_values = pd.to_numeric(frame[schema.label_column], errors="coerce")
    if label_values.isna().any() or not label_values.isin((0, 1)).all():
        raise SchemaError(f"label column {schema.label_column!r} must contain only 0 and 1")

    values = []
    names = []
    kinds = []
    codebooks: Dict[str, Dict[int, str]] = {}
    for column, kind in schema.feature_columns():
        if kind == CATEGORICAL_CODE:
            codes, book = _encode_categorical(frame, column, schema.codebooks.get(column))
            codebooks[column] = book
            values.append(codes)
        else:
            column_values = _numeric(frame, column)
            if kind == BINARY_FLAG and not np.all(np.isin(column_values, (0.0, 1.0))):
                raise SchemaError(f"flag column {column!r} must contain only 0 and 1")
            values.append(column_values)
        names.append(column)
        kinds.append(kind)

    id_column = schema.id_column
    if id_column:
        row_ids = frame[id_column].astype(str).to_numpy()
        if len(set(row_ids)) != len(row_ids):
            raise SchemaError(f"id column {id_column!r} holds duplicate ids")
    else:
        row_ids = np.array([f"row-{i}" for i in range(len(frame))])

    cohort = Cohort(
        features=FeatureMatrix(
            values=np.column_stack(values),
            column_names=tuple(names),
            column_kinds=tuple(kinds),
            codebooks=codebooks,
        ),
        labels=label_values.to_numpy(dtype=np.int8),
        subgroups={name: frame[c].astype(str).to_numpy(dtype=object) for c, name in schema.tagged("subgroup")},
        need_proxies={name: _numeric(frame, c) for c, name in schema.tagged("proxy")},
        row_ids=row_ids,
    )
    logger.info(
        "Cohort loaded: path=%s n=%s dropped=%s features=%s prevalence=%.4f",
        path,
        cohort.n,
        dropped,
        cohort.features.d,
        cohort.prevalence,
    )
    return LoadedCohort(cohort=cohort, dropped_rows=dropped, content_sha256=file_sha256(path))


def cohort_schema(cohort: Cohort) -> CohortSchema:
    columns: Dict[str, str] = {"id": "id"}
    role_of = {kind: role for role, kind in FEATURE_ROLES.items()}
    for name, kind in cohort.features.layout():
        columns[name] = role_of[kind]
    columns["label"] = "label"
    for attribute in cohort.subgroups:
        columns[f"{attribute}_group"] = f"subgroup:{attribute}"
    for name in cohort.need_proxies:
        columns[f"need_{name}"] = f"proxy:{name}"
    return CohortSchema(columns=columns, codebooks=dict(cohort.features.codebooks))


def write_cohort_csv(cohort: Cohort, path: Union[str, Path]) -> Path:
    """Write the cohort as CSV plus a `<name>.schema.json` sidecar; returns the sidecar path."""
    path = Path(path)
    schema = cohort_schema(cohort)
    data: Dict[str, object] = {"id": cohort.row_ids}
    for j, (name, kind) in enumerate(cohort.features.layout()):
        column = cohort.features.values[:, j]
        data[name] = column if kind == CONTINUOUS else column.astype(np.int64)
    data["label"] = cohort.labels.astype(np.int64)
    for attribute, keys in cohort.subgroups.items():
        data[f"{attribute}_group"] = keys
    for name, values in cohort.need_proxies.items():
        data[f"need_{name}"] = values
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(data).to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    sidecar = path.with_name(path.stem + ".schema.json")
    sidecar.write_text(json.dumps(schema.to_mapping(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def stratified_split(cohort: Cohort, test_fraction: float, seed: int) -> Tuple[Cohort, Cohort]:
    if not 0.0 < test_fraction < 1.0:
        raise InvalidConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if len(np.unique(cohort.labels)) < 2:
        raise StratificationError("cannot stratify a single-class cohort")
    indices = np.arange(cohort.n)
    try:
        train_idx, test_idx = train_test_split(
            indices,
            test_size=test_fraction,
            stratify=cohort.labels,
            random_state=seed,
        )
    except ValueError as exc:
        raise StratificationError(str(exc)) from exc
    train, test = cohort.take(np.sort(train_idx)), cohort.take(np.sort(test_idx))
    logger.info(
        "Stratified split: seed=%s train=%s test=%s test_prevalence=%.4f",
        seed,
        train.n,
        test.n,
        test.prevalence,
    )
    return train, test
