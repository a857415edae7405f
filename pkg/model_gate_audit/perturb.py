import configparser
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from model_gate_audit.cohort import BINARY_FLAG, CONTINUOUS, FeatureMatrix
from model_gate_audit.errors import ConfigError, SpecError


logger = logging.getLogger("model_gate_audit")

GAUSSIAN_NOISE = "gaussian_noise"
COLUMN_RESCALE = "column_rescale"
VALUE_MAP = "value_map"
SPEC_KINDS = (GAUSSIAN_NOISE, COLUMN_RESCALE, VALUE_MAP)

DEFAULT_NOISE_SIGMAS = (0.05, 0.10)
DEFAULT_RESCALE_FACTORS = (1.05, 1.06)
BATTERY_SECTION = "battery"


@dataclass(frozen=True)
class PerturbationSpec:
    id: str
    kind: str
    sigma: float = 0.0
    factor: float = 1.0
    column: Optional[str] = None
    # Noise targets; None means every continuous column.
    columns: Optional[Tuple[str, ...]] = None
    mapping: Dict[int, int] = field(default_factory=dict)
    seed_offset: int = 0
    clamp_to_observed_range: bool = False

    def __post_init__(self) -> None:
        if not self.id:
            raise SpecError("perturbation id must not be empty")
        if self.kind not in SPEC_KINDS:
            raise SpecError(f"{self.id}: unknown perturbation kind {self.kind!r}")
        if self.seed_offset < 0:
            raise SpecError(f"{self.id}: seed_offset must be non-negative")
        if self.kind == GAUSSIAN_NOISE and not self.sigma >= 0.0:
            raise SpecError(f"{self.id}: sigma must be non-negative, got {self.sigma}")
        if self.kind == COLUMN_RESCALE and not self.factor > 0.0:
            raise SpecError(f"{self.id}: factor must be positive, got {self.factor}")
        if self.kind in (COLUMN_RESCALE, VALUE_MAP) and not self.column:
            raise SpecError(f"{self.id}: {self.kind} needs a target column")

    def targets(self, X: FeatureMatrix) -> List[str]:
        if self.kind == GAUSSIAN_NOISE:
            if self.columns is None:
                return X.continuous_columns()
            return list(self.columns)
        return [str(self.column)]

    def describe(self) -> Dict[str, object]:
        described: Dict[str, object] = {"id": self.id, "kind": self.kind, "seed_offset": self.seed_offset}
        if self.kind == GAUSSIAN_NOISE:
            described["sigma"] = self.sigma
            described["columns"] = list(self.columns) if self.columns is not None else "continuous"
        elif self.kind == COLUMN_RESCALE:
            described["column"] = self.column
            described["factor"] = self.factor
        else:
            described["column"] = self.column
            described["mapping"] = {str(k): v for k, v in sorted(self.mapping.items())}
        if self.clamp_to_observed_range:
            described["clamp_to_observed_range"] = True
        return described


def _check_targets(spec: PerturbationSpec, X: FeatureMatrix, targets: Sequence[str]) -> List[int]:
    indices = []
    for name in targets:
        if name not in X.column_names:
            raise SpecError(f"{spec.id}: column {name!r} does not exist")
        kind = X.kind_of(name)
        if spec.kind in (GAUSSIAN_NOISE, COLUMN_RESCALE) and kind != CONTINUOUS:
            raise SpecError(f"{spec.id}: {spec.kind} needs a continuous column, {name!r} is {kind}")
        if spec.kind == VALUE_MAP and kind == CONTINUOUS:
            raise SpecError(f"{spec.id}: value_map needs a flag or categorical column, {name!r} is continuous")
        indices.append(X.index_of(name))
    return indices


def apply(
    spec: PerturbationSpec,
    X: FeatureMatrix,
    master_seed: int,
    column_sds: Optional[np.ndarray] = None,
) -> FeatureMatrix:
    """Return the perturbed copy of X; columns the spec does not target stay bit-identical.

    Noise is sigma times the column SD, taken from `column_sds` when given and
    from X otherwise.
    """
    indices = _check_targets(spec, X, spec.targets(X))
    values = np.array(X.values, copy=True)

    if spec.kind == GAUSSIAN_NOISE:
        if spec.sigma == 0.0 or not indices:
            return X
        rng = np.random.default_rng(int(master_seed) ^ int(spec.seed_offset))
        sds = X.values[:, indices].std(axis=0) if column_sds is None else np.asarray(column_sds)[indices]
        noise = rng.standard_normal((X.n, len(indices))) * (spec.sigma * sds)
        values[:, indices] = values[:, indices] + noise
    elif spec.kind == COLUMN_RESCALE:
        values[:, indices] = values[:, indices] * spec.factor
    else:
        j = indices[0]
        observed = {int(code) for code in np.unique(values[:, j])}
        missing = observed - set(spec.mapping)
        if missing:
            raise SpecError(f"{spec.id}: mapping does not cover observed codes {sorted(missing)}")
        if X.column_kinds[j] == BINARY_FLAG and not set(spec.mapping.values()) <= {0, 1}:
            raise SpecError(f"{spec.id}: a flag column can only map to 0/1")
        lookup = np.vectorize(lambda code: spec.mapping[int(code)], otypes=[float])
        values[:, j] = lookup(values[:, j]) if X.n else values[:, j]

    if spec.clamp_to_observed_range and X.n:
        low = X.values[:, indices].min(axis=0)
        high = X.values[:, indices].max(axis=0)
        values[:, indices] = np.clip(values[:, indices], low, high)
    return X.with_values(values)


@dataclass(frozen=True)
class PerturbationBattery:
    specs: Tuple[PerturbationSpec, ...]
    master_seed: int = 42

    def __post_init__(self) -> None:
        specs = tuple(self.specs)
        if not specs:
            raise ConfigError("perturbation battery is empty")
        ids = [spec.id for spec in specs]
        if len(set(ids)) != len(ids):
            raise SpecError(f"perturbation ids must be unique: {ids}")
        if self.master_seed < 0:
            raise SpecError("master_seed must be non-negative")
        object.__setattr__(self, "specs", specs)

    @property
    def ids(self) -> List[str]:
        return [spec.id for spec in self.specs]

    def get(self, spec_id: str) -> PerturbationSpec:
        for spec in self.specs:
            if spec.id == spec_id:
                return spec
        raise SpecError(f"unknown perturbation id {spec_id!r}")

    def without(self, spec_id: str) -> "PerturbationBattery":
        return PerturbationBattery(
            specs=tuple(s for s in self.specs if s.id != spec_id),
            master_seed=self.master_seed,
        )

    def apply_all(self, X: FeatureMatrix) -> Dict[str, FeatureMatrix]:
        perturbed = {}
        for spec in self.specs:
            perturbed[spec.id] = apply(spec, X, self.master_seed)
            logger.debug("Perturbation applied: id=%s kind=%s rows=%s", spec.id, spec.kind, X.n)
        return perturbed

    def describe(self) -> Dict[str, object]:
        return {
            "master_seed": self.master_seed,
            "specs": [spec.describe() for spec in self.specs],
        }


def _format_factor(value: float) -> str:
    return f"{value:.2f}"


def default_battery(
    continuous_columns: Sequence[str],
    rescale_column: Optional[str],
    master_seed: int = 42,
) -> PerturbationBattery:
    if not rescale_column:
        raise SpecError("default battery needs a rescale column")
    specs: List[PerturbationSpec] = []
    offset = 1
    if continuous_columns:
        for sigma in DEFAULT_NOISE_SIGMAS:
            specs.append(
                PerturbationSpec(
                    id=f"noise_{_format_factor(sigma)}",
                    kind=GAUSSIAN_NOISE,
                    sigma=sigma,
                    columns=tuple(continuous_columns),
                    seed_offset=offset,
                )
            )
            offset += 1
    else:
        message = "No continuous columns: default battery holds the rescales only"
        logger.warning(message)
        warnings.warn(message, UserWarning, stacklevel=2)
        offset += len(DEFAULT_NOISE_SIGMAS)
    for factor in DEFAULT_RESCALE_FACTORS:
        specs.append(
            PerturbationSpec(
                id=f"rescale_{rescale_column}_{_format_factor(factor)}",
                kind=COLUMN_RESCALE,
                factor=factor,
                column=rescale_column,
                seed_offset=offset,
            )
        )
        offset += 1
    return PerturbationBattery(specs=tuple(specs), master_seed=master_seed)


def _parse_mapping(raw: str, spec_id: str) -> Dict[int, int]:
    mapping: Dict[int, int] = {}
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        source, sep, target = part.partition(":")
        if not sep:
            raise SpecError(f"{spec_id}: mapping entry {part!r} is not 'from:to'")
        try:
            mapping[int(source)] = int(target)
        except ValueError as exc:
            raise SpecError(f"{spec_id}: mapping entry {part!r} is not integer") from exc
    return mapping


def _parse_columns(raw: Optional[str]) -> Optional[Tuple[str, ...]]:
    if raw is None:
        return None
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def battery_from_ini(text: str, master_seed: int = 42) -> PerturbationBattery:
    """Build a battery from INI text: one section per spec, `[battery]` for shared keys."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise SpecError(f"invalid battery file: {exc}") from exc
    if parser.has_section(BATTERY_SECTION):
        master_seed = parser.getint(BATTERY_SECTION, "master_seed", fallback=master_seed)
    specs = []
    for offset, spec_id in enumerate(s for s in parser.sections() if s != BATTERY_SECTION):
        section = parser[spec_id]
        kind = section.get("kind", "").strip()
        try:
            specs.append(
                PerturbationSpec(
                    id=spec_id,
                    kind=kind,
                    sigma=section.getfloat("sigma", fallback=0.0),
                    factor=section.getfloat("factor", fallback=1.0),
                    column=section.get("column"),
                    columns=_parse_columns(section.get("columns")),
                    mapping=_parse_mapping(section.get("mapping", ""), spec_id),
                    seed_offset=section.getint("seed_offset", fallback=offset + 1),
                    clamp_to_observed_range=section.getboolean("clamp_to_observed_range", fallback=False),
                )
            )
        except ValueError as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"{spec_id}: {exc}") from exc
    return PerturbationBattery(specs=tuple(specs), master_seed=master_seed)


def load_battery(path: Union[str, Path], master_seed: int = 42) -> PerturbationBattery:
    battery = battery_from_ini(Path(path).read_text(encoding="utf-8"), master_seed=master_seed)
    logger.info("Battery loaded: path=%s specs=%s", path, ",".join(battery.ids))
    return battery
