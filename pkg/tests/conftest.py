import itertools

import numpy as np
import pytest

from model_gate_audit.cohort import (
    BINARY_FLAG,
    CATEGORICAL_CODE,
    CONTINUOUS,
    Cohort,
    FeatureMatrix,
    default_cohort_config,
    generate_synthetic,
    stratified_split,
)
from model_gate_audit.perturb import default_battery
from model_gate_audit.runner import EvaluationPlan, evaluate_all
from model_gate_audit.scorers import LogisticFitConfig, fit_logistic
from model_gate_audit.stats import PERCENTILE, BootstrapConfig


class StepClock:
    """Fake nanosecond clock that advances a fixed step per call."""

    def __init__(self, step_ns: int = 2_000_000) -> None:
        self._ticks = itertools.count(0, step_ns)

    def __call__(self) -> int:
        return next(self._ticks)


def make_matrix(columns):
    """columns: list of (name, kind, values)."""
    return FeatureMatrix(
        values=np.column_stack([np.asarray(v, dtype=float) for _, _, v in columns]),
        column_names=tuple(name for name, _, _ in columns),
        column_kinds=tuple(kind for _, kind, _ in columns),
    )


@pytest.fixture
def tiny_matrix() -> FeatureMatrix:
    return make_matrix(
        [
            ("age", CONTINUOUS, [30.0, 45.0, 60.0, 75.0, 90.0, 52.0]),
            ("female", BINARY_FLAG, [0, 1, 1, 0, 1, 0]),
            ("race", CATEGORICAL_CODE, [0, 1, 2, 0, 1, 2]),
            ("bmi", CONTINUOUS, [21.0, 24.5, 30.0, 27.5, 33.0, 26.0]),
        ]
    )


@pytest.fixture
def tiny_cohort(tiny_matrix) -> Cohort:
    return Cohort(
        features=tiny_matrix,
        labels=np.array([0, 1, 0, 1, 1, 0]),
        subgroups={"sex": np.array(["M", "F", "F", "M", "F", "M"], dtype=object)},
        need_proxies={"cci": np.array([0.0, 2.0, 1.0, 3.0, 4.0, 1.0])},
        row_ids=np.array([f"r{i}" for i in range(6)]),
    )


@pytest.fixture(scope="session")
def synthetic_cohort() -> Cohort:
    return generate_synthetic(default_cohort_config(n=1500, seed=11))


@pytest.fixture(scope="session")
def split_and_model(synthetic_cohort):
    train, test = stratified_split(synthetic_cohort, 0.4, seed=11)
    model = fit_logistic(train, LogisticFitConfig(seed=11))
    return train, test, model


def audit_plan(test: Cohort, model, **overrides) -> EvaluationPlan:
    settings = dict(
        cohort=test,
        battery=default_battery(test.features.continuous_columns(), "age", master_seed=11),
        scorer=model,
        bootstrap=BootstrapConfig(replicates=200, seed=11, method=PERCENTILE),
        latency_clock=StepClock(),
        latency_repetitions=5,
        latency_warmup=1,
    )
    settings.update(overrides)
    return EvaluationPlan(**settings)


@pytest.fixture(scope="session")
def audit_result(split_and_model):
    _, test, model = split_and_model
    return evaluate_all(audit_plan(test, model))
