import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from model_gate_audit.cohort import (
    BINARY_FLAG,
    CONTINUOUS,
    CohortSchema,
    FeatureMatrix,
    cohort_config_from_ini,
    cohort_schema,
    default_cohort_config,
    generate_synthetic,
    load_cohort_csv,
    read_schema,
    stratified_split,
    write_cohort_csv,
)
from model_gate_audit.errors import (
    EmptyCohortError,
    InvalidConfigError,
    SchemaError,
    StratificationError,
)


def test_feature_matrix_validation():
    with pytest.raises(SchemaError):
        FeatureMatrix(values=np.ones((2, 2)), column_names=("a", "a"), column_kinds=(CONTINUOUS, CONTINUOUS))
    with pytest.raises(SchemaError):
        FeatureMatrix(values=np.array([[0.0], [2.0]]), column_names=("flag",), column_kinds=(BINARY_FLAG,))
    with pytest.raises(SchemaError):
        FeatureMatrix(values=np.array([[np.nan]]), column_names=("a",), column_kinds=(CONTINUOUS,))
    with pytest.raises(SchemaError):
        FeatureMatrix(values=np.ones((2, 1)), column_names=("a",), column_kinds=("ordinal",))


def test_feature_matrix_is_read_only(tiny_matrix):
    with pytest.raises(ValueError):
        tiny_matrix.values[0, 0] = 1.0
    assert tiny_matrix.continuous_columns() == ["age", "bmi"]
    assert tiny_matrix.kind_of("race") == "categorical_code"
    with pytest.raises(SchemaError):
        tiny_matrix.index_of("weight")


def test_feature_matrix_may_be_empty():
    empty = FeatureMatrix(values=np.empty((0, 2)), column_names=("a", "b"), column_kinds=(CONTINUOUS, CONTINUOUS))
    assert empty.n == 0


def test_cohort_take_keeps_rows_aligned(tiny_cohort):
    subset = tiny_cohort.take([4, 1])
    assert list(subset.row_ids) == ["r4", "r1"]
    assert list(subset.labels) == [1, 1]
    assert list(subset.subgroups["sex"]) == ["F", "F"]
    assert list(subset.need_proxies["cci"]) == [4.0, 2.0]


def test_cohort_rejects_duplicate_ids(tiny_cohort):
    with pytest.raises(SchemaError):
        replace(tiny_cohort, row_ids=np.array(["a"] * 6))


def test_generated_cohort_shape_and_prevalence():
    cohort = generate_synthetic(default_cohort_config(n=1000, seed=42))
    assert cohort.n == 1000
    assert cohort.features.d == 20
    assert cohort.prevalence == pytest.approx(0.30)
    assert set(cohort.subgroups) == {"age_band", "sex", "race", "insurance"}
    assert set(cohort.need_proxies) == {"cci"}
    assert cohort.row_ids[0] == "P000000"
    assert cohort.features.codebooks["race"][0] == "White"


def test_generated_cohort_tracks_marginals():
    cohort = generate_synthetic(default_cohort_config(n=10000, seed=42))
    female = cohort.features.column("female").mean()
    assert female == pytest.approx(0.555, abs=0.02)
    assert np.mean(cohort.subgroups["insurance"] == "Medicare") == pytest.approx(0.474, abs=0.02)
    assert cohort.features.column("cci").mean() == pytest.approx(0.99, abs=0.1)
    oldest = cohort.subgroups["age_band"] == "75+"
    assert oldest.mean() == pytest.approx(0.284, abs=0.02)
    ages = cohort.features.column("age")[oldest]
    assert ages.min() >= 75.0 and ages.max() < 95.0


def test_generated_cohort_is_deterministic():
    a = generate_synthetic(default_cohort_config(n=300, seed=5))
    b = generate_synthetic(default_cohort_config(n=300, seed=5))
    c = generate_synthetic(default_cohort_config(n=300, seed=6))
    np.testing.assert_array_equal(a.features.values, b.features.values)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.features.values, c.features.values)


def test_generator_rejects_invalid_config():
    with pytest.raises(InvalidConfigError):
        default_cohort_config(n=0)
    config = default_cohort_config(n=10)
    with pytest.raises(InvalidConfigError):
        generate_synthetic(replace(config, race={"White": 0.5, "Black": 0.4}))
    with pytest.raises(InvalidConfigError):
        generate_synthetic(replace(config, positive_fraction=1.0))
    with pytest.raises(InvalidConfigError):
        generate_synthetic(replace(config, age_band={"0-17": 1.0}))


def test_generator_config_from_ini_text():
    text = """
[cohort]
positive_fraction = 0.5

[age_band]
45-64 = 1.0

[sex]
Female = 0.5
Male = 0.5

[race]
A = 1.0

[insurance]
B = 1.0

[clinical]
cci_mean = 1.0
cci_sd = 1.0
bmi_mean = 25.0
bmi_sd = 3.0
deprivation_mean = 50.0
deprivation_sd = 10.0
"""
    config = cohort_config_from_ini(text, n=200, seed=1)
    cohort = generate_synthetic(config)
    assert cohort.prevalence == 0.5
    assert set(cohort.subgroups["age_band"]) == {"45-64"}
    with pytest.raises(InvalidConfigError):
        cohort_config_from_ini(text.replace("[clinical]", "[other]"), n=200, seed=1)


def test_csv_round_trip(tmp_path):
    cohort = generate_synthetic(default_cohort_config(n=200, seed=9))
    path = tmp_path / "cohort.csv"
    sidecar = write_cohort_csv(cohort, path)
    assert sidecar.name == "cohort.schema.json"
    loaded = load_cohort_csv(path, read_schema(sidecar))
    restored = loaded.cohort
    assert loaded.dropped_rows == 0
    assert len(loaded.content_sha256) == 64
    np.testing.assert_allclose(restored.features.values, cohort.features.values, rtol=1e-12)
    assert restored.features.layout() == cohort.features.layout()
    np.testing.assert_array_equal(restored.labels, cohort.labels)
    np.testing.assert_array_equal(restored.row_ids, cohort.row_ids)
    for attribute in cohort.subgroups:
        np.testing.assert_array_equal(restored.subgroups[attribute], cohort.subgroups[attribute])
    np.testing.assert_allclose(restored.need_proxies["cci"], cohort.need_proxies["cci"])
    assert restored.features.codebooks["race"] == cohort.features.codebooks["race"]


def test_csv_export_is_byte_stable(tmp_path):
    cohort = generate_synthetic(default_cohort_config(n=100, seed=3))
    write_cohort_csv(cohort, tmp_path / "a.csv")
    write_cohort_csv(cohort, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.schema.json").read_bytes() == (tmp_path / "b.schema.json").read_bytes()


def _write_frame(tmp_path, frame):
    path = tmp_path / "input.csv"
    frame.to_csv(path, index=False)
    return path


SCHEMA = CohortSchema(
    columns={
        "pid": "id",
        "age": "feature:continuous",
        "smoker": "feature:flag",
        "region": "feature:categorical",
        "y": "label",
        "sex": "subgroup:sex",
        "need": "proxy:need",
    }
)


def _frame():
    return pd.DataFrame(
        {
            "pid": ["a", "b", "c", "d"],
            "age": [50.0, 61.0, None, 70.0],
            "smoker": [0, 1, 1, 0],
            "region": ["north", "south", "north", "east"],
            "y": [0, 1, 0, 1],
            "sex": ["F", "M", "F", "M"],
            "need": [1.0, 2.0, 3.0, 4.0],
            "unused": ["x", "y", "z", "w"],
        }
    )


def test_load_drops_incomplete_rows_and_encodes_categories(tmp_path):
    loaded = load_cohort_csv(_write_frame(tmp_path, _frame()), SCHEMA)
    cohort = loaded.cohort
    assert loaded.dropped_rows == 1
    assert list(cohort.row_ids) == ["a", "b", "d"]
    assert cohort.features.codebooks["region"] == {0: "east", 1: "north", 2: "south"}
    assert list(cohort.features.column("region")) == [1.0, 2.0, 0.0]
    assert list(cohort.subgroups["sex"]) == ["F", "M", "M"]


def test_load_rejects_bad_inputs(tmp_path):
    frame = _frame()
    with pytest.raises(SchemaError):
        load_cohort_csv(_write_frame(tmp_path, frame.drop(columns=["need"])), SCHEMA)
    bad_label = frame.assign(y=[0, 2, 0, 1])
    with pytest.raises(SchemaError):
        load_cohort_csv(_write_frame(tmp_path, bad_label), SCHEMA)
    duplicate = frame.assign(pid=["a", "a", "c", "d"])
    with pytest.raises(SchemaError):
        load_cohort_csv(_write_frame(tmp_path, duplicate), SCHEMA)
    empty = frame.assign(age=[None, None, None, None])
    with pytest.raises(EmptyCohortError):
        load_cohort_csv(_write_frame(tmp_path, empty), SCHEMA)


def test_schema_validation():
    with pytest.raises(SchemaError):
        CohortSchema(columns={"a": "feature:continuous"})
    with pytest.raises(SchemaError):
        CohortSchema(columns={"a": "feature:continuous", "y": "label", "z": "label"})
    with pytest.raises(SchemaError):
        CohortSchema(columns={"a": "weight", "y": "label"})
    with pytest.raises(SchemaError):
        CohortSchema(columns={"y": "label"})


def test_schema_sidecar_round_trip(tmp_path, tiny_cohort):
    schema = cohort_schema(tiny_cohort)
    path = tmp_path / "schema.json"
    path.write_text(json.dumps(schema.to_mapping()), encoding="utf-8")
    assert read_schema(path).columns == schema.columns


def test_stratified_split_preserves_prevalence():
    cohort = generate_synthetic(default_cohort_config(n=1000, seed=1))
    train, test = stratified_split(cohort, 0.2, seed=1)
    assert test.n == 200
    assert train.n == 800
    assert test.prevalence == pytest.approx(0.30, abs=0.005)
    assert not set(train.row_ids) & set(test.row_ids)


def test_stratified_split_errors(tiny_cohort):
    with pytest.raises(InvalidConfigError):
        stratified_split(tiny_cohort, 1.0, seed=1)
    single = replace(tiny_cohort, labels=np.zeros(6, dtype=int))
    with pytest.raises(StratificationError):
        stratified_split(single, 0.5, seed=1)
