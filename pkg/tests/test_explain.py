import numpy as np
import pytest
from scipy.special import expit

from conftest import make_matrix
from model_gate_audit.cohort import CONTINUOUS
from model_gate_audit.errors import AlignmentError, ConfigError, SchemaError
from model_gate_audit.explain import (
    EXTERNAL,
    LINEAR_EXACT,
    SHAPLEY_SAMPLED,
    AttributionMatrix,
    background_reference,
    linear_attributions,
    load_attributions,
    shapley_sampled,
    write_attributions,
)


def test_linear_attributions_are_additive(split_and_model):
    _, test, model = split_and_model
    attributions = linear_attributions(model, test.features)
    assert attributions.provider == LINEAR_EXACT
    assert attributions.values.shape == (test.n, test.features.d)
    np.testing.assert_allclose(
        attributions.values.sum(axis=1),
        model.decision_function(test.features) - model.bias,
        atol=1e-9,
    )


def test_background_reference_uses_mode_for_codes(tiny_matrix):
    reference = background_reference(tiny_matrix)
    assert reference[0] == pytest.approx(np.mean([30.0, 45.0, 60.0, 75.0, 90.0, 52.0]))
    # female: three 0s and three 1s, tie goes to 0
    assert reference[1] == 0.0
    assert reference[2] == 0.0


def test_sampled_shapley_matches_exact_values_on_logit_scale(split_and_model):
    _, test, model = split_and_model
    background = test.features.take(np.arange(200))
    rows = test.features.take(np.arange(5))
    sampled = shapley_sampled(model, rows, background, k=512, seed=3, link="logit")
    exact = linear_attributions(model, rows, reference=background_reference(background))
    assert sampled.provider == SHAPLEY_SAMPLED
    error = np.linalg.norm(sampled.values - exact.values) / np.linalg.norm(exact.values)
    assert error < 0.05


def test_sampled_shapley_is_reproducible(split_and_model):
    _, test, model = split_and_model
    background = test.features.take(np.arange(50))
    rows = test.features.take(np.arange(3))
    first = shapley_sampled(model, rows, background, k=16, seed=8)
    second = shapley_sampled(model, rows, background, k=16, seed=8)
    np.testing.assert_array_equal(first.values, second.values)


def test_sampled_shapley_argument_checks(split_and_model, tiny_matrix):
    _, test, model = split_and_model
    rows = test.features.take(np.arange(2))
    with pytest.raises(ConfigError):
        shapley_sampled(model, rows, rows, k=8)
    with pytest.raises(ConfigError):
        shapley_sampled(model, rows, rows, link="probit")
    with pytest.raises(ConfigError):
        shapley_sampled(model, rows, tiny_matrix)


def test_attribution_matrix_validation():
    with pytest.raises(SchemaError):
        AttributionMatrix(values=np.ones((2, 3)), feature_names=("a", "b"), provider=EXTERNAL)
    with pytest.raises(SchemaError):
        AttributionMatrix(values=np.array([[np.inf]]), feature_names=("a",), provider=EXTERNAL)


def test_attribution_csv_round_trip(tiny_cohort, tmp_path):
    values = np.arange(24, dtype=float).reshape(6, 4) / 7.0
    attributions = AttributionMatrix(values=values, feature_names=("age", "female", "race", "bmi"), provider=LINEAR_EXACT)
    path = tmp_path / "attributions.csv"
    order = [2, 0, 1, 5, 4, 3]
    write_attributions(path, attributions.take(order), tiny_cohort.row_ids[order])
    loaded = load_attributions(path, tiny_cohort)
    assert loaded.provider == EXTERNAL
    assert loaded.feature_names == attributions.feature_names
    np.testing.assert_array_equal(loaded.values, values)
    assert loaded.top3() == attributions.top3()


def test_attribution_csv_alignment_errors(tiny_cohort, tmp_path):
    attributions = AttributionMatrix(values=np.ones((5, 1)), feature_names=("age",), provider=LINEAR_EXACT)
    with pytest.raises(AlignmentError):
        write_attributions(tmp_path / "a.csv", attributions, tiny_cohort.row_ids)
    path = tmp_path / "b.csv"
    write_attributions(path, attributions, tiny_cohort.row_ids[:5])
    with pytest.raises(AlignmentError):
        load_attributions(path, tiny_cohort)


class SumOfTwo:
    """expit(a + b); column c never reaches the score."""

    descriptor = "expit(a + b)"

    def score(self, X):
        return expit(X.column("a") + X.column("b"))


def three_columns(a, b, c):
    return make_matrix([("a", CONTINUOUS, a), ("b", CONTINUOUS, b), ("c", CONTINUOUS, c)])


def test_sampled_shapley_gives_ignored_feature_nothing():
    k = 64
    X = three_columns([-1.0, 0.0, 0.5, 2.0], [1.5, -0.5, 0.0, 1.0], [3.0, -2.0, 1.0, 0.0])
    attributions = shapley_sampled(SumOfTwo(), X, X, k=k, seed=5)
    ignored = attributions.values[:, 2]
    assert np.all(np.abs(ignored) <= 3.0 / np.sqrt(k))
    np.testing.assert_allclose(ignored, 0.0, atol=1e-12)


def test_sampled_shapley_treats_duplicated_features_alike():
    k = 256
    a = [-1.0, 0.0, 0.5, 2.0]
    X = three_columns(a, a, [3.0, -2.0, 1.0, 0.0])
    values = shapley_sampled(SumOfTwo(), X, X, k=k, seed=5).values
    # Rows sum to the same total; only the share of orderings with a before b can split it unevenly.
    tolerance = 4.0 / np.sqrt(k) * np.abs(values[:, 0] + values[:, 1])
    assert np.all(np.abs(values[:, 0] - values[:, 1]) <= tolerance + 1e-12)
