from dataclasses import replace

import numpy as np
import pytest

from model_gate_audit.errors import ConfigError, IncompleteScorecardError
from model_gate_audit.stats import IntervalEstimate
from model_gate_audit.verdict import (
    BELOW_INFORMATIVE_FLOOR,
    CI_BRACKETS_THRESHOLD,
    DEFAULT_CRITERIA,
    DEGENERATE_INTERVAL,
    HOLM_DISAGREEMENT,
    NOT_EVALUATED,
    Measurement,
    Verdict,
    assemble_scorecard,
    classify,
    default_criteria,
    equity_diagnostic,
    gate_exit_code,
    sweep_verdicts,
)


def estimate(point, lo=None, hi=None, replicates=None):
    reps = np.asarray(replicates if replicates is not None else [], dtype=float)
    return IntervalEstimate(point=point, lo=lo, hi=hi, replicates=reps)


def spread(low, high, count=400):
    return np.linspace(low, high, count)


@pytest.mark.parametrize(
    "criterion_id, point, lo, hi, expected",
    [
        ("R1", 0.064, 0.058, 0.070, Verdict.FAIL),
        ("I1", 0.059, 0.042, 0.066, Verdict.INCONCLUSIVE),
        ("R1", 0.0004, 0.0002, 0.0006, Verdict.PASS),
        ("S1", 0.097, 0.078, 0.116, Verdict.INCONCLUSIVE),
        ("I1", 0.021, 0.012, 0.031, Verdict.PASS),
        ("S1", 0.142, 0.121, 0.163, Verdict.FAIL),
    ],
)
def test_interval_verdicts_on_reported_intervals(criterion_id, point, lo, hi, expected):
    outcome = classify(estimate(point, lo, hi), DEFAULT_CRITERIA[criterion_id])
    assert outcome.verdict == expected
    if expected == Verdict.INCONCLUSIVE:
        assert outcome.reason == CI_BRACKETS_THRESHOLD


def test_point_checks():
    assert classify(estimate(0.96), DEFAULT_CRITERIA["R2"]).verdict == Verdict.PASS
    assert classify(estimate(0.94), DEFAULT_CRITERIA["R2"]).verdict == Verdict.FAIL
    assert classify(estimate(0.95), DEFAULT_CRITERIA["R2"]).verdict == Verdict.PASS
    assert classify(estimate(500.0), DEFAULT_CRITERIA["D1"]).verdict == Verdict.PASS
    assert classify(estimate(501.0), DEFAULT_CRITERIA["D1"]).verdict == Verdict.FAIL
    assert classify(estimate(0.16), DEFAULT_CRITERIA["S2"]).verdict == Verdict.FAIL


def test_equity_is_always_diagnostic():
    assert classify(estimate(0.2, 0.1, 0.3), DEFAULT_CRITERIA["E1"]).verdict == Verdict.DIAGNOSTIC


def test_degenerate_intervals():
    criterion = DEFAULT_CRITERIA["S1"]
    spread_out = IntervalEstimate(point=0.0, lo=None, hi=None, degenerate=True)
    outcome = classify(spread_out, criterion)
    assert outcome.verdict == Verdict.INCONCLUSIVE
    assert outcome.reason == DEGENERATE_INTERVAL
    point_mass = IntervalEstimate(point=0.0, lo=None, hi=None, degenerate=True, point_mass=True)
    assert classify(point_mass, criterion).verdict == Verdict.PASS


def test_threshold_sweep_over_reliability_interval():
    table = sweep_verdicts(estimate(0.064, 0.058, 0.070), DEFAULT_CRITERIA["R1"], [0.025, 0.05, 0.075, 0.10])
    assert [v for _, v in table] == [Verdict.FAIL, Verdict.FAIL, Verdict.PASS, Verdict.PASS]


def test_threshold_sweep_over_sensitivity_band():
    table = sweep_verdicts(estimate(0.097, 0.078, 0.116), DEFAULT_CRITERIA["S1"], [0.05, 0.10, 0.15])
    assert [v for _, v in table] == [Verdict.FAIL, Verdict.INCONCLUSIVE, Verdict.PASS]


def test_threshold_sweep_works_for_equity_rows():
    table = sweep_verdicts(estimate(0.8, 0.75, 0.85), DEFAULT_CRITERIA["E1"], [0.7, 0.9])
    assert [v for _, v in table] == [Verdict.PASS, Verdict.FAIL]


def test_threshold_sweep_rejects_point_checks():
    with pytest.raises(ConfigError):
        sweep_verdicts(estimate(0.96), DEFAULT_CRITERIA["R2"], [0.9])
    with pytest.raises(ConfigError):
        sweep_verdicts(estimate(0.06, 0.05, 0.07), DEFAULT_CRITERIA["R1"], [])


def test_default_criteria_overrides():
    criteria = default_criteria({"S1": 0.15})
    assert criteria["S1"].threshold == 0.15
    assert DEFAULT_CRITERIA["S1"].threshold == 0.10
    with pytest.raises(ConfigError):
        default_criteria({"Q9": 0.1})


def test_scoped_criterion_ids():
    scoped = DEFAULT_CRITERIA["I1"].scoped("race")
    assert scoped.id == "I1[race]"
    assert scoped.base_id == "I1"


def passing_measurements():
    return {
        "R1": Measurement(estimate(0.01, 0.005, 0.015, spread(0.005, 0.015))),
        "R2": Measurement(estimate(0.99, replicates=spread(0.985, 0.995))),
        "I1": Measurement(estimate(0.02, 0.01, 0.03, spread(0.01, 0.03))),
        "I2": Measurement(estimate(0.03, replicates=spread(0.02, 0.04))),
        "S1": Measurement(estimate(0.04, 0.03, 0.05, spread(0.03, 0.05))),
        "S2": Measurement(estimate(0.05, replicates=spread(0.04, 0.06))),
        "D1": Measurement(IntervalEstimate(point=120.0, lo=None, hi=None)),
        "D2": Measurement(estimate(0.90, replicates=spread(0.85, 0.95))),
    }


CRITERIA = list(DEFAULT_CRITERIA.values())


def test_all_passing_scorecard_opens_the_gate():
    scorecard = assemble_scorecard(passing_measurements(), CRITERIA)
    assert scorecard.gate
    assert scorecard.exit_code == 0
    assert scorecard.holm.m == 8
    assert scorecard.holm.get("D1").exempt_reason is not None
    assert scorecard.dimensions["equity"].verdict == Verdict.DIAGNOSTIC
    assert not scorecard.dimensions["equity"].gating
    assert [r.dimension for r in scorecard.criteria][:2] == ["reliability", "reliability"]


def test_failing_reliability_blocks_the_gate():
    measurements = passing_measurements()
    measurements["R1"] = Measurement(estimate(0.064, 0.058, 0.070, spread(0.058, 0.070)))
    scorecard = assemble_scorecard(measurements, CRITERIA)
    assert scorecard.get("R1").verdict == Verdict.FAIL
    assert scorecard.dimensions["reliability"].verdict == Verdict.FAIL
    assert not scorecard.gate
    assert scorecard.exit_code == 1
    assert gate_exit_code(scorecard) == 1


def test_bracketing_interval_makes_the_gate_inconclusive():
    measurements = passing_measurements()
    measurements["I1"] = Measurement(estimate(0.059, 0.042, 0.066, spread(0.042, 0.066)))
    scorecard = assemble_scorecard(measurements, CRITERIA)
    assert scorecard.get("I1").verdict == Verdict.INCONCLUSIVE
    assert scorecard.exit_code == 3


def test_fail_wins_over_inconclusive():
    measurements = passing_measurements()
    measurements["I1"] = Measurement(estimate(0.059, 0.042, 0.066, spread(0.042, 0.066)))
    measurements["R2"] = Measurement(estimate(0.90, replicates=spread(0.88, 0.92)))
    assert assemble_scorecard(measurements, CRITERIA).exit_code == 1


def test_holm_disagreement_downgrades_a_pass():
    measurements = passing_measurements()
    # CI says PASS but a tenth of the replicates sit at the threshold.
    reps = np.concatenate([spread(0.01, 0.04, 360), np.full(40, 0.06)])
    measurements["R1"] = Measurement(estimate(0.02, 0.01, 0.04, reps))
    scorecard = assemble_scorecard(measurements, CRITERIA)
    row = scorecard.get("R1")
    assert row.verdict == Verdict.INCONCLUSIVE
    assert row.reason == HOLM_DISAGREEMENT
    assert row.p_boot == pytest.approx(0.1)


def test_skipped_gating_criterion_is_inconclusive():
    measurements = passing_measurements()
    measurements["D2"] = Measurement(skipped_reason="no attributions available")
    scorecard = assemble_scorecard(measurements, CRITERIA)
    row = scorecard.get("D2")
    assert row.verdict == Verdict.INCONCLUSIVE
    assert row.reason == NOT_EVALUATED
    assert scorecard.holm.get("D2").exempt_reason == NOT_EVALUATED
    assert scorecard.exit_code == 3


def test_missing_gating_criterion_is_an_error():
    measurements = passing_measurements()
    del measurements["S2"]
    with pytest.raises(IncompleteScorecardError):
        assemble_scorecard(measurements, CRITERIA)


def test_missing_gating_dimension_is_an_error():
    measurements = passing_measurements()
    criteria = [c for c in CRITERIA if c.dimension != "deployability"]
    with pytest.raises(IncompleteScorecardError):
        assemble_scorecard(measurements, criteria)


def test_informative_floor_annotates_but_keeps_verdict():
    scorecard = assemble_scorecard(passing_measurements(), CRITERIA, n_eval=500)
    row = scorecard.get("R1")
    assert row.verdict == Verdict.PASS
    assert BELOW_INFORMATIVE_FLOOR in row.notes
    assert row.required_n > 500
    assert scorecard.get("I1").required_n is None


def test_near_threshold_endpoint_warns():
    measurements = passing_measurements()
    measurements["R1"] = Measurement(estimate(0.03, 0.02, 0.047, spread(0.02, 0.047)))
    scorecard = assemble_scorecard(measurements, CRITERIA)
    assert scorecard.get("R1").verdict == Verdict.PASS
    assert any(w.startswith("R1:") for w in scorecard.warnings)


def test_expanded_family_with_per_attribute_inclusivity():
    measurements = passing_measurements()
    criteria = [c for c in CRITERIA if c.id not in ("I1", "I2")]
    for attribute in ("race", "sex"):
        for base in ("I1", "I2"):
            scoped = DEFAULT_CRITERIA[base].scoped(attribute)
            criteria.append(scoped)
            measurements[scoped.id] = measurements[base]
    scorecard = assemble_scorecard(measurements, criteria)
    assert scorecard.holm.m == 10
    assert scorecard.dimensions["inclusivity"].criteria == ["I1[race]", "I2[race]", "I1[sex]", "I2[sex]"]


def test_equity_diagnostic_flags_disagreeing_proxies():
    criteria = default_criteria()
    measurements = {
        "cci": (
            Measurement(estimate(0.80, 0.75, 0.85, spread(0.75, 0.85))),
            Measurement(estimate(0.05, 0.03, 0.07, spread(0.03, 0.07))),
        ),
        "outcome_label": (
            Measurement(estimate(0.40, 0.35, 0.45, spread(0.35, 0.45))),
            Measurement(estimate(0.20, 0.18, 0.22, spread(0.18, 0.22))),
        ),
    }
    equity = equity_diagnostic(measurements, criteria, label_proxies=["outcome_label"])
    assert equity.disagreement
    assert [r.id for r in equity.rows] == ["E1[cci]", "E2[cci]", "E1[outcome_label]", "E2[outcome_label]"]
    assert all(r.verdict == Verdict.DIAGNOSTIC for r in equity.rows)
    assert len(equity.warnings) == 1

    scorecard = assemble_scorecard(passing_measurements(), CRITERIA, equity=equity)
    assert scorecard.gate
    assert scorecard.equity_disagreement
    assert scorecard.holm.m == 8


def test_equity_rows_default_to_not_evaluated():
    scorecard = assemble_scorecard(passing_measurements(), CRITERIA)
    equity_rows = [r for r in scorecard.criteria if r.dimension == "equity"]
    assert [r.id for r in equity_rows] == ["E1", "E2"]
    assert all(r.reason == NOT_EVALUATED for r in equity_rows)


def test_point_mass_metric_keeps_its_verdict():
    measurements = passing_measurements()
    measurements["S1"] = Measurement(
        replace(
            estimate(0.0, replicates=np.zeros(400)),
            degenerate=True,
            point_mass=True,
        )
    )
    scorecard = assemble_scorecard(measurements, CRITERIA)
    assert scorecard.get("S1").verdict == Verdict.PASS
    assert scorecard.get("S1").point_mass


def test_too_few_replicates_for_holm_warns():
    measurements = {
        key: Measurement(
            replace(m.estimate, replicates=np.linspace(m.estimate.replicates.min(), m.estimate.replicates.max(), 100))
        )
        if m.estimate.replicates.size
        else m
        for key, m in passing_measurements().items()
    }
    scorecard = assemble_scorecard(measurements, CRITERIA)
    assert any("B >= 159" in w for w in scorecard.warnings)
    for row in scorecard.criteria:
        if row.gating and row.id != "D1":
            assert row.verdict == Verdict.INCONCLUSIVE
            assert row.reason == HOLM_DISAGREEMENT
            assert row.p_boot == pytest.approx(1 / 101)
    assert scorecard.get("D1").verdict == Verdict.PASS
    assert scorecard.exit_code == 3


def test_enough_replicates_for_holm_stay_quiet():
    scorecard = assemble_scorecard(passing_measurements(), CRITERIA)
    assert not any("Holm level" in w for w in scorecard.warnings)
