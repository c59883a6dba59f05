import math
from dataclasses import replace

import numpy as np
import pytest

from gas_spiketime.calibration import (
    CalibrationReport,
    baseline_false_triggers,
    calibrate,
    validate,
)
from gas_spiketime.circuit import CircuitParams
from gas_spiketime.dataset import GASES, LEVELS, SyntheticFamily, TrialRecord, synthetic_trial
from gas_spiketime.encoder import NO_CD, NO_EM
from gas_spiketime.errors import CalibrationError, DomainError
from gas_spiketime.series import TimeSeries

NOISELESS = SyntheticFamily(noise_sigma=0.0, amplitude_jitter=0.0)


def records(family, cells, seed=0):
    return [TrialRecord(g, lv, tr, synthetic_trial(family, g, lv, tr, seed)) for g, lv, tr in cells]


def test_noiseless_family_uses_floor_and_fires_everywhere():
    recs = records(NOISELESS, [("EB", lv, 0) for lv in LEVELS])
    report = calibrate(recs)
    assert report.sigma_d == 0.0
    assert report.params.cd_cmp.threshold == 0.02
    assert all(d.flags == () and d.delta_t is not None for d in report.diagnostics)


def test_calibrating_on_top_level_misses_bottom_level():
    report = calibrate(records(NOISELESS, [("EB", 5, 0)]))
    summary = validate(report.params, records(NOISELESS, [("EB", 1, 0)]))
    assert summary.n_valid == 0
    assert summary.flag_counts == {NO_EM: 1}


def test_empty_calibration_set():
    with pytest.raises(DomainError):
        calibrate([])


def test_report_invariants_on_noisy_grid():
    recs = records(SyntheticFamily(), [(g, lv, 0) for g in GASES for lv in LEVELS], seed=3)
    report = calibrate(recs)
    p = report.params
    assert p.cd_cmp.threshold >= max(6 * report.sigma_d, 0.02)
    for d in report.diagnostics:
        assert d.baseline_false_triggers == 0
        assert d.peak_integrator <= 0.9 * p.integ.v_rail
        assert d.margin_to_rail >= 0.1 * p.integ.v_rail - 1e-12
    assert min(d.peak_integrator for d in report.diagnostics) == pytest.approx(2 * p.em_cmp.threshold)
    assert baseline_false_triggers(recs, p) == [0] * len(recs)


def test_tau_in_only_grows():
    recs = records(NOISELESS, [("Eu", 5, 0)])
    report = calibrate(recs)
    assert report.params.integ.tau_in >= CircuitParams.default().integ.tau_in
    assert report.params.integ.tau_leak > report.params.integ.tau_in


def test_calibration_deterministic():
    recs = records(SyntheticFamily(), [(g, 3, 0) for g in GASES], seed=11)
    assert calibrate(recs).to_dict() == calibrate(recs).to_dict()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_baseline_pulse_count_non_increasing_in_k(seed):
    # Noisy enough that small k trips the comparator on the baseline.
    fam = SyntheticFamily(noise_sigma=5e-3)
    recs = records(fam, [(g, 1, 0) for g in GASES], seed=seed)
    base = CircuitParams.default()
    counts = []
    for k in (1.0, 2.0, 3.0, 4.0, 6.0, 8.0):
        p = replace(base, cd_cmp=base.cd_cmp.rescaled(k * 0.02))
        counts.append(sum(baseline_false_triggers(recs, p)))
    assert counts[0] > 0
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_raised_threshold_when_k_sigma_not_enough():
    recs = records(SyntheticFamily(noise_sigma=2e-3), [(g, lv, 0) for g in GASES for lv in (4, 5)], seed=5)
    report = calibrate(recs, k=1.0, floor=1e-4)
    assert report.params.cd_cmp.threshold > 1.0 * report.sigma_d
    assert all(d.baseline_false_triggers == 0 for d in report.diagnostics)


def test_validate_full_synthetic_grid():
    fam = SyntheticFamily()
    calib = records(fam, [(g, lv, 0) for g in GASES for lv in LEVELS], seed=0)
    held = records(fam, [(g, lv, t) for g in GASES for lv in LEVELS for t in (1, 2)], seed=0)
    summary = validate(calibrate(calib).params, held)
    assert summary.n_trials == 40
    assert summary.fraction_valid == 1.0
    assert summary.flag_counts == {}


def test_validate_empty():
    summary = validate(CircuitParams.default(), [])
    assert summary.n_trials == 0 and summary.fraction_valid is None


def test_constant_trials_are_infeasible():
    flat = TimeSeries(-2.0, 0.01, np.full(801, 0.5))
    with pytest.raises(CalibrationError, match="CD never fires") as info:
        calibrate([TrialRecord("EB", 1, 0, flat)])
    assert info.value.diagnostics[0].flags == (NO_CD,)


def test_report_round_trip(tmp_path):
    report = calibrate(records(NOISELESS, [("IA", lv, 0) for lv in (1, 5)]))
    path = tmp_path / "r.json"
    report.write(path)
    back = CalibrationReport.read(path)
    assert back == report
    assert back.params == report.params
    assert not math.isnan(back.sigma_d)


def test_inverted_sensor_polarity_is_reported_not_flipped():
    # A sensor whose load voltage drops on exposure trips the opposite comparator side.
    s = synthetic_trial(NOISELESS, "EB", 5, 0, 0)
    inverted = s.with_values(1.0 - s.values)
    with pytest.raises(CalibrationError, match="cd-polarity above"):
        calibrate([TrialRecord("EB", 5, 0, inverted)])
    base = CircuitParams.default()
    flipped = replace(base, cd_cmp=replace(base.cd_cmp, polarity="above"))
    report = calibrate([TrialRecord("EB", 5, 0, inverted)], flipped)
    assert report.params.cd_cmp.polarity == "above"
