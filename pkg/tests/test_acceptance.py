"""Acceptance checks, one test per primary criterion.

Each test prints a single ``PASS``/``FAIL`` line (bypassing output capture)
before asserting, so ``pytest -v`` output doubles as the acceptance report.
The recorded-data check only runs when ``GAS_SPIKETIME_DATASET`` points at a
manifest (file or directory); otherwise it is reported as not evaluated.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from gas_spiketime.analysis import aggregate, monotonicity
from gas_spiketime.calibration import CalibrationReport, calibrate
from gas_spiketime.circuit import (
    CircuitParams,
    ComparatorParams,
    DifferentiatorParams,
    IntegratorParams,
    PulseTrain,
    comparator,
    gated_integrator,
)
from gas_spiketime.cli import main
from gas_spiketime.dataset import GASES, LEVELS, SyntheticFamily, TrialRecord, load_manifest, load_trials, synthetic_trial
from gas_spiketime.encoder import NO_CD, NO_EM, encode_records, simulate_trial
from gas_spiketime.series import TimeSeries, synth_trapezoid
from gas_spiketime.traces import read_traces

DATASET_ENV = "GAS_SPIKETIME_DATASET"


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return emit


def run_pipeline(root: Path, seed: int = 0) -> Path:
    ds, traces, out = root / "ds", root / "traces.csv", root / "curves"
    assert main(["synth", "--out", str(ds), "--seed", str(seed)]) == 0
    assert main(["calibrate", "--dataset", str(ds), "--out", str(root / "report.json")]) == 0
    assert main(["encode", "--dataset", str(ds), "--params", str(root / "report.json"),
                 "--out", str(traces)]) == 0
    assert main(["analyze", "--traces", str(traces), "--out", str(out)]) == 0
    return root


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    start = time.perf_counter()
    root = run_pipeline(tmp_path_factory.mktemp("run_a"))
    return root, time.perf_counter() - start


def test_solver_correctness(verdict):
    h = 1e-4
    x = TimeSeries(0.0, h, np.ones(round(0.3 / h) + 1))
    p = IntegratorParams(tau_in=0.1, tau_leak=10.0, tau_reset=2e-3, v_rail=math.inf)
    out = gated_integrator(x, PulseTrain(((0.0, None),)), p, step=h)
    worst = 0.0
    for t in (0.05, 0.1, 0.2):
        exact = 100.0 * (1.0 - math.exp(-t / 10.0))
        worst = max(worst, abs(out.magnitude.values[round(t / h)] - exact) / exact)
    (rise, _), = comparator(out.magnitude, ComparatorParams(1.0, 0.0, "above")).intervals
    t_cross = -10.0 * math.log(0.99)
    ok = worst <= 1e-6 and abs(rise - t_cross) <= h
    verdict("solver correctness", ok,
            f"max rel err {worst:.2e} (<= 1e-6); crossing {rise:.6f} s vs {t_cross:.6f} s "
            f"(|err| {abs(rise - t_cross):.1e} <= {h})")


def test_differentiator_flank(verdict):
    h = 1e-3
    params = CircuitParams(
        diff=DifferentiatorParams(tau_d=1.0, tau_parasitic=0.0),
        cd_cmp=ComparatorParams(0.05, polarity="below"),
        integ=IntegratorParams(tau_in=0.2, tau_leak=10.0, tau_reset=2e-3),
        em_cmp=ComparatorParams(0.25, polarity="above"),
        solver_step=h,
    )
    # rising 0..1 s, plateau 1..1.5 s, falling 1.5..3.5 s
    s = synth_trapezoid(0.5, 1.0, 1.0, 0.5, 2.0, 1e-2)
    cd = simulate_trial(s, params).trace.cd
    ok = len(cd.intervals) == 1
    detail = f"{len(cd.intervals)} CD pulse(s)"
    if ok:
        (rise, fall), = cd.intervals
        ok = fall is not None and abs(rise - 0.0) <= 2 * h and abs(fall - 1.0) <= 2 * h
        detail = f"CD on [{rise:.4f}, {fall:.4f}] s vs rising segment [0, 1] s (tol {2 * h})"
    verdict("differentiator flank", ok, detail)


def test_inverse_coding(verdict, full_run):
    noiseless = SyntheticFamily(noise_sigma=0.0, amplitude_jitter=0.0)
    parts, ok = [], True
    for gas in GASES:
        recs = [TrialRecord(gas, lv, 0, synthetic_trial(noiseless, gas, lv, 0, 0)) for lv in LEVELS]
        traces = encode_records(recs, calibrate(recs).params)
        dts = [traces[(gas, lv, 0)].delta_t for lv in LEVELS]
        decreasing = None not in dts and all(b < a for a, b in zip(dts, dts[1:]))
        rho = monotonicity(aggregate(traces)[0]) if None not in dts else math.nan
        ok &= decreasing and rho == 1.0
        parts.append(f"{gas} rho={rho:+.4f}{'' if decreasing else ' (not decreasing)'}")
    root, elapsed = full_run
    rows = read_traces(root / "traces.csv")
    ok &= len(rows) == 400 and elapsed < 60.0
    parts.append(f"400-trial synth+calibrate+encode+analyze in {elapsed:.1f} s (< 60 s), {len(rows)} rows")
    verdict("inverse coding", ok, "; ".join(parts))


def test_dataset_reproduction(verdict, capsys):
    where = os.environ.get(DATASET_ENV)
    if not where:
        with capsys.disabled():
            print(f"\n[NOT EVALUATED] dataset reproduction: set {DATASET_ENV} to a manifest of the recorded trials")
        pytest.skip(f"{DATASET_ENV} not set; recorded dataset unavailable")
    manifest = load_manifest(where)
    records = load_trials(manifest)
    # one trial per gas/level tunes the circuit; all trials are then encoded
    first = {}
    for r in records:
        first.setdefault(r.key[:2], r)
    calib = list(first.values())
    traces = encode_records(records, calibrate(calib).params)
    curves = aggregate(traces)
    rhos = {c.gas: monotonicity(c) for c in curves}
    no_em = sum(1 for t in traces.values() if NO_EM in t.flags)
    discarded = sum(1 for t in traces.values() if not t.valid)
    ok = all(r >= 0.9 for r in rhos.values()) and discarded <= 1 and len(traces) == 400
    detail = ", ".join(f"{g} rho={r:+.3f}" for g, r in rhos.items())
    verdict("dataset reproduction", ok,
            f"{detail}; {discarded} discarded ({no_em} no_em) of {len(traces)} (<= 1 of 400)")


def test_determinism(verdict, full_run, tmp_path):
    a, _ = full_run
    b = run_pipeline(tmp_path)
    names = ["traces.csv", "curves/curves.csv", "curves/curves_inverse.csv", "report.json"]
    same = {n: (a / n).read_bytes() == (b / n).read_bytes() for n in names}
    verdict("determinism", all(same.values()),
            ", ".join(f"{n} {'identical' if s else 'DIFFERS'}" for n, s in same.items()))


def test_degenerate_handling(verdict, full_run):
    root, _ = full_run
    params = CalibrationReport.read(root / "report.json").params
    family = SyntheticFamily()
    records = [TrialRecord(g, lv, t, synthetic_trial(family, g, lv, t, 0))
               for g in GASES for lv in LEVELS for t in range(2)]
    records[0] = TrialRecord("EB", 1, 0, TimeSeries(-2.0, 0.01, np.full(801, 0.5)))
    traces = encode_records(records, params)
    curves = aggregate(traces)
    counted = sum(s.n_valid + s.n_discarded for c in curves for s in c.levels)
    eb1 = curves[0].level(1)
    flags = traces[("EB", 1, 0)].flags
    ok = flags == {NO_CD} and counted == len(records) and (eb1.n_valid, eb1.n_discarded) == (1, 1)
    verdict("degenerate handling", ok,
            f"flags={sorted(flags)}, EB C1 valid/discarded={eb1.n_valid}/{eb1.n_discarded}, "
            f"{counted} of {len(records)} trials accounted for")


def test_calibration_contract(verdict, full_run):
    root, _ = full_run
    report = CalibrationReport.read(root / "report.json")
    limit = 0.9 * report.params.integ.v_rail
    triggers = sum(d.baseline_false_triggers for d in report.diagnostics)
    peak = max(d.peak_integrator for d in report.diagnostics)
    ok = triggers == 0 and peak <= limit and len(report.diagnostics) == 20
    verdict("calibration contract", ok,
            f"{len(report.diagnostics)} calibration trials, {triggers} baseline CD events, "
            f"max integrator peak {peak:.4f} V <= {limit:.4f} V")
