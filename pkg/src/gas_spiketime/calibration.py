"""Threshold and time-constant selection from a handful of calibration trials.

One parameter set is chosen for all gases, as for a single physical circuit:

* CD threshold: ``max(k * sigma_d, floor)`` where ``sigma_d`` is the pooled
  baseline standard deviation of the differentiator output. If that still
  lets a baseline sample trip the comparator, the threshold is raised just
  above the largest baseline excursion.
* Integrator gain: ``tau_in`` is stretched until the strongest calibration
  trial peaks at no more than ``rail_margin * v_rail``.
* EM threshold: ``em_fraction`` of the weakest calibration peak, so EM fires
  at every calibration level.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .circuit import CircuitParams, comparator, differentiator_response
from .encoder import (
    DEFAULT_GUARD,
    DEFAULT_MIN_GAP,
    encode_records,
    merge_chatter,
    simulate_trial,
)
from .errors import CalibrationError, DomainError

DEFAULT_K = 6.0
DEFAULT_FLOOR = 0.02
DEFAULT_RAIL_MARGIN = 0.9
DEFAULT_EM_FRACTION = 0.5
# Headroom above the largest baseline excursion when k*sigma is not enough.
EXCURSION_HEADROOM = 1.05


@dataclass(frozen=True)
class TrialDiagnostics:
    gas: str
    level: int
    trial: int
    peak_differentiator: float
    peak_integrator: float
    margin_to_rail: float
    baseline_false_triggers: int
    flags: tuple[str, ...] = ()
    delta_t: float | None = None


@dataclass(frozen=True)
class CalibrationReport:
    params: CircuitParams
    diagnostics: tuple[TrialDiagnostics, ...]
    sigma_d: float
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "feasible": True,
            "params": self.params.to_dict(),
            "sigma_d": self.sigma_d,
            "settings": dict(self.settings),
            "diagnostics": [asdict(d) for d in self.diagnostics],
        }

    @classmethod
    def from_dict(cls, data: dict) -> CalibrationReport:
        diags = []
        for d in data.get("diagnostics", []):
            d = dict(d)
            d["flags"] = tuple(d.get("flags", ()))
            diags.append(TrialDiagnostics(**d))
        return cls(
            params=CircuitParams.from_dict(data["params"]),
            diagnostics=tuple(diags),
            sigma_d=float(data["sigma_d"]),
            settings=dict(data.get("settings", {})),
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> CalibrationReport:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ValidationSummary:
    n_trials: int
    n_valid: int
    flag_counts: dict
    traces: dict

    @property
    def fraction_valid(self) -> float | None:
        return self.n_valid / self.n_trials if self.n_trials else None


def _baseline_mask(diff, onset: float, guard: float) -> np.ndarray:
    # One extra step: a rise interpolated just before the cutoff is asserted
    # on the first sample after it.
    return diff.times() < onset - guard + diff.dt_sample


def baseline_false_triggers(
    records, params: CircuitParams, *, guard: float = DEFAULT_GUARD, min_gap: float = DEFAULT_MIN_GAP
) -> list[int]:
    """CD pulses rising inside each record's pre-stimulus window."""
    counts = []
    for rec in records:
        diff = differentiator_response(rec.series.resample(params.solver_step), params.diff)
        cd = merge_chatter(comparator(diff, params.cd_cmp), min_gap)
        cutoff = rec.stimulus.onset - guard
        counts.append(sum(1 for r in cd.rises if r < cutoff))
    return counts


def _pooled_baseline(records, params: CircuitParams, guard: float) -> np.ndarray:
    chunks = []
    for rec in records:
        diff = differentiator_response(rec.series.resample(params.solver_step), params.diff)
        chunks.append(diff.values[_baseline_mask(diff, rec.stimulus.onset, guard)])
    return np.concatenate(chunks)


def _diag(rec, params: CircuitParams, guard: float, min_gap: float) -> TrialDiagnostics:
    w = simulate_trial(rec.series, params, rec.stimulus, guard=guard, min_gap=min_gap)
    cutoff = rec.stimulus.onset - guard
    peak_int = float(w.integrator_magnitude.values.max())
    return TrialDiagnostics(
        gas=rec.gas,
        level=rec.level,
        trial=rec.trial,
        peak_differentiator=float(np.abs(w.differentiator.values).max()),
        peak_integrator=peak_int,
        margin_to_rail=params.integ.v_rail - peak_int,
        baseline_false_triggers=sum(1 for r in w.trace.cd.rises if r < cutoff),
        flags=tuple(sorted(w.trace.flags)),
        delta_t=w.trace.delta_t,
    )


def _opposite_side_first(diff, sign: float, theta: float, start: float) -> bool:
    """True if, after ``start``, the output crosses ``-sign*theta`` before ``sign*theta``."""
    y = sign * diff.values[diff.times() >= start]
    hit = np.flatnonzero(np.abs(y) >= theta)
    return bool(hit.size) and y[hit[0]] < 0


def calibrate(
    calib_trials,
    base: CircuitParams | None = None,
    *,
    k: float = DEFAULT_K,
    floor: float = DEFAULT_FLOOR,
    rail_margin: float = DEFAULT_RAIL_MARGIN,
    em_fraction: float = DEFAULT_EM_FRACTION,
    guard: float = DEFAULT_GUARD,
    min_gap: float = DEFAULT_MIN_GAP,
) -> CalibrationReport:
    """Pick CD/EM thresholds and integrator gain from calibration trials.

    ``base`` supplies the differentiator constants, comparator polarities and
    hysteresis fractions, ``tau_leak``, ``tau_reset``, rails and the solver
    step; ``tau_in`` is a lower bound that may be stretched.

    Raises:
        DomainError: empty trial list or out-of-range settings.
        CalibrationError: a trial never triggers CD or swings the wrong way
            first (inverted sensor polarity), the integrator never charges, or the final set violates the rail or baseline
            constraints. ``diagnostics`` holds what was measured.
    """
    records = list(calib_trials)
    if not records:
        raise DomainError("calibration needs at least one trial")
    if not (k > 0 and floor > 0 and 0 < rail_margin <= 1 and 0 < em_fraction < 1):
        raise DomainError("k, floor, rail_margin and em_fraction out of range")
    base = base or CircuitParams.default()

    baseline = _pooled_baseline(records, base, guard)
    if baseline.size == 0:
        raise DomainError("calibration trials have no baseline samples")
    sigma_d = float(np.std(baseline))
    theta_cd = max(k * sigma_d, floor)
    sign = -1.0 if base.cd_cmp.polarity == "below" else 1.0
    worst = float(np.max(sign * baseline))
    if worst >= theta_cd:
        theta_cd = EXCURSION_HEADROOM * worst
    if theta_cd >= base.diff.v_rail:
        raise CalibrationError(
            f"CD threshold {theta_cd:.4g} V reaches the differentiator rail; baseline too noisy"
        )
    params = replace(base, cd_cmp=base.cd_cmp.rescaled(theta_cd))

    # Probe with an unbounded rail: the response is linear in 1/tau_in.
    target = rail_margin * base.integ.v_rail
    integ = base.integ
    peaks: list[float] = []
    for _ in range(8):
        probe = replace(params, integ=replace(integ, v_rail=math.inf))
        peaks = []
        for rec in records:
            w = simulate_trial(rec.series, probe, rec.stimulus, guard=guard, min_gap=min_gap)
            if _opposite_side_first(w.differentiator, sign, theta_cd, rec.stimulus.onset - guard):
                # Report a polarity mismatch instead of silently flipping it.
                other = "above" if base.cd_cmp.polarity == "below" else "below"
                raise CalibrationError(
                    f"calibration trial {rec.key}: differentiator first leaves the band "
                    f"+-{theta_cd:.4g} V on the non-triggering side; sensor polarity looks "
                    f"inverted, try --cd-polarity {other}",
                    [_diag(r, probe, guard, min_gap) for r in records],
                )
            if w.trace.cd_rise is None:
                raise CalibrationError(
                    f"CD never fires on calibration trial {rec.key} at threshold {theta_cd:.4g} V",
                    [_diag(r, probe, guard, min_gap) for r in records],
                )
            peaks.append(float(w.integrator_magnitude.values.max()))
        top = max(peaks)
        if top <= target:
            break
        scale = top / target * (1 + 1e-9)
        tau_in = integ.tau_in * scale
        tau_leak = integ.tau_leak if integ.tau_leak > tau_in else integ.tau_leak * scale
        integ = replace(integ, tau_in=tau_in, tau_leak=tau_leak)
    else:
        raise CalibrationError(f"integrator peak {max(peaks):.4g} V could not be brought under {target:.4g} V")

    weakest = min(peaks)
    if not weakest > 0:
        raise CalibrationError("integrator never charges on at least one calibration trial")
    params = replace(params, integ=integ, em_cmp=base.em_cmp.rescaled(em_fraction * weakest))

    diagnostics = tuple(_diag(rec, params, guard, min_gap) for rec in records)
    problems = []
    for d in diagnostics:
        if d.baseline_false_triggers:
            problems.append(f"{(d.gas, d.level, d.trial)}: {d.baseline_false_triggers} baseline CD events")
        if d.peak_integrator > target:
            problems.append(f"{(d.gas, d.level, d.trial)}: integrator peak {d.peak_integrator:.4g} V > {target:.4g} V")
    if problems:
        raise CalibrationError("; ".join(problems), list(diagnostics))

    settings = {
        "k": k, "floor": floor, "rail_margin": rail_margin, "em_fraction": em_fraction,
        "guard": guard, "min_gap": min_gap,
        "calibration_trials": [list(r.key) for r in records],
    }
    return CalibrationReport(params, diagnostics, sigma_d, settings)


def validate(
    params: CircuitParams,
    held_out,
    *,
    jobs: int = 1,
    guard: float = DEFAULT_GUARD,
    min_gap: float = DEFAULT_MIN_GAP,
) -> ValidationSummary:
    """Encode held-out trials and tally flags and valid delays."""
    traces = encode_records(list(held_out), params, jobs=jobs, guard=guard, min_gap=min_gap)
    flag_counts: dict[str, int] = {}
    for tr in traces.values():
        for f in tr.flags:
            flag_counts[f] = flag_counts.get(f, 0) + 1
    n_valid = sum(1 for tr in traces.values() if tr.valid)
    return ValidationSummary(len(traces), n_valid, dict(sorted(flag_counts.items())), traces)
