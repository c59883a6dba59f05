"""Full two-pathway pipeline: change detection gates exposure measurement.

The concentration code is the delay between the rising flank of the
change-detection (CD) pulse and the rising flank of the exposure-measurement
(EM) pulse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

from .circuit import (
    CircuitParams,
    PulseTrain,
    comparator,
    differentiator_response,
    gated_integrator,
)
from .errors import DomainError
from .series import StimulusWindow, TimeSeries

NO_CD = "no_cd"
NO_EM = "no_em"
MULTIPLE_CD = "multiple_cd"
UNTERMINATED = "unterminated"
FLAGS = (NO_CD, NO_EM, MULTIPLE_CD, UNTERMINATED)

DEFAULT_GUARD = 0.05
DEFAULT_MIN_GAP = 0.02
# Reset switch opens again once |v| drops below this fraction of the EM threshold.
RESET_RELEASE_FRACTION = 0.01


@dataclass(frozen=True)
class EventTrace:
    cd: PulseTrain
    em: PulseTrain
    cd_rise: float | None
    em_rise: float | None
    delta_t: float | None
    flags: frozenset[str] = field(default_factory=frozenset)

    @property
    def valid(self) -> bool:
        return self.delta_t is not None


@dataclass(frozen=True)
class SpikeTrain:
    times: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        times = tuple(float(t) for t in self.times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise DomainError("spike times must be strictly increasing")
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class PipelineWaveforms:
    """Every internal signal of one simulated trial."""

    input: TimeSeries
    differentiator: TimeSeries
    integrator: TimeSeries
    integrator_magnitude: TimeSeries
    trace: EventTrace


def edges_to_spikes(pulses: PulseTrain, edge: Literal["rising", "falling"] = "rising") -> SpikeTrain:
    """One spike per selected edge.

    An open last interval has no falling edge and contributes no spike.
    """
    if edge == "rising":
        return SpikeTrain(tuple(pulses.rises))
    if edge == "falling":
        return SpikeTrain(tuple(pulses.falls))
    raise DomainError(f"unknown edge {edge!r}")


def merge_chatter(pulses: PulseTrain, min_gap: float = DEFAULT_MIN_GAP) -> PulseTrain:
    """Merge consecutive intervals separated by less than ``min_gap`` seconds."""
    if min_gap < 0:
        raise DomainError(f"min_gap must be >= 0, got {min_gap}")
    merged: list[tuple[float, float | None]] = []
    for rise, fall in pulses:
        if merged and merged[-1][1] is not None and rise - merged[-1][1] < min_gap:
            merged[-1] = (merged[-1][0], fall)
        else:
            merged.append((rise, fall))
    return PulseTrain(tuple(merged))


def simulate_trial(
    series: TimeSeries,
    params: CircuitParams,
    stimulus: StimulusWindow = StimulusWindow(),
    *,
    guard: float = DEFAULT_GUARD,
    min_gap: float = DEFAULT_MIN_GAP,
) -> PipelineWaveforms:
    """Run the circuit on one recording and keep all intermediate waveforms."""
    if not series.t0 < stimulus.onset - guard:
        raise DomainError(
            f"input starting at {series.t0} s has no baseline before onset {stimulus.onset} s"
        )
    if not series.contains(stimulus.onset):
        raise DomainError(f"stimulus onset {stimulus.onset} s outside input domain")
    x = series.resample(params.solver_step)

    diff = differentiator_response(x, params.diff)
    cd = merge_chatter(comparator(diff, params.cd_cmp), min_gap)
    integ = gated_integrator(
        x,
        cd,
        params.integ,
        reference="gate_onset",
        release_level=RESET_RELEASE_FRACTION * params.em_cmp.threshold,
    )
    em = comparator(integ.magnitude, params.em_cmp)

    flags: set[str] = set()
    if len(cd) > 1:
        flags.add(MULTIPLE_CD)
    cd_pick = next(((r, f) for r, f in cd if r >= stimulus.onset - guard), None)
    cd_rise = em_rise = delta_t = None
    if cd_pick is None:
        flags.add(NO_CD)
    else:
        cd_rise = cd_pick[0]
        if cd_pick[1] is None:
            flags.add(UNTERMINATED)
        em_pick = next(((r, f) for r, f in em if r > cd_rise), None)
        if em_pick is None:
            flags.add(NO_EM)
        else:
            em_rise = em_pick[0]
            delta_t = em_rise - cd_rise
            if em_pick[1] is None:
                flags.add(UNTERMINATED)

    trace = EventTrace(cd, em, cd_rise, em_rise, delta_t, frozenset(flags))
    return PipelineWaveforms(x, diff, integ.signed, integ.magnitude, trace)


def encode_trial(
    series: TimeSeries,
    params: CircuitParams,
    stimulus: StimulusWindow = StimulusWindow(),
    *,
    guard: float = DEFAULT_GUARD,
    min_gap: float = DEFAULT_MIN_GAP,
) -> EventTrace:
    """Encode one recording into CD/EM pulse trains and the delay between them.

    The first CD rise at or after ``stimulus.onset - guard`` starts the
    measurement; the delay runs to the first EM rise after it. Degenerate
    outcomes are reported through ``flags`` rather than raised.

    Raises:
        DomainError: if the input has no baseline before the stimulus.
    """
    return simulate_trial(series, params, stimulus, guard=guard, min_gap=min_gap).trace


def _encode_one(args):
    record, params, guard, min_gap = args
    return record.key, encode_trial(record.series, params, record.stimulus, guard=guard, min_gap=min_gap)


def encode_records(
    records,
    params: CircuitParams,
    *,
    jobs: int = 1,
    guard: float = DEFAULT_GUARD,
    min_gap: float = DEFAULT_MIN_GAP,
) -> dict:
    """Encode trial records, optionally across worker processes.

    Records need ``key``, ``series`` and ``stimulus`` attributes. The result
    is keyed by ``record.key`` and sorted by key whatever the execution order.
    """
    work = [(r, params, guard, min_gap) for r in records]
    if jobs > 1 and len(work) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_encode_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        results = [_encode_one(w) for w in work]
    return dict(sorted(results, key=lambda kv: kv[0]))
