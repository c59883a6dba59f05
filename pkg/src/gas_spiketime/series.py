"""Uniformly sampled voltage traces, baseline statistics and synthetic stimuli."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError

# Relative slack when checking that a time lies inside a sampled domain.
_DOMAIN_EPS = 1e-9


@dataclass(frozen=True)
class TimeSeries:
    """A voltage trace sampled every ``dt_sample`` seconds starting at ``t0``.

    ``values`` is stored as a read-only float64 array.
    """

    t0: float
    dt_sample: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise DomainError("values must be a non-empty 1-D sequence")
        if not self.dt_sample > 0:
            raise DomainError(f"dt_sample must be positive, got {self.dt_sample}")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise DomainError(f"non-finite sample at index {bad}")
        values.setflags(write=False)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt_sample", float(self.dt_sample))
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.t0 == other.t0
            and self.dt_sample == other.dt_sample
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt_sample

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) * self.dt_sample

    def contains(self, t: float) -> bool:
        slack = _DOMAIN_EPS * max(1.0, self.dt_sample, abs(self.t0), abs(self.t_end))
        return self.t0 - slack <= t <= self.t_end + slack

    def shifted(self, delta: float) -> TimeSeries:
        """Same samples, time axis moved by ``delta`` seconds."""
        return TimeSeries(self.t0 + delta, self.dt_sample, self.values)

    def with_values(self, values: np.ndarray) -> TimeSeries:
        return TimeSeries(self.t0, self.dt_sample, values)

    def sample_at_offsets(self, offsets: np.ndarray) -> np.ndarray:
        """Linear interpolation at times ``t0 + offsets``.

        Working in offsets from ``t0`` keeps the result independent of where
        the trace sits on the absolute time axis.
        """
        pos = np.asarray(offsets, dtype=np.float64) / self.dt_sample
        last = len(self) - 1
        slack = _DOMAIN_EPS * max(1.0, last)
        if pos.size and (pos.min() < -slack or pos.max() > last + slack):
            raise DomainError("sample offsets fall outside the series domain")
        pos = np.clip(pos, 0.0, last)
        # Snap to nodes within rounding so sample instants return samples exactly.
        nearest = np.rint(pos)
        pos = np.where(np.abs(pos - nearest) < 1e-9, nearest, pos)
        idx = np.minimum(np.floor(pos).astype(np.int64), max(last - 1, 0))
        frac = pos - idx
        if last == 0:
            return np.full(pos.shape, self.values[0])
        lo = self.values[idx]
        hi = self.values[idx + 1]
        # Exact node values when frac == 0 (lo + 0*(hi-lo) == lo).
        return lo + frac * (hi - lo)

    def resample(self, step: float) -> TimeSeries:
        """Resample onto the grid ``t0 + k*step`` covering the whole domain."""
        if not step > 0:
            raise DomainError(f"step must be positive, got {step}")
        n = int(np.floor(self.duration / step * (1 + 1e-12))) + 1
        offsets = np.arange(n) * step
        return TimeSeries(self.t0, step, self.sample_at_offsets(offsets))


@dataclass(frozen=True)
class StimulusWindow:
    """Interval during which gas is delivered."""

    onset: float = 0.0
    offset: float = 1.0

    def __post_init__(self) -> None:
        if not self.onset < self.offset:
            raise DomainError(f"stimulus onset {self.onset} must precede offset {self.offset}")

    def shifted(self, delta: float) -> StimulusWindow:
        return StimulusWindow(self.onset + delta, self.offset + delta)


@dataclass(frozen=True)
class BaselineStats:
    mean: float
    sigma: float
    window: tuple[float, float]


def value_at(series: TimeSeries, t: float) -> float:
    """Linearly interpolated value of ``series`` at time ``t``.

    Raises:
        DomainError: if ``t`` lies outside ``[t0, t0 + duration]``.
    """
    if not series.contains(t):
        raise DomainError(f"t={t} outside series domain [{series.t0}, {series.t_end}]")
    return float(series.sample_at_offsets(np.array([t - series.t0]))[0])


def baseline_stats(
    series: TimeSeries,
    pre_window: tuple[float, float] | StimulusWindow,
    *,
    onset: float | None = None,
) -> BaselineStats:
    """Mean and population standard deviation over ``start <= t < end``.

    If ``onset`` is given the window must end at or before it.
    """
    if isinstance(pre_window, StimulusWindow):
        start, end = pre_window.onset, pre_window.offset
    else:
        start, end = pre_window
    if not start < end:
        raise DomainError(f"empty baseline window [{start}, {end})")
    if onset is not None and end > onset:
        raise DomainError(f"baseline window end {end} is after stimulus onset {onset}")
    # The window end is exclusive, so it may sit one sample past the last one.
    if not (series.contains(start) and series.t0 < end <= series.t_end + series.dt_sample):
        raise DomainError(f"baseline window [{start}, {end}) outside series domain")
    t = series.times()
    chunk = series.values[(t >= start) & (t < end)]
    if chunk.size == 0:
        raise DomainError(f"no samples in baseline window [{start}, {end})")
    if np.ptp(chunk) == 0:
        return BaselineStats(float(chunk[0]), 0.0, (float(start), float(end)))
    return BaselineStats(float(np.mean(chunk)), float(np.std(chunk)), (float(start), float(end)))


def synth_trapezoid(
    base: float,
    amplitude: float,
    rise: float,
    hold: float,
    fall: float,
    dt_sample: float,
    noise_sigma: float = 0.0,
    seed: int | np.random.SeedSequence | None = None,
    *,
    onset: float = 0.0,
    pre: float = 2.0,
    tail: float = 2.0,
) -> TimeSeries:
    """Trapezoidal load-voltage response with optional additive Gaussian noise.

    The trace starts ``pre`` seconds before ``onset`` at ``base``, ramps to
    ``base + amplitude`` over ``rise``, holds for ``hold``, ramps back over
    ``fall`` and stays at ``base`` for ``tail`` seconds.
    """
    if not (rise > 0 and fall > 0 and dt_sample > 0):
        raise DomainError("rise, fall and dt_sample must be positive")
    if hold < 0 or pre < 0 or tail < 0 or noise_sigma < 0:
        raise DomainError("hold, pre, tail and noise_sigma must be non-negative")
    total = pre + rise + hold + fall + tail
    n = int(round(total / dt_sample)) + 1
    rel = np.arange(n) * dt_sample - pre
    knots = [0.0, rise, rise + hold, rise + hold + fall]
    shape = np.interp(rel, knots, [0.0, 1.0, 1.0, 0.0], left=0.0, right=0.0)
    values = base + amplitude * shape
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, noise_sigma, n)
    return TimeSeries(onset - pre, dt_sample, values)


def synth_concentration_family(
    base: float,
    amplitudes: Sequence[float],
    rise: float,
    hold: float,
    fall: float,
    dt_sample: float,
    **kwargs,
) -> list[TimeSeries]:
    """One noiseless trapezoid per amplitude, all sharing the same timing."""
    amps = list(amplitudes)
    if not amps:
        raise DomainError("amplitudes must be non-empty")
    if any(b <= a for a, b in zip(amps, amps[1:])):
        raise DomainError(f"amplitudes must be strictly increasing, got {amps}")
    return [synth_trapezoid(base, a, rise, hold, fall, dt_sample, **kwargs) for a in amps]
