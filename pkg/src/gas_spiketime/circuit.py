"""Behavioral models of the analog blocks of the two-pathway encoder circuit.

Op-amps are ideal apart from output clamping to the supply rails, and the
transistor switches are ideal: the gate switch connects the integrator input
while the change-detection pulse is high, and the reset switch shortens the
integrator decay constant after the pulse falls.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Literal, NamedTuple

import numpy as np

from .errors import DomainError, NumericError
from .series import TimeSeries

Polarity = Literal["above", "below"]

DEFAULT_HYSTERESIS_FRACTION = 0.05


@dataclass(frozen=True)
class DifferentiatorParams:
    """Inverting differentiator ``-tau_d*s / (1 + tau_parasitic*s)``."""

    tau_d: float
    tau_parasitic: float = 0.0
    v_rail: float = 4.5

    def __post_init__(self) -> None:
        if not self.tau_d > 0:
            raise DomainError(f"tau_d must be positive, got {self.tau_d}")
        if self.tau_parasitic < 0:
            raise DomainError(f"tau_parasitic must be >= 0, got {self.tau_parasitic}")
        if self.tau_parasitic > self.tau_d / 10:
            raise DomainError("tau_parasitic must not exceed tau_d/10")
        if not self.v_rail > 0:
            raise DomainError(f"v_rail must be positive, got {self.v_rail}")


@dataclass(frozen=True)
class IntegratorParams:
    """Lossy inverting integrator with input, feedback and reset time constants."""

    tau_in: float
    tau_leak: float
    tau_reset: float
    v_rail: float = 4.5

    def __post_init__(self) -> None:
        if not self.tau_in > 0:
            raise DomainError(f"tau_in must be positive, got {self.tau_in}")
        if not self.tau_leak > self.tau_in:
            raise DomainError("tau_leak must exceed tau_in")
        if not 0 < self.tau_reset < self.tau_in / 10:
            raise DomainError("tau_reset must lie in (0, tau_in/10)")
        if not self.v_rail > 0:
            raise DomainError(f"v_rail must be positive, got {self.v_rail}")


@dataclass(frozen=True)
class ComparatorParams:
    """Threshold comparator with hysteresis.

    With ``polarity="below"`` the output asserts once the input reaches
    ``-threshold`` and releases once it climbs back to
    ``-(threshold - hysteresis)``; ``"above"`` mirrors this around zero.
    ``hysteresis=None`` means 5% of the threshold.
    """

    threshold: float
    hysteresis: float | None = None
    polarity: Polarity = "above"

    def __post_init__(self) -> None:
        if self.hysteresis is None:
            object.__setattr__(self, "hysteresis", DEFAULT_HYSTERESIS_FRACTION * self.threshold)
        if not self.threshold > 0:
            raise DomainError(f"threshold must be positive, got {self.threshold}")
        if not 0 <= self.hysteresis < self.threshold:
            raise DomainError("hysteresis must lie in [0, threshold)")
        if self.polarity not in ("above", "below"):
            raise DomainError(f"unknown polarity {self.polarity!r}")

    def rescaled(self, threshold: float) -> ComparatorParams:
        """Same polarity and relative hysteresis at a new threshold."""
        fraction = self.hysteresis / self.threshold
        return replace(self, threshold=threshold, hysteresis=fraction * threshold)


@dataclass(frozen=True)
class CircuitParams:
    diff: DifferentiatorParams
    cd_cmp: ComparatorParams
    integ: IntegratorParams
    em_cmp: ComparatorParams
    solver_step: float = field(default=1e-3)

    def __post_init__(self) -> None:
        if not self.solver_step > 0:
            raise DomainError("solver_step must be positive")
        if self.solver_step > self.max_solver_step(self.diff, self.integ) * (1 + 1e-12):
            raise DomainError(
                f"solver_step {self.solver_step} too coarse; must be <= "
                f"{self.max_solver_step(self.diff, self.integ)}"
            )

    @staticmethod
    def max_solver_step(diff: DifferentiatorParams, integ: IntegratorParams) -> float:
        """Largest step that still resolves the fastest active dynamics."""
        fastest_cd = diff.tau_parasitic if diff.tau_parasitic > 0 else diff.tau_d
        return min(fastest_cd, integ.tau_in, integ.tau_reset * 10) / 20

    @classmethod
    def default(cls) -> CircuitParams:
        """Starting point for calibration; thresholds are placeholders."""
        diff = DifferentiatorParams(tau_d=1.0, tau_parasitic=0.1, v_rail=4.5)
        integ = IntegratorParams(tau_in=0.1, tau_leak=10.0, tau_reset=2e-3, v_rail=4.5)
        return cls(
            diff=diff,
            cd_cmp=ComparatorParams(0.02, polarity="below"),
            integ=integ,
            em_cmp=ComparatorParams(0.1, polarity="above"),
            solver_step=cls.max_solver_step(diff, integ),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> CircuitParams:
        return cls(
            diff=DifferentiatorParams(**data["diff"]),
            cd_cmp=ComparatorParams(**data["cd_cmp"]),
            integ=IntegratorParams(**data["integ"]),
            em_cmp=ComparatorParams(**data["em_cmp"]),
            solver_step=float(data["solver_step"]),
        )


@dataclass(frozen=True)
class PulseTrain:
    """Sorted, disjoint on-intervals of a comparator output.

    The last interval may have ``fall=None`` when the pulse is still high at
    the end of the trace.
    """

    intervals: tuple[tuple[float, float | None], ...] = ()

    def __post_init__(self) -> None:
        ivs = tuple((float(r), None if f is None else float(f)) for r, f in self.intervals)
        prev_fall = -math.inf
        for i, (rise, fall) in enumerate(ivs):
            if fall is None and i != len(ivs) - 1:
                raise DomainError("only the last interval may be open")
            if fall is not None and not rise < fall:
                raise DomainError(f"interval {i} has rise {rise} >= fall {fall}")
            if not rise > prev_fall:
                raise DomainError(f"interval {i} overlaps or precedes its predecessor")
            prev_fall = fall if fall is not None else math.inf
        object.__setattr__(self, "intervals", ivs)

    def __len__(self) -> int:
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    @property
    def unterminated(self) -> bool:
        return bool(self.intervals) and self.intervals[-1][1] is None

    @property
    def rises(self) -> list[float]:
        return [r for r, _ in self.intervals]

    @property
    def falls(self) -> list[float]:
        return [f for _, f in self.intervals if f is not None]


class IntegratorOutput(NamedTuple):
    signed: TimeSeries
    magnitude: TimeSeries


def solve_step(state: float, deriv: Callable[[float, float], float], t: float, h: float) -> float:
    """One classical fourth-order Runge-Kutta step of ``dv/dt = deriv(t, v)``."""
    k1 = deriv(t, state)
    k2 = deriv(t + h / 2, state + h / 2 * k1)
    k3 = deriv(t + h / 2, state + h / 2 * k2)
    k4 = deriv(t + h, state + h * k3)
    out = state + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not math.isfinite(out):
        raise NumericError(f"non-finite solver state at t={t + h}")
    return out


def _on_grid(series: TimeSeries, step: float | None) -> TimeSeries:
    if step is None or step == series.dt_sample:
        return series
    return series.resample(step)


def differentiator_response(
    series: TimeSeries, p: DifferentiatorParams, *, step: float | None = None
) -> TimeSeries:
    """Output of the inverting differentiator driven by ``series``.

    A rising input gives a negative output. With ``tau_parasitic == 0`` the
    derivative is the backward difference of consecutive samples; otherwise
    the input lag state is integrated with RK4 and the output is
    ``-tau_d/tau_parasitic * (input - lag)``. The output is clamped to
    ``+/-v_rail``.
    """
    x = _on_grid(series, step)
    if x.duration <= 0:
        raise DomainError("input must span a positive duration")
    h = x.dt_sample
    xs = x.values
    if p.tau_parasitic == 0:
        y = np.empty_like(xs)
        y[0] = 0.0
        y[1:] = -p.tau_d * np.diff(xs) / h
    else:
        tau = p.tau_parasitic
        lag = np.empty_like(xs)
        w = float(xs[0])
        lag[0] = w
        for k in range(len(xs) - 1):
            x0 = float(xs[k])
            dx = float(xs[k + 1]) - x0

            def deriv(s: float, w_: float, x0=x0, dx=dx) -> float:
                return (x0 + s / h * dx - w_) / tau

            w = solve_step(w, deriv, 0.0, h)
            lag[k + 1] = w
        y = -p.tau_d / tau * (xs - lag)
    return x.with_values(np.clip(y, -p.v_rail, p.v_rail))


def comparator(series: TimeSeries, p: ComparatorParams) -> PulseTrain:
    """On-intervals of the comparator, edges refined by linear interpolation."""
    sign = 1.0 if p.polarity == "above" else -1.0
    x = sign * series.values
    on_level = p.threshold
    off_level = p.threshold - p.hysteresis
    on_idx = np.flatnonzero(x >= on_level)
    # Without hysteresis a sample sitting exactly on the threshold stays on.
    # Compare the levels, not p.hysteresis: a subnormal band rounds away.
    off_idx = np.flatnonzero(x <= off_level if off_level < on_level else x < off_level)
    h = series.dt_sample

    def crossing(k: int, level: float) -> float:
        if k == 0:
            return series.t0
        a, b = x[k - 1], x[k]
        frac = (level - a) / (b - a)
        return series.t0 + (k - 1 + frac) * h

    intervals: list[tuple[float, float | None]] = []
    pos = 0
    while True:
        i = np.searchsorted(on_idx, pos)
        if i >= on_idx.size:
            break
        k_on = int(on_idx[i])
        j = np.searchsorted(off_idx, k_on + 1)
        rise = crossing(k_on, on_level)
        fall = None if j >= off_idx.size else crossing(int(off_idx[j]), off_level)
        if intervals and rise <= intervals[-1][1]:
            # Rounding collapsed the gap to a previous pulse.
            rise = intervals.pop()[0]
        if fall is None:
            intervals.append((rise, None))
            break
        if fall > rise:
            intervals.append((rise, fall))
        pos = int(off_idx[j]) + 1
    return PulseTrain(tuple(intervals))


def gated_integrator(
    series: TimeSeries,
    gate: PulseTrain,
    p: IntegratorParams,
    *,
    step: float | None = None,
    reference: Literal["absolute", "gate_onset"] = "absolute",
    release_level: float | None = None,
) -> IntegratorOutput:
    """Lossy inverting integrator whose input switch is driven by ``gate``.

    Solves ``dv/dt = -g(t)*u(t)/tau_in - v/tau_eff``. ``u`` is the input
    itself (``reference="absolute"``) or the input minus its value at the
    rising edge of the current gate interval (``"gate_onset"``). After each
    falling gate edge the decay constant is ``tau_reset`` until ``|v|`` drops
    below ``release_level`` (never released when ``None``) or the gate rises
    again; otherwise it is ``tau_leak``. Gate edges that fall between grid
    points split the step so switching happens at the refined edge time.
    """
    x = _on_grid(series, step)
    h = x.dt_sample
    xs = x.values
    n = len(xs)
    t0 = x.t0

    events: list[tuple[float, bool]] = []
    for rise, fall in gate:
        if not (x.contains(rise) and (fall is None or x.contains(fall))):
            raise DomainError(f"gate interval ({rise}, {fall}) outside input domain")
        events.append((rise - t0, True))
        if fall is not None:
            events.append((fall - t0, False))

    out = np.zeros(n)
    v = 0.0
    gated = False
    resetting = False
    xref = 0.0
    rail = p.v_rail
    inv_in = 1.0 / p.tau_in
    ev = 0

    def level_at(k: int, s: float) -> float:
        # s is an offset inside step k, in [0, h].
        return float(xs[k]) + s / h * (float(xs[k + 1]) - float(xs[k])) if k + 1 < n else float(xs[k])

    def apply(k: int, s: float, rising: bool) -> None:
        nonlocal gated, resetting, xref
        if rising:
            gated, resetting = True, False
            xref = level_at(k, s) if reference == "gate_onset" else 0.0
        else:
            gated, resetting = False, True

    for k in range(n - 1):
        s0 = k * h
        s1 = (k + 1) * h
        while ev < len(events) and events[ev][0] <= s0:
            apply(k, 0.0, events[ev][1])
            ev += 1
        cuts = [0.0]
        pending = []
        j = ev
        while j < len(events) and events[j][0] < s1:
            cuts.append(events[j][0] - s0)
            pending.append(events[j][1])
            j += 1
        cuts.append(h)
        for m in range(len(cuts) - 1):
            a, b = cuts[m], cuts[m + 1]
            if b > a and (gated or v != 0.0):
                tau_eff = p.tau_reset if resetting else p.tau_leak
                if gated:
                    x0 = float(xs[k]) - xref
                    dx = (float(xs[k + 1]) - float(xs[k])) / h

                    def deriv(s: float, v_: float, x0=x0, dx=dx, tau_eff=tau_eff) -> float:
                        return -(x0 + s * dx) * inv_in - v_ / tau_eff

                else:

                    def deriv(s: float, v_: float, tau_eff=tau_eff) -> float:
                        return -v_ / tau_eff

                v = solve_step(v, deriv, a, b - a)
                v = min(max(v, -rail), rail)
            if m < len(pending):
                apply(k, cuts[m + 1], pending[m])
                ev += 1
            if resetting and release_level is not None and abs(v) < release_level:
                resetting = False
        out[k + 1] = v

    signed = x.with_values(out)
    return IntegratorOutput(signed, x.with_values(np.abs(out)))
