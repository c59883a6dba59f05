"""Trial ingestion from a JSON manifest plus per-trial CSV files.

Canonical layout::

    <root>/manifest.json
    <root>/trials/<gas>/C<level>/trial_<nn>.csv     # header: time_s,voltage_V

Each manifest entry names its CSV file (relative to the manifest), the
(gas, level, trial) key and the sample rate. A ``columns`` block, global or
per entry, maps foreign files onto (time, voltage): column name or 0-based
index, a voltage scale factor, the file-time of stimulus onset, and the
delimiter. ``"time": null`` means the file has no time column and sample
times are ``t_start_s + i / sample_rate_hz``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, DuplicateTrialError, IngestionError
from .series import StimulusWindow, TimeSeries, synth_trapezoid

GASES = ("EB", "Eu", "IA", "2H")
LEVELS = (1, 2, 3, 4, 5)
TRIALS_PER_CELL = 20
LOAD_RESISTANCE_OHM = 27e3
DILUTION = {"EB": "1:5", "Eu": "1:5", "IA": "1:5", "2H": "1:50"}

# Minimum span around onset every trial must cover (seconds).
MIN_PRE_ONSET = 2.0
MIN_POST_ONSET = 5.0
JITTER_TOLERANCE = 0.01

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ColumnMapping:
    time: str | int | None = "time_s"
    voltage: str | int = "voltage_V"
    voltage_scale: float = 1.0
    onset_s: float = 0.0
    t_start_s: float = 0.0
    delimiter: str = ","

    @classmethod
    def from_dict(cls, data: dict, base: ColumnMapping | None = None) -> ColumnMapping:
        base = base or cls()
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise IngestionError(f"unknown column-mapping keys: {sorted(unknown)}")
        return replace(base, **data)


@dataclass(frozen=True)
class ManifestEntry:
    file: Path
    gas: str
    level: int
    trial: int
    sample_rate: float
    columns: ColumnMapping = field(default_factory=ColumnMapping)

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.gas, self.level, self.trial)


@dataclass(frozen=True)
class DatasetManifest:
    trials: tuple[ManifestEntry, ...] = ()
    dilution: dict = field(default_factory=lambda: dict(DILUTION))
    load_resistance: float = LOAD_RESISTANCE_OHM
    stimulus: StimulusWindow = field(default_factory=StimulusWindow)
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def is_full_grid(self) -> bool:
        want = {(g, lv, t) for g in GASES for lv in LEVELS for t in range(TRIALS_PER_CELL)}
        return {e.key for e in self.trials} == want

    def select(self, keys) -> list[ManifestEntry]:
        wanted = set(keys)
        return [e for e in self.trials if e.key in wanted]


@dataclass(frozen=True)
class TrialRecord:
    gas: str
    level: int
    trial: int
    series: TimeSeries
    stimulus: StimulusWindow = field(default_factory=StimulusWindow)
    load_resistance: float = LOAD_RESISTANCE_OHM

    def __post_init__(self) -> None:
        _check_key(self.gas, self.level, self.trial)
        slack = 1e-9
        if self.series.t0 > self.stimulus.onset - MIN_PRE_ONSET + slack:
            raise DomainError(
                f"trial starts at {self.series.t0} s; needs data from "
                f"{MIN_PRE_ONSET} s before onset"
            )
        if self.series.t_end < self.stimulus.onset + MIN_POST_ONSET - slack:
            raise DomainError(
                f"trial ends at {self.series.t_end} s; needs data until "
                f"{MIN_POST_ONSET} s after onset"
            )

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.gas, self.level, self.trial)


def _check_key(gas: str, level: int, trial: int) -> None:
    if gas not in GASES:
        raise DomainError(f"unknown gas {gas!r}; expected one of {GASES}")
    if level not in LEVELS:
        raise DomainError(f"concentration level {level} outside 1..5")
    if trial < 0:
        raise DomainError(f"trial index must be >= 0, got {trial}")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest; ``path`` may be the file or its directory.

    Raises:
        IngestionError: missing file, malformed JSON, bad entry, level out of
            range.
        DuplicateTrialError: two entries with the same (gas, level, trial).
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise IngestionError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise IngestionError(f"manifest {path} must be a JSON object")

    root = path.parent
    try:
        columns = ColumnMapping.from_dict(data.get("columns", {}))
        stim = data.get("stimulus", {})
        stimulus = StimulusWindow(float(stim.get("onset_s", 0.0)), float(stim.get("offset_s", 1.0)))
        entries = []
        seen: set[tuple[str, int, int]] = set()
        for i, raw in enumerate(data.get("trials", [])):
            try:
                entry = ManifestEntry(
                    file=root / raw["file"],
                    gas=str(raw["gas"]),
                    level=int(raw["level"]),
                    trial=int(raw["trial"]),
                    sample_rate=float(raw["sample_rate_hz"]),
                    columns=ColumnMapping.from_dict(raw.get("columns", {}), columns),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise IngestionError(f"manifest {path}: trial entry {i} is malformed ({exc!r})") from exc
            try:
                _check_key(entry.gas, entry.level, entry.trial)
            except DomainError as exc:
                raise IngestionError(f"manifest {path}: trial entry {i}: {exc}") from exc
            if not (entry.sample_rate > 0 and math.isfinite(entry.sample_rate)):
                raise IngestionError(f"manifest {path}: trial entry {i} has bad sample rate")
            if entry.key in seen:
                raise DuplicateTrialError(f"manifest {path}: duplicate trial key {entry.key}")
            seen.add(entry.key)
            entries.append(entry)
    except DomainError as exc:
        raise IngestionError(f"manifest {path}: {exc}") from exc

    return DatasetManifest(
        trials=tuple(entries),
        dilution=dict(data.get("dilution", DILUTION)),
        load_resistance=float(data.get("load_resistance_ohm", LOAD_RESISTANCE_OHM)),
        stimulus=stimulus,
        root=root,
    )


def _column_index(header: list[str], col: str | int, path: Path) -> int:
    if isinstance(col, int):
        if not 0 <= col < len(header):
            raise IngestionError(f"{path}: column index {col} out of range")
        return col
    try:
        return header.index(col)
    except ValueError:
        raise IngestionError(f"{path}: no column named {col!r} in header {header}") from None


def load_trial(entry: ManifestEntry, stimulus: StimulusWindow | None = None,
               load_resistance: float = LOAD_RESISTANCE_OHM) -> TrialRecord:
    """Read one trial file into a uniform series with stimulus onset at 0 s.

    Raises:
        IngestionError: unreadable file, non-numeric or non-finite sample
            (the message names the line), sampling jitter above 1%, or a
            trial too short to satisfy the record invariants.
    """
    cols = entry.columns
    path = entry.file
    stimulus = stimulus or StimulusWindow()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open trial file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=cols.delimiter)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file")
        header = [h.strip() for h in header]
        vi = _column_index(header, cols.voltage, path)
        ti = None if cols.time is None else _column_index(header, cols.time, path)
        times: list[float] = []
        volts: list[float] = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                v = float(row[vi])
                t = float(row[ti]) if ti is not None else math.nan
            except (ValueError, IndexError) as exc:
                raise IngestionError(f"{path}: line {line}: unparseable sample ({exc})") from exc
            if not math.isfinite(v) or (ti is not None and not math.isfinite(t)):
                raise IngestionError(f"{path}: line {line}: non-finite sample")
            volts.append(v)
            times.append(t)
    if len(volts) < 2:
        raise IngestionError(f"{path}: fewer than two samples")

    dt = 1.0 / entry.sample_rate
    if ti is not None:
        steps = np.diff(np.asarray(times))
        worst = float(np.max(np.abs(steps - dt)))
        if worst > JITTER_TOLERANCE * dt:
            raise IngestionError(
                f"{path}: sampling interval deviates from 1/{entry.sample_rate} Hz "
                f"by up to {worst:.3g} s (tolerance {JITTER_TOLERANCE:.0%})"
            )
        t_first = times[0]
    else:
        t_first = cols.t_start_s
    values = np.asarray(volts)
    if cols.voltage_scale != 1.0:
        values = values * cols.voltage_scale
    t0 = t_first - cols.onset_s
    try:
        series = TimeSeries(t0, dt, values)
        return TrialRecord(entry.gas, entry.level, entry.trial, series, stimulus, load_resistance)
    except DomainError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def load_trials(manifest: DatasetManifest, keys=None) -> list[TrialRecord]:
    entries = manifest.trials if keys is None else manifest.select(keys)
    return [load_trial(e, manifest.stimulus, manifest.load_resistance) for e in entries]


@dataclass(frozen=True)
class SyntheticFamily:
    """Trapezoid responses standing in for the recorded sensor data.

    Peak excursion for a trial is ``gas_gain[gas] * level_amplitudes[level-1]``
    times a per-trial factor drawn from ``N(1, amplitude_jitter)``.
    """

    base: float = 0.5
    level_amplitudes: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    gas_gain: dict = field(default_factory=lambda: {"EB": 1.0, "Eu": 1.4, "IA": 0.8, "2H": 0.5})
    rise: float = 1.0
    hold: float = 0.0
    fall: float = 3.0
    pre: float = 2.0
    tail: float = 2.0
    sample_rate: float = 100.0
    noise_sigma: float = 5e-4
    amplitude_jitter: float = 0.02


def synthetic_trial(family: SyntheticFamily, gas: str, level: int, trial: int, seed: int) -> TimeSeries:
    """Deterministic trace for one grid cell; independent of generation order."""
    ss = np.random.SeedSequence(seed, spawn_key=(GASES.index(gas), level, trial))
    jitter_ss, noise_ss = ss.spawn(2)
    scale = 1.0
    if family.amplitude_jitter > 0:
        scale = float(np.random.default_rng(jitter_ss).normal(1.0, family.amplitude_jitter))
    amplitude = family.gas_gain[gas] * family.level_amplitudes[level - 1] * scale
    return synth_trapezoid(
        family.base, amplitude, family.rise, family.hold, family.fall,
        1.0 / family.sample_rate, family.noise_sigma, noise_ss,
        onset=0.0, pre=family.pre, tail=family.tail,
    )


def write_trial_csv(path: Path, series: TimeSeries) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["time_s,voltage_V"]
    lines += [f"{float(t)!r},{float(v)!r}" for t, v in zip(series.times(), series.values)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_synthetic_dataset(
    path: str | Path,
    family: SyntheticFamily | None = None,
    trials_per_cell: int = TRIALS_PER_CELL,
    seed: int = 0,
) -> DatasetManifest:
    """Write a canonical-format dataset with the 4 gas x 5 level grid."""
    family = family or SyntheticFamily()
    if trials_per_cell < 1:
        raise DomainError("trials_per_cell must be >= 1")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for gas in GASES:
        for level in LEVELS:
            for trial in range(trials_per_cell):
                rel = Path("trials") / gas / f"C{level}" / f"trial_{trial:02d}.csv"
                write_trial_csv(root / rel, synthetic_trial(family, gas, level, trial, seed))
                entries.append({
                    "file": rel.as_posix(), "gas": gas, "level": level,
                    "trial": trial, "sample_rate_hz": family.sample_rate,
                })
    manifest = {
        "format_version": FORMAT_VERSION,
        "load_resistance_ohm": LOAD_RESISTANCE_OHM,
        "dilution": dict(DILUTION),
        "stimulus": {"onset_s": 0.0, "offset_s": family.rise},
        "columns": {"time": "time_s", "voltage": "voltage_V"},
        "synthetic": {"seed": seed, "family": _family_dict(family)},
        "trials": entries,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return load_manifest(root / MANIFEST_NAME)


def _family_dict(family: SyntheticFamily) -> dict:
    out = {k: getattr(family, k) for k in family.__dataclass_fields__}
    out["level_amplitudes"] = list(family.level_amplitudes)
    return out
