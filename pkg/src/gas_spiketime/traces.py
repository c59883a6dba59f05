"""Per-trial event table written by ``encode`` and read by ``analyze``.

Columns: ``gas,level,trial,cd_rise_s,em_rise_s,delta_t_s,flags``. Missing
times are blank; flags are sorted and joined with ``;``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from .errors import IngestionError

TRACE_COLUMNS = ["gas", "level", "trial", "cd_rise_s", "em_rise_s", "delta_t_s", "flags"]


@dataclass(frozen=True)
class TraceRow:
    gas: str
    level: int
    trial: int
    cd_rise: float | None
    em_rise: float | None
    delta_t: float | None
    flags: frozenset[str] = frozenset()

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.gas, self.level, self.trial)


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def _num(s: str) -> float | None:
    return None if s == "" else float(s)


def traces_csv(traces: dict) -> str:
    """Render ``{(gas, level, trial): EventTrace-like}`` sorted by key."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for (gas, level, trial), tr in sorted(traces.items()):
        w.writerow([gas, level, trial, _fmt(tr.cd_rise), _fmt(tr.em_rise),
                    _fmt(tr.delta_t), ";".join(sorted(tr.flags))])
    return buf.getvalue()


def write_traces(path: str | Path, traces: dict) -> None:
    Path(path).write_text(traces_csv(traces), encoding="utf-8")


def read_traces(path: str | Path) -> dict[tuple[str, int, int], TraceRow]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot read trace table {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != TRACE_COLUMNS:
        raise IngestionError(f"{path}: expected header {','.join(TRACE_COLUMNS)}")
    rows: dict[tuple[str, int, int], TraceRow] = {}
    for rec in reader:
        try:
            row = TraceRow(
                gas=rec["gas"], level=int(rec["level"]), trial=int(rec["trial"]),
                cd_rise=_num(rec["cd_rise_s"]), em_rise=_num(rec["em_rise_s"]),
                delta_t=_num(rec["delta_t_s"]),
                flags=frozenset(f for f in rec["flags"].split(";") if f),
            )
        except (TypeError, ValueError) as exc:
            raise IngestionError(f"{path}: line {reader.line_num}: {exc}") from exc
        if row.key in rows:
            raise IngestionError(f"{path}: duplicate trial {row.key}")
        rows[row.key] = row
    return rows
