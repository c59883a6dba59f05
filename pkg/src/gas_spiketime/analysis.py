"""Per-gas delay-versus-concentration curves and their export."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.stats import rankdata

from .dataset import GASES, LEVELS
from .errors import DomainError

CURVE_COLUMNS = ["gas", "level", "n_valid", "n_discarded", "mean_dt_s", "std_dt_s", "mean_inv_dt_per_s"]
INVERSE_COLUMNS = ["gas", "level", "n_valid", "mean_of_inv_dt_per_s", "std_of_inv_dt_per_s"]


@dataclass(frozen=True)
class LevelStats:
    """Statistics of one (gas, level) cell over its valid trials.

    ``mean_inverse_dt`` is ``1 / mean_delta_t``; ``mean_of_inverse`` and
    ``std_of_inverse`` are taken over the per-trial ``1 / delta_t``. Standard
    deviations are population (ddof=0). All are ``None`` for an empty cell.
    """

    level: int
    n_valid: int
    n_discarded: int
    mean_delta_t: float | None = None
    std_delta_t: float | None = None
    mean_inverse_dt: float | None = None
    mean_of_inverse: float | None = None
    std_of_inverse: float | None = None

    @property
    def empty(self) -> bool:
        return self.n_valid == 0


@dataclass(frozen=True)
class ConcentrationCurve:
    gas: str
    levels: tuple[LevelStats, ...]

    def level(self, level: int) -> LevelStats:
        return next(s for s in self.levels if s.level == level)


def _gas_order(gas: str) -> tuple[int, str]:
    return (GASES.index(gas), gas) if gas in GASES else (len(GASES), gas)


def _cell_stats(level: int, delays: list[float], n_discarded: int) -> LevelStats:
    if not delays:
        return LevelStats(level, 0, n_discarded)
    # Sorting first makes the float reductions independent of trial order.
    dt = np.sort(np.asarray(delays, dtype=np.float64))
    inv = np.sort(1.0 / dt)
    mean = float(np.mean(dt))
    return LevelStats(
        level=level,
        n_valid=int(dt.size),
        n_discarded=n_discarded,
        mean_delta_t=mean,
        std_delta_t=float(np.std(dt)),
        mean_inverse_dt=1.0 / mean,
        mean_of_inverse=float(np.mean(inv)),
        std_of_inverse=float(np.std(inv)),
    )


def aggregate(traces: Mapping[tuple[str, int, int], object]) -> list[ConcentrationCurve]:
    """Group traces by gas and level.

    Any trace without a delay (no CD or no EM pulse) counts as discarded.
    Values need a ``delta_t`` attribute; keys are ``(gas, level, trial)``.
    Levels 1..5 are always reported, empty cells included.
    """
    cells: dict[tuple[str, int], tuple[list[float], list[int]]] = {}
    for (gas, level, _trial), tr in traces.items():
        delays, dropped = cells.setdefault((gas, int(level)), ([], [0]))
        if tr.delta_t is None:
            dropped[0] += 1
        else:
            delays.append(float(tr.delta_t))

    curves = []
    for gas in sorted({g for g, _ in cells}, key=_gas_order):
        levels = sorted(set(LEVELS) | {lv for g, lv in cells if g == gas})
        stats = []
        for lv in levels:
            delays, dropped = cells.get((gas, lv), ([], [0]))
            stats.append(_cell_stats(lv, delays, dropped[0]))
        curves.append(ConcentrationCurve(gas, tuple(stats)))
    return curves


def spearman(x: Iterable[float], y: Iterable[float]) -> float:
    """Spearman rank correlation; NaN when either side is constant."""
    rx = rankdata(list(x))
    ry = rankdata(list(y))
    n = rx.size
    if n != ry.size or n < 2:
        raise DomainError("need two equally long sequences of length >= 2")
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        return math.nan
    if len(set(rx)) == n and len(set(ry)) == n:
        d2 = float(np.sum((rx - ry) ** 2))
        return 1.0 - 6.0 * d2 / (n * (n * n - 1))
    return float(np.corrcoef(rx, ry)[0, 1])


def monotonicity(curve: ConcentrationCurve) -> float:
    """Spearman correlation between level and ``1/mean(delta_t)``."""
    cells = [s for s in curve.levels if not s.empty]
    if len(cells) < 2:
        raise DomainError(f"{curve.gas}: need at least 2 non-empty levels, got {len(cells)}")
    return spearman([s.level for s in cells], [s.mean_inverse_dt for s in cells])


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def curves_csv(curves: list[ConcentrationCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for c in curves:
        for s in c.levels:
            w.writerow([c.gas, s.level, s.n_valid, s.n_discarded,
                        _fmt(s.mean_delta_t), _fmt(s.std_delta_t), _fmt(s.mean_inverse_dt)])
    return buf.getvalue()


def inverse_csv(curves: list[ConcentrationCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(INVERSE_COLUMNS)
    for c in curves:
        for s in c.levels:
            w.writerow([c.gas, s.level, s.n_valid, _fmt(s.mean_of_inverse), _fmt(s.std_of_inverse)])
    return buf.getvalue()


def render_svg(curves: list[ConcentrationCurve]) -> str:
    """One panel per gas: ``1/mean(dt)`` dots, error bars = std of per-trial ``1/dt``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with plt.rc_context({"svg.hashsalt": "gas-spiketime", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, len(curves), figsize=(3.0 * len(curves), 3.0), squeeze=False)
        for ax, c in zip(axes[0], curves):
            cells = [s for s in c.levels if not s.empty]
            ax.errorbar(
                [s.level for s in cells],
                [s.mean_inverse_dt for s in cells],
                yerr=[s.std_of_inverse for s in cells],
                fmt="o", capsize=3,
            )
            ax.set_title(c.gas)
            ax.set_xticks(list(LEVELS), [f"C{lv}" for lv in LEVELS])
            ax.set_xlabel("concentration level")
        axes[0][0].set_ylabel("1 / mean delay (1/s)")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def export(curves: list[ConcentrationCurve], out_dir: str | Path,
           formats: Iterable[str] = ("csv", "svg")) -> list[Path]:
    """Write ``curves.csv`` (+ ``curves_inverse.csv``) and/or ``curves.svg``."""
    if not curves:
        raise DomainError("nothing to export")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            for name, text in (("curves.csv", curves_csv(curves)), ("curves_inverse.csv", inverse_csv(curves))):
                (out / name).write_text(text, encoding="utf-8")
                written.append(out / name)
        elif fmt == "svg":
            (out / "curves.svg").write_text(render_svg(curves), encoding="utf-8")
            written.append(out / "curves.svg")
        else:
            raise DomainError(f"unknown export format {fmt!r}")
    return written
