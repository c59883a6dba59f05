"""Command-line entry point: ``synth | calibrate | encode | analyze``.

Option precedence is command-line flag, then the matching section of the
``--config`` JSON file, then built-in defaults. A config file looks like::

    {"encode": {"jobs": 4, "guard": 0.05}, "calibrate": {"k": 6}}

Exit codes: 0 success, 2 usage, 3 ingestion, 4 calibration infeasible, 5 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import aggregate, export, monotonicity
from .calibration import (
    DEFAULT_EM_FRACTION,
    DEFAULT_FLOOR,
    DEFAULT_K,
    DEFAULT_RAIL_MARGIN,
    calibrate,
)
from .circuit import CircuitParams
from .dataset import GASES, SyntheticFamily, load_manifest, load_trial, write_synthetic_dataset
from .encoder import DEFAULT_GUARD, DEFAULT_MIN_GAP, encode_records, simulate_trial
from .errors import CalibrationError, DomainError, IngestionError
from .traces import read_traces, write_traces

log = logging.getLogger("gas_spiketime")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INGESTION = 3
EXIT_CALIBRATION = 4
EXIT_IO = 5


class UsageError(Exception):
    pass


def parse_cell(text: str, default_trial: int) -> tuple[str, int, int]:
    """``GAS:LEVEL`` or ``GAS:LEVEL:TRIAL``."""
    parts = text.strip().split(":")
    if len(parts) not in (2, 3) or parts[0] not in GASES:
        raise UsageError(f"bad cell {text!r}; expected GAS:LEVEL[:TRIAL] with GAS in {GASES}")
    try:
        level = int(parts[1])
        trial = int(parts[2]) if len(parts) == 3 else default_trial
    except ValueError:
        raise UsageError(f"bad cell {text!r}; level and trial must be integers") from None
    return (parts[0], level, trial)


def _cells(args, manifest) -> list[tuple[str, int, int]]:
    if args.cells:
        keys = [parse_cell(c, args.calib_trial) for spec in args.cells for c in spec.split(",") if c]
    else:
        keys = sorted({(e.gas, e.level, args.calib_trial) for e in manifest.trials})
    present = {e.key for e in manifest.trials}
    missing = [k for k in keys if k not in present]
    if missing:
        raise UsageError(f"calibration cells not in dataset: {missing}")
    return keys


def _base_params(args) -> CircuitParams:
    if args.base_params:
        params = _read_params(Path(args.base_params))
    else:
        params = CircuitParams.default()
    if args.cd_polarity:
        params = replace(params, cd_cmp=replace(params.cd_cmp, polarity=args.cd_polarity))
    return _with_step(params, args.solver_step)


def _with_step(params: CircuitParams, step: float | None) -> CircuitParams:
    return params if step is None else replace(params, solver_step=step)


def _read_params(path: Path) -> CircuitParams:
    data = json.loads(path.read_text(encoding="utf-8"))
    if "params" in data:
        if data.get("feasible") is False:
            raise UsageError(f"{path} is an infeasible calibration report")
        data = data["params"]
    return CircuitParams.from_dict(data)


def _run_calibration(args, manifest):
    keys = _cells(args, manifest)
    records = [load_trial(e, manifest.stimulus, manifest.load_resistance) for e in manifest.select(keys)]
    return calibrate(
        records, _base_params(args),
        k=args.k, floor=args.floor, rail_margin=args.rail_margin, em_fraction=args.em_fraction,
        guard=args.guard if args.guard is not None else DEFAULT_GUARD,
        min_gap=args.min_gap if args.min_gap is not None else DEFAULT_MIN_GAP,
    )


def cmd_synth(args) -> int:
    family = SyntheticFamily(noise_sigma=args.noise_sigma, sample_rate=args.sample_rate)
    manifest = write_synthetic_dataset(args.out, family, trials_per_cell=args.trials, seed=args.seed)
    path = Path(args.out) / "manifest.json"
    log.info("wrote %d trials", len(manifest))
    print(path)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    manifest = load_manifest(args.dataset)
    try:
        report = _run_calibration(args, manifest)
    except CalibrationError as exc:
        print(f"calibration infeasible: {exc}", file=sys.stderr)
        for d in exc.diagnostics:
            print(f"  {d}", file=sys.stderr)
        Path(args.out).write_text(json.dumps({
            "feasible": False, "reason": str(exc),
            "diagnostics": [vars(d) for d in exc.diagnostics],
        }, indent=2, default=str) + "\n", encoding="utf-8")
        return EXIT_CALIBRATION
    report.write(args.out)
    p = report.params
    print(f"theta_cd={p.cd_cmp.threshold:.6g} V  theta_em={p.em_cmp.threshold:.6g} V  "
          f"tau_in={p.integ.tau_in:.6g} s  trials={len(report.diagnostics)}")
    print(args.out)
    return EXIT_OK


def _write_waveforms(out_dir: Path, waves) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, series in (("input", waves.input), ("differentiator", waves.differentiator)):
        lines = ["time_s,voltage_V"] + [f"{float(t)!r},{float(v)!r}" for t, v in zip(series.times(), series.values)]
        (out_dir / f"{name}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    integ = waves.integrator
    lines = ["time_s,signed_V,magnitude_V"] + [
        f"{float(t)!r},{float(v)!r},{abs(float(v))!r}" for t, v in zip(integ.times(), integ.values)
    ]
    (out_dir / "integrator.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    lines = ["pulse,rise_s,fall_s"]
    for name, train in (("cd", waves.trace.cd), ("em", waves.trace.em)):
        lines += [f"{name},{r!r},{'' if f is None else repr(f)}" for r, f in train]
    (out_dir / "pulses.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_encode(args) -> int:
    manifest = load_manifest(args.dataset)
    guard = args.guard
    min_gap = args.min_gap
    if args.params:
        path = Path(args.params)
        data = json.loads(path.read_text(encoding="utf-8"))
        settings = data.get("settings", {}) if "params" in data else {}
        params = _with_step(_read_params(path), args.solver_step)
        guard = guard if guard is not None else settings.get("guard", DEFAULT_GUARD)
        min_gap = min_gap if min_gap is not None else settings.get("min_gap", DEFAULT_MIN_GAP)
    else:
        try:
            report = _run_calibration(args, manifest)
        except CalibrationError as exc:
            print(f"calibration infeasible: {exc}", file=sys.stderr)
            return EXIT_CALIBRATION
        params = report.params
        report_path = Path(args.out).with_name(Path(args.out).stem + "_calibration.json")
        report.write(report_path)
        log.info("calibration report: %s", report_path)
    guard = DEFAULT_GUARD if guard is None else guard
    min_gap = DEFAULT_MIN_GAP if min_gap is None else min_gap

    records = []
    for entry in manifest.trials:
        try:
            records.append(load_trial(entry, manifest.stimulus, manifest.load_resistance))
        except IngestionError as exc:
            raise IngestionError(f"trial {entry.key}: {exc}") from exc
    traces = encode_records(records, params, jobs=args.jobs, guard=guard, min_gap=min_gap)
    write_traces(args.out, traces)

    if args.dump_waveforms:
        by_key = {r.key: r for r in records}
        out = Path(args.out)
        wave_root = Path(args.waveform_dir) if args.waveform_dir else out.with_name(out.stem + "_waveforms")
        for spec in args.dump_waveforms:
            key = parse_cell(spec, 0)
            if key not in by_key:
                raise UsageError(f"no trial {key} in dataset")
            rec = by_key[key]
            waves = simulate_trial(rec.series, params, rec.stimulus, guard=guard, min_gap=min_gap)
            _write_waveforms(wave_root / f"{key[0]}_C{key[1]}_t{key[2]:02d}", waves)

    n_flagged = sum(1 for t in traces.values() if t.flags)
    print(f"encoded {len(traces)} trials, {n_flagged} flagged -> {args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    rows = read_traces(args.traces)
    if args.gas:
        rows = {k: v for k, v in rows.items() if k[0] in set(args.gas)}
    if not rows:
        print(f"no trials to analyze in {args.traces}", file=sys.stderr)
        return EXIT_INGESTION
    curves = aggregate(rows)
    export(curves, args.out, formats=[f for f in args.formats.split(",") if f])
    for c in curves:
        try:
            rho = monotonicity(c)
        except DomainError:
            rho = float("nan")
        dropped = sum(s.n_discarded for s in c.levels)
        print(f"{c.gas}: spearman(level, 1/mean dt) = {rho:+.4f}  discarded = {dropped}")
    return EXIT_OK


def _add_encoder_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--guard", type=float, default=None,
                   help=f"seconds before onset a CD rise still counts (default {DEFAULT_GUARD})")
    p.add_argument("--min-gap", type=float, default=None,
                   help=f"merge CD pulses closer than this (default {DEFAULT_MIN_GAP})")
    p.add_argument("--solver-step", type=float, default=None, help="override the solver step (s)")


def _add_calibration_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cells", action="append", default=None, metavar="GAS:LEVEL[:TRIAL],...",
                   help="calibration cells (default: one trial of every gas/level)")
    p.add_argument("--calib-trial", type=int, default=0, help="trial index for cells given without one")
    p.add_argument("--base-params", default=None, help="JSON CircuitParams used as starting point")
    p.add_argument("--cd-polarity", choices=["above", "below"], default=None)
    p.add_argument("--k", type=float, default=DEFAULT_K, help="CD threshold in baseline sigmas")
    p.add_argument("--floor", type=float, default=DEFAULT_FLOOR, help="minimum CD threshold (V)")
    p.add_argument("--rail-margin", type=float, default=DEFAULT_RAIL_MARGIN)
    p.add_argument("--em-fraction", type=float, default=DEFAULT_EM_FRACTION)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gas-spiketime", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", default=None, help="JSON config file with per-command sections")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--trials", type=int, default=20, help="trials per gas/level cell")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=SyntheticFamily.noise_sigma)
    p.add_argument("--sample-rate", type=float, default=SyntheticFamily.sample_rate)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="tune thresholds on calibration trials")
    p.add_argument("--dataset", required=True, help="manifest file or dataset directory")
    p.add_argument("--out", required=True, help="calibration report (JSON)")
    _add_calibration_opts(p)
    _add_encoder_opts(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("encode", help="encode every trial into CD/EM events")
    p.add_argument("--dataset", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--params", help="calibration report or CircuitParams JSON")
    src.add_argument("--calibrate", action="store_true", help="calibrate first, then encode")
    p.add_argument("--out", required=True, help="trace table (CSV)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dump-waveforms", action="append", default=None, metavar="GAS:LEVEL:TRIAL",
                   help="write input/differentiator/integrator/pulse files for this trial")
    p.add_argument("--waveform-dir", default=None)
    _add_calibration_opts(p)
    _add_encoder_opts(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("analyze", help="per-gas 1/delay curves")
    p.add_argument("--traces", required=True, help="trace table from encode")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--gas", action="append", default=None, help="restrict to this gas (repeatable)")
    p.add_argument("--formats", default="csv,svg")
    p.set_defaults(func=cmd_analyze)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        config = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from exc
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, section in config.items():
        if name not in subparsers.choices:
            raise UsageError(f"config section {name!r} is not a command")
        sub = subparsers.choices[name]
        dests = {a.dest for a in sub._actions}
        unknown = set(section) - dests
        if unknown:
            raise UsageError(f"config section {name!r}: unknown keys {sorted(unknown)}")
        sub.set_defaults(**section)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, DomainError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGESTION
    except CalibrationError as exc:
        print(f"calibration infeasible: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
