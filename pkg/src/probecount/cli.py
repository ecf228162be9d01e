"""Command-line entry point: ``probecount <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import anonymizer, calibration, counter, dumpstore, simulator, statbounds
from .config import ConfigError, load_scenario, parse_threshold_overrides
from .pipeline import PipelineError, run_pipeline
from .types import FrameSpec, RECORD_DTYPE, RxParams, SensorConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _scenario(args):
    cfg = load_scenario(args.config)
    return cfg.with_overrides(
        seed=getattr(args, "seed", None),
        frames=getattr(args, "frames", None),
        frame_duration=getattr(args, "frame_duration", None),
        rssi_thresholds=parse_threshold_overrides(getattr(args, "rssi_threshold", None)),
    )


def _frame_spec(args, cfg=None) -> FrameSpec:
    base = cfg.frame_spec if cfg is not None else FrameSpec()
    if args.frame_duration is not None:
        return FrameSpec(args.frame_duration, base.epoch)
    return base


def _load_records(paths) -> np.ndarray:
    """Dump files (*.prb) or token CSVs, merged and ts-sorted."""
    parts = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            parts.append(dumpstore.load_dumps(sorted(p.glob("*.prb"))))
        elif p.suffix == ".prb":
            parts.append(dumpstore.read_dump(p)[0])
        else:
            with open(p) as fh:
                parts.append(anonymizer.read_token_csv(fh))
    if not parts:
        return np.empty(0, dtype=RECORD_DTYPE)
    merged = np.concatenate(parts)
    return merged[np.lexsort((merged["sensor_id"], merged["ts"]))]


def cmd_run(args) -> int:
    cfg = _scenario(args)
    res = run_pipeline(cfg, args.out)
    s = res.summary
    print(f"beta_used={s['beta_used']:.4f} rmse={s['rmse']:.3f} mape={s['mape']:.3f}% "
          f"mean_n_ppl={s['mean_n_ppl']:.1f} outputs={res.out_dir}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scen = simulator.run_scenario(cfg.population, cfg.sensors, cfg.frames, cfg.mobility,
                                  cfg.seed, cfg.venue, cfg.frame_spec)
    # raw MACs go to a file only, never to stdout
    simulator.write_raw_records(scen.records, out / "raw_records.csv")
    simulator.write_ground_truth(scen.ground_truth, cfg.frame_spec, out / "ground_truth.csv")
    print(f"{len(scen.records)} records over {cfg.frames} frames written to {out}")
    return EXIT_OK


def _sensor_pepper(args) -> bytes:
    if args.sensor_pepper:
        pep = bytes.fromhex(args.sensor_pepper)
        if len(pep) != anonymizer.PEPPER_BYTES:
            raise ConfigError("--sensor-pepper must be 32 hex digits")
        return pep
    try:
        return anonymizer.sensor_pepper_from_env()
    except KeyError:
        raise ConfigError(f"no sensor pepper: pass --sensor-pepper or set {anonymizer.SENSOR_PEPPER_ENV}") from None


def cmd_anonymize(args) -> int:
    raw = simulator.read_raw_records(args.input)
    raw = raw[np.argsort(raw["ts"], kind="stable")]
    pepper = _sensor_pepper(args)
    if args.peppers:
        schedule = anonymizer.read_pepper_file(args.peppers, pepper)
        tokens = anonymizer.anonymize_records(raw, schedule)
    else:
        source = anonymizer.seeded_entropy(args.pepper_seed) if args.pepper_seed is not None else os.urandom
        tokens = anonymizer.anonymize_stream(raw, pepper, source, args.retention)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        anonymizer.write_token_csv(tokens, out)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_count(args) -> int:
    records = _load_records(args.input)
    if args.config:
        cfg = _scenario(args)
        sensors, areas, fs = cfg.sensors, cfg.areas, cfg.frame_spec
    else:
        overrides = parse_threshold_overrides(args.rssi_threshold)
        default = overrides.get(None, float("-inf"))
        rx = RxParams(detection_floor=float("-inf"))
        sensors = [SensorConfig(int(s), rssi_lower_bound=overrides.get(int(s), default), rx=rx)
                   for s in np.unique(records["sensor_id"]).tolist()]
        areas, fs = {}, _frame_spec(args)
    results = counter.count_stream(records, sensors, fs, areas)
    out = Path(args.out) if args.out else None
    if out:
        counter.write_counts(results, fs, out)
    else:
        sys.stdout.write("frame_start_ts,sensor_id,count\n")
        for r in results:
            for sid in sorted(r.counts_per_sensor):
                sys.stdout.write(f"{fs.frame(r.frame).start},{sid},{r.counts_per_sensor[sid]}\n")
    if args.areas_out and areas:
        counter.write_area_counts(results, fs, Path(args.areas_out))
    return EXIT_OK


def _parse_grid(args) -> list[float]:
    if args.p:
        return [float(v) for v in args.p.split(",")]
    n = args.p_grid
    return [i / (n + 1) for i in range(1, n + 1)]


def cmd_bounds(args) -> int:
    try:
        rows = statbounds.bound_table(_parse_grid(args), args.n, args.phi, args.trials, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    statbounds.write_bound_table(rows, sys.stdout)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    ref = calibration.read_series(args.reference)
    meas = calibration.read_series(args.measured)
    cal = calibration.CalendarConfig()
    if args.calendar:
        path = Path(args.calendar)
        if not path.is_file():
            raise ConfigError(f"calendar file not found: {path}")
        cal = calibration.CalendarConfig.from_dict(json.loads(path.read_text()))
    pair = calibration.preprocess(ref, meas, cal)
    report = calibration.calibrate(pair, beta=args.beta)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        calibration.write_report(report, Path(args.out))
    print(text)
    if args.window:
        window = int(args.window) if args.window.isdigit() else args.window
        rep = calibration.fit_windowed(pair, window)
        if args.table_out:
            calibration.write_window_table(rep, Path(args.table_out))
        for f in rep.windows:
            print(f"window {f.start}: beta={f.beta_tilde:.4f} mean={f.mean_reference:.1f} "
                  f"rmse={f.rmse:.2f} mape={f.mape:.2f}%", file=sys.stderr)
    return EXIT_OK


def cmd_dump(args) -> int:
    records = _load_records(args.input)
    fs = FrameSpec(args.frame_duration or 60)
    stream = dumpstore.rerandomize_stream(records, fs, args.seed)
    paths = dumpstore.dump_stream(stream, args.out_dir)
    if args.retention is not None:
        prune_dumps(Path(args.out_dir), args.retention)
    print(f"wrote {len(paths)} dump files to {args.out_dir}")
    return EXIT_OK


def prune_dumps(directory: Path, keep_days: int) -> list[Path]:
    """Delete dump files more than ``keep_days`` days older than the newest one."""
    files = sorted(directory.glob("*.prb"))
    if not files:
        return []
    days = {p: dumpstore.read_dump(p)[1].day for p in files}
    newest = max(days.values())
    removed = [p for p, d in days.items() if d <= newest - keep_days]
    for p in removed:
        p.unlink()
    return removed


def cmd_read_dump(args) -> int:
    records, header = dumpstore.read_dump(args.path)
    print(f"sensor={header.sensor_id} day={header.day} records={header.n_records} version={header.version}",
          file=sys.stderr)
    anonymizer.write_token_csv(records, sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probecount", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_flags(p, out_required=True):
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int)
        p.add_argument("--frames", type=int)
        p.add_argument("--frame-duration", type=int)
        p.add_argument("--rssi-threshold", action="append", metavar="[ID=]DBM")
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("run", help="full pipeline on a scenario")
    scenario_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="write raw record stream and ground truth")
    scenario_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("anonymize", help="raw record CSV -> token CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--peppers", help="pepper file: '<minute> <32 hex>' per line")
    p.add_argument("--pepper-seed", type=int, help="deterministic peppers (testing only)")
    p.add_argument("--sensor-pepper", help=f"32 hex digits; default ${anonymizer.SENSOR_PEPPER_ENV}")
    p.add_argument("--retention", type=int, default=anonymizer.DEFAULT_RETENTION)
    p.add_argument("--out")
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("count", help="per-frame per-sensor counts")
    p.add_argument("input", nargs="+", help="dump files/directories or token CSVs")
    p.add_argument("--config")
    p.add_argument("--frame-duration", type=int)
    p.add_argument("--rssi-threshold", action="append", metavar="[ID=]DBM")
    p.add_argument("--out")
    p.add_argument("--areas-out")
    p.set_defaults(func=cmd_count, seed=None, frames=None)

    p = sub.add_parser("bounds", help="K(p), concentration and Hoeffding bounds as CSV")
    p.add_argument("--p", help="comma-separated probabilities")
    p.add_argument("--p-grid", type=int, default=19)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--phi", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("calibrate", help="fit the extrapolation factor on two count CSVs")
    p.add_argument("--reference", required=True)
    p.add_argument("--measured", required=True)
    p.add_argument("--calendar")
    p.add_argument("--beta", type=float, help="known per-device factor, to report kappa")
    p.add_argument("--window", help="'week', 'day' or a length in seconds")
    p.add_argument("--out")
    p.add_argument("--table-out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("dump", help="re-randomize per frame and write per-sensor/day dumps")
    p.add_argument("input", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--frame-duration", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--retention", type=int, help="keep only the newest N days of dumps")
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("read-dump", help="dump file -> token CSV on stdout")
    p.add_argument("path")
    p.set_defaults(func=cmd_read_dump)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError, OSError) as exc:
        print(f"[{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
