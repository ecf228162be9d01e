"""End-to-end run: simulate, anonymize, dump/reload, count, estimate, calibrate."""
from __future__ import annotations

import io
import json
import logging
import os
import shutil
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import anonymizer, calibration, counter, dumpstore, simulator, statbounds
from .config import ScenarioConfig
from .types import mean_tx_probability

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, exit_code: int = 3):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = exit_code


@dataclass
class PipelineResult:
    out_dir: Path
    artifacts: dict[str, Path]
    summary: dict


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, typ, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError) and isinstance(exc, Exception):
            raise PipelineError(self.name, f"{type(exc).__name__}: {exc}") from exc
        return False


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_pipeline(cfg: ScenarioConfig, out_dir) -> PipelineResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    opts = cfg.pipeline
    fs = cfg.frame_spec
    art: dict[str, Path] = {}

    with _Stage("simulate"):
        scen = simulator.run_scenario(cfg.population, cfg.sensors, cfg.frames, cfg.mobility,
                                      cfg.seed, cfg.venue, fs)
        gt = scen.ground_truth
        art["ground_truth"] = out / "ground_truth.csv"
        simulator.write_ground_truth(gt, fs, art["ground_truth"])

    with _Stage("anonymize"):
        if opts.pepper_seed is not None:
            source = anonymizer.seeded_entropy(opts.pepper_seed)
        else:
            source = os.urandom
        sensor_pepper = source(anonymizer.PEPPER_BYTES)
        tokens = anonymizer.anonymize_stream(scen.records, sensor_pepper, source, opts.pepper_retention)
        del scen  # raw MACs go no further

    with _Stage("dump"):
        stream = dumpstore.rerandomize_stream(tokens, fs, [cfg.seed, 5])
        if opts.dump:
            dump_dir = out / "dumps"
            if dump_dir.exists():
                shutil.rmtree(dump_dir)
            paths = dumpstore.dump_stream(stream, dump_dir)
            art["dumps"] = dump_dir
            stream = dumpstore.load_dumps(paths)

    with _Stage("count"):
        results = counter.count_stream(stream, cfg.sensors, fs, cfg.areas, frames=gt.frames.tolist())
        art["counts"] = out / "counts.csv"
        counter.write_counts(results, fs, art["counts"])
        if cfg.areas:
            art["area_counts"] = out / "area_counts.csv"
            counter.write_area_counts(results, fs, art["area_counts"])
        x = np.array([r.total for r in results], dtype=float)

    p = mean_tx_probability(cfg.population)
    beta_model = 1.0 / p if p > 0 else None
    with _Stage("calibrate"):
        ts = np.array([fs.frame(k).start for k in gt.frames.tolist()], dtype=np.int64)
        pair = calibration.CountPair(ts, gt.n_ppl, x)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = calibration.calibrate(pair, beta=beta_model)
        if opts.beta == "fitted":
            beta = report.beta_tilde
        else:
            beta = float(opts.beta)
        c_hat = [counter.estimate_count(v, beta) for v in x.tolist()]
        art["estimates"] = out / "estimates.csv"
        with open(art["estimates"], "w") as fh:
            fh.write("frame_start_ts,n_ppl,X,c_hat\n")
            for t, n, xv, c in zip(ts.tolist(), gt.n_ppl.tolist(), x.tolist(), c_hat):
                fh.write(f"{t},{n},{int(xv)},{c:.6f}\n")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            used = calibration.evaluate(pair, beta)
        art["calibration"] = out / "calibration.json"
        calibration.write_report(report, art["calibration"])
        if opts.calibration_window is not None:
            windowed = calibration.fit_windowed(pair, opts.calibration_window)
            art["windows"] = out / "windows.csv"
            calibration.write_window_table(windowed, art["windows"])

    with _Stage("bounds"):
        n_mean = max(1, int(round(float(np.mean(gt.n_ppl)))))
        grid = np.linspace(0.0, 1.0, opts.bounds_grid + 2)[1:-1]
        buf = io.StringIO()
        buf.write("phi,")
        first = True
        for phi in opts.bounds_phi:
            rows = statbounds.bound_table(grid, n_mean, phi, opts.bounds_trials, cfg.seed)
            part = io.StringIO()
            statbounds.write_bound_table(rows, part)
            lines = part.getvalue().splitlines()
            if first:
                buf.write(lines[0] + "\n")
                first = False
            for line in lines[1:]:
                buf.write(f"{phi!r},{line}\n")
        art["bounds"] = out / "bounds.csv"
        art["bounds"].write_text(buf.getvalue())

    summary = {
        "seed": cfg.seed,
        "frames": cfg.frames,
        "frame_duration": fs.duration,
        "pepper_seed": opts.pepper_seed,
        "config": str(cfg.source) if cfg.source else None,
        "p": p,
        "beta_model": beta_model,
        "beta_used": beta,
        "beta_source": "fitted" if opts.beta == "fitted" else "fixed",
        "beta_tilde": report.beta_tilde,
        "mean_n_ppl": float(np.mean(gt.n_ppl)),
        "mean_X": float(np.mean(x)),
        "rmse": used.rmse,
        "mape": used.mape,
        "n_records": int(len(stream)),
    }
    art["summary"] = out / "run.json"
    _write_json(summary, art["summary"])
    return PipelineResult(out, art, summary)
