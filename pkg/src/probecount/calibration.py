"""Fit the global extrapolation factor against a reference count series.

The measured series (distinct tokens per sample) is scaled by a single scalar
``beta_tilde`` that minimises the squared error to the reference counts:
``beta_tilde = <c_wifi, c_ref> / ||c_wifi||^2``.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

DAY = 86400
WEEK = 7 * DAY
# 1970-01-01 was a Thursday; shifting by 3 days aligns weeks to Mondays.
_MONDAY_SHIFT = 3 * DAY


@dataclass
class TimeSeries:
    ts: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.ts.shape != self.values.shape:
            raise ValueError("timestamps and values differ in length")
        if np.any(np.diff(self.ts) <= 0):
            order = np.argsort(self.ts, kind="stable")
            self.ts, self.values = self.ts[order], self.values[order]
            if np.any(np.diff(self.ts) == 0):
                raise ValueError("duplicate timestamps in series")

    def __len__(self) -> int:
        return len(self.ts)


@dataclass
class CountPair:
    ts: np.ndarray
    reference: np.ndarray
    measured: np.ndarray

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=np.int64)
        self.reference = np.asarray(self.reference, dtype=float)
        self.measured = np.asarray(self.measured, dtype=float)
        if not len(self.ts) == len(self.reference) == len(self.measured):
            raise ValueError("count series must have equal lengths")

    def __len__(self) -> int:
        return len(self.ts)

    def select(self, mask: np.ndarray) -> "CountPair":
        return CountPair(self.ts[mask], self.reference[mask], self.measured[mask])


@dataclass
class CalendarConfig:
    """Which samples enter the comparison.

    Dates are UTC calendar days; ``end`` is inclusive. ``daily_window`` is an
    inclusive (start, end) time-of-day pair such as ("09:00", "18:00").
    """

    start: dt.date | None = None
    end: dt.date | None = None
    excluded_dates: frozenset[dt.date] = frozenset()
    daily_window: tuple[str, str] | None = None
    drop_weekends: bool = False
    downsample: str = "point"

    def __post_init__(self):
        if self.downsample not in ("point", "mean"):
            raise ValueError("downsample must be 'point' or 'mean'")
        self.start = _as_date(self.start)
        self.end = _as_date(self.end)
        self.excluded_dates = frozenset(_as_date(d) for d in self.excluded_dates)

    @classmethod
    def from_dict(cls, d: dict) -> "CalendarConfig":
        window = d.get("daily_window")
        return cls(
            start=d.get("start"),
            end=d.get("end"),
            excluded_dates=frozenset(d.get("excluded_dates", ())),
            daily_window=tuple(window) if window else None,
            drop_weekends=bool(d.get("drop_weekends", False)),
            downsample=d.get("downsample", "point"),
        )


def _as_date(v):
    if v is None or isinstance(v, dt.date):
        return v
    return dt.date.fromisoformat(v)


def _seconds_of_day(hhmm: str) -> int:
    h, m = hhmm.split(":")
    return int(h) * 3600 + int(m) * 60


def cadence(ts: np.ndarray) -> int | None:
    """Most common sampling step in seconds, or None for fewer than 2 samples."""
    d = np.diff(ts)
    if len(d) == 0:
        return None
    vals, counts = np.unique(d, return_counts=True)
    return int(vals[np.argmax(counts)])


def downsample(series: TimeSeries, coarse_ts: np.ndarray, step: int, mode: str = "point") -> TimeSeries:
    """Resample ``series`` onto ``coarse_ts``.

    ``point`` keeps the fine sample sitting exactly at each coarse timestamp;
    ``mean`` averages the fine samples in (t - step, t].
    """
    if mode == "point":
        keep = np.isin(series.ts, coarse_ts)
        return TimeSeries(series.ts[keep], series.values[keep])
    lo = np.searchsorted(series.ts, coarse_ts - step, side="right")
    hi = np.searchsorted(series.ts, coarse_ts, side="right")
    has = hi > lo
    csum = np.r_[0.0, np.cumsum(series.values)]
    means = (csum[hi[has]] - csum[lo[has]]) / (hi[has] - lo[has])
    return TimeSeries(coarse_ts[has], means)


def preprocess(reference: TimeSeries, measured: TimeSeries, calendar: CalendarConfig = CalendarConfig()) -> CountPair:
    """Align cadences, then keep samples inside the configured calendar."""
    c_ref, c_meas = cadence(reference.ts), cadence(measured.ts)
    if c_ref and c_meas and c_ref != c_meas:
        coarse, fine = max(c_ref, c_meas), min(c_ref, c_meas)
        if coarse % fine:
            raise ValueError(f"cadence ratio {coarse}/{fine} is not an integer")
        if c_meas < c_ref:
            measured = downsample(measured, reference.ts, coarse, calendar.downsample)
        else:
            reference = downsample(reference, measured.ts, coarse, calendar.downsample)

    common, i_ref, i_meas = np.intersect1d(reference.ts, measured.ts, return_indices=True)
    pair = CountPair(common, reference.values[i_ref], measured.values[i_meas])

    days = pair.ts // DAY
    keep = np.ones(len(pair), dtype=bool)
    if calendar.start is not None:
        keep &= days >= _epoch_day(calendar.start)
    if calendar.end is not None:
        keep &= days <= _epoch_day(calendar.end)
    if calendar.excluded_dates:
        keep &= ~np.isin(days, [_epoch_day(d) for d in calendar.excluded_dates])
    if calendar.drop_weekends:
        keep &= (days + 3) % 7 < 5  # Monday = 0
    if calendar.daily_window is not None:
        tod = pair.ts % DAY
        lo, hi = (_seconds_of_day(s) for s in calendar.daily_window)
        keep &= (tod >= lo) & (tod <= hi)
    return pair.select(keep)


def _epoch_day(d: dt.date) -> int:
    return (d - dt.date(1970, 1, 1)).days


def fit_extrapolation(pair: CountPair) -> float:
    """Scalar least-squares factor mapping measured onto reference counts."""
    denom = float(np.dot(pair.measured, pair.measured))
    if denom == 0.0:
        raise ValueError("measured series is all zero; extrapolation factor undefined")
    return float(np.dot(pair.measured, pair.reference)) / denom


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mape: float  # percent
    n_mape_excluded: int = 0


def evaluate(pair: CountPair, beta: float) -> Metrics:
    """RMSE and MAPE (percent) of ``beta * measured`` against the reference.

    Samples with a zero reference are left out of MAPE and counted.
    """
    if len(pair) == 0:
        raise ValueError("cannot evaluate an empty series")
    x, x_hat = pair.reference, beta * pair.measured
    rmse = math.sqrt(float(np.mean((x - x_hat) ** 2)))
    nz = x != 0
    excluded = int((~nz).sum())
    if excluded:
        warnings.warn(f"{excluded} zero-reference samples excluded from MAPE", stacklevel=2)
    mape = 100.0 * float(np.mean(np.abs(x[nz] - x_hat[nz]) / np.abs(x[nz]))) if nz.any() else math.nan
    return Metrics(rmse, mape, excluded)


@dataclass
class CalibrationReport:
    beta_tilde: float
    rmse: float
    mape: float
    mean_reference: float
    n_samples: int
    n_mape_excluded: int = 0
    beta: float | None = None
    kappa: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate(pair: CountPair, beta: float | None = None) -> CalibrationReport:
    """Fit and evaluate in one go.

    ``beta`` is an externally known per-device factor; when given, the
    coverage factor kappa = beta_tilde / beta is reported. It is never inferred.
    """
    b = fit_extrapolation(pair)
    m = evaluate(pair, b)
    return CalibrationReport(
        beta_tilde=b,
        rmse=m.rmse,
        mape=m.mape,
        mean_reference=float(np.mean(pair.reference)),
        n_samples=len(pair),
        n_mape_excluded=m.n_mape_excluded,
        beta=beta,
        kappa=b / beta if beta else None,
    )


@dataclass
class WindowFit:
    start: int
    beta_tilde: float
    mean_reference: float
    rmse: float
    mape: float
    n_samples: int


@dataclass
class WindowedReport:
    windows: list[WindowFit]
    average: dict
    global_fit: CalibrationReport
    skipped: list[int] = field(default_factory=list)


def window_ids(ts: np.ndarray, window) -> tuple[np.ndarray, int, int]:
    """Window index per timestamp plus (length, offset) to recover window starts."""
    if window == "week":
        length, offset = WEEK, -_MONDAY_SHIFT
    elif window == "day":
        length, offset = DAY, 0
    elif isinstance(window, (int, np.integer)) and window > 0:
        length, offset = int(window), 0
    else:
        raise ValueError(f"unknown window spec {window!r}")
    return (ts - offset) // length, length, offset


def fit_windowed(pair: CountPair, window="week") -> WindowedReport:
    """Independent fits per window; the average weights every window equally."""
    ids, length, offset = window_ids(pair.ts, window)
    fits, skipped = [], []
    if len(ids):
        all_ids = range(int(ids.min()), int(ids.max()) + 1)
    else:
        all_ids = range(0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for w in all_ids:
            sub = pair.select(ids == w)
            start = w * length + offset
            if len(sub) == 0 or not np.any(sub.measured):
                log.info("window starting at %d has no usable samples; skipped", start)
                skipped.append(start)
                continue
            r = calibrate(sub)
            fits.append(WindowFit(start, r.beta_tilde, r.mean_reference, r.rmse, r.mape, r.n_samples))
    if not fits:
        raise ValueError("no window holds usable samples")
    average = {
        k: float(np.mean([getattr(f, k) for f in fits]))
        for k in ("beta_tilde", "mean_reference", "rmse", "mape")
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        global_fit = calibrate(pair)
    return WindowedReport(fits, average, global_fit, skipped)


def read_series(path: Path) -> TimeSeries:
    """(timestamp, count) CSV with a header row; timestamps in epoch seconds."""
    ts, vals = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ValueError(f"{path}: expected a 'timestamp,count' header")
        for row in reader:
            if row:
                ts.append(int(row[0]))
                vals.append(float(row[1]))
    return TimeSeries(np.array(ts, dtype=np.int64), np.array(vals))


def write_series(series: TimeSeries, path: Path, name: str = "count") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", name])
        for t, v in zip(series.ts.tolist(), series.values.tolist()):
            w.writerow([t, repr(v)])


def write_report(report: CalibrationReport, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_window_table(rep: WindowedReport, path: Path) -> None:
    """Per-window rows, then 'average' and 'global' rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start", "beta_tilde", "mean_counts", "rmse", "mape"])
        for f in rep.windows:
            fmt = "%Y-%m-%d" if f.start % DAY == 0 else "%Y-%m-%d %H:%M"
            w.writerow([dt.datetime.fromtimestamp(f.start, dt.timezone.utc).strftime(fmt),
                        f"{f.beta_tilde:.4f}", f"{f.mean_reference:.1f}", f"{f.rmse:.2f}", f"{f.mape:.2f}"])
        a, g = rep.average, rep.global_fit
        w.writerow(["average", f"{a['beta_tilde']:.4f}", f"{a['mean_reference']:.1f}", f"{a['rmse']:.2f}", f"{a['mape']:.2f}"])
        w.writerow(["global", f"{g.beta_tilde:.4f}", f"{g.mean_reference:.1f}", f"{g.rmse:.2f}", f"{g.mape:.2f}"])
