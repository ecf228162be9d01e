"""Multi-floor building scenarios producing (reference, measured) count series.

Each sample runs one independent frame: a fresh crowd of the scheduled size is
placed over the floors, the sensors on the covered floors sniff it, MACs are
anonymized and the frame is counted. The reference is the true headcount of
the whole building, so the fitted factor estimates kappa * beta with
kappa = 1 / (share of people on covered floors).
"""
from __future__ import annotations

import datetime as dt
from typing import Callable, Sequence

import numpy as np

from .anonymizer import PepperSchedule, anonymize_records, seeded_entropy
from .calibration import DAY, CountPair
from .counter import FrameBatch, count_frame
from .simulator import Venue, sample_population, simulate_frame
from .types import FrameSpec, PopulationSpec, RxParams, SensorConfig, frame_of

# slabs block everything: no sensor hears another floor
BUILDING_RX = RxParams(path_loss_exponent=3.0, ref_power=-40.0, shadowing_std=4.0,
                       detection_floor=-95.0, floor_attenuation=80.0)


def building_sensors(covered_floors: Sequence[int], width: float = 40.0, height: float = 30.0,
                     per_floor: int = 2, rx: RxParams = BUILDING_RX) -> list[SensorConfig]:
    sensors = []
    for f in covered_floors:
        for j in range(per_floor):
            x = width * (j + 0.5) / per_floor
            sensors.append(SensorConfig(len(sensors) + 1, (x, height / 2), rx.detection_floor, rx, floor=f))
    return sensors


def opening_timestamps(start: dt.date, days: int, step: int = 1800,
                       window: tuple[str, str] = ("09:00", "18:00"), weekdays_only: bool = True) -> np.ndarray:
    """Sample times (epoch s) every ``step`` seconds inside the daily window."""
    lo = [int(v) for v in window[0].split(":")]
    hi = [int(v) for v in window[1].split(":")]
    lo_s, hi_s = lo[0] * 3600 + lo[1] * 60, hi[0] * 3600 + hi[1] * 60
    day0 = (start - dt.date(1970, 1, 1)).days
    out = []
    for d in range(day0, day0 + days):
        if weekdays_only and (d + 3) % 7 >= 5:
            continue
        out.extend(range(d * DAY + lo_s, d * DAY + hi_s + 1, step))
    return np.array(out, dtype=np.int64)


def daily_occupancy(ts: np.ndarray, peak: int, low: float = 0.35) -> np.ndarray:
    """Smooth occupancy curve over the day, ``low * peak`` at 09:00 and 18:00."""
    h = (ts % DAY) / 3600.0
    shape = np.clip(np.sin(np.pi * (h - 9.0) / 9.0), 0.0, 1.0)
    return np.rint(peak * (low + (1.0 - low) * shape)).astype(np.int64)


def building_count_series(
    mixture: Sequence[tuple[float, float]],
    ts: np.ndarray,
    occupancy: np.ndarray,
    floors: int,
    covered_floors: Sequence[int],
    seed: int = 0,
    floor_weights: Callable[[int], Sequence[float]] | None = None,
    width: float = 40.0,
    height: float = 30.0,
) -> CountPair:
    """Simulate one frame ending at each timestamp and count it.

    ``floor_weights(t)`` may return the floor distribution at time ``t`` to make
    the covered share (hence kappa) drift.
    """
    sensors = building_sensors(covered_floors, width, height)
    fs = FrameSpec(60)
    schedule = PepperSchedule(seeded_entropy(seed)(16))
    source = seeded_entropy(seed + 1)
    measured = np.zeros(len(ts))
    reference = np.zeros(len(ts))
    for i, (t, n) in enumerate(zip(ts.tolist(), occupancy.tolist())):
        w = tuple(floor_weights(t)) if floor_weights else None
        venue = Venue(width, height, floors, w)
        rng = np.random.default_rng([seed, i])
        pop = sample_population(PopulationSpec(max(int(n), 1), tuple(mixture)), rng, venue)
        raw, row = simulate_frame(pop, sensors, fs.frame(int(frame_of(t, fs))), rng, venue)
        for minute in np.unique(raw["ts"] // 60).tolist():
            schedule.rotate(minute, source)
        res = count_frame(FrameBatch.from_array(i, anonymize_records(raw, schedule)), sensors)
        measured[i] = res.total
        reference[i] = row.n_ppl
    return CountPair(ts, reference, measured)
