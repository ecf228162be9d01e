"""Per-frame deduplicated counting with max-RSSI sensor assignment."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .types import FrameSpec, ProbeRecord, SensorConfig, frame_of

DEFAULT_LOAD_FACTOR = 0.75
RECORD_BYTES = 16


class UnknownSensorError(KeyError):
    def __str__(self):
        return f"record from unconfigured sensor {self.args[0]}"


@dataclass
class FrameBatch:
    """All (sensor_id, token, rssi) tuples of one frame, in arrival order."""

    frame: int
    arr_mac: list[tuple[int, int, int]] = field(default_factory=list)

    @classmethod
    def from_records(cls, frame: int, records: Sequence[ProbeRecord]) -> "FrameBatch":
        return cls(frame, [(r.sensor_id, r.token, r.rssi) for r in records])

    @classmethod
    def from_array(cls, frame: int, arr: np.ndarray) -> "FrameBatch":
        return cls(frame, list(zip(arr["sensor_id"].tolist(), arr["token"].tolist(), arr["rssi"].tolist())))

    def __len__(self) -> int:
        return len(self.arr_mac)


@dataclass
class CountResult:
    frame: int
    counts_per_sensor: dict[int, int]
    area_counts: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts_per_sensor.values())


def count_frame(
    batch: FrameBatch,
    sensors: Sequence[SensorConfig],
    areas: Mapping[str, Sequence[int]] | None = None,
) -> CountResult:
    """Count distinct tokens of one frame, crediting each to its loudest sensor.

    A record survives only if its RSSI is strictly above the sensor's lower
    bound. On equal maximum RSSI at two sensors the first record seen keeps
    the token.
    """
    lower = {s.sensor_id: s.rssi_lower_bound for s in sensors}
    # Tokens are uniform 64-bit values; int hashing is near-identity, so the
    # dict acts as the token-keyed table with no extra hash function.
    ht: dict[int, tuple[int, int]] = {}
    for sid, tok, rssi in batch.arr_mac:
        try:
            bound = lower[sid]
        except KeyError:
            raise UnknownSensorError(sid) from None
        if rssi > bound:
            cur = ht.get(tok)
            if cur is None or rssi > cur[1]:
                ht[tok] = (sid, rssi)

    counts = dict.fromkeys(lower, 0)
    for sid, _ in ht.values():
        counts[sid] += 1
    ht.clear()

    area_counts = {}
    for area, members in (areas or {}).items():
        area_counts[area] = sum(counts[s] for s in members)
    return CountResult(batch.frame, counts, area_counts)


def estimate_count(x: float, beta: float) -> float:
    """Crowd estimate beta * X."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if x < 0:
        raise ValueError("count must be non-negative")
    return beta * x


def memory_footprint(n_sensors: int, n_meas: int, load_factor: float = DEFAULT_LOAD_FACTOR) -> tuple[float, float]:
    """(records MB, hash-table MB) for one frame of n_sensors * n_meas bursts.

    Records are 16-byte structs. The table has n/alpha 8-byte bucket pointers
    plus one 16-byte chain node per entry.
    """
    if not 0 < load_factor <= 1:
        raise ValueError("load factor must lie in (0, 1]")
    if n_sensors < 0 or n_meas < 0:
        raise ValueError("sizes must be non-negative")
    n = n_sensors * n_meas
    return n * RECORD_BYTES / 1e6, n * (8 / load_factor + 16) / 1e6


def iter_batches(records: np.ndarray, frame_spec: FrameSpec = FrameSpec()) -> Iterator[FrameBatch]:
    """Split a ts-sorted RECORD_DTYPE stream into per-frame batches."""
    if len(records) == 0:
        return
    frames = frame_of(records["ts"], frame_spec)
    if np.any(np.diff(frames) < 0):
        raise ValueError("record stream must be sorted by timestamp")
    edges = np.flatnonzero(np.diff(frames)) + 1
    for chunk, k in zip(np.split(records, edges), frames[np.r_[0, edges]].tolist()):
        yield FrameBatch.from_array(int(k), chunk)


def count_stream(
    records: np.ndarray,
    sensors: Sequence[SensorConfig],
    frame_spec: FrameSpec = FrameSpec(),
    areas: Mapping[str, Sequence[int]] | None = None,
    frames: Sequence[int] | None = None,
) -> list[CountResult]:
    """Count every frame in the stream. ``frames`` adds zero rows for silent frames."""
    results = {b.frame: count_frame(b, sensors, areas) for b in iter_batches(records, frame_spec)}
    if frames is not None:
        empty = FrameBatch(0)
        for k in frames:
            if k not in results:
                res = count_frame(empty, sensors, areas)
                res.frame = k
                results[k] = res
    return [results[k] for k in sorted(results)]


def write_counts(results: Sequence[CountResult], frame_spec: FrameSpec, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_start_ts", "sensor_id", "count"])
        for res in results:
            start = frame_spec.frame(res.frame).start
            for sid in sorted(res.counts_per_sensor):
                w.writerow([start, sid, res.counts_per_sensor[sid]])


def write_area_counts(results: Sequence[CountResult], frame_spec: FrameSpec, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_start_ts", "area_id", "count"])
        for res in results:
            start = frame_spec.frame(res.frame).start
            for area in sorted(res.area_counts):
                w.writerow([start, area, res.area_counts[area]])


def read_counts(path: Path) -> dict[int, int]:
    """Total count per frame_start_ts from a per-sensor counts CSV."""
    totals: dict[int, int] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ts = int(row["frame_start_ts"])
            totals[ts] = totals.get(ts, 0) + int(row["count"])
    return totals
