"""Per-(sensor, day) binary dump files with per-frame token re-randomization.

File layout, all integers little-endian::

    header (24 bytes)
      0  magic        8s   b"PRBDUMP\\0"
      8  version      u16  1
     10  sensor_id    u16
     12  day          u32  days since 1970-01-01 (UTC)
     16  n_records    u64
    body: n_records x 16-byte records
      0  ts           u32  seconds since epoch
      4  sensorid     u16
      6  aMAC         8 bytes, token in big-endian (digest) order
     14  rssi         i8
     15  pad          u8   0 on write, ignored on read

Records are sorted by ts.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .types import RECORD_DTYPE, FrameSpec, frame_of

MAGIC = b"PRBDUMP\x00"
VERSION = 1
HEADER = struct.Struct("<8sHHIQ")
HEADER_SIZE = HEADER.size  # 24
DAY_SECONDS = 86400

DUMP_DTYPE = np.dtype({
    "names": ["ts", "sensorid", "amac", "rssi", "pad"],
    "formats": ["<u4", "<u2", ">u8", "i1", "u1"],
    "offsets": [0, 4, 6, 14, 15],
    "itemsize": 16,
})
RECORD_SIZE = DUMP_DTYPE.itemsize


class DumpError(ValueError):
    pass


class NotADumpFile(DumpError):
    pass


class UnsupportedVersion(DumpError):
    pass


class TruncatedDump(DumpError):
    pass


class SensorMismatch(DumpError):
    pass


class DayMismatch(DumpError):
    pass


@dataclass(frozen=True)
class DumpHeader:
    sensor_id: int
    day: int
    n_records: int
    version: int = VERSION


def rerandomize_frame(records: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Replace tokens through a fresh random bijection scoped to this frame.

    Equal tokens inside the frame stay equal (across sensors too); the mapping
    is built from first appearance order and dropped on return.
    """
    out = records.copy()
    if len(out) == 0:
        return out
    uniq, inverse = np.unique(out["token"], return_inverse=True)
    fresh = rng.integers(0, 2**64, size=len(uniq), dtype=np.uint64, endpoint=False)
    while len(np.unique(fresh)) < len(fresh):
        fresh = rng.integers(0, 2**64, size=len(uniq), dtype=np.uint64, endpoint=False)
    # assign fresh values by order of first appearance so the output does not
    # depend on the sorted order of the old tokens
    first = np.full(len(uniq), len(out), dtype=np.int64)
    np.minimum.at(first, inverse, np.arange(len(out)))
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
    out["token"] = fresh[rank[inverse]]
    return out


def rerandomize_stream(records: np.ndarray, frame_spec: FrameSpec, seed) -> np.ndarray:
    """Apply :func:`rerandomize_frame` frame by frame over a ts-sorted stream."""
    rng = np.random.default_rng(seed)
    if len(records) == 0:
        return records.copy()
    frames = frame_of(records["ts"], frame_spec)
    if np.any(np.diff(frames) < 0):
        raise ValueError("record stream must be sorted by timestamp")
    edges = np.flatnonzero(np.diff(frames)) + 1
    return np.concatenate([rerandomize_frame(chunk, rng) for chunk in np.split(records, edges)])


def _to_dump(records: np.ndarray) -> np.ndarray:
    body = np.zeros(len(records), dtype=DUMP_DTYPE)
    body["ts"] = records["ts"]
    body["sensorid"] = records["sensor_id"]
    body["amac"] = records["token"]
    body["rssi"] = records["rssi"]
    return body


def _from_dump(body: np.ndarray) -> np.ndarray:
    out = np.empty(len(body), dtype=RECORD_DTYPE)
    out["ts"] = body["ts"]
    out["sensor_id"] = body["sensorid"]
    out["token"] = body["amac"]
    out["rssi"] = body["rssi"]
    return out


def encode_dump(records: np.ndarray, sensor_id: int, day: int) -> bytes:
    if len(records):
        if np.any(records["sensor_id"] != sensor_id):
            raise SensorMismatch(f"records from other sensors in dump for sensor {sensor_id}")
        if np.any(records["ts"] // DAY_SECONDS != day):
            raise DayMismatch(f"records outside day {day}")
    records = records[np.argsort(records["ts"], kind="stable")]
    header = HEADER.pack(MAGIC, VERSION, sensor_id, day, len(records))
    return header + _to_dump(records).tobytes()


def decode_dump(data: bytes) -> tuple[np.ndarray, DumpHeader]:
    if len(data) < HEADER_SIZE or data[:8] != MAGIC:
        raise NotADumpFile("not a dump file")
    _, version, sensor_id, day, n = HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported dump version {version}")
    expected = HEADER_SIZE + n * RECORD_SIZE
    if len(data) < expected:
        raise TruncatedDump(f"truncated body: {len(data)} bytes, header announces {n} records")
    if len(data) > expected:
        raise DumpError(f"{len(data) - expected} trailing bytes after {n} records")
    body = np.frombuffer(data, dtype=DUMP_DTYPE, count=n, offset=HEADER_SIZE)
    if n and np.any(body["sensorid"] != sensor_id):
        raise SensorMismatch(f"record sensor ids differ from header sensor {sensor_id}")
    if n and np.any(body["ts"] // DAY_SECONDS != day):
        raise DayMismatch(f"record timestamps outside day {day}")
    if n and np.any(np.diff(body["ts"].astype(np.int64)) < 0):
        raise DumpError("records not sorted by timestamp")
    return _from_dump(body), DumpHeader(sensor_id, day, n, version)


def write_dump(records: np.ndarray, sensor_id: int, day: int, path) -> Path:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    data = encode_dump(records, sensor_id, day)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_dump(path) -> tuple[np.ndarray, DumpHeader]:
    with open(path, "rb") as fh:
        return decode_dump(fh.read())


def dump_name(sensor_id: int, day: int) -> str:
    return f"sensor{sensor_id:05d}_day{day:06d}.prb"


def dump_stream(records: np.ndarray, directory) -> list[Path]:
    """Split an already re-randomized stream into one file per (sensor, day)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    if len(records) == 0:
        return paths
    days = records["ts"] // DAY_SECONDS
    for sid in np.unique(records["sensor_id"]).tolist():
        for day in np.unique(days[records["sensor_id"] == sid]).tolist():
            sel = records[(records["sensor_id"] == sid) & (days == day)]
            paths.append(write_dump(sel, sid, int(day), directory / dump_name(sid, int(day))))
    return paths


def load_dumps(paths) -> np.ndarray:
    """Merge several dump files into one ts-sorted record stream."""
    parts = [read_dump(p)[0] for p in paths]
    if not parts:
        return np.empty(0, dtype=RECORD_DTYPE)
    merged = np.concatenate(parts)
    order = np.lexsort((merged["sensor_id"], merged["ts"]))
    return merged[order]
