"""Peppered SHA-256 anonymization of source MAC addresses.

Token layout (wire-format constant)::

    digest = SHA-256(sensor_pepper[16] || server_pepper[16] || mac[6])
    token  = int.from_bytes(digest[:8], "big")

The MAC is hashed in transmission order (first octet first). Server peppers
rotate every minute (minute index = ts // 60); the sensor pepper is static.
"""
from __future__ import annotations

import hashlib
import os
import threading
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Mapping

import numpy as np

from .types import RECORD_DTYPE

PEPPER_BYTES = 16
DEFAULT_RETENTION = 2
SENSOR_PEPPER_ENV = "PROBECOUNT_SENSOR_PEPPER"

EntropySource = Callable[[int], bytes]


class EntropyError(RuntimeError):
    pass


class PepperUnavailable(KeyError):
    """No server pepper exists for the requested minute."""


class PepperDeleted(PepperUnavailable):
    def __str__(self):
        return f"pepper deleted for minute {self.args[0]}"


def _draw(source: EntropySource, n: int) -> bytes:
    try:
        out = source(n)
    except Exception as exc:
        raise EntropyError(f"entropy source failed: {exc}") from exc
    if not isinstance(out, (bytes, bytearray)) or len(out) != n:
        raise EntropyError(f"entropy source returned {len(out) if out is not None else 0} bytes, expected {n}")
    return bytes(out)


def seeded_entropy(seed: int) -> EntropySource:
    """Deterministic byte source for tests and reproducible demos. Not secret."""
    counter = 0

    def source(n: int) -> bytes:
        nonlocal counter
        out = b""
        while len(out) < n:
            out += hashlib.sha256(f"{seed}:{counter}".encode()).digest()
            counter += 1
        return out[:n]

    return source


class PepperSchedule:
    """Per-minute server peppers plus the static sensor pepper.

    Writers (``rotate``, ``add``) swap in a new read-only mapping under a lock;
    readers grab the current mapping reference and never see a half-rotated
    state.
    """

    def __init__(self, sensor_pepper: bytes, server_peppers: Mapping[int, bytes] | None = None,
                 retention: int = DEFAULT_RETENTION):
        if len(sensor_pepper) != PEPPER_BYTES:
            raise ValueError("sensor pepper must be 16 bytes")
        if retention < 1:
            raise ValueError("retention must be at least one minute")
        peppers = dict(server_peppers or {})
        for minute, pep in peppers.items():
            if len(pep) != PEPPER_BYTES:
                raise ValueError(f"server pepper for minute {minute} must be 16 bytes")
        self.sensor_pepper = bytes(sensor_pepper)
        self.retention = retention
        # (peppers, deleted-below floor) swapped as one reference
        self._state: tuple[Mapping[int, bytes], int | None] = (MappingProxyType(peppers), None)
        self._lock = threading.Lock()

    @property
    def server_peppers(self) -> Mapping[int, bytes]:
        return self._state[0]

    def __contains__(self, minute: int) -> bool:
        return minute in self._state[0]

    def pepper(self, minute: int) -> bytes:
        peppers, floor = self._state
        try:
            return peppers[minute]
        except KeyError:
            if floor is not None and minute < floor:
                raise PepperDeleted(minute) from None
            raise PepperUnavailable(minute) from None

    def add(self, minute: int, pepper: bytes) -> None:
        if len(pepper) != PEPPER_BYTES:
            raise ValueError("server pepper must be 16 bytes")
        with self._lock:
            peppers, floor = self._state
            new = dict(peppers)
            new[minute] = bytes(pepper)
            self._state = (MappingProxyType(new), floor)

    def expire(self, now_minute: int) -> None:
        """Irrecoverably drop peppers older than ``retention`` minutes before now."""
        with self._lock:
            self._publish(dict(self._state[0]), now_minute)

    def rotate(self, now_minute: int, source: EntropySource = os.urandom) -> None:
        """Ensure a pepper exists for ``now_minute`` and expire stale ones, in one swap."""
        fresh = None if now_minute in self._state[0] else _draw(source, PEPPER_BYTES)
        with self._lock:
            new = dict(self._state[0])
            if fresh is not None:
                new.setdefault(now_minute, fresh)
            self._publish(new, now_minute)

    def _publish(self, peppers: dict, now_minute: int) -> None:
        floor = now_minute - self.retention + 1
        old_floor = self._state[1]
        if old_floor is not None:
            floor = max(floor, old_floor)
        self._state = (MappingProxyType({m: p for m, p in peppers.items() if m >= floor}), floor)


def generate_peppers(minutes: Iterable[int], source: EntropySource = os.urandom,
                     sensor_pepper: bytes | None = None,
                     retention: int = DEFAULT_RETENTION) -> PepperSchedule:
    """Fresh 128-bit server pepper per minute; sensor pepper drawn too unless given."""
    minutes = list(minutes)
    if not minutes:
        raise ValueError("minute range must be non-empty")
    if sensor_pepper is None:
        sensor_pepper = _draw(source, PEPPER_BYTES)
    peppers = {m: _draw(source, PEPPER_BYTES) for m in minutes}
    return PepperSchedule(sensor_pepper, peppers, retention)


def mac_bytes(mac) -> bytes:
    if isinstance(mac, (bytes, bytearray)):
        if len(mac) != 6:
            raise ValueError("MAC must be 6 bytes")
        return bytes(mac)
    if isinstance(mac, str):
        digits = mac.replace(":", "").replace("-", "")
        if len(digits) != 12:
            raise ValueError(f"not a MAC address: {mac!r}")
        return bytes.fromhex(digits)
    mac = int(mac)
    if not 0 <= mac < 2**48:
        raise ValueError("MAC must be a 48-bit value")
    return mac.to_bytes(6, "big")


def anonymize(raw_mac, minute: int, schedule: PepperSchedule) -> int:
    """64-bit token for ``raw_mac`` during ``minute``; raises when no pepper exists."""
    server = schedule.pepper(minute)
    digest = hashlib.sha256(schedule.sensor_pepper + server + mac_bytes(raw_mac)).digest()
    return int.from_bytes(digest[:8], "big")


def anonymize_records(raw: np.ndarray, schedule: PepperSchedule) -> np.ndarray:
    """Replace the MAC column of RAW_DTYPE records by tokens (RECORD_DTYPE)."""
    out = np.empty(len(raw), dtype=RECORD_DTYPE)
    out["ts"] = raw["ts"]
    out["sensor_id"] = raw["sensor_id"]
    out["rssi"] = raw["rssi"]
    sensor_pepper = schedule.sensor_pepper
    tokens = []
    cache: dict[int, bytes] = {}
    sha = hashlib.sha256
    for ts, mac in zip(raw["ts"].tolist(), raw["mac"].tolist()):
        minute = ts // 60
        prefix = cache.get(minute)
        if prefix is None:
            prefix = cache[minute] = sensor_pepper + schedule.pepper(minute)
        tokens.append(int.from_bytes(sha(prefix + mac.to_bytes(6, "big")).digest()[:8], "big"))
    out["token"] = np.array(tokens, dtype=np.uint64)
    return out


def expected_collision_rate(m: int) -> float:
    """Probability that a given address shares its token with one of m - 1 others."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return (m - 1) / 2.0**64


def sensor_pepper_from_env(env: Mapping[str, str] = os.environ) -> bytes:
    text = env.get(SENSOR_PEPPER_ENV)
    if text is None:
        raise KeyError(f"{SENSOR_PEPPER_ENV} is not set")
    pep = bytes.fromhex(text.strip())
    if len(pep) != PEPPER_BYTES:
        raise ValueError(f"{SENSOR_PEPPER_ENV} must hold 32 hex digits")
    return pep


def write_pepper_file(schedule: PepperSchedule, path: Path) -> None:
    """One ``<minute> <32 hex digits>`` line per server pepper, ascending minute."""
    with open(path, "w") as fh:
        for minute in sorted(schedule.server_peppers):
            fh.write(f"{minute} {schedule.server_peppers[minute].hex()}\n")


def read_pepper_file(path: Path, sensor_pepper: bytes, retention: int = DEFAULT_RETENTION) -> PepperSchedule:
    peppers = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                minute, hexval = line.split()
                pep = bytes.fromhex(hexval)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed pepper line") from None
            if len(pep) != PEPPER_BYTES:
                raise ValueError(f"{path}:{lineno}: pepper must be 16 bytes")
            peppers[int(minute)] = pep
    return PepperSchedule(sensor_pepper, peppers, retention)



def anonymize_stream(raw: np.ndarray, sensor_pepper: bytes, source: EntropySource = os.urandom,
                     retention: int = DEFAULT_RETENTION) -> np.ndarray:
    """Anonymize a ts-sorted raw stream minute by minute with live pepper rotation.

    The schedule only ever holds ``retention`` minutes; older peppers are gone
    by the time later records are processed.
    """
    out = np.empty(len(raw), dtype=RECORD_DTYPE)
    if len(raw) == 0:
        return out
    minutes = raw["ts"].astype(np.int64) // 60
    if np.any(np.diff(minutes) < 0):
        raise ValueError("raw stream must be sorted by timestamp")
    schedule = PepperSchedule(sensor_pepper, retention=retention)
    edges = np.flatnonzero(np.diff(minutes)) + 1
    starts = np.r_[0, edges]
    ends = np.r_[edges, len(raw)]
    for a, b in zip(starts.tolist(), ends.tolist()):
        schedule.rotate(int(minutes[a]), source)
        out[a:b] = anonymize_records(raw[a:b], schedule)
    return out


def write_token_csv(records: np.ndarray, fh) -> None:
    """Anonymized stream CSV: ts, sensor_id, token (16 hex digits), rssi."""
    fh.write("ts,sensor_id,token,rssi\n")
    for ts, s, tok, rssi in zip(records["ts"].tolist(), records["sensor_id"].tolist(),
                                 records["token"].tolist(), records["rssi"].tolist()):
        fh.write(f"{ts},{s},{tok:016x},{rssi}\n")


def read_token_csv(fh) -> np.ndarray:
    header = fh.readline().strip().split(",")
    if header != ["ts", "sensor_id", "token", "rssi"]:
        raise ValueError(f"unexpected token CSV header {header}")
    rows = [line.strip().split(",") for line in fh if line.strip()]
    out = np.empty(len(rows), dtype=RECORD_DTYPE)
    for i, (ts, s, tok, rssi) in enumerate(rows):
        if len(tok) != 16:
            raise ValueError(f"row {i + 1}: token must be 16 hex digits")
        out[i] = (int(ts), int(s), int(tok, 16), int(rssi))
    return out
