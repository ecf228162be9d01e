"""Shared records, frames, sensor and population configuration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_FRAME_DURATION = 60

# Bulk record layouts. Raw records only ever live inside the simulator and the
# anonymizer input; everything downstream uses RECORD_DTYPE (token, no MAC).
RAW_DTYPE = np.dtype([("ts", "<u4"), ("sensor_id", "<u2"), ("mac", "<u8"), ("rssi", "i1")])
RECORD_DTYPE = np.dtype([("ts", "<u4"), ("sensor_id", "<u2"), ("token", "<u8"), ("rssi", "i1")])

RSSI_MIN, RSSI_MAX = -128, 127
MAC_BITS = 48
TOKEN_BITS = 64


@dataclass(frozen=True)
class ProbeRecord:
    """One detected probe-request burst after anonymization."""

    ts: int
    sensor_id: int
    token: int
    rssi: int

    def __post_init__(self):
        if not 0 <= self.ts < 2**32:
            raise ValueError(f"ts out of 32-bit range: {self.ts}")
        if not 0 <= self.sensor_id < 2**16:
            raise ValueError(f"sensor_id out of 16-bit range: {self.sensor_id}")
        if not 0 <= self.token < 2**TOKEN_BITS:
            raise ValueError("token must be a 64-bit unsigned value")
        if not RSSI_MIN <= self.rssi <= RSSI_MAX:
            raise ValueError(f"rssi out of int8 range: {self.rssi}")


def records_to_array(records: Sequence[ProbeRecord]) -> np.ndarray:
    out = np.empty(len(records), dtype=RECORD_DTYPE)
    for i, r in enumerate(records):
        out[i] = (r.ts, r.sensor_id, r.token, r.rssi)
    return out


def array_to_records(arr: np.ndarray) -> list[ProbeRecord]:
    return [
        ProbeRecord(int(ts), int(s), int(tok), int(rssi))
        for ts, s, tok, rssi in zip(
            arr["ts"].tolist(), arr["sensor_id"].tolist(), arr["token"].tolist(), arr["rssi"].tolist()
        )
    ]


@dataclass(frozen=True)
class FrameSpec:
    """Frame grid: frame k covers timestamps in (epoch + (k-1)T, epoch + kT]."""

    duration: int = DEFAULT_FRAME_DURATION
    epoch: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("frame duration must be positive")

    def frame(self, index: int) -> "TimeFrame":
        return TimeFrame(index, self.duration, self.epoch)


@dataclass(frozen=True)
class TimeFrame:
    index: int
    duration: int = DEFAULT_FRAME_DURATION
    epoch: int = 0

    @property
    def end(self) -> int:
        """t_k, the last second belonging to the frame."""
        return self.epoch + self.index * self.duration

    @property
    def start(self) -> int:
        """First whole second belonging to the frame (t_k - T + 1)."""
        return self.end - self.duration + 1

    def contains(self, ts) -> bool:
        return self.end - self.duration < ts <= self.end


def frame_of(ts, spec: FrameSpec = FrameSpec()):
    """Index of the frame holding ``ts``; works on scalars and integer arrays."""
    if isinstance(ts, np.ndarray):
        return -((spec.epoch - ts.astype(np.int64)) // spec.duration)
    return -((spec.epoch - ts) // spec.duration)


@dataclass(frozen=True)
class RxParams:
    """Parametric receiver model: log-distance path loss with shadowing."""

    path_loss_exponent: float = 3.0
    ref_power: float = -40.0  # dBm at 1 m
    shadowing_std: float = 4.0  # dB
    detection_floor: float = -95.0  # dBm
    floor_attenuation: float = 30.0  # dB per floor crossed


@dataclass(frozen=True)
class SensorConfig:
    sensor_id: int
    position: tuple[float, float] = (0.0, 0.0)
    rssi_lower_bound: float = -95.0
    rx: RxParams = field(default_factory=RxParams)
    floor: int = 0

    def __post_init__(self):
        if not 0 <= self.sensor_id < 2**16:
            raise ValueError(f"sensor_id out of 16-bit range: {self.sensor_id}")
        if self.rssi_lower_bound < self.rx.detection_floor:
            raise ValueError(
                f"sensor {self.sensor_id}: rssi_lower_bound {self.rssi_lower_bound} "
                f"below detection floor {self.rx.detection_floor}"
            )


@dataclass(frozen=True)
class PopulationSpec:
    """Mixture of per-frame transmission probabilities.

    ``mixture`` holds ``(alpha_k, r_k)`` pairs: individuals transmit with
    probability ``alpha_k`` per frame, and a fraction ``r_k`` of them do so.
    """

    n_ppl: int
    mixture: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "mixture", tuple((float(a), float(r)) for a, r in self.mixture))
        if self.n_ppl < 1:
            raise ValueError("n_ppl must be positive")
        if not self.mixture:
            raise ValueError("mixture must have at least one component")
        alphas = [a for a, _ in self.mixture]
        weights = [r for _, r in self.mixture]
        if any(not 0.0 <= a <= 1.0 for a in alphas) or any(not 0.0 <= r <= 1.0 for r in weights):
            raise ValueError("mixture values and weights must lie in [0, 1]")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("mixture probabilities must be distinct and ascending")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {math.fsum(weights)}, expected 1")

    @property
    def alphas(self) -> np.ndarray:
        return np.array([a for a, _ in self.mixture])

    @property
    def weights(self) -> np.ndarray:
        return np.array([r for _, r in self.mixture])


def mean_tx_probability(spec: PopulationSpec) -> float:
    """Marginal per-frame transmission probability p = sum_k alpha_k r_k."""
    return min(1.0, max(0.0, math.fsum(a * r for a, r in spec.mixture)))
