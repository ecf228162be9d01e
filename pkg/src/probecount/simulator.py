"""Ground-truth crowd and probe-request stream generator.

Individuals carry a fixed per-frame transmission probability drawn from a
:class:`PopulationSpec`. Every frame each individual inside the venue sends at
most one burst, under a fresh locally administered MAC. Each sensor hears the
burst if the simulated RSSI clears its detection floor.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .types import (
    RAW_DTYPE,
    RSSI_MAX,
    RSSI_MIN,
    FrameSpec,
    PopulationSpec,
    SensorConfig,
    TimeFrame,
)

_LOCAL_BIT = np.uint64(0x02 << 40)
_MULTICAST_BIT = np.uint64(0x01 << 40)


@dataclass(frozen=True)
class Individual:
    id: int
    p_i: float
    position: tuple[float, float]
    floor: int = 0

    @property
    def has_device(self) -> bool:
        return self.p_i > 0.0


@dataclass(frozen=True)
class Venue:
    """Monitored area: ``floors`` stacked rectangles of ``width`` x ``height`` m."""

    width: float = 40.0
    height: float = 40.0
    floors: int = 1
    floor_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.floors < 1 or self.width <= 0 or self.height <= 0:
            raise ValueError("venue needs positive size and at least one floor")
        if self.floor_weights is not None:
            w = np.asarray(self.floor_weights, dtype=float)
            if len(w) != self.floors or (w < 0).any() or w.sum() <= 0:
                raise ValueError("floor_weights must be non-negative, one per floor")

    def floor_probabilities(self) -> np.ndarray:
        if self.floor_weights is None:
            return np.full(self.floors, 1.0 / self.floors)
        w = np.asarray(self.floor_weights, dtype=float)
        return w / w.sum()

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x >= 0) & (x <= self.width) & (y >= 0) & (y <= self.height)


@dataclass(frozen=True)
class MobilityParams:
    """Random-waypoint motion in the venue plus a ``margin`` of outside space.

    ``turnover`` is the fraction of individuals replaced by freshly drawn ones
    (new device, new position) at every frame; it applies with or without motion.
    """

    enabled: bool = False
    speed: float = 1.0  # m/s
    margin: float = 20.0
    turnover: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.turnover <= 1.0:
            raise ValueError("turnover must lie in [0, 1]")
        if self.speed < 0 or self.margin < 0:
            raise ValueError("speed and margin must be non-negative")


class Population:
    """Structure-of-arrays view of the crowd; indexes like a list of Individual."""

    def __init__(self, ids, p, x, y, floor):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.p = np.asarray(p, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.floor = np.asarray(floor, dtype=np.int64)
        self.wx = self.x.copy()
        self.wy = self.y.copy()

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> Individual:
        return Individual(int(self.ids[i]), float(self.p[i]), (float(self.x[i]), float(self.y[i])), int(self.floor[i]))

    def __iter__(self) -> Iterator[Individual]:
        return (self[i] for i in range(len(self)))

    def copy(self) -> "Population":
        out = Population(self.ids.copy(), self.p.copy(), self.x.copy(), self.y.copy(), self.floor.copy())
        out.wx, out.wy = self.wx.copy(), self.wy.copy()
        return out


def _draw_p(spec: PopulationSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    k = rng.choice(len(spec.mixture), size=n, p=spec.weights)
    return spec.alphas[k]


def _draw_positions(venue: Venue, n: int, rng: np.random.Generator, margin: float = 0.0):
    x = rng.uniform(-margin, venue.width + margin, n)
    y = rng.uniform(-margin, venue.height + margin, n)
    floor = rng.choice(venue.floors, size=n, p=venue.floor_probabilities())
    return x, y, floor


def sample_population(
    spec: PopulationSpec,
    seed=0,
    venue: Venue | None = None,
    margin: float = 0.0,
) -> Population:
    """Draw ``spec.n_ppl`` individuals with iid ``p_i`` (P[p_i = alpha_k] = r_k)."""
    if not isinstance(spec, PopulationSpec):
        raise TypeError("spec must be a PopulationSpec")
    rng = np.random.default_rng(seed)
    venue = venue or Venue()
    p = _draw_p(spec, spec.n_ppl, rng)
    x, y, floor = _draw_positions(venue, spec.n_ppl, rng, margin)
    return Population(np.arange(spec.n_ppl), p, x, y, floor)


@dataclass
class GroundTruthRow:
    frame: int
    n_ppl: int
    x: int
    transmitters: np.ndarray = field(repr=False)


@dataclass
class GroundTruth:
    frames: np.ndarray
    n_ppl: np.ndarray
    x: np.ndarray
    transmitters: list[np.ndarray] = field(repr=False, default_factory=list)

    @classmethod
    def from_rows(cls, rows: Sequence[GroundTruthRow]) -> "GroundTruth":
        return cls(
            np.array([r.frame for r in rows], dtype=np.int64),
            np.array([r.n_ppl for r in rows], dtype=np.int64),
            np.array([r.x for r in rows], dtype=np.int64),
            [r.transmitters for r in rows],
        )

    def __len__(self) -> int:
        return len(self.frames)


def received_rssi(
    sensor: SensorConfig,
    x: np.ndarray,
    y: np.ndarray,
    floor: np.ndarray,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Float RSSI (dBm) at ``sensor`` for transmitters at (x, y, floor).

    Distances below the 1 m reference distance are clamped to it.
    """
    rx = sensor.rx
    d = np.hypot(x - sensor.position[0], y - sensor.position[1])
    d = np.maximum(d, 1.0)
    rssi = rx.ref_power - 10.0 * rx.path_loss_exponent * np.log10(d)
    rssi = rssi - rx.floor_attenuation * np.abs(floor - sensor.floor)
    if rx.shadowing_std > 0 and rng is not None:
        rssi = rssi + rng.normal(0.0, rx.shadowing_std, size=d.shape)
    return rssi


def random_macs(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` distinct random unicast MACs with the locally administered bit set."""
    macs = rng.integers(0, 2**48, size=n, dtype=np.uint64)
    macs = (macs & ~_MULTICAST_BIT) | _LOCAL_BIT
    while len(np.unique(macs)) < n:
        _, first = np.unique(macs, return_index=True)
        dup = np.setdiff1d(np.arange(n), first)
        fresh = rng.integers(0, 2**48, size=len(dup), dtype=np.uint64)
        macs[dup] = (fresh & ~_MULTICAST_BIT) | _LOCAL_BIT
    return macs


def simulate_frame(
    population: Population,
    sensors: Sequence[SensorConfig],
    frame: TimeFrame,
    seed=0,
    venue: Venue | None = None,
) -> tuple[np.ndarray, GroundTruthRow]:
    """Raw records (RAW_DTYPE, sorted by ts) and the ground-truth row of one frame.

    Without a ``venue`` every individual counts as inside the monitored area.
    """
    if not sensors:
        raise ValueError("at least one sensor is required")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(population)
    if venue is None:
        inside = np.ones(n, dtype=bool)
    else:
        inside = venue.contains(population.x, population.y)
    tx = inside & (rng.random(n) < population.p)
    idx = np.flatnonzero(tx)
    m = len(idx)
    macs = random_macs(m, rng)
    ts = rng.integers(frame.start, frame.end + 1, size=m)
    x, y, fl = population.x[idx], population.y[idx], population.floor[idx]

    chunks = []
    for s in sensors:
        rssi = received_rssi(s, x, y, fl, rng)
        heard = rssi >= s.rx.detection_floor
        k = int(heard.sum())
        rec = np.empty(k, dtype=RAW_DTYPE)
        rec["ts"] = ts[heard]
        rec["sensor_id"] = s.sensor_id
        rec["mac"] = macs[heard]
        rec["rssi"] = np.clip(np.rint(rssi[heard]), RSSI_MIN, RSSI_MAX)
        chunks.append(rec)
    records = np.concatenate(chunks) if chunks else np.empty(0, dtype=RAW_DTYPE)
    records = records[np.argsort(records["ts"], kind="stable")]
    row = GroundTruthRow(frame.index, int(inside.sum()), m, population.ids[idx])
    return records, row


def _advance(pop: Population, spec: PopulationSpec, venue: Venue, mob: MobilityParams,
             duration: float, rng: np.random.Generator) -> None:
    n = len(pop)
    margin = mob.margin if mob.enabled else 0.0
    if mob.enabled:
        dx, dy = pop.wx - pop.x, pop.wy - pop.y
        dist = np.hypot(dx, dy)
        step = mob.speed * duration
        arrived = dist <= step
        scale = np.where(arrived, 1.0, step / np.maximum(dist, 1e-12))
        pop.x += dx * scale
        pop.y += dy * scale
        k = int(arrived.sum())
        if k:
            pop.wx[arrived] = rng.uniform(-margin, venue.width + margin, k)
            pop.wy[arrived] = rng.uniform(-margin, venue.height + margin, k)
    if mob.turnover > 0:
        repl = np.flatnonzero(rng.random(n) < mob.turnover)
        if len(repl):
            pop.p[repl] = _draw_p(spec, len(repl), rng)
            x, y, fl = _draw_positions(venue, len(repl), rng, margin)
            pop.x[repl], pop.y[repl], pop.floor[repl] = x, y, fl
            pop.wx[repl], pop.wy[repl] = x, y


@dataclass
class ScenarioResult:
    records: np.ndarray  # RAW_DTYPE
    ground_truth: GroundTruth
    frame_spec: FrameSpec
    population: Population


def run_scenario(
    spec: PopulationSpec,
    sensors: Sequence[SensorConfig],
    n_frames: int,
    mobility: MobilityParams | None = None,
    seed: int = 0,
    venue: Venue | None = None,
    frame_spec: FrameSpec = FrameSpec(),
    start_frame: int = 1,
) -> ScenarioResult:
    """Simulate ``n_frames`` consecutive frames starting at ``start_frame``.

    Frame k uses its own generator seeded from (seed, k), so a frame's draws do
    not depend on how many frames precede it (mobility state aside).
    """
    if n_frames < 1:
        raise ValueError("n_frames must be at least 1")
    mobility = mobility or MobilityParams()
    venue = venue or Venue()
    margin = mobility.margin if mobility.enabled else 0.0
    pop = sample_population(spec, np.random.default_rng([seed, 0]), venue, margin)
    if mobility.enabled:
        rng0 = np.random.default_rng([seed, 1])
        pop.wx = rng0.uniform(-margin, venue.width + margin, len(pop))
        pop.wy = rng0.uniform(-margin, venue.height + margin, len(pop))

    chunks, rows = [], []
    for k in range(start_frame, start_frame + n_frames):
        if k > start_frame:
            _advance(pop, spec, venue, mobility, frame_spec.duration, np.random.default_rng([seed, 2, k]))
        rec, row = simulate_frame(pop, sensors, frame_spec.frame(k), np.random.default_rng([seed, 3, k]), venue)
        chunks.append(rec)
        rows.append(row)
    records = np.concatenate(chunks)
    records = records[np.argsort(records["ts"], kind="stable")]
    return ScenarioResult(records, GroundTruth.from_rows(rows), frame_spec, pop)


def format_mac(mac: int) -> str:
    return ":".join(f"{b:02x}" for b in int(mac).to_bytes(6, "big"))


def parse_mac(text: str) -> int:
    digits = text.replace(":", "").replace("-", "")
    if len(digits) != 12:
        raise ValueError(f"not a MAC address: {text!r}")
    return int(digits, 16)


def write_raw_records(records: np.ndarray, path: Path) -> None:
    """Raw stream CSV (ts, sensor_id, mac, rssi). Input to the anonymizer only."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ts", "sensor_id", "mac", "rssi"])
        for ts, s, mac, rssi in zip(records["ts"].tolist(), records["sensor_id"].tolist(),
                                     records["mac"].tolist(), records["rssi"].tolist()):
            w.writerow([ts, s, format_mac(mac), rssi])


def read_raw_records(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = np.empty(len(rows), dtype=RAW_DTYPE)
    for i, r in enumerate(rows):
        out[i] = (int(r["ts"]), int(r["sensor_id"]), parse_mac(r["mac"]), int(r["rssi"]))
    return out


def write_ground_truth(gt: GroundTruth, frame_spec: FrameSpec, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "frame_start_ts", "n_ppl", "X"])
        for k, n, x in zip(gt.frames.tolist(), gt.n_ppl.tolist(), gt.x.tolist()):
            w.writerow([k, frame_spec.frame(k).start, n, x])
