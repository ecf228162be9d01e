"""Scenario / pipeline configuration files (JSON).

Example::

    {
      "seed": 7,
      "frames": 720,
      "frame_duration": 60,
      "epoch": 1554710400,
      "population": {"n_ppl": 400, "mixture": [[0.0, 0.2], [0.4, 0.8]]},
      "venue": {"width": 40, "height": 30, "floors": 2},
      "mobility": {"enabled": true, "speed": 0.5, "margin": 15, "turnover": 0.0},
      "sensors": [
        {"sensor_id": 1, "position": [10, 15], "floor": 0, "rssi_lower_bound": -85,
         "rx": {"path_loss_exponent": 3.0, "ref_power": -40, "shadowing_std": 4,
                "detection_floor": -95, "floor_attenuation": 30}}
      ],
      "areas": {"ground": [1]},
      "pipeline": {"dump": true, "beta": "fitted", "pepper_seed": 11,
                   "calibration_window": 3600, "bounds_phi": [0.05, 0.1],
                   "pepper_retention": 2}
    }

Only ``population`` and ``sensors`` are required.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .simulator import MobilityParams, Venue
from .types import FrameSpec, PopulationSpec, RxParams, SensorConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineOptions:
    dump: bool = True
    beta: float | str = "fitted"
    pepper_seed: int | None = None
    pepper_retention: int = 2
    calibration_window: int | str | None = None
    bounds_phi: tuple[float, ...] = (0.05, 0.1, 0.2)
    bounds_grid: int = 19
    bounds_trials: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    population: PopulationSpec
    sensors: tuple[SensorConfig, ...]
    seed: int = 0
    frames: int = 60
    frame_spec: FrameSpec = FrameSpec()
    venue: Venue = Venue()
    mobility: MobilityParams = MobilityParams()
    areas: dict = field(default_factory=dict)
    pipeline: PipelineOptions = PipelineOptions()
    source: Path | None = None

    def with_overrides(self, seed=None, frames=None, frame_duration=None, rssi_thresholds=None) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if frames is not None:
            if frames < 1:
                raise ConfigError("--frames must be at least 1")
            cfg = replace(cfg, frames=frames)
        if frame_duration is not None:
            try:
                cfg = replace(cfg, frame_spec=FrameSpec(frame_duration, cfg.frame_spec.epoch))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if rssi_thresholds:
            cfg = replace(cfg, sensors=apply_thresholds(cfg.sensors, rssi_thresholds))
        return cfg


def apply_thresholds(sensors, overrides: dict) -> tuple[SensorConfig, ...]:
    """``overrides`` maps sensor_id (or None for every sensor) to a lower bound."""
    known = {s.sensor_id for s in sensors}
    unknown = set(overrides) - known - {None}
    if unknown:
        raise ConfigError(f"threshold override for unknown sensor(s) {sorted(unknown)}")
    out = []
    for s in sensors:
        lb = overrides.get(s.sensor_id, overrides.get(None, s.rssi_lower_bound))
        try:
            out.append(replace(s, rssi_lower_bound=float(lb)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return tuple(out)


def parse_threshold_overrides(items) -> dict:
    """'-80' applies to all sensors; '3=-75' to sensor 3."""
    out = {}
    for item in items or ():
        key, sep, val = item.rpartition("=")
        try:
            out[int(key) if sep else None] = float(val)
        except ValueError:
            raise ConfigError(f"bad --rssi-threshold value {item!r}") from None
    return out


def sensor_from_dict(d: dict) -> SensorConfig:
    rx = RxParams(**d.get("rx", {}))
    return SensorConfig(
        sensor_id=int(d["sensor_id"]),
        position=tuple(float(v) for v in d.get("position", (0.0, 0.0))),
        rssi_lower_bound=float(d.get("rssi_lower_bound", rx.detection_floor)),
        rx=rx,
        floor=int(d.get("floor", 0)),
    )


def scenario_from_dict(d: dict, source: Path | None = None) -> ScenarioConfig:
    try:
        pop = d["population"]
        population = PopulationSpec(int(pop["n_ppl"]), tuple(tuple(c) for c in pop["mixture"]))
        sensors = tuple(sensor_from_dict(s) for s in d["sensors"])
        if not sensors:
            raise ConfigError("at least one sensor is required")
        ids = [s.sensor_id for s in sensors]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate sensor ids")
        venue_d = dict(d.get("venue", {}))
        if venue_d.get("floor_weights") is not None:
            venue_d["floor_weights"] = tuple(venue_d["floor_weights"])
        areas = {str(k): [int(s) for s in v] for k, v in d.get("areas", {}).items()}
        for name, members in areas.items():
            if set(members) - set(ids):
                raise ConfigError(f"area {name!r} references unknown sensors")
        pipe = dict(d.get("pipeline", {}))
        if "bounds_phi" in pipe:
            pipe["bounds_phi"] = tuple(pipe["bounds_phi"])
        cfg = ScenarioConfig(
            population=population,
            sensors=sensors,
            seed=int(d.get("seed", 0)),
            frames=int(d.get("frames", 60)),
            frame_spec=FrameSpec(int(d.get("frame_duration", 60)), int(d.get("epoch", 0))),
            venue=Venue(**venue_d),
            mobility=MobilityParams(**d.get("mobility", {})),
            areas=areas,
            pipeline=PipelineOptions(**pipe),
            source=source,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario config: {exc!r}") from None
    if cfg.frames < 1:
        raise ConfigError("frames must be at least 1")
    return cfg


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scenario_from_dict(data, source=path)
