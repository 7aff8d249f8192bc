"""Scenario and experiment configuration: dataclasses, JSON loading, validation.

A scenario file is a JSON object whose keys match :class:`NetworkConfig` field
names exactly. An experiment file matches :class:`ExperimentConfig`, with the
scenario embedded under ``"scenario"``. All distances are feet, speeds are mph
at the config surface (converted to ft/s internally), times are seconds.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, asdict

MPH_TO_FPS = 5280.0 / 3600.0
FPS_TO_MPH = 3600.0 / 5280.0

PHASES = ("NS_Left", "NS_Through", "EW_Left", "EW_Through")
THROUGH_PHASES = ("NS_Through", "EW_Through")
BUS_CELL_FT = 25.0  # fixed zone cell size for the bus position/speed vectors


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration input."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class TimingParams:
    """Signal timing constraints; through and left phases get separate bounds."""

    min_green_through: float = 8.0
    min_green_left: float = 5.0
    max_green_through: float = 60.0
    max_green_left: float = 20.0
    yellow: float = 3.5
    all_red: float = 1.5

    def min_green(self, phase: str) -> float:
        return self.min_green_through if phase in THROUGH_PHASES else self.min_green_left

    def max_green(self, phase: str) -> float:
        return self.max_green_through if phase in THROUGH_PHASES else self.max_green_left

    @property
    def clearance(self) -> float:
        return self.yellow + self.all_red

    def validate(self) -> None:
        _require(self.yellow > 0 and self.all_red > 0, "yellow and all_red must be > 0")
        _require(
            self.min_green_through <= self.max_green_through
            and self.min_green_left <= self.max_green_left,
            "min_green must not exceed max_green",
        )


@dataclass
class OffsetSpec:
    """Coordination bonus: +bonus when a B-side through onset lands within
    delta of base_offset seconds after the latest A-side through onset."""

    base: float
    delta: float = 5.0
    bonus: float = 100.0

    def validate(self) -> None:
        _require(self.delta > 0, "offset delta must be > 0")


@dataclass
class RewardParams:
    queue_threshold_side: float = 15.0   # ql_Th1, vehicles
    queue_threshold_phase: float = 5.0   # ql_Th2, vehicles
    penalty: float = 9999.0              # N and M magnitude, applied negatively
    offset_delta: float = 5.0
    offset_bonus: float = 100.0
    offset_base: float | None = None     # None -> spacing / desired speed
    w_bus_delay: float = 1.0
    w_bus_speed: float = 1.0             # weight on speed in mph
    indication_channel: bool = False     # optional extra obs channel, off by default

    def validate(self) -> None:
        _require(self.queue_threshold_side > 0, "queue_threshold_side must be > 0")
        _require(self.queue_threshold_phase > 0, "queue_threshold_phase must be > 0")
        _require(self.w_bus_delay >= 0 and self.w_bus_speed >= 0, "bus weights must be >= 0")
        _require(self.offset_delta > 0, "offset_delta must be > 0")


# Movement keys the corridor network knows how to spawn. "RT" is the documented
# right-turn catch-all; it must stay at rate zero (right turns are not modeled).
MOVEMENT_KEYS = (
    "EB_TH",
    "A_EB_LT", "B_EB_LT",
    "A_WB_TH", "B_WB_TH",
    "A_WB_LT", "B_WB_LT",
    "A_NB_TH", "A_NB_LT", "A_SB_TH", "A_SB_LT",
    "B_NB_TH", "B_NB_LT", "B_SB_TH", "B_SB_LT",
    "RT",
)


def default_demand() -> dict[str, float]:
    d = {
        "EB_TH": 1440.0,
        "A_EB_LT": 171.0, "B_EB_LT": 171.0,
        "A_WB_TH": 1440.0, "B_WB_TH": 1440.0,
        "A_WB_LT": 171.0, "B_WB_LT": 171.0,
        "RT": 0.0,
    }
    for x in ("A", "B"):
        for side in ("NB", "SB"):
            d[f"{x}_{side}_TH"] = 270.0
            d[f"{x}_{side}_LT"] = 257.0
    return d


def default_lanes() -> dict[str, list[str]]:
    return {
        "EB": ["TH1", "TH2", "LT"],
        "WB": ["TH1", "TH2", "LT"],
        "NB": ["TH", "LT"],
        "SB": ["TH", "LT"],
    }


def default_dwell_cdf() -> list[list[float]]:
    # skip probability + right skew; APC data is not available
    return [[0.15, 0.0], [0.5, 15.0], [0.85, 30.0], [1.0, 60.0]]


@dataclass
class NetworkConfig:
    """Single source of truth for one corridor scenario."""

    intersection_spacing: float = 1600.0
    approach_length: float = 1600.0
    departure_length: float = 600.0
    lanes_per_approach: dict[str, list[str]] = field(default_factory=default_lanes)
    left_turn_bays: list[str] = field(default_factory=lambda: ["EB", "WB", "NB", "SB"])
    desired_speed: float = 40.0          # mph
    sim_step: float = 0.1
    comm_range: float = 800.0
    demand: dict[str, float] = field(default_factory=default_demand)
    bus_route: list[str] = field(default_factory=lambda: ["EB_entry", "AB_EB", "EB_exit"])
    bus_stop: float = 400.0              # ft downstream of A's stop bar
    bus_headway_mean: float = 900.0
    bus_headway_jitter: float = 120.0    # uniform half-width
    dwell_cdf: list[list[float]] = field(default_factory=default_dwell_cdf)
    seed: int = 1
    vehicle_length: float = 15.0
    bus_length: float = 40.0
    idm_max_accel: float = 5.0           # ft/s^2
    idm_comfort_decel: float = 6.5       # ft/s^2
    idm_min_gap: float = 8.0             # ft
    idm_headway_time: float = 1.2        # s
    queue_speed_threshold: float = 5.0   # ft/s; below counts as queued
    detector_zone: float = 50.0          # ft, actuated passage detection
    timing: TimingParams = field(default_factory=TimingParams)

    @property
    def desired_speed_fps(self) -> float:
        return self.desired_speed * MPH_TO_FPS

    @property
    def bus_cells(self) -> int:
        return int(round(self.comm_range / BUS_CELL_FT))

    def validate(self) -> None:
        _require(self.intersection_spacing > 0, "intersection_spacing must be > 0")
        _require(self.comm_range <= self.intersection_spacing,
                 "comm_range must not exceed intersection_spacing")
        _require(self.comm_range <= self.approach_length,
                 "comm_range must not exceed approach_length")
        _require(self.sim_step > 0, "sim_step must be > 0")
        steps_per_s = 1.0 / self.sim_step
        _require(abs(steps_per_s - round(steps_per_s)) < 1e-9,
                 "sim_step must divide 1.0 s evenly")
        _require(self.desired_speed > 0, "desired_speed must be > 0")
        for key, rate in self.demand.items():
            _require(key in MOVEMENT_KEYS, f"unknown demand movement {key!r}")
            _require(rate >= 0, f"demand for {key} must be >= 0")
            if key == "RT" or key.endswith("_RT"):
                _require(rate == 0, "right turns are not modeled; RT demand must be 0")
        _require(0 < self.bus_stop < self.intersection_spacing,
                 "bus_stop must lie between the intersections")
        _require(self.bus_headway_mean > 0, "bus_headway_mean must be > 0")
        _require(self.bus_headway_jitter >= 0, "bus_headway_jitter must be >= 0")
        validate_dwell_cdf(self.dwell_cdf)
        for approach in ("EB", "WB", "NB", "SB"):
            _require(approach in self.lanes_per_approach,
                     f"lanes_per_approach missing {approach}")
            lanes = self.lanes_per_approach[approach]
            has_lt = "LT" in lanes
            _require(has_lt == (approach in self.left_turn_bays),
                     f"{approach}: LT lane list and left_turn_bays disagree")
        self.timing.validate()

    def base_offset(self) -> float:
        """Travel time over the block at free-flow speed, the coordination target."""
        return self.intersection_spacing / self.desired_speed_fps


def validate_dwell_cdf(breakpoints: list[list[float]]) -> None:
    _require(len(breakpoints) >= 1, "dwell_cdf needs at least one breakpoint")
    last_p = 0.0
    last_d = -math.inf
    for i, pair in enumerate(breakpoints):
        _require(len(pair) == 2, f"dwell_cdf[{i}] must be a (probability, seconds) pair")
        p, d = pair
        _require(p > last_p, "dwell_cdf probabilities must be strictly increasing")
        _require(d >= last_d, "dwell_cdf dwell seconds must be nondecreasing")
        _require(d >= 0, "dwell seconds must be >= 0")
        last_p, last_d = p, d
    _require(abs(last_p - 1.0) < 1e-12, "dwell_cdf must end at probability 1.0")


@dataclass
class RlParams:
    learning_rate: float = 0.01
    gamma: float = 0.99
    epsilon_decay: float = 0.01
    epsilon_floor: float = 0.01
    buffer_capacity: int = 20000
    target_sync_episodes: int = 50
    updates_per_episode: int = 64
    batch_size: int = 64
    hidden: list[int] = field(default_factory=lambda: [128, 256, 256])

    def validate(self) -> None:
        _require(0 < self.gamma <= 1, "gamma must be in (0, 1]")
        _require(self.buffer_capacity > 0, "buffer_capacity must be > 0")
        _require(self.batch_size > 0, "batch_size must be > 0")


MODES = ("background-train", "tsp-independent-train", "tsp-coordinated-train", "evaluate")
BASELINES = ("fixed", "actuated", "marl")
TSP_MODES = ("off", "independent", "coordinated")


@dataclass
class ExperimentConfig:
    scenario: NetworkConfig = field(default_factory=NetworkConfig)
    mode: str = "evaluate"
    episodes: int = 200
    episode_length: float = 1800.0
    warmup: float = 900.0
    replicates: int = 10
    seeds: list[int] = field(default_factory=lambda: list(range(101, 111)))
    reward: RewardParams = field(default_factory=RewardParams)
    rl: RlParams = field(default_factory=RlParams)
    baseline: str = "marl"
    tsp: str = "off"
    model_dir: str | None = None

    def validate(self) -> None:
        self.scenario.validate()
        self.reward.validate()
        self.rl.validate()
        _require(self.mode in MODES, f"mode must be one of {MODES}")
        _require(self.baseline in BASELINES, f"baseline must be one of {BASELINES}")
        _require(self.tsp in TSP_MODES, f"tsp must be one of {TSP_MODES}")
        _require(self.episodes >= 0, "episodes must be >= 0")
        _require(self.episode_length > 0, "episode_length must be > 0")
        _require(self.warmup < self.episode_length, "warmup must be < episode_length")
        _require(self.replicates == len(self.seeds),
                 "replicates must equal the number of seeds")
        if self.tsp != "off":
            _require(self.baseline == "marl",
                     "tsp independent/coordinated requires baseline marl")

    def offset_spec(self) -> OffsetSpec:
        base = self.reward.offset_base
        if base is None:
            base = self.scenario.base_offset()
        return OffsetSpec(base=base, delta=self.reward.offset_delta,
                          bonus=self.reward.offset_bonus)


def _from_dict(cls, data: dict, path: str):
    _require(isinstance(data, dict), f"{path}: expected an object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{path}: unknown field {key!r}")
        kwargs[key] = value
    obj = cls()
    nested = {"scenario": NetworkConfig, "reward": RewardParams,
              "rl": RlParams, "timing": TimingParams}
    for key, value in kwargs.items():
        if key in nested and not isinstance(value, nested[key]):
            value = _from_dict(nested[key], value, f"{path}.{key}")
        setattr(obj, key, value)
    return obj


def scenario_from_dict(data: dict) -> NetworkConfig:
    cfg = _from_dict(NetworkConfig, data, "scenario")
    cfg.validate()
    return cfg


def experiment_from_dict(data: dict) -> ExperimentConfig:
    cfg = _from_dict(ExperimentConfig, data, "config")
    cfg.validate()
    return cfg


def load_experiment(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    return experiment_from_dict(data)


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable hash of everything that shapes agent IO and dynamics."""
    payload = {
        "scenario": asdict(cfg.scenario),
        "reward": asdict(cfg.reward),
        "rl": asdict(cfg.rl),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
