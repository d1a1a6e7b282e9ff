"""World model: road geometry, vehicle states, planner configuration, scenarios.

Road frame convention (shared by every module): y increases in the direction
of travel, x is lateral. Lane 1 is the rightmost/slowest lane and occupies
x in [0, lane_width), so x grows toward the faster ("left") lanes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional


class ConfigError(ValueError):
    """Invalid configuration value or unknown option name."""


class ScenarioError(ValueError):
    """Scenario file failed validation; message names the offending field."""


@dataclass(frozen=True)
class RoadGeometry:
    """Straight multi-lane highway segment, axis-aligned with the road frame."""

    num_lanes: int
    lane_width: float = 3.7
    length: float = 2000.0

    def __post_init__(self) -> None:
        if self.num_lanes < 1:
            raise ConfigError(f"road.num_lanes must be >= 1, got {self.num_lanes}")
        if self.lane_width <= 0:
            raise ConfigError(f"road.lane_width must be > 0, got {self.lane_width}")
        if self.length <= 0:
            raise ConfigError(f"road.length must be > 0, got {self.length}")

    @property
    def width(self) -> float:
        return self.num_lanes * self.lane_width


def lane_center(lane: int, road: RoadGeometry) -> float:
    """Lateral coordinate of the center of ``lane`` (1-based index)."""
    return (lane - 0.5) * road.lane_width


def lane_of(x: float, road: RoadGeometry) -> int:
    """Lane index for lateral position ``x``, clamped to the road.

    Points exactly on a lane boundary assign to the higher-index lane,
    which keeps lane extraction deterministic.
    """
    lane = math.floor(x / road.lane_width) + 1
    return min(max(lane, 1), road.num_lanes)


@dataclass(frozen=True)
class AgentState:
    """Pose, velocity and footprint of one vehicle in the road frame.

    ``heading`` is measured from the +y axis toward +x, so a lane-keeping
    vehicle has heading 0 and velocity (speed*sin(heading), speed*cos(heading)).
    """

    id: str
    x: float
    y: float
    speed: float
    heading: float = 0.0
    length: float = 4.5
    width: float = 1.8

    def __post_init__(self) -> None:
        if self.length <= 0 or self.width <= 0:
            raise ConfigError(f"agent {self.id}: footprint must be positive")
        if self.speed < 0:
            raise ConfigError(f"agent {self.id}: speed must be >= 0")

    def lane(self, road: RoadGeometry) -> int:
        return lane_of(self.x, road)

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.speed * math.sin(self.heading), self.speed * math.cos(self.heading))


@dataclass(frozen=True)
class ControlInput:
    """Kinematic bicycle input: longitudinal acceleration and steering angle."""

    accel: float = 0.0
    steer: float = 0.0


#: Documented style defaults. The planning threshold is the main
#: aggressiveness knob; acceleration limits shape how assertively the
#: controller executes the plan.
STYLE_PRESETS: dict[str, dict[str, float]] = {
    "conservative": {"risk_threshold": 0.4, "accel_limit": 1.5, "lat_accel_limit": 1.5},
    "normal": {"risk_threshold": 0.6, "accel_limit": 2.0, "lat_accel_limit": 2.5},
    "aggressive": {"risk_threshold": 0.8, "accel_limit": 3.0, "lat_accel_limit": 4.0},
}

_STYLE_ORDER = ("conservative", "normal", "aggressive")


def validate_style_table(table: dict[str, dict[str, float]]) -> None:
    """Check a (possibly user-overridden) style table keeps its risk ordering."""
    for name in _STYLE_ORDER:
        if name not in table:
            raise ConfigError(f"styles: missing preset '{name}'")
    hp = [table[name]["risk_threshold"] for name in _STYLE_ORDER]
    if not (hp[0] < hp[1] < hp[2]):
        raise ConfigError(
            "styles: risk_threshold must order conservative < normal < aggressive, "
            f"got {hp[0]} / {hp[1]} / {hp[2]}"
        )


def style_preset(name: str, table: Optional[dict[str, dict[str, float]]] = None) -> dict[str, float]:
    """Return the (risk_threshold, acceleration limit) bundle for a style name."""
    table = table if table is not None else STYLE_PRESETS
    if table is not STYLE_PRESETS:
        validate_style_table(table)
    if name not in table:
        raise ConfigError(f"ego.style: unknown style '{name}' (expected one of {_STYLE_ORDER})")
    return dict(table[name])


@dataclass(frozen=True)
class EgoConfig:
    """Planner-facing driver parameters for the ego vehicle."""

    risk_threshold: float = 0.6
    desired_speed: float = 30.0
    accel_limit: float = 2.0
    lat_accel_limit: float = 2.5
    style: str = "normal"

    def __post_init__(self) -> None:
        if self.risk_threshold <= 0:
            raise ConfigError(f"ego.risk_threshold must be > 0, got {self.risk_threshold}")
        if self.desired_speed < 0:
            raise ConfigError(f"ego.desired_speed must be >= 0, got {self.desired_speed}")

    @classmethod
    def from_style(cls, style: str, desired_speed: float, **overrides) -> "EgoConfig":
        preset = style_preset(style)
        preset.update(overrides)
        return cls(desired_speed=desired_speed, style=style, **preset)


@dataclass(frozen=True)
class PlannerConfig:
    """Shared knobs for prediction, risk evaluation, planning and simulation.

    The trajectory/risk timing defaults give a 5 s horizon at 0.2 s
    resolution, compatible with 10 Hz trajectory data.
    """

    # prediction / risk-field timing
    t_s: float = 0.2            # spacing of risk-field time steps
    n_time: int = 25            # number of predicted steps (5 s horizon)
    delta_t: float = 0.2        # spacing of trajectory points
    # planning lattice
    d_p: float = 10.0           # longitudinal node spacing
    n_horiz: int = 15           # number of columns ahead of the ego
    # risk kernel
    alpha: float = 0.8
    beta: float = 1.5
    velocity_skew_sign: int = -1   # -1 elongates risk ahead of motion; +1 behind
    # replanning
    replan_period: Optional[float] = 0.2   # None plans once at t=0
    tie_break: tuple[str, ...] = ("keep", "right", "left")
    # prediction
    predictor: str = "physics"    # registered predictor name
    decel_rate: float = 2.0       # braking profile for "decelerate" maneuvers
    lane_change_time: float = 4.0
    keep_relax_time: float = 1.0  # relaxation toward lane center when keeping
    softmax_temperature: float = 0.25
    score_vel_gain: float = 1.0   # lateral-velocity-toward-target feature weight
    score_offset_gain: float = 1.0
    score_gap_gain: float = 0.5
    gap_open_distance: float = 20.0   # gap (m) treated as fully open
    decel_headway: float = 4.0        # time headway below which decel mass grows
    decel_max_prob: float = 0.8
    decel_min_prob: float = 0.2       # braking uncertainty floor, even in free flow
    history_window: float = 3.0
    # lane preference costs
    use_lane_pref: bool = True
    lane_hold_weight: float = 0.2   # per-column ambient lane risk charge
    fallback_lane_speed: Optional[float] = None   # None -> ego desired speed
    fallback_lane_sigma: float = 2.0
    # grid time mapping
    time_map: str = "current"     # or "desired"
    u_min: float = 1.0
    # simulation / control
    sim_dt: float = 0.05
    wheelbase: float = 2.8
    lookahead: float = 10.0
    speed_gain: float = 1.0
    comfort_decel: float = 3.0    # stopping-envelope decel toward a short plan's end
    stop_margin: float = 8.0      # standoff kept from the end of an incomplete plan
    lane_event_persistence: float = 0.5   # lane change counted after this dwell time

    def __post_init__(self) -> None:
        for name in ("t_s", "n_time", "delta_t", "d_p", "n_horiz", "alpha", "beta",
                     "sim_dt", "u_min", "lookahead"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"planner.{name} must be > 0, got {getattr(self, name)}")
        if self.velocity_skew_sign not in (-1, 1):
            raise ConfigError("planner.velocity_skew_sign must be +1 or -1")
        if sorted(self.tie_break) != ["keep", "left", "right"]:
            raise ConfigError(f"planner.tie_break must permute keep/right/left, got {self.tie_break}")
        if self.time_map not in ("current", "desired"):
            raise ConfigError(f"planner.time_map must be 'current' or 'desired', got {self.time_map}")
        if self.replan_period is not None:
            ratio = self.replan_period / self.sim_dt
            if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
                raise ConfigError(
                    f"planner.replan_period ({self.replan_period}) must be an integer "
                    f"multiple of sim_dt ({self.sim_dt})"
                )

    @property
    def horizon(self) -> float:
        return self.n_time * self.t_s

    def with_overrides(self, **kwargs) -> "PlannerConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class AgentSpec:
    """Initial state plus behavior script for one scripted vehicle."""

    state: AgentState
    behavior: dict = field(default_factory=lambda: {"type": "constant"})


@dataclass(frozen=True)
class Scenario:
    road: RoadGeometry
    agents: tuple[AgentSpec, ...]
    ego: AgentState
    ego_config: EgoConfig
    duration: float
    seed: int = 0
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    lane_preference: Optional[dict] = None   # inline table document, or None for defaults

    def __post_init__(self) -> None:
        ids = [a.state.id for a in self.agents] + [self.ego.id]
        if len(set(ids)) != len(ids):
            raise ScenarioError("agents: vehicle ids must be unique")
        for a in self.agents:
            if not (0.0 <= a.state.x <= self.road.width) or not (0.0 <= a.state.y <= self.road.length):
                raise ScenarioError(f"agents[{a.state.id}]: outside road bounds at t=0")
        if not (0.0 <= self.ego.x <= self.road.width):
            raise ScenarioError("ego.x_m: outside road bounds at t=0")
        if self.duration <= 0:
            raise ScenarioError(f"duration_s must be > 0, got {self.duration}")


# ---------------------------------------------------------------------------
# Scenario JSON document


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ScenarioError(f"{where}.{key}: missing required field")
    return doc[key]


def _agent_from_doc(doc: dict, idx: int) -> AgentSpec:
    where = f"agents[{idx}]"
    try:
        state = AgentState(
            id=str(_require(doc, "id", where)),
            x=float(_require(doc, "x_m", where)),
            y=float(_require(doc, "y_m", where)),
            speed=float(_require(doc, "speed_mps", where)),
            heading=float(doc.get("heading_rad", 0.0)),
            length=float(doc.get("length_m", 4.5)),
            width=float(doc.get("width_m", 1.8)),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc
    behavior = doc.get("behavior", {"type": "constant"})
    if isinstance(behavior, str):
        behavior = {"type": behavior}
    if behavior.get("type") not in ("constant", "replay", "planner"):
        raise ScenarioError(f"{where}.behavior.type: unknown behavior '{behavior.get('type')}'")
    return AgentSpec(state=state, behavior=behavior)


def scenario_from_dict(doc: dict) -> Scenario:
    road_doc = _require(doc, "road", "scenario")
    road = RoadGeometry(
        num_lanes=int(_require(road_doc, "num_lanes", "road")),
        lane_width=float(road_doc.get("lane_width_m", 3.7)),
        length=float(road_doc.get("length_m", 2000.0)),
    )
    agents = tuple(_agent_from_doc(a, i) for i, a in enumerate(doc.get("agents", [])))
    ego_doc = _require(doc, "ego", "scenario")
    ego = AgentState(
        id=str(ego_doc.get("id", "ego")),
        x=float(_require(ego_doc, "x_m", "ego")),
        y=float(_require(ego_doc, "y_m", "ego")),
        speed=float(_require(ego_doc, "speed_mps", "ego")),
        heading=float(ego_doc.get("heading_rad", 0.0)),
        length=float(ego_doc.get("length_m", 4.5)),
        width=float(ego_doc.get("width_m", 1.8)),
    )
    style = ego_doc.get("style", "normal")
    preset = style_preset(style)
    ego_config = EgoConfig(
        risk_threshold=float(ego_doc.get("risk_threshold", preset["risk_threshold"])),
        desired_speed=float(_require(ego_doc, "desired_speed_mps", "ego")),
        accel_limit=float(ego_doc.get("accel_limit", preset["accel_limit"])),
        lat_accel_limit=float(ego_doc.get("lat_accel_limit", preset["lat_accel_limit"])),
        style=style,
    )
    planner_doc = doc.get("planner", {})
    try:
        planner = PlannerConfig(**planner_doc)
    except TypeError as exc:
        bad = str(exc).split("'")[1] if "'" in str(exc) else str(exc)
        raise ScenarioError(f"planner.{bad}: unknown option") from exc
    return Scenario(
        road=road,
        agents=agents,
        ego=ego,
        ego_config=ego_config,
        duration=float(_require(doc, "duration_s", "scenario")),
        seed=int(doc.get("seed", 0)),
        planner=planner,
        lane_preference=doc.get("lane_preference"),
    )


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario JSON parse error: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: top-level JSON value must be an object")
    return scenario_from_dict(doc)


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "road": {
            "num_lanes": sc.road.num_lanes,
            "lane_width_m": sc.road.lane_width,
            "length_m": sc.road.length,
        },
        "agents": [
            {
                "id": a.state.id,
                "x_m": a.state.x,
                "y_m": a.state.y,
                "speed_mps": a.state.speed,
                "heading_rad": a.state.heading,
                "length_m": a.state.length,
                "width_m": a.state.width,
                "behavior": a.behavior,
            }
            for a in sc.agents
        ],
        "ego": {
            "id": sc.ego.id,
            "x_m": sc.ego.x,
            "y_m": sc.ego.y,
            "speed_mps": sc.ego.speed,
            "heading_rad": sc.ego.heading,
            "length_m": sc.ego.length,
            "width_m": sc.ego.width,
            "risk_threshold": sc.ego_config.risk_threshold,
            "desired_speed_mps": sc.ego_config.desired_speed,
            "style": sc.ego_config.style,
        },
        "duration_s": sc.duration,
        "seed": sc.seed,
    }
