"""Multimodal trajectory prediction for surrounding vehicles.

Every vehicle gets six candidate futures: {left change, keep lane, right
change} x {maintain speed, decelerate}, each with a probability. The built-in
"physics" predictor generates the geometry from closed-form motion profiles
and scores maneuvers with a documented feature heuristic; other predictors
with the same output contract can be registered by name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AgentState, PlannerConfig, RoadGeometry, lane_center, lane_of


class PredictionError(ValueError):
    pass


LATERAL_CLASSES = ("left_change", "keep_lane", "right_change")
LONGITUDINAL_CLASSES = ("maintain", "decelerate")


@dataclass(frozen=True)
class ManeuverClass:
    lateral: str
    longitudinal: str

    def __post_init__(self) -> None:
        if self.lateral not in LATERAL_CLASSES or self.longitudinal not in LONGITUDINAL_CLASSES:
            raise PredictionError(f"unknown maneuver {self.lateral}/{self.longitudinal}")

    @property
    def name(self) -> str:
        return f"{self.lateral}/{self.longitudinal}"


#: Fixed enumeration order of the six maneuvers; output trajectories follow it.
MANEUVERS: tuple[ManeuverClass, ...] = tuple(
    ManeuverClass(lat, lon) for lat in LATERAL_CLASSES for lon in LONGITUDINAL_CLASSES
)


@dataclass(frozen=True)
class PredictedTrajectory:
    maneuver: ManeuverClass
    probability: float
    #: (x, y, vx, vy) at times (i+1)*delta_t, i = 0..n_time-1
    points: tuple[tuple[float, float, float, float], ...]


@dataclass(frozen=True)
class PredictedTrajectorySet:
    vehicle_id: str
    length: float
    width: float
    trajectories: tuple[PredictedTrajectory, ...]

    def total_probability(self) -> float:
        return sum(t.probability for t in self.trajectories)


@dataclass(frozen=True)
class VehicleHistory:
    """Past states of one vehicle at strictly increasing timestamps."""

    vehicle_id: str
    states: tuple[tuple[float, AgentState], ...]

    def __post_init__(self) -> None:
        if not self.states:
            raise PredictionError(f"vehicle {self.vehicle_id}: empty history")
        ts = [t for t, _ in self.states]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise PredictionError(f"vehicle {self.vehicle_id}: history timestamps must increase")

    @classmethod
    def from_state(cls, state: AgentState, t: float = 0.0) -> "VehicleHistory":
        return cls(vehicle_id=state.id, states=((t, state),))

    @property
    def latest(self) -> AgentState:
        return self.states[-1][1]


# ---------------------------------------------------------------------------
# motion profiles


def _longitudinal_profile(kind: str, y0: float, u: float, times: np.ndarray,
                          decel: float) -> tuple[np.ndarray, np.ndarray]:
    if kind == "maintain":
        return y0 + u * times, np.full_like(times, u)
    # decelerate at a constant rate, holding at standstill
    t_stop = u / decel if decel > 0 else math.inf
    moving = times < t_stop
    v = np.where(moving, u - decel * times, 0.0)
    y = np.where(moving, y0 + u * times - 0.5 * decel * times**2,
                 y0 + (u * u) / (2.0 * decel) if decel > 0 else y0)
    return y, v


def _smoothstep(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quintic ease 6u^5-15u^4+10u^3 and its derivative (zero end velocity/accel)."""
    s = u**3 * (6.0 * u**2 - 15.0 * u + 10.0)
    ds = 30.0 * u**2 * (u - 1.0) ** 2
    return s, ds


def _lateral_profile(kind: str, x0: float, vx0: float, target: float,
                     times: np.ndarray, cfg: PlannerConfig) -> tuple[np.ndarray, np.ndarray]:
    if kind == "keep":
        # first-order relaxation toward the lane center
        tau = cfg.keep_relax_time
        decay = np.exp(-times / tau)
        x = target + (x0 - target) * decay
        vx = -(x0 - target) / tau * decay
        return x, vx
    u = np.minimum(times / cfg.lane_change_time, 1.0)
    s, ds = _smoothstep(u)
    x = x0 + (target - x0) * s
    vx = (target - x0) * ds / cfg.lane_change_time
    return x, vx


# ---------------------------------------------------------------------------
# maneuver scoring


def _gaps_in_lane(state: AgentState, lane: int, neighbors, road: RoadGeometry) -> tuple[float, float]:
    """Bumper gaps (front, rear) to the nearest neighbors occupying ``lane``."""
    front = math.inf
    rear = math.inf
    for nb in neighbors:
        if nb.id == state.id or lane_of(nb.x, road) != lane:
            continue
        gap = abs(nb.y - state.y) - 0.5 * (nb.length + state.length)
        if nb.y >= state.y:
            front = min(front, gap)
        else:
            rear = min(rear, gap)
    return front, rear


def _lateral_scores(state: AgentState, neighbors, road: RoadGeometry,
                    cfg: PlannerConfig) -> dict[str, tuple[float, bool, int]]:
    """Score each lateral class; returns {class: (score, feasible, target_lane)}."""
    lane = lane_of(state.x, road)
    vx_lat = state.speed * math.sin(state.heading)
    out = {}
    for cls, delta in (("left_change", +1), ("keep_lane", 0), ("right_change", -1)):
        target = lane + delta
        feasible = 1 <= target <= road.num_lanes
        tl = min(max(target, 1), road.num_lanes)
        d = lane_center(tl, road) - state.x
        v_toward = vx_lat * math.copysign(1.0, d) if abs(d) > 1e-9 else -abs(vx_lat)
        offset = abs(d) / road.lane_width
        front, rear = _gaps_in_lane(state, tl, neighbors, road)
        gap_score = min(front, rear, cfg.gap_open_distance) / cfg.gap_open_distance
        gap_score = max(gap_score, 0.0)
        score = (cfg.score_vel_gain * v_toward
                 - cfg.score_offset_gain * offset
                 + cfg.score_gap_gain * gap_score)
        out[cls] = (score, feasible, tl)
    return out


def _decel_probability(state: AgentState, target_lane: int, neighbors,
                       road: RoadGeometry, cfg: PlannerConfig) -> float:
    front, _ = _gaps_in_lane(state, target_lane, neighbors, road)
    if math.isinf(front):
        return cfg.decel_min_prob
    headway = max(front, 0.0) / max(state.speed, 0.1)
    scaled = cfg.decel_max_prob * min(max(1.0 - headway / cfg.decel_headway, 0.0), 1.0)
    return min(max(scaled, cfg.decel_min_prob), cfg.decel_max_prob)


# ---------------------------------------------------------------------------
# the built-in physics predictor


def predict(history: VehicleHistory, neighbors, road: RoadGeometry,
            cfg: PlannerConfig, seed: int = 0) -> PredictedTrajectorySet:
    """Six-maneuver prediction for one vehicle.

    Longitudinal profiles hold the current speed or brake at ``decel_rate``;
    lateral profiles relax to the lane center (keep) or ease to the adjacent
    lane center over ``lane_change_time``. Class probabilities come from a
    temperature-softmax over score = vel_gain * (lateral speed toward target)
    - offset_gain * |offset to target center| / lane_width
    + gap_gain * (smallest bumper gap in target lane, saturated at
    gap_open_distance and normalized); maneuvers whose target lane is off the
    road get probability zero. Within a lateral class, mass shifts from
    "maintain" to "decelerate" as the time headway to the target-lane leader
    drops below ``decel_headway``, never below the ``decel_min_prob`` floor.
    Deterministic in its inputs; the built-in
    generator does not consume randomness, ``seed`` is part of the predictor
    interface.
    """
    state = history.latest
    if not (0.0 <= state.x <= road.width):
        raise PredictionError(f"vehicle {state.id}: current state off road (x={state.x})")
    times = cfg.delta_t * np.arange(1, cfg.n_time + 1)
    u_lon = state.speed * math.cos(state.heading)
    vx_lat = state.speed * math.sin(state.heading)

    lat_scores = _lateral_scores(state, neighbors, road, cfg)
    feasible = {c: f for c, (s, f, tl) in lat_scores.items()}
    scores = {c: s for c, (s, f, tl) in lat_scores.items()}
    targets = {c: tl for c, (s, f, tl) in lat_scores.items()}

    temp = cfg.softmax_temperature
    exps = {c: math.exp(scores[c] / temp) for c in LATERAL_CLASSES if feasible[c]}
    norm = sum(exps.values())
    p_lat = {c: (exps[c] / norm if feasible[c] else 0.0) for c in LATERAL_CLASSES}

    lat_kind = {"left_change": "change", "keep_lane": "keep", "right_change": "change"}
    trajectories = []
    x_lo = state.width / 2.0
    x_hi = road.width - state.width / 2.0
    for maneuver in MANEUVERS:
        cls = maneuver.lateral
        target_x = lane_center(targets[cls], road)
        xs, vxs = _lateral_profile(lat_kind[cls], state.x, vx_lat, target_x, times, cfg)
        ys, vys = _longitudinal_profile(maneuver.longitudinal, state.y, u_lon, times,
                                        cfg.decel_rate)
        xs = np.clip(xs, x_lo, x_hi)
        p_dec = _decel_probability(state, targets[cls], neighbors, road, cfg)
        p = p_lat[cls] * (p_dec if maneuver.longitudinal == "decelerate" else 1.0 - p_dec)
        points = tuple((float(x), float(y), float(vx), float(vy))
                       for x, y, vx, vy in zip(xs, ys, vxs, vys))
        trajectories.append(PredictedTrajectory(maneuver=maneuver, probability=p, points=points))

    return PredictedTrajectorySet(vehicle_id=state.id, length=state.length,
                                  width=state.width, trajectories=tuple(trajectories))


PREDICTORS = {"physics": predict}


def register_predictor(name: str, fn) -> None:
    PREDICTORS[name] = fn


def get_predictor(name: str):
    if name not in PREDICTORS:
        raise PredictionError(f"unknown predictor '{name}' (registered: {sorted(PREDICTORS)})")
    return PREDICTORS[name]


def predict_all(agents, histories: dict[str, VehicleHistory], road: RoadGeometry,
                cfg: PlannerConfig, seed: int = 0,
                extra_neighbors=()) -> list[PredictedTrajectorySet]:
    """Predict every agent, with all other agents (and ``extra_neighbors``,
    e.g. the ego vehicle) as its neighbor context."""
    predictor = get_predictor(cfg.predictor)
    out = []
    pool = list(agents) + list(extra_neighbors)
    for agent in agents:
        if agent.id not in histories:
            raise PredictionError(f"agent {agent.id}: no history provided")
        neighbors = [a for a in pool if a.id != agent.id]
        try:
            out.append(predictor(histories[agent.id], neighbors, road, cfg, seed))
        except PredictionError:
            raise
        except Exception as exc:
            raise PredictionError(f"agent {agent.id}: {exc}") from exc
    return out


def predictions_to_doc(predictions: list[PredictedTrajectorySet], delta_t: float) -> list[dict]:
    """JSON-ready trajectory dump."""
    return [
        {
            "vehicle_id": pset.vehicle_id,
            "maneuver": traj.maneuver.name,
            "probability": traj.probability,
            "points": [
                {"t": (i + 1) * delta_t, "x": pt[0], "y": pt[1], "vx": pt[2], "vy": pt[3]}
                for i, pt in enumerate(traj.points)
            ],
        }
        for pset in predictions
        for traj in pset.trajectories
    ]
