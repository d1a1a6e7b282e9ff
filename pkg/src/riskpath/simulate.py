"""Closed-loop highway simulation.

A single-writer loop advances every vehicle at a fixed tick: scripted agents
follow closed-form schedules or replayed traces, planner-driven vehicles
(always the ego, optionally agents) replan periodically and track their
reference with pure pursuit plus proportional speed control. The trace is a
flat list of per-tick records plus an event list, serialized byte-stably.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import AgentState, ControlInput, EgoConfig, PlannerConfig, RoadGeometry, Scenario, lane_of
from .lanepref import LanePreferenceTable, default_table, table_from_doc
from .planner import (
    PlannerError,
    ReferenceTrajectory,
    build_grid,
    compute_lane_stats,
    path_to_reference,
    plan,
)
from .prediction import VehicleHistory, predict_all
from .riskfield import RiskParams, components_from_states, eval_components

_STEER_MAX = 0.6


class SimError(ValueError):
    pass


def step_bicycle(state: AgentState, control: ControlInput, dt: float,
                 wheelbase: float) -> AgentState:
    """Explicit-Euler kinematic bicycle step (rear-axle reference point)."""
    if dt <= 0:
        raise SimError(f"dt must be > 0, got {dt}")
    vals = (state.x, state.y, state.speed, state.heading, control.accel, control.steer)
    if not all(math.isfinite(v) for v in vals):
        raise SimError(f"non-finite bicycle input: state={state} control={control}")
    v = state.speed
    x = state.x + v * math.sin(state.heading) * dt
    y = state.y + v * math.cos(state.heading) * dt
    heading = state.heading + (v / wheelbase) * math.tan(control.steer) * dt
    speed = max(0.0, v + control.accel * dt)
    return replace(state, x=x, y=y, speed=speed, heading=heading)


def track_reference(ego: AgentState, ref: ReferenceTrajectory, ego_cfg: EgoConfig,
                    cfg: PlannerConfig) -> ControlInput:
    """Pure-pursuit steering toward a lookahead point plus proportional speed control.

    Positive steer turns toward +x (the faster lanes). Steering is capped by
    the lateral-acceleration limit at the current speed and an absolute angle
    bound. The commanded speed is the most binding cap ahead on the
    reference, projected back to the ego under the comfort deceleration, so
    stopping envelopes brake early enough while free road commands the
    desired speed outright.
    """
    if len(ref) < 2:
        return ControlInput(0.0, 0.0)
    n = len(ref)
    k = int(np.searchsorted(ref.ys, ego.y + cfg.lookahead))
    k = min(k, n - 1)
    dx = float(ref.xs[k]) - ego.x
    dy = float(ref.ys[k]) - ego.y
    sin_h, cos_h = math.sin(ego.heading), math.cos(ego.heading)
    e_fwd = dx * sin_h + dy * cos_h
    e_lat = dx * cos_h - dy * sin_h
    ld2 = dx * dx + dy * dy
    if ld2 < 1e-9 or e_fwd <= 0.0:
        steer = 0.0
    else:
        kappa = 2.0 * e_lat / ld2
        kappa_max = ego_cfg.lat_accel_limit / max(ego.speed * ego.speed, 1.0)
        kappa = min(max(kappa, -kappa_max), kappa_max)
        steer = math.atan(kappa * cfg.wheelbase)
        steer = min(max(steer, -_STEER_MAX), _STEER_MAX)
    if ego.y > float(ref.ys[-1]):
        v_cmd = 0.0            # reference overrun: bleed speed off
    else:
        j = int(np.searchsorted(ref.ys, ego.y))
        ahead = slice(max(j - 1, 0), n)
        gap = np.maximum(ref.ys[ahead] - ego.y, 0.0)
        projected = np.sqrt(ref.speeds[ahead] ** 2 + 2.0 * cfg.comfort_decel * gap)
        v_cmd = float(min(ego_cfg.desired_speed, projected.min()))
    accel = cfg.speed_gain * (v_cmd - ego.speed)
    accel = min(max(accel, -ego_cfg.accel_limit), ego_cfg.accel_limit)
    return ControlInput(accel=accel, steer=steer)


# ---------------------------------------------------------------------------
# behavior drivers


class ConstantDriver:
    """Lane-keeping at constant speed, on a closed-form schedule (no drift)."""

    def __init__(self, initial: AgentState):
        self.initial = initial

    def state_at(self, t: float) -> Optional[AgentState]:
        st = self.initial
        return replace(st, y=st.y + st.speed * math.cos(st.heading) * t,
                       x=st.x + st.speed * math.sin(st.heading) * t)


class ReplayDriver:
    """Linear interpolation through a recorded (t, x, y) trace.

    The vehicle exists only while its record covers the current time.
    """

    def __init__(self, vehicle_id: str, times, xs, ys, length: float, width: float):
        self.vehicle_id = vehicle_id
        self.times = np.asarray(times, dtype=np.float64)
        self.xs = np.asarray(xs, dtype=np.float64)
        self.ys = np.asarray(ys, dtype=np.float64)
        if self.times.shape[0] < 2:
            raise SimError(f"replay for {vehicle_id} needs at least 2 points")
        if np.any(np.diff(self.times) <= 0):
            raise SimError(f"replay timestamps for {vehicle_id} must increase")
        self.length = length
        self.width = width

    def state_at(self, t: float) -> Optional[AgentState]:
        if t < self.times[0] - 1e-9 or t > self.times[-1] + 1e-9:
            return None
        x = float(np.interp(t, self.times, self.xs))
        y = float(np.interp(t, self.times, self.ys))
        j = min(max(int(np.searchsorted(self.times, t, side="right")) - 1, 0),
                self.times.shape[0] - 2)
        dt_seg = self.times[j + 1] - self.times[j]
        vx = float((self.xs[j + 1] - self.xs[j]) / dt_seg)
        vy = float((self.ys[j + 1] - self.ys[j]) / dt_seg)
        speed = math.hypot(vx, vy)
        heading = math.atan2(vx, vy) if speed > 1e-9 else 0.0
        return AgentState(id=self.vehicle_id, x=x, y=y, speed=speed, heading=heading,
                          length=self.length, width=self.width)


class PlannerDriver:
    """Receding-horizon planner + tracker for one vehicle."""

    def __init__(self, ego_cfg: EgoConfig, cfg: PlannerConfig,
                 table: Optional[LanePreferenceTable], seed: int = 0):
        self.ego_cfg = ego_cfg
        self.cfg = cfg
        self.table = table
        self.seed = seed
        self.reference: Optional[ReferenceTrajectory] = None
        self.plan_id = 0
        self.last_incomplete = False

    def replan(self, state: AgentState, others: list[AgentState],
               histories: dict[str, VehicleHistory], road: RoadGeometry) -> None:
        cfg = self.cfg
        predictions = predict_all(others, histories, road, cfg, seed=self.seed,
                                  extra_neighbors=[state])
        lane_stats = compute_lane_stats([state] + others, road, cfg,
                                        default_speed=self.ego_cfg.desired_speed)
        try:
            grid = build_grid(state, self.ego_cfg, predictions, road, cfg,
                              table=self.table, lane_stats=lane_stats)
        except PlannerError:
            # nothing left to plan into (road end); keep tracking the old
            # reference and let the speed schedule run out
            self.plan_id += 1
            return
        path = plan(grid, self.ego_cfg.risk_threshold, cfg.tie_break)
        self.reference = path_to_reference(path, state.speed, self.ego_cfg, cfg)
        self.plan_id += 1
        self.last_incomplete = not path.complete

    def control(self, state: AgentState) -> ControlInput:
        if self.reference is None or len(self.reference) < 2:
            return ControlInput(-self.cfg.comfort_decel, 0.0)
        return track_reference(state, self.reference, self.ego_cfg, self.cfg)


# ---------------------------------------------------------------------------
# collision geometry


def _rect_axes_corners(st: AgentState):
    fx, fy = math.sin(st.heading), math.cos(st.heading)
    rx, ry = math.cos(st.heading), -math.sin(st.heading)
    hl, hw = st.length / 2.0, st.width / 2.0
    corners = [(st.x + sf * fx * hl + sr * rx * hw, st.y + sf * fy * hl + sr * ry * hw)
               for sf in (-1.0, 1.0) for sr in (-1.0, 1.0)]
    return [(fx, fy), (rx, ry)], corners


def rectangles_overlap(a: AgentState, b: AgentState) -> bool:
    """Oriented rectangle intersection via the separating-axis test."""
    axes_a, corners_a = _rect_axes_corners(a)
    axes_b, corners_b = _rect_axes_corners(b)
    for ax, ay in axes_a + axes_b:
        pa = [cx * ax + cy * ay for cx, cy in corners_a]
        pb = [cx * ax + cy * ay for cx, cy in corners_b]
        if max(pa) < min(pb) or max(pb) < min(pa):
            return False
    return True


# ---------------------------------------------------------------------------
# the world loop


@dataclass
class SimTrace:
    road: RoadGeometry
    dt: float
    seed: int
    records: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def lane_change_events(self, vehicle_id: Optional[str] = None) -> list[dict]:
        events = [e for e in self.events if e["type"] == "lane_change"]
        if vehicle_id is None:
            return events
        return [e for e in events if e["vehicle"] == vehicle_id]

    def collision_events(self) -> list[dict]:
        return [e for e in self.events if e["type"] == "collision"]

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True, separators=(",", ":"))
                         for r in self.records) + "\n"

    def summary(self) -> dict:
        ego_first = self.records[0]["ego"]
        ego_last = self.records[-1]["ego"]
        return {
            "ticks": len(self.records),
            "dt": self.dt,
            "seed": self.seed,
            "events": self.events,
            "collisions": len(self.collision_events()),
            "lane_changes": len(self.lane_change_events()),
            "ego": {
                "distance": ego_last["y"] - ego_first["y"],
                "final_lane": ego_last["lane"],
                "final_speed": ego_last["speed"],
            },
        }


class _Vehicle:
    __slots__ = ("vid", "state", "driver", "planned", "active")

    def __init__(self, vid: str, state: AgentState, driver, planned: bool):
        self.vid = vid
        self.state = state
        self.driver = driver
        self.planned = planned
        self.active = True


def _state_record(st: AgentState, road: RoadGeometry) -> dict:
    return {"id": st.id, "x": st.x, "y": st.y, "speed": st.speed,
            "heading": st.heading, "lane": lane_of(st.x, road)}


def _check_finite(st: AgentState) -> None:
    if not all(math.isfinite(v) for v in (st.x, st.y, st.speed, st.heading)):
        raise SimError(f"non-finite state for vehicle {st.id}: {st}")


def run_world(road: RoadGeometry, ego: AgentState, ego_driver: PlannerDriver,
              agents: list[tuple[AgentState, object]], duration: float,
              cfg: PlannerConfig, seed: int = 0) -> SimTrace:
    """Advance the world at ``cfg.sim_dt`` for ``duration`` seconds.

    ``agents`` pairs each initial state with its driver; drivers exposing
    ``state_at`` follow a schedule, drivers exposing ``replan`` integrate a
    bicycle model under their own plans.
    """
    dt = cfg.sim_dt
    n_ticks = int(round(duration / dt))
    replan_every = (None if cfg.replan_period is None
                    else max(int(round(cfg.replan_period / dt)), 1))
    params = RiskParams(alpha=cfg.alpha, beta=cfg.beta,
                        velocity_skew_sign=cfg.velocity_skew_sign)

    vehicles = [_Vehicle(ego.id, ego, ego_driver, planned=True)]
    for st, driver in agents:
        vehicles.append(_Vehicle(st.id, st, driver, planned=hasattr(driver, "replan")))

    histories: dict[str, list[tuple[float, AgentState]]] = {v.vid: [] for v in vehicles}
    window = cfg.history_window
    confirmed: dict[str, int] = {}
    pending: dict[str, tuple[int, float]] = {}
    overlapping: set[tuple[str, str]] = set()

    trace = SimTrace(road=road, dt=dt, seed=seed)

    for k in range(n_ticks + 1):
        t = k * dt
        active = [v for v in vehicles if v.active]
        for v in active:
            _check_finite(v.state)
            hist = histories[v.vid]
            hist.append((t, v.state))
            while hist and hist[0][0] < t - window - 1e-9:
                hist.pop(0)

        if k < n_ticks and (replan_every is None and k == 0 or
                            replan_every is not None and k % replan_every == 0):
            hviews = {vid: VehicleHistory(vehicle_id=vid, states=tuple(h))
                      for vid, h in histories.items() if h}
            for v in active:
                if not v.planned:
                    continue
                others = [w.state for w in active if w.vid != v.vid]
                v.driver.replan(v.state, others, hviews, road)
                if v.driver.last_incomplete:
                    trace.events.append({"type": "plan_incomplete", "t": t,
                                         "vehicle": v.vid, "plan_id": v.driver.plan_id})

        # lane-change events (counted once the new lane persists)
        for v in active:
            lane = lane_of(v.state.x, road)
            if v.vid not in confirmed:
                confirmed[v.vid] = lane
            if lane == confirmed[v.vid]:
                pending.pop(v.vid, None)
            else:
                if v.vid not in pending or pending[v.vid][0] != lane:
                    pending[v.vid] = (lane, t)
                elif t - pending[v.vid][1] >= cfg.lane_event_persistence - 1e-9:
                    trace.events.append({"type": "lane_change", "vehicle": v.vid,
                                         "from": confirmed[v.vid], "to": lane,
                                         "t": pending[v.vid][1]})
                    confirmed[v.vid] = lane
                    pending.pop(v.vid, None)

        # collisions (symmetric by construction: one event per pair onset)
        for i in range(len(active)):
            for j in range(i + 1, len(active)):
                a, b = active[i], active[j]
                pair = (a.vid, b.vid) if a.vid <= b.vid else (b.vid, a.vid)
                if rectangles_overlap(a.state, b.state):
                    if pair not in overlapping:
                        overlapping.add(pair)
                        trace.events.append({"type": "collision", "a": pair[0],
                                             "b": pair[1], "t": t})
                else:
                    overlapping.discard(pair)

        ego_v = vehicles[0]
        others_now = [v.state for v in active if v.vid != ego_v.vid]
        comps = components_from_states(others_now)
        if len(comps):
            risk_here = float(eval_components(np.asarray([ego_v.state.x]),
                                              np.asarray([ego_v.state.y]),
                                              comps, params)[0])
        else:
            risk_here = 0.0
        trace.records.append({
            "t": t,
            "ego": _state_record(ego_v.state, road),
            "agents": [_state_record(v.state, road) for v in active[1:]],
            "plan_id": ego_driver.plan_id,
            "risk_at_ego": risk_here,
            "off_road": not (0.0 <= ego_v.state.x <= road.width
                             and 0.0 <= ego_v.state.y <= road.length),
        })

        if k == n_ticks:
            break
        t_next = t + dt
        for v in vehicles:
            if not v.active:
                continue
            if v.planned:
                control = v.driver.control(v.state)
                v.state = step_bicycle(v.state, control, dt, cfg.wheelbase)
            else:
                nxt = v.driver.state_at(t_next)
                if nxt is None:
                    v.active = False
                else:
                    v.state = nxt
    return trace


def _driver_for(spec_state: AgentState, behavior: dict, cfg: PlannerConfig,
                table: Optional[LanePreferenceTable], seed: int):
    kind = behavior.get("type", "constant")
    if kind == "constant":
        return ConstantDriver(spec_state)
    if kind == "replay":
        pts = behavior["points"]
        return ReplayDriver(spec_state.id,
                            [p["t"] for p in pts], [p["x"] for p in pts],
                            [p["y"] for p in pts],
                            spec_state.length, spec_state.width)
    if kind == "planner":
        ego_cfg = EgoConfig.from_style(behavior.get("style", "normal"),
                                       desired_speed=float(behavior.get(
                                           "desired_speed_mps", spec_state.speed)))
        return PlannerDriver(ego_cfg, cfg, table, seed=seed)
    raise SimError(f"unknown behavior type '{kind}' for agent {spec_state.id}")


def run_scenario(scenario: Scenario, cfg: Optional[PlannerConfig] = None,
                 table: Optional[LanePreferenceTable] = None) -> SimTrace:
    """Simulate a scenario end to end; deterministic for fixed inputs."""
    cfg = cfg if cfg is not None else scenario.planner
    if table is None:
        table = (table_from_doc(scenario.lane_preference)
                 if scenario.lane_preference is not None else default_table())
    ego_driver = PlannerDriver(scenario.ego_config, cfg, table, seed=scenario.seed)
    agents = [(spec.state, _driver_for(spec.state, spec.behavior, cfg, table, scenario.seed))
              for spec in scenario.agents]
    return run_world(scenario.road, scenario.ego, ego_driver, agents,
                     scenario.duration, cfg, seed=scenario.seed)
