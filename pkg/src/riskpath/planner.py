"""Risk-aware lattice planner.

Nodes sit on lane centers at fixed longitudinal spacing ahead of the ego
vehicle; each node is stamped with the prediction time step at which the ego
would reach it and the multimodal risk there at that step. Keep/left/right
edges carry the destination node's risk plus, when enabled, the learned
lane-preference terms. Dijkstra over the nodes inside the risk level set
returns the lowest-cost complete path, or the longest reachable prefix when
the threshold disconnects the grid.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import AgentState, EgoConfig, PlannerConfig, RoadGeometry, lane_center, lane_of
from .lanepref import LanePreferenceTable, LaneRiskQuery, delta_lane_risk, lane_risk_lookup
from .riskfield import RiskParams, StepComponents, components_at_step, eval_components


class PlannerError(ValueError):
    pass


ACTIONS = ("keep", "left", "right")
ACTION_CODES = {"keep": 1, "left": 2, "right": 3}
_ACTION_DELTA = {"keep": 0, "left": +1, "right": -1}


@dataclass
class PlanningNode:
    m: int              # column (0 = ego)
    lane: int
    x: float
    y: float
    step: int           # risk-field time step index i
    risk: float
    admissible: bool


@dataclass(frozen=True)
class PlanningEdge:
    m: int
    lane: int
    action: str
    to_lane: int
    weight: float


@dataclass
class PlanningGrid:
    road: RoadGeometry
    cfg: PlannerConfig
    threshold: float
    start_lane: int
    n_columns: int
    nodes: dict[tuple[int, int], PlanningNode]
    edges: dict[tuple[int, int, str], PlanningEdge]
    projected_speeds: tuple[float, ...]
    u_map: float

    def node(self, m: int, lane: int) -> PlanningNode:
        return self.nodes[(m, lane)]

    def edge_weight(self, m: int, lane: int, action: str) -> float:
        return self.edges[(m, lane, action)].weight


@dataclass
class PlannedPath:
    nodes: tuple[PlanningNode, ...]
    actions: tuple[str, ...]
    total_cost: float
    complete: bool

    @property
    def lanes(self) -> tuple[int, ...]:
        return tuple(n.lane for n in self.nodes)


def compute_lane_stats(states, road: RoadGeometry, cfg: PlannerConfig,
                       default_speed: float) -> dict[int, tuple[float, float]]:
    """Per-lane (mean, std) of current traffic speed.

    Lanes holding fewer than two vehicles, or with zero spread, fall back to
    the configured nominal speed/sigma so lookups stay well defined.
    """
    by_lane: dict[int, list[float]] = {}
    for st in states:
        by_lane.setdefault(lane_of(st.x, road), []).append(st.speed)
    fallback_speed = cfg.fallback_lane_speed if cfg.fallback_lane_speed is not None else default_speed
    stats = {}
    for lane in range(1, road.num_lanes + 1):
        speeds = by_lane.get(lane, [])
        if len(speeds) >= 2:
            mean = sum(speeds) / len(speeds)
            var = sum((s - mean) ** 2 for s in speeds) / len(speeds)
            sigma = math.sqrt(var)
            if sigma <= 1e-9:
                sigma = cfg.fallback_lane_sigma
            stats[lane] = (mean, sigma)
        else:
            stats[lane] = (fallback_speed, cfg.fallback_lane_sigma)
    return stats


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def time_step_for_column(m: int, u_map: float, cfg: PlannerConfig) -> int:
    """Prediction step at which the ego reaches column ``m``."""
    return min(max(_round_half_up(m * cfg.d_p / (u_map * cfg.t_s)), 1), cfg.n_time)


def _projected_speed(u0: float, desired: float, accel: float, t: float) -> float:
    if desired >= u0:
        return min(desired, u0 + accel * t)
    return max(desired, u0 - accel * t)


def build_grid(ego: AgentState, ego_cfg: EgoConfig, predictions, road: RoadGeometry,
               cfg: PlannerConfig, table: Optional[LanePreferenceTable] = None,
               lane_stats: Optional[dict[int, tuple[float, float]]] = None) -> PlanningGrid:
    """Construct the planning lattice with risk- and lane-preference-weighted edges.

    Edge weight = risk at the destination node (so each node's risk is paid
    exactly once along a path) + the lane-preference delta between the
    (from-lane, projected speed at m) and (to-lane, projected speed at m+1)
    queries + a per-column hold charge ``lane_hold_weight * H_l(to query)``.
    The delta term alone telescopes along a path (its sum depends only on the
    end state), which leaves the change timing cost-neutral; the hold charge
    bills every column for the ambient risk of the lane it occupies, making
    earlier beneficial changes strictly cheaper. Passing ``table=None`` or
    disabling ``use_lane_pref`` reduces weights to pure risk.
    """
    if road.num_lanes < 1:
        raise PlannerError("road has no lanes")
    n_columns = min(cfg.n_horiz, int(math.floor((road.length - ego.y) / cfg.d_p)))
    if n_columns < 1:
        raise PlannerError(
            f"no planning columns fit between ego (y={ego.y}) and road end ({road.length})")

    u_map = max(ego.speed if cfg.time_map == "current" else ego_cfg.desired_speed, cfg.u_min)
    params = RiskParams(alpha=cfg.alpha, beta=cfg.beta,
                        velocity_skew_sign=cfg.velocity_skew_sign)

    steps = [time_step_for_column(m, u_map, cfg) for m in range(n_columns + 1)]
    times = [m * cfg.d_p / u_map for m in range(n_columns + 1)]
    speeds = tuple(_projected_speed(ego.speed, ego_cfg.desired_speed,
                                    ego_cfg.accel_limit, t) for t in times)

    # risk at all nodes, batched per distinct time step
    start_lane = lane_of(ego.x, road)
    nodes: dict[tuple[int, int], PlanningNode] = {}
    queries: dict[int, list[tuple[int, int, float, float]]] = {}
    queries.setdefault(steps[0], []).append((0, start_lane, ego.x, ego.y))
    for m in range(1, n_columns + 1):
        y = ego.y + m * cfg.d_p
        for lane in range(1, road.num_lanes + 1):
            queries.setdefault(steps[m], []).append((m, lane, lane_center(lane, road), y))
    comp_cache: dict[int, StepComponents] = {}
    for step, entries in queries.items():
        comps = comp_cache.setdefault(step, components_at_step(predictions, step))
        if len(comps) == 0:
            risks = np.zeros(len(entries))
        else:
            qx = np.asarray([e[2] for e in entries])
            qy = np.asarray([e[3] for e in entries])
            risks = eval_components(qx, qy, comps, params)
        for (m, lane, x, y), r in zip(entries, risks):
            nodes[(m, lane)] = PlanningNode(m=m, lane=lane, x=x, y=y, step=step,
                                            risk=float(r),
                                            admissible=float(r) <= ego_cfg.risk_threshold)

    use_pref = cfg.use_lane_pref and table is not None
    if use_pref and lane_stats is None:
        raise PlannerError("lane statistics are required when lane preference is enabled")

    def pref_terms(from_lane: int, to_lane: int, m: int) -> float:
        if not use_pref:
            return 0.0
        from_q = LaneRiskQuery(lane=from_lane, u_avg=lane_stats[from_lane][0],
                               u_sigma=lane_stats[from_lane][1], u=speeds[m],
                               num_road_lanes=road.num_lanes)
        to_q = LaneRiskQuery(lane=to_lane, u_avg=lane_stats[to_lane][0],
                             u_sigma=lane_stats[to_lane][1], u=speeds[m + 1],
                             num_road_lanes=road.num_lanes)
        return (delta_lane_risk(from_q, to_q, table)
                + cfg.lane_hold_weight * lane_risk_lookup(to_q, table))

    edges: dict[tuple[int, int, str], PlanningEdge] = {}
    for m in range(n_columns):
        lanes_here = [start_lane] if m == 0 else list(range(1, road.num_lanes + 1))
        for lane in lanes_here:
            for action in ACTIONS:
                to_lane = lane + _ACTION_DELTA[action]
                if not (1 <= to_lane <= road.num_lanes):
                    continue
                w = nodes[(m + 1, to_lane)].risk + pref_terms(lane, to_lane, m)
                edges[(m, lane, action)] = PlanningEdge(m=m, lane=lane, action=action,
                                                        to_lane=to_lane, weight=w)

    return PlanningGrid(road=road, cfg=cfg, threshold=ego_cfg.risk_threshold,
                        start_lane=start_lane, n_columns=n_columns, nodes=nodes,
                        edges=edges, projected_speeds=speeds, u_map=u_map)


def plan(grid: PlanningGrid, risk_threshold: Optional[float] = None,
         tie_break: Optional[tuple[str, ...]] = None) -> PlannedPath:
    """Lowest-cost admissible path across the grid.

    Ties are broken lexicographically over the per-column action priorities
    given by ``tie_break`` (uniform weights therefore yield the straight
    keep-lane path). When no admissible path spans all columns, the path
    reaching the farthest column wins, with the same cost-then-action order.
    Edge weights may be negative (the lane-preference delta is signed); since
    every path to a column has the same number of edges, a uniform shift
    restores non-negativity without changing any argmin.
    """
    hp = grid.threshold if risk_threshold is None else risk_threshold
    order = tie_break if tie_break is not None else grid.cfg.tie_break
    prio = {action: i for i, action in enumerate(order)}

    start = grid.nodes[(0, grid.start_lane)]
    if start.risk > hp:
        return PlannedPath(nodes=(start,), actions=(), total_cost=0.0, complete=False)

    shift = max(0.0, -min((e.weight for e in grid.edges.values()), default=0.0))

    dist: dict[tuple[int, int], tuple[float, tuple[int, ...]]] = {(0, grid.start_lane): (0.0, ())}
    parent: dict[tuple[int, int], tuple[int, int, str]] = {}
    heap = [(0.0, (), 0, grid.start_lane)]
    settled = set()
    while heap:
        cost, acts, m, lane = heapq.heappop(heap)
        if (m, lane) in settled:
            continue
        settled.add((m, lane))
        if m == grid.n_columns:
            continue
        for action in order:
            edge = grid.edges.get((m, lane, action))
            if edge is None:
                continue
            nxt = grid.nodes[(m + 1, edge.to_lane)]
            if nxt.risk > hp:
                continue
            key = (cost + edge.weight + shift, acts + (prio[action],))
            if (m + 1, edge.to_lane) not in dist or key < dist[(m + 1, edge.to_lane)]:
                dist[(m + 1, edge.to_lane)] = key
                parent[(m + 1, edge.to_lane)] = (m, lane, action)
                heapq.heappush(heap, (*key, m + 1, edge.to_lane))

    best_col = max(m for m, _ in dist)
    candidates = [(dist[(m, lane)], lane) for (m, lane) in dist if m == best_col]
    _, best_lane = min(candidates)

    chain: list[tuple[int, int]] = [(best_col, best_lane)]
    actions: list[str] = []
    while chain[-1] in parent:
        pm, pl, action = parent[chain[-1]]
        actions.append(action)
        chain.append((pm, pl))
    chain.reverse()
    actions.reverse()
    path_nodes = tuple(grid.nodes[key] for key in chain)
    true_cost = sum(grid.edges[(path_nodes[i].m, path_nodes[i].lane, actions[i])].weight
                    for i in range(len(actions)))
    return PlannedPath(nodes=path_nodes, actions=tuple(actions), total_cost=true_cost,
                       complete=best_col == grid.n_columns)


@dataclass
class ReferenceTrajectory:
    """Time-parameterized reference the tracking controller follows."""

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    speeds: np.ndarray
    complete: bool

    def __len__(self) -> int:
        return self.times.shape[0]


def path_to_reference(path: PlannedPath, current_speed: float, ego_cfg: EgoConfig,
                      cfg: PlannerConfig) -> ReferenceTrajectory:
    """Sample the planned path into (t, x, y, v) points spaced ``delta_t`` apart.

    Geometry is piecewise linear between nodes under the same time mapping
    the grid used. The speed channel carries the speed *cap* at each point:
    the desired speed on complete plans, additionally a constant-deceleration
    stopping envelope ending ``stop_margin`` before the final node when the
    plan is incomplete, so a blocked ego settles behind the obstruction
    instead of overrunning its own plan. Ramping toward the cap is the
    controller's job (it saturates its acceleration limit).
    """
    if not path.nodes:
        raise PlannerError("cannot build a reference from an empty path")
    u_map = max(current_speed if cfg.time_map == "current" else ego_cfg.desired_speed,
                cfg.u_min)
    node_t = np.asarray([n.m * cfg.d_p / u_map for n in path.nodes])
    node_x = np.asarray([n.x for n in path.nodes])
    node_y = np.asarray([n.y for n in path.nodes])
    t_end = float(node_t[-1])
    n_samples = max(int(math.floor(t_end / cfg.delta_t)), 0)
    times = cfg.delta_t * np.arange(n_samples + 1)
    if times[-1] < t_end - 1e-12:
        times = np.append(times, t_end)
    xs = np.interp(times, node_t, node_x)
    ys = np.interp(times, node_t, node_y)

    speeds = np.full_like(times, float(ego_cfg.desired_speed))
    if not path.complete:
        remaining = np.maximum(node_y[-1] - ys - cfg.stop_margin, 0.0)
        envelope = np.sqrt(2.0 * cfg.comfort_decel * remaining)
        speeds = np.minimum(speeds, envelope)
    return ReferenceTrajectory(times=times, xs=xs, ys=ys, speeds=speeds,
                               complete=path.complete)


# ---------------------------------------------------------------------------
# export


def plan_to_doc(grid: PlanningGrid, path: PlannedPath) -> dict:
    return {
        "nodes": [
            {"m": n.m, "l": n.lane, "x": n.x, "y": n.y, "i": n.step,
             "risk": n.risk, "admissible": bool(n.admissible)}
            for n in sorted(grid.nodes.values(), key=lambda n: (n.m, n.lane))
        ],
        "edges": [
            {"m": e.m, "l": e.lane, "c": ACTION_CODES[e.action], "w": e.weight}
            for e in sorted(grid.edges.values(),
                            key=lambda e: (e.m, e.lane, ACTION_CODES[e.action]))
        ],
        "path": [{"m": n.m, "l": n.lane} for n in path.nodes],
        "total_cost": path.total_cost,
        "complete": bool(path.complete),
    }
