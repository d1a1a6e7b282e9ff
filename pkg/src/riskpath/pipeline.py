"""Trajectory-data pipeline: ingestion, smoothing, lane-change mining,
driver-style classification, lane-preference learning, and the replay
validation harness.

Input files are NGSIM-style CSV with a documented header
(vehicle_id, frame, x, y[, speed][, lane][, length][, width]); frames are
10 Hz, positions in meters or feet. All downstream steps operate on the
normalized meters/seconds form.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import AgentState, EgoConfig, PlannerConfig, RoadGeometry, lane_of, style_preset
from .lanepref import LanePreferenceTable
from .riskfield import RiskParams, components_from_states, eval_components
from .simulate import PlannerDriver, ReplayDriver, run_world

METERS_PER_FOOT = 0.3048
FRAME_RATE = 10.0


class PipelineError(ValueError):
    pass


@dataclass
class VehicleTrack:
    vehicle_id: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    speed: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    length: float = 4.5
    width: float = 1.8

    def __len__(self) -> int:
        return self.t.shape[0]

    def interp(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.interp(times, self.t, self.x), np.interp(times, self.t, self.y)


@dataclass
class TrajectoryDataset:
    tracks: dict[str, VehicleTrack]
    source: str = ""
    unit: str = "meters"

    def __len__(self) -> int:
        return len(self.tracks)

    def vehicles(self) -> list[str]:
        return sorted(self.tracks, key=lambda v: (len(v), v))


_REQUIRED_COLUMNS = ("vehicle_id", "frame", "x", "y")
_OPTIONAL_COLUMNS = ("speed", "lane", "length", "width")


def load_trajectories(path: str | Path, unit: str = "meters") -> TrajectoryDataset:
    """Parse a trajectory CSV, normalizing feet to meters and frames to seconds."""
    if unit not in ("meters", "feet"):
        raise PipelineError(f"unit must be 'meters' or 'feet', got '{unit}'")
    scale = METERS_PER_FOOT if unit == "feet" else 1.0
    path = Path(path)
    rows_by_vehicle: dict[str, list[tuple[int, float, float, float, float, float]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PipelineError(f"{path}: no records") from None
        header = [h.strip() for h in header]
        missing = [c for c in _REQUIRED_COLUMNS if c not in header]
        if missing:
            raise PipelineError(f"{path}: header missing required columns {missing}")
        col = {name: header.index(name) for name in header}
        n_rows = 0
        last_frame: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vid = row[col["vehicle_id"]].strip()
                frame = int(row[col["frame"]])
                x = float(row[col["x"]]) * scale
                y = float(row[col["y"]]) * scale
                speed = float(row[col["speed"]]) * scale if "speed" in col and row[col["speed"]].strip() else math.nan
                length = float(row[col["length"]]) * scale if "length" in col and row[col["length"]].strip() else math.nan
                width = float(row[col["width"]]) * scale if "width" in col and row[col["width"]].strip() else math.nan
            except (ValueError, IndexError) as exc:
                raise PipelineError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if vid in last_frame and frame <= last_frame[vid]:
                raise PipelineError(
                    f"{path}:{lineno}: non-monotone frame {frame} for vehicle {vid}")
            last_frame[vid] = frame
            rows_by_vehicle.setdefault(vid, []).append((frame, x, y, speed, length, width))
            n_rows += 1
    if n_rows == 0:
        raise PipelineError(f"{path}: no records")

    tracks = {}
    for vid, rows in rows_by_vehicle.items():
        frames = np.asarray([r[0] for r in rows], dtype=np.float64)
        x = np.asarray([r[1] for r in rows])
        y = np.asarray([r[2] for r in rows])
        speed = np.asarray([r[3] for r in rows])
        lengths = [r[4] for r in rows if not math.isnan(r[4])]
        widths = [r[5] for r in rows if not math.isnan(r[5])]
        t = frames / FRAME_RATE
        if np.all(np.isnan(speed)):
            vx = np.gradient(x, t) if len(t) > 1 else np.zeros_like(x)
            vy = np.gradient(y, t) if len(t) > 1 else np.zeros_like(y)
            speed = np.hypot(vx, vy)
        else:
            speed = np.nan_to_num(speed, nan=float(np.nanmean(speed)))
            vx = np.zeros_like(speed)
            vy = speed.copy()
        tracks[vid] = VehicleTrack(
            vehicle_id=vid, t=t, x=x, y=y, speed=speed, vx=vx, vy=vy,
            length=lengths[0] if lengths else 4.5,
            width=widths[0] if widths else 1.8,
        )
    return TrajectoryDataset(tracks=tracks, source=str(path), unit="meters")


def save_trajectories(dataset: TrajectoryDataset, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vehicle_id", "frame", "x", "y", "speed", "length", "width"])
        for vid in dataset.vehicles():
            tr = dataset.tracks[vid]
            for i in range(len(tr)):
                writer.writerow([vid, int(round(tr.t[i] * FRAME_RATE)),
                                 repr(float(tr.x[i])), repr(float(tr.y[i])),
                                 repr(float(tr.speed[i])), repr(tr.length), repr(tr.width)])


def _moving_average(values: np.ndarray, half: int) -> np.ndarray:
    """Symmetric moving average whose window shrinks near the ends.

    The symmetric shrink keeps affine signals fixed points of the filter,
    ends included.
    """
    n = values.shape[0]
    out = np.empty_like(values)
    for i in range(n):
        h = min(half, i, n - 1 - i)
        out[i] = values[i - h:i + h + 1].mean()
    return out


def smooth(dataset: TrajectoryDataset, window: float = 1.0) -> TrajectoryDataset:
    """Moving-average positions; velocities by central difference of the result."""
    tracks = {}
    for vid, tr in dataset.tracks.items():
        n = len(tr)
        if n < 3:
            warnings.warn(f"vehicle {vid}: record shorter than smoothing window, passthrough")
            tracks[vid] = tr
            continue
        dt = float(np.median(np.diff(tr.t)))
        samples = max(int(round(window / dt)), 3)
        if n < samples:
            warnings.warn(f"vehicle {vid}: record shorter than smoothing window, passthrough")
            tracks[vid] = tr
            continue
        half = samples // 2
        xs = _moving_average(tr.x, half)
        ys = _moving_average(tr.y, half)
        vx = np.gradient(xs, tr.t)
        vy = np.gradient(ys, tr.t)
        tracks[vid] = VehicleTrack(vehicle_id=vid, t=tr.t.copy(), x=xs, y=ys,
                                   speed=np.hypot(vx, vy), vx=vx, vy=vy,
                                   length=tr.length, width=tr.width)
    return TrajectoryDataset(tracks=tracks, source=dataset.source, unit=dataset.unit)


@dataclass(frozen=True)
class LaneChangeEvent:
    vehicle_id: str
    t_change: float          # first tick in the new lane
    from_lane: int
    to_lane: int
    window: tuple[float, float]   # [t_change - 2 s, t_change + 4 s]
    peak_lat_accel: float
    peak_lon_accel: float


_WINDOW_BEFORE = 2.0
_WINDOW_AFTER = 4.0


def extract_lane_changes(dataset: TrajectoryDataset, road: RoadGeometry,
                         min_dwell: float = 1.0) -> list[LaneChangeEvent]:
    """Mine lane transitions that persist at least ``min_dwell`` seconds.

    Transitions whose classification window would leave the record, or that
    skip a lane between ticks, are discarded.
    """
    events: list[LaneChangeEvent] = []
    for vid in dataset.vehicles():
        tr = dataset.tracks[vid]
        n = len(tr)
        if n < 3:
            continue
        dt = float(np.median(np.diff(tr.t)))
        dwell = max(int(round(min_dwell / dt)), 1)
        lanes = np.asarray([lane_of(float(x), road) for x in tr.x])
        ax = np.gradient(tr.vx, tr.t)
        ay = np.gradient(tr.vy, tr.t)
        confirmed = int(lanes[0])
        j = 1
        while j < n:
            lane = int(lanes[j])
            if lane != confirmed:
                run_end = j + dwell
                if run_end <= n and np.all(lanes[j:run_end] == lane):
                    t_change = float(tr.t[j])
                    t0, t1 = t_change - _WINDOW_BEFORE, t_change + _WINDOW_AFTER
                    if abs(lane - confirmed) == 1 and t0 >= tr.t[0] - 1e-9 and t1 <= tr.t[-1] + 1e-9:
                        sel = (tr.t >= t0 - 1e-9) & (tr.t <= t1 + 1e-9)
                        events.append(LaneChangeEvent(
                            vehicle_id=vid, t_change=t_change,
                            from_lane=confirmed, to_lane=lane, window=(t0, t1),
                            peak_lat_accel=float(np.max(np.abs(ax[sel]))),
                            peak_lon_accel=float(np.max(np.abs(ay[sel]))),
                        ))
                    confirmed = lane
                    j = run_end
                    continue
            j += 1
    return events


def _midrank_percentiles(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    out = np.empty(n)
    for i, v in enumerate(values):
        out[i] = (np.sum(values < v) + 0.5 * np.sum(values == v)) / n
    return out


def classify_driver_style(events: list[LaneChangeEvent]) -> list[str]:
    """Quartile labels from peak accelerations during the change window.

    Each event's score is the larger of its lateral and longitudinal peak
    acceleration percentile ranks; scores below the first quartile are
    conservative, above the third aggressive, the rest normal.
    """
    if len(events) < 4:
        if events:
            warnings.warn("fewer than 4 lane changes: classifying all as normal")
        return ["normal"] * len(events)
    lat = np.asarray([e.peak_lat_accel for e in events])
    lon = np.asarray([e.peak_lon_accel for e in events])
    scores = np.maximum(_midrank_percentiles(lat), _midrank_percentiles(lon))
    q1, q3 = np.quantile(scores, [0.25, 0.75])
    return ["conservative" if s < q1 else "aggressive" if s > q3 else "normal"
            for s in scores]


# ---------------------------------------------------------------------------
# lane-preference learning


@dataclass
class LearnResult:
    table: LanePreferenceTable
    #: raw (pre-normalization) mean risk per (lane, knot index 0/1/2)
    raw_means: dict[tuple[int, int], float]
    counts: dict[tuple[int, int], int]
    normalizer: float


_Z_BIN_EDGES = (-0.5, 0.5)   # inside the +-1.5 retention range


def _z_bin(z: float) -> int:
    if z < _Z_BIN_EDGES[0]:
        return 0
    if z < _Z_BIN_EDGES[1]:
        return 1
    return 2


def learn_lane_preference(dataset: TrajectoryDataset, road: RoadGeometry,
                          params: RiskParams) -> LearnResult:
    """Aggregate instantaneous ambient risk into per-lane relative-speed bins.

    For every tick of every vehicle, the risk the vehicle experiences is the
    kernel sum over all other vehicles present at that frame (current states,
    no prediction). The relative speed z uses the mean/std of all vehicles in
    the subject's lane at that frame (z = 0 when the spread is zero); ticks
    with |z| > 1.5 are dropped, the rest average into bins centered at
    z = -1, 0, +1. Bin means are normalized by the largest so the table lands
    in [0, 1]; empty bins fall back to their lane's mean with a warning.
    """
    # index states by frame
    frames: dict[int, list[tuple[str, int, float, AgentState]]] = {}
    for vid, tr in dataset.tracks.items():
        for i in range(len(tr)):
            f = int(round(tr.t[i] * FRAME_RATE))
            st = AgentState(id=vid, x=float(tr.x[i]), y=float(tr.y[i]),
                            speed=float(max(tr.speed[i], 0.0)),
                            heading=math.atan2(tr.vx[i], tr.vy[i]) if tr.speed[i] > 1e-9 else 0.0,
                            length=tr.length, width=tr.width)
            frames.setdefault(f, []).append((vid, lane_of(st.x, road), float(tr.speed[i]), st))

    sums: dict[tuple[int, int], float] = {}
    counts: dict[tuple[int, int], int] = {}
    for f in sorted(frames):
        entries = frames[f]
        states = [st for _, _, _, st in entries]
        comps = components_from_states(states)
        qx = np.asarray([st.x for st in states])
        qy = np.asarray([st.y for st in states])
        totals = eval_components(qx, qy, comps, params) if len(states) else np.zeros(0)
        by_lane: dict[int, list[float]] = {}
        for _, lane, speed, _ in entries:
            by_lane.setdefault(lane, []).append(speed)
        lane_stats = {}
        for lane, speeds in by_lane.items():
            mean = sum(speeds) / len(speeds)
            var = sum((s - mean) ** 2 for s in speeds) / len(speeds)
            lane_stats[lane] = (mean, math.sqrt(var))
        for idx, (vid, lane, speed, st) in enumerate(entries):
            # subject's own kernel at its own position is exactly 1/2
            risk = float(totals[idx]) - 0.5
            mean, sigma = lane_stats[lane]
            z = 0.0 if sigma <= 0 else (speed - mean) / sigma
            if abs(z) > 1.5:
                continue
            key = (lane, _z_bin(z))
            sums[key] = sums.get(key, 0.0) + risk
            counts[key] = counts.get(key, 0) + 1

    raw_means = {k: sums[k] / counts[k] for k in sums}
    if not raw_means:
        raise PipelineError("no usable ticks: cannot learn a lane preference table")
    normalizer = max(raw_means.values())
    lanes_seen = sorted({lane for lane, _ in raw_means})
    rows = {}
    missing = []
    for lane in lanes_seen:
        knots = []
        present = [raw_means[(lane, b)] for b in (0, 1, 2) if (lane, b) in raw_means]
        lane_mean = sum(present) / len(present)
        for b in (0, 1, 2):
            if (lane, b) in raw_means:
                val = raw_means[(lane, b)]
            else:
                warnings.warn(f"lane {lane}: empty z-bin {b}, falling back to lane mean")
                missing.append((lane, b))
                val = lane_mean
            knots.append(val / normalizer if normalizer > 0 else 0.0)
        rows[lane] = tuple(min(max(k, 0.0), 1.0) for k in knots)
    table = LanePreferenceTable(rows=rows, provenance="learned", missing=tuple(missing))
    return LearnResult(table=table, raw_means=raw_means, counts=counts,
                       normalizer=normalizer)


# ---------------------------------------------------------------------------
# validation harness


@dataclass
class StyleMetrics:
    events: int = 0
    correct: int = 0
    lat_sq: list = field(default_factory=list)
    lon_sq: list = field(default_factory=list)
    lat_final_sq: list = field(default_factory=list)
    lon_final_sq: list = field(default_factory=list)

    def metrics(self) -> dict:
        rms = lambda vals: math.sqrt(sum(vals) / len(vals)) if vals else 0.0
        return {
            "events": self.events,
            "accuracy": self.correct / self.events if self.events else 0.0,
            "rmse_lat_avg": rms(self.lat_sq),
            "rmse_lat_final": rms(self.lat_final_sq),
            "rmse_lon_avg": rms(self.lon_sq),
            "rmse_lon_final": rms(self.lon_final_sq),
        }


@dataclass
class ValidationReport:
    per_style: dict[str, dict]
    total: dict
    skipped: int
    details: list[dict]

    def to_doc(self) -> dict:
        return {"per_style": self.per_style, "total": self.total,
                "skipped": self.skipped, "events": self.details}


#: the simulated span: takeover 2 s before the recorded change, observe 4 s
_SIM_SPAN = 4.0


def validate(events: list[LaneChangeEvent], dataset: TrajectoryDataset,
             model_config: dict, road: RoadGeometry,
             cfg: Optional[PlannerConfig] = None,
             table: Optional[LanePreferenceTable] = None) -> ValidationReport:
    """Replay each lane change with the model driving the subject vehicle.

    The subject is replaced 2 s before its recorded change and simulated for
    4 s among the other vehicles' replayed traces; the event scores correct
    when the model ends in the recorded target lane. RMSEs compare the
    simulated ego against the recorded trajectory, laterally (x) and
    longitudinally (y), averaged over ticks and at the window end.
    ``model_config['model']`` selects 'planner' or 'identity' (replays the
    ground truth back, an exactness check of the harness itself).
    """
    cfg = cfg if cfg is not None else PlannerConfig()
    model = model_config.get("model", "planner")
    if model not in ("planner", "identity"):
        raise PipelineError(f"model_config.model: unknown model '{model}'")
    styles = classify_driver_style(events)
    buckets = {s: StyleMetrics() for s in ("conservative", "normal", "aggressive")}
    total = StyleMetrics()
    details = []
    skipped = 0

    for event, style in zip(events, styles):
        tr = dataset.tracks[event.vehicle_id]
        t0 = event.t_change - _WINDOW_BEFORE
        t1 = t0 + _SIM_SPAN
        if t0 < tr.t[0] - 1e-9 or t1 > tr.t[-1] + 1e-9:
            skipped += 1
            continue
        ticks = np.arange(0.0, _SIM_SPAN + cfg.sim_dt / 2, cfg.sim_dt)
        gt_x, gt_y = tr.interp(t0 + ticks)

        if model == "identity":
            sim_x, sim_y = gt_x.copy(), gt_y.copy()
        else:
            sim_x, sim_y = _simulate_event(event, dataset, style, road, cfg, table,
                                           model_config, t0, ticks)
            if sim_x is None:
                skipped += 1
                continue

        lat_sq = (sim_x - gt_x) ** 2
        lon_sq = (sim_y - gt_y) ** 2
        correct = lane_of(float(sim_x[-1]), road) == event.to_lane
        for bucket in (buckets[style], total):
            bucket.events += 1
            bucket.correct += int(correct)
            bucket.lat_sq.extend(lat_sq.tolist())
            bucket.lon_sq.extend(lon_sq.tolist())
            bucket.lat_final_sq.append(float(lat_sq[-1]))
            bucket.lon_final_sq.append(float(lon_sq[-1]))
        details.append({
            "vehicle_id": event.vehicle_id, "t_change": event.t_change,
            "from_lane": event.from_lane, "to_lane": event.to_lane,
            "style": style, "correct": bool(correct),
            "final_lane": lane_of(float(sim_x[-1]), road),
            "rmse_lat_final": float(abs(sim_x[-1] - gt_x[-1])),
            "rmse_lon_final": float(abs(sim_y[-1] - gt_y[-1])),
        })

    return ValidationReport(
        per_style={s: b.metrics() for s, b in buckets.items()},
        total=total.metrics(), skipped=skipped, details=details)


def _simulate_event(event: LaneChangeEvent, dataset: TrajectoryDataset, style: str,
                    road: RoadGeometry, cfg: PlannerConfig,
                    table: Optional[LanePreferenceTable], model_config: dict,
                    t0: float, ticks: np.ndarray):
    tr = dataset.tracks[event.vehicle_id]
    x0 = float(np.interp(t0, tr.t, tr.x))
    y0 = float(np.interp(t0, tr.t, tr.y))
    vx0 = float(np.interp(t0, tr.t, tr.vx))
    vy0 = float(np.interp(t0, tr.t, tr.vy))
    speed0 = math.hypot(vx0, vy0)
    ego = AgentState(id=event.vehicle_id, x=x0, y=y0, speed=speed0,
                     heading=math.atan2(vx0, vy0) if speed0 > 1e-9 else 0.0,
                     length=tr.length, width=tr.width)
    desired = float(model_config.get("desired_speed", speed0))
    preset = style_preset(style)
    ego_cfg = EgoConfig(risk_threshold=preset["risk_threshold"],
                        desired_speed=desired,
                        accel_limit=preset["accel_limit"],
                        lat_accel_limit=preset["lat_accel_limit"], style=style)
    agents = []
    t1 = t0 + float(ticks[-1])
    for vid, other in dataset.tracks.items():
        if vid == event.vehicle_id:
            continue
        if other.t[-1] <= t0 + 1e-9 or other.t[0] >= t1 - 1e-9:
            continue
        sel = (other.t >= t0 - 1e-9)
        times = other.t[sel] - t0
        if times.shape[0] < 2:
            continue
        driver = ReplayDriver(vid, times, other.x[sel], other.y[sel],
                              other.length, other.width)
        state = driver.state_at(max(float(times[0]), 0.0))
        if state is None:
            continue
        agents.append((state, driver))
    driver = PlannerDriver(ego_cfg, cfg, table)
    trace = run_world(road, ego, driver, agents, float(ticks[-1]), cfg)
    sim_x = np.asarray([r["ego"]["x"] for r in trace.records])
    sim_y = np.asarray([r["ego"]["y"] for r in trace.records])
    if sim_x.shape[0] != ticks.shape[0]:
        return None, None
    return sim_x, sim_y


# ---------------------------------------------------------------------------
# bridging simulator traces back into datasets


def dataset_from_trace(trace, sample_period: float = 0.1) -> TrajectoryDataset:
    """Convert a simulation trace into a trajectory dataset at 10 Hz."""
    stride = max(int(round(sample_period / trace.dt)), 1)
    series: dict[str, dict[str, list[float]]] = {}
    sizes: dict[str, tuple[float, float]] = {}

    def push(rec_t: float, entry: dict) -> None:
        s = series.setdefault(entry["id"], {"t": [], "x": [], "y": [], "speed": []})
        s["t"].append(rec_t)
        s["x"].append(entry["x"])
        s["y"].append(entry["y"])
        s["speed"].append(entry["speed"])

    for k, rec in enumerate(trace.records):
        if k % stride:
            continue
        push(rec["t"], rec["ego"])
        for entry in rec["agents"]:
            push(rec["t"], entry)
    tracks = {}
    for vid, s in series.items():
        t = np.asarray(s["t"])
        x = np.asarray(s["x"])
        y = np.asarray(s["y"])
        vx = np.gradient(x, t) if len(t) > 1 else np.zeros_like(x)
        vy = np.gradient(y, t) if len(t) > 1 else np.zeros_like(y)
        tracks[vid] = VehicleTrack(vehicle_id=vid, t=t, x=x, y=y,
                                   speed=np.asarray(s["speed"]), vx=vx, vy=vy)
    return TrajectoryDataset(tracks=tracks, source="simulation", unit="meters")


def report_to_json(report: ValidationReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_doc(), indent=2, sort_keys=True) + "\n")
