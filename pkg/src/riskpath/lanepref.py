"""Learned lane/velocity ambient-risk function and its edge-cost delta.

The table stores, per lane, the mean risk experienced by drivers moving one
standard deviation slower than, at, and one standard deviation faster than
their lane's traffic. A quadratic through those three knots (clamped to
z in [-1.5, 1.5], the range the values were aggregated over) interpolates in
between. The difference between a target and current (lane, speed) lookup is
the lane-preference term added to planner edge weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


class LanePrefError(ValueError):
    pass


#: Default per-lane knots: (one sigma slower, at mean, one sigma faster),
#: lane 1 = slowest/rightmost. Learned from I-80/US-101 trajectory data.
DEFAULT_KNOTS: dict[int, tuple[float, float, float]] = {
    1: (0.4224, 0.4017, 0.4123),
    2: (0.5030, 0.4868, 0.4962),
    3: (0.5169, 0.4862, 0.5070),
    4: (0.4994, 0.4677, 0.4891),
    5: (0.4460, 0.4386, 0.4421),
}

Z_CLAMP = 1.5


@dataclass(frozen=True)
class LanePreferenceTable:
    """Per-lane risk knots at relative speeds z = -1, 0, +1 (lane-sigma units)."""

    rows: dict[int, tuple[float, float, float]]
    provenance: str = "paper defaults"
    #: (lane, knot-index) pairs that were filled in because the learning bin
    #: was empty; informational only.
    missing: tuple = ()

    def __post_init__(self) -> None:
        if not self.rows:
            raise LanePrefError("lane preference table has no rows")
        for lane, knots in self.rows.items():
            if len(knots) != 3:
                raise LanePrefError(f"lane {lane}: expected 3 knots, got {len(knots)}")
            for v in knots:
                if not (0.0 <= v <= 1.0):
                    raise LanePrefError(f"lane {lane}: knot {v} outside [0, 1]")

    def row_for_lane(self, lane: int, num_road_lanes: Optional[int] = None) -> tuple[float, float, float]:
        """Map a road lane onto a table row.

        Roads with a different lane count than the table scale by lane
        fraction, so e.g. the middle lane of a 3-lane road reads the middle
        table row. Lanes outside the table reuse the nearest row.
        """
        if lane in self.rows and num_road_lanes is None:
            return self.rows[lane]
        keys = sorted(self.rows)
        if num_road_lanes is not None and num_road_lanes != len(keys):
            frac = (lane - 0.5) / num_road_lanes
            idx = round(frac * len(keys) + 0.5)
            idx = min(max(idx, 1), len(keys))
            return self.rows[keys[idx - 1]]
        if lane in self.rows:
            return self.rows[lane]
        nearest = min(keys, key=lambda k: (abs(k - lane), k))
        return self.rows[nearest]


def default_table() -> LanePreferenceTable:
    return LanePreferenceTable(rows=dict(DEFAULT_KNOTS), provenance="paper defaults")


def uniform_table(knots: tuple[float, float, float] = (0.52, 0.45, 0.50),
                  num_lanes: int = 5) -> LanePreferenceTable:
    """Table with identical rows: isolates the speed-matching term from
    between-lane occupancy offsets (useful for synthetic scenarios)."""
    return LanePreferenceTable(rows={l: tuple(knots) for l in range(1, num_lanes + 1)},
                               provenance="uniform synthetic")


@dataclass(frozen=True)
class LaneRiskQuery:
    lane: int
    u_avg: float      # mean lane speed
    u_sigma: float    # lane speed standard deviation
    u: float          # subject vehicle speed
    num_road_lanes: Optional[int] = None


def _quadratic_through_knots(knots: tuple[float, float, float]) -> tuple[float, float, float]:
    vm, v0, vp = knots
    a = (vp + vm) / 2.0 - v0
    b = (vp - vm) / 2.0
    return a, b, v0


def lane_risk_lookup(query: LaneRiskQuery, table: LanePreferenceTable) -> float:
    """Ambient lane risk in [0, 1] for a vehicle at the queried relative speed."""
    if query.u_sigma <= 0:
        raise LanePrefError(f"u_sigma must be > 0, got {query.u_sigma}")
    z = (query.u - query.u_avg) / query.u_sigma
    z = min(max(z, -Z_CLAMP), Z_CLAMP)
    a, b, c = _quadratic_through_knots(table.row_for_lane(query.lane, query.num_road_lanes))
    val = (a * z + b) * z + c
    return min(max(val, 0.0), 1.0)


def delta_lane_risk(from_query: LaneRiskQuery, to_query: LaneRiskQuery,
                    table: LanePreferenceTable) -> float:
    """Signed ambient-risk change of moving from one (lane, speed) to another."""
    return lane_risk_lookup(to_query, table) - lane_risk_lookup(from_query, table)


# ---------------------------------------------------------------------------
# serialization

_KNOT_NAMES = ("minus_sigma", "mean", "plus_sigma")


def table_to_doc(table: LanePreferenceTable) -> dict:
    return {
        "lanes": [
            {"lane": lane, "risk_at": dict(zip(_KNOT_NAMES, table.rows[lane]))}
            for lane in sorted(table.rows)
        ],
        "provenance": table.provenance,
    }


def table_from_doc(doc: dict) -> LanePreferenceTable:
    if "preset" in doc:
        preset = doc["preset"]
        if preset == "table1":
            return default_table()
        if preset == "uniform":
            knots = tuple(doc.get("knots", (0.52, 0.45, 0.50)))
            return uniform_table(knots, num_lanes=int(doc.get("num_lanes", 5)))
        raise LanePrefError(f"lane_preference.preset: unknown preset '{preset}'")
    try:
        rows = {int(row["lane"]): tuple(row["risk_at"][k] for k in _KNOT_NAMES)
                for row in doc["lanes"]}
    except (KeyError, TypeError) as exc:
        raise LanePrefError(f"lane_preference: malformed table document ({exc})") from exc
    return LanePreferenceTable(rows=rows, provenance=doc.get("provenance", "unspecified"))


def load_table(path: str | Path) -> LanePreferenceTable:
    return table_from_doc(json.loads(Path(path).read_text()))


def save_table(table: LanePreferenceTable, path: str | Path) -> None:
    Path(path).write_text(json.dumps(table_to_doc(table), indent=2, sort_keys=True) + "\n")
