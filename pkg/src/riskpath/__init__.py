"""Highway driving simulator and risk-aware motion planner.

Surrounding vehicles get multimodal trajectory predictions; those feed a
forward-looking probabilistic risk field sampled on a lane/longitudinal
planning lattice. Dijkstra search under a maximum-risk level set, plus a
learned lane-preference cost, yields paths whose aggressiveness is tunable
from conservative to aggressive.
"""

__version__ = "0.1.0"

from .core import (
    AgentState,
    ControlInput,
    EgoConfig,
    PlannerConfig,
    RoadGeometry,
    Scenario,
    lane_center,
    lane_of,
    style_preset,
)
from .lanepref import LanePreferenceTable, LaneRiskQuery, delta_lane_risk, lane_risk_lookup
from .planner import PlannedPath, PlanningGrid, build_grid, path_to_reference, plan
from .prediction import (
    ManeuverClass,
    PredictedTrajectory,
    PredictedTrajectorySet,
    VehicleHistory,
    predict,
    predict_all,
)
from .riskfield import (
    LevelSet,
    RiskField,
    RiskParams,
    level_set,
    multimodal_risk,
    sample_field,
    single_agent_risk,
)
from .simulate import SimTrace, run_scenario, step_bicycle, track_reference

__all__ = [
    "AgentState",
    "ControlInput",
    "EgoConfig",
    "LanePreferenceTable",
    "LaneRiskQuery",
    "LevelSet",
    "ManeuverClass",
    "PlannedPath",
    "PlannerConfig",
    "PlanningGrid",
    "PredictedTrajectory",
    "PredictedTrajectorySet",
    "RiskField",
    "RiskParams",
    "RoadGeometry",
    "Scenario",
    "SimTrace",
    "VehicleHistory",
    "build_grid",
    "delta_lane_risk",
    "lane_center",
    "lane_of",
    "lane_risk_lookup",
    "level_set",
    "multimodal_risk",
    "path_to_reference",
    "plan",
    "predict",
    "predict_all",
    "run_scenario",
    "sample_field",
    "single_agent_risk",
    "step_bicycle",
    "style_preset",
    "track_reference",
]
