"""Command-line surface: simulate, plan, risk-field, learn-params, validate.

Exit codes: 0 success, 1 I/O error, 2 validation/config error. Every command
writes a run manifest next to its outputs so reruns are reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, kernels
from .core import (
    ConfigError,
    EgoConfig,
    PlannerConfig,
    ScenarioError,
    Scenario,
    load_scenario,
    style_preset,
    validate_style_table,
)
from .lanepref import LanePrefError, default_table, save_table, table_from_doc, table_to_doc
from .pipeline import (
    PipelineError,
    dataset_from_trace,
    extract_lane_changes,
    learn_lane_preference,
    load_trajectories,
    smooth,
    validate,
)
from .planner import PlannerError, build_grid, compute_lane_stats, plan, plan_to_doc
from .prediction import PredictionError, VehicleHistory, predict_all
from .render import field_to_svg
from .riskfield import GridSpec, RiskError, RiskParams, fields_to_csv, field_to_doc, sample_field
from .simulate import SimError, run_scenario

_USER_ERRORS = (ScenarioError, ConfigError, PlannerError, PredictionError,
                RiskError, LanePrefError, PipelineError, SimError)


def _dump_json(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                    inputs: dict, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "argv": [a for a in sys.argv[1:]] if sys.argv else [],
        "config": getattr(args, "config", None),
        "inputs": inputs,
        "outputs": outputs,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "backend": kernels.active_backend(),
    }
    _dump_json(manifest, out_dir / "manifest.json")


def _load_config_overrides(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    doc = json.loads(Path(args.config).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config: top-level JSON value must be an object")
    known = {"planner", "ego", "styles", "lane_preference"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"config: unknown section(s) {sorted(unknown)}")
    if "styles" in doc:
        validate_style_table(doc["styles"])
    return doc


def _apply_overrides(scenario: Scenario, overrides: dict, seed) -> Scenario:
    planner = scenario.planner
    if "planner" in overrides:
        try:
            planner = planner.with_overrides(**overrides["planner"])
        except TypeError as exc:
            bad = str(exc).split("'")[1] if "'" in str(exc) else str(exc)
            raise ConfigError(f"config planner.{bad}: unknown option") from exc
    ego_cfg = scenario.ego_config
    if "ego" in overrides:
        allowed = {"risk_threshold", "desired_speed", "accel_limit", "lat_accel_limit", "style"}
        bad = set(overrides["ego"]) - allowed
        if bad:
            raise ConfigError(f"config ego: unknown option(s) {sorted(bad)}")
        ego_cfg = replace(ego_cfg, **overrides["ego"])
    updates = {"planner": planner, "ego_config": ego_cfg}
    if "lane_preference" in overrides:
        updates["lane_preference"] = overrides["lane_preference"]
    if seed is not None:
        updates["seed"] = seed
    return replace(scenario, **updates)


def _prepare(args) -> Scenario:
    scenario = load_scenario(args.scenario)
    overrides = _load_config_overrides(args)
    return _apply_overrides(scenario, overrides, args.seed)


def cmd_simulate(args) -> int:
    scenario = _prepare(args)
    trace = run_scenario(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text(trace.to_jsonl())
    _dump_json(trace.summary(), out / "summary.json")
    _write_manifest(out, "simulate", args, {"scenario": str(args.scenario)},
                    ["trace.jsonl", "summary.json"])
    summary = trace.summary()
    print(f"simulated {scenario.duration:.1f}s: {summary['lane_changes']} lane change(s), "
          f"{summary['collisions']} collision(s), ego advanced {summary['ego']['distance']:.1f} m")
    return 0


def _plan_once(scenario: Scenario):
    cfg = scenario.planner
    agent_states = [spec.state for spec in scenario.agents]
    histories = {st.id: VehicleHistory.from_state(st) for st in agent_states}
    predictions = predict_all(agent_states, histories, scenario.road, cfg,
                              seed=scenario.seed, extra_neighbors=[scenario.ego])
    lane_stats = compute_lane_stats([scenario.ego] + agent_states, scenario.road, cfg,
                                    default_speed=scenario.ego_config.desired_speed)
    table = (table_from_doc(scenario.lane_preference)
             if scenario.lane_preference is not None else default_table())
    grid = build_grid(scenario.ego, scenario.ego_config, predictions, scenario.road,
                      cfg, table=table, lane_stats=lane_stats)
    path = plan(grid, scenario.ego_config.risk_threshold, cfg.tie_break)
    return grid, path, predictions


def cmd_plan(args) -> int:
    scenario = _prepare(args)
    grid, path, _ = _plan_once(scenario)
    doc = plan_to_doc(grid, path)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(doc, out / "plan.json")
        _write_manifest(out, "plan", args, {"scenario": str(args.scenario)}, ["plan.json"])
        print(f"plan written to {out / 'plan.json'} "
              f"(complete={doc['complete']}, cost={doc['total_cost']:.4f})")
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


def cmd_risk_field(args) -> int:
    scenario = _prepare(args)
    cfg = scenario.planner
    if not (1 <= args.step <= cfg.n_time):
        raise ConfigError(f"--step must be in [1, {cfg.n_time}], got {args.step}")
    _, _, predictions = _plan_once(scenario)
    road = scenario.road
    dx = args.dx if args.dx else road.lane_width / 4.0
    dy = args.dy if args.dy else 5.0
    y0 = scenario.ego.y
    y_span = min(cfg.n_horiz * cfg.d_p, road.length - y0)
    grid = GridSpec(x0=dx / 2.0, y0=y0, dx=dx, dy=dy,
                    nx=max(int(road.width / dx), 1), ny=max(int(y_span / dy), 1))
    params = RiskParams(alpha=cfg.alpha, beta=cfg.beta,
                        velocity_skew_sign=cfg.velocity_skew_sign)
    steps = range(1, cfg.n_time + 1) if args.all_steps else [args.step]
    fields = [sample_field(predictions, i, grid, params, t_s=cfg.t_s) for i in steps]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["risk_field.csv"]
    (out / "risk_field.csv").write_text(fields_to_csv(fields))
    if args.json:
        _dump_json([field_to_doc(f) for f in fields], out / "risk_field.json")
        outputs.append("risk_field.json")
    if args.svg:
        (out / "risk_field.svg").write_text(field_to_svg(fields[0]))
        outputs.append("risk_field.svg")
    _write_manifest(out, "risk-field", args, {"scenario": str(args.scenario)}, outputs)
    print(f"sampled {len(fields)} field(s) on {grid.nx}x{grid.ny} grid -> {out}")
    return 0


def cmd_learn_params(args) -> int:
    dataset = smooth(load_trajectories(args.dataset, unit=args.units))
    road = _road_from_args(args)
    result = learn_lane_preference(dataset, road, RiskParams())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_table(result.table, out / "lane_preference.json")
    _write_manifest(out, "learn-params", args, {"dataset": str(args.dataset)},
                    ["lane_preference.json"])
    print("learned lane preference (rows normalized to [0, 1]):")
    print(f"{'':>12}" + "".join(f"lane {l:<6}" for l in sorted(result.table.rows)))
    for name, idx in (("1s slower", 0), ("mean", 1), ("1s faster", 2)):
        row = "".join(f"{result.table.rows[l][idx]:<11.4f}" for l in sorted(result.table.rows))
        print(f"{name:>12} {row}")
    return 0


def cmd_validate(args) -> int:
    dataset = smooth(load_trajectories(args.dataset, unit=args.units))
    road = _road_from_args(args)
    events = extract_lane_changes(dataset, road)
    if not events:
        raise PipelineError("no lane-change events in dataset")
    report = validate(events, dataset, {"model": args.model}, road)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(report.to_doc(), out / "validation.json")
    _write_manifest(out, "validate", args, {"dataset": str(args.dataset)},
                    ["validation.json"])
    print(f"{'':>18}{'aggressive':>12}{'normal':>12}{'conservative':>14}{'total':>10}")
    rows = [("accuracy", "accuracy", "{:.2%}"), ("rmse_lat_avg", "RMSE lat avg", "{:.3f}"),
            ("rmse_lat_final", "RMSE lat final", "{:.3f}"),
            ("rmse_lon_avg", "RMSE lon avg", "{:.3f}"),
            ("rmse_lon_final", "RMSE lon final", "{:.3f}")]
    for key, label, fmt in rows:
        cells = [report.per_style["aggressive"].get(key, 0.0),
                 report.per_style["normal"].get(key, 0.0),
                 report.per_style["conservative"].get(key, 0.0),
                 report.total.get(key, 0.0)]
        print(f"{label:>18}" + "".join(f"{fmt.format(c):>12}" for c in cells[:2])
              + f"{fmt.format(cells[2]):>14}" + f"{fmt.format(cells[3]):>10}")
    print(f"events: {report.total['events']}  skipped: {report.skipped}")
    return 0


def _road_from_args(args):
    from .core import RoadGeometry

    return RoadGeometry(num_lanes=args.lanes, lane_width=args.lane_width,
                        length=args.road_length)


def _add_road_args(p) -> None:
    p.add_argument("--lanes", type=int, default=5, help="number of road lanes")
    p.add_argument("--lane-width", type=float, default=3.7, dest="lane_width")
    p.add_argument("--road-length", type=float, default=2000.0, dest="road_length")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskpath",
                                     description="risk-aware highway planner and simulator")
    parser.add_argument("--version", action="version", version=f"riskpath {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario closed-loop")
    p.add_argument("scenario")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("plan", help="one-shot plan at t=0")
    p.add_argument("scenario")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("risk-field", help="sample the risk field on a grid")
    p.add_argument("scenario")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--step", type=int, default=1, help="prediction step index i")
    p.add_argument("--all-steps", action="store_true", dest="all_steps")
    p.add_argument("--dx", type=float, default=None)
    p.add_argument("--dy", type=float, default=None)
    p.add_argument("--json", action="store_true")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(fn=cmd_risk_field)

    p = sub.add_parser("learn-params", help="learn the lane-preference table from data")
    p.add_argument("dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--units", choices=("meters", "feet"), default="meters")
    p.add_argument("--out", default="out")
    _add_road_args(p)
    p.set_defaults(fn=cmd_learn_params)

    p = sub.add_parser("validate", help="score the model against recorded lane changes")
    p.add_argument("dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--units", choices=("meters", "feet"), default="meters")
    p.add_argument("--model", choices=("planner", "identity"), default="planner")
    p.add_argument("--out", default="out")
    _add_road_args(p)
    p.set_defaults(fn=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
