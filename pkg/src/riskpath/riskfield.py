"""Forward-looking probabilistic risk cost and its level sets.

A vehicle's footprint is modeled as a rectangular higher-order Gaussian bump
whose spread grows with how fast the vehicle moves along each road axis, and
whose mass is skewed toward the direction of motion by a sigmoid. Summing
the bump over every predicted trajectory of every vehicle, weighted by
trajectory probability, gives the risk cost at a query point for one future
time step. Points at or below the planning threshold form the admissible
level set the planner may use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .prediction import PredictedTrajectorySet


class RiskError(ValueError):
    pass


@dataclass(frozen=True)
class RiskParams:
    alpha: float = 0.8
    beta: float = 1.5
    # -1 elongates risk ahead of a moving vehicle (default); +1 mirrors it
    # behind, reproducing the sign as sometimes printed in the literature.
    velocity_skew_sign: int = -1

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise RiskError(f"alpha must be > 0, got {self.alpha}")
        if self.beta < 1:
            raise RiskError(f"beta must be >= 1, got {self.beta}")
        if self.velocity_skew_sign not in (-1, 1):
            raise RiskError("velocity_skew_sign must be +1 or -1")


def footprint_sigmas(length: float, width: float, vx: float, vy: float) -> tuple[float, float]:
    """Per-axis Gaussian widths: half footprint plus the speed along that axis.

    Spreading each axis by its own velocity component keeps a lane-keeping
    vehicle's risk laterally confined to roughly its own lane while stretching
    it far downrange, which is what makes passing maneuvers distinguishable
    from cut-ins at highway speeds.
    """
    return width / 2.0 + abs(vx), length / 2.0 + abs(vy)


def single_agent_risk(q: tuple[float, float], p: tuple[float, float],
                      pdot: tuple[float, float], footprint: tuple[float, float],
                      params: RiskParams) -> float:
    """Risk one vehicle poses at point ``q`` (scalar reference implementation).

    ``footprint`` is (length, width); ``pdot`` is the velocity vector in the
    road frame. The batched kernel backends must agree with this function
    pointwise; tests enforce that.
    """
    vals = [*q, *p, *pdot, *footprint]
    if not all(math.isfinite(v) for v in vals):
        raise RiskError(f"non-finite risk input: q={q} p={p} pdot={pdot} footprint={footprint}")
    length, width = footprint
    if length <= 0 or width <= 0:
        raise RiskError(f"footprint must be positive, got {footprint}")
    sx, sy = footprint_sigmas(length, width, pdot[0], pdot[1])
    dx = q[0] - p[0]
    dy = q[1] - p[1]
    gauss = math.exp(-((dx * dx) / (sx * sx)) ** params.beta
                     - ((dy * dy) / (sy * sy)) ** params.beta)
    z = params.velocity_skew_sign * params.alpha * (pdot[0] * dx + pdot[1] * dy)
    return gauss / (1.0 + math.exp(min(z, 700.0)))


@dataclass
class StepComponents:
    """Flattened (vehicle, trajectory) components at one prediction step."""

    px: np.ndarray
    py: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    weight: np.ndarray   # trajectory probabilities P_jk

    def __len__(self) -> int:
        return self.px.shape[0]


def components_at_step(predictions: list[PredictedTrajectorySet], step: int) -> StepComponents:
    """Collect every predicted trajectory's point at time step ``step`` (1-based)."""
    px, py, vx, vy, sx, sy, w = [], [], [], [], [], [], []
    for pset in predictions:
        for traj in pset.trajectories:
            if not (1 <= step <= len(traj.points)):
                raise RiskError(
                    f"step {step} out of range for vehicle {pset.vehicle_id} "
                    f"({len(traj.points)} predicted points)")
            x, y, pvx, pvy = traj.points[step - 1]
            ssx, ssy = footprint_sigmas(pset.length, pset.width, pvx, pvy)
            px.append(x); py.append(y); vx.append(pvx); vy.append(pvy)
            sx.append(ssx); sy.append(ssy); w.append(traj.probability)
    arr = lambda v: np.asarray(v, dtype=np.float64)
    comps = StepComponents(arr(px), arr(py), arr(vx), arr(vy), arr(sx), arr(sy), arr(w))
    if len(comps) and not (np.all(np.isfinite(comps.px)) and np.all(np.isfinite(comps.py))
                           and np.all(np.isfinite(comps.weight))):
        raise RiskError("non-finite trajectory component")
    return comps


def components_from_states(states, params: RiskParams | None = None) -> StepComponents:
    """Unit-weight components from current vehicle states (no prediction)."""
    px, py, vx, vy, sx, sy = [], [], [], [], [], []
    for st in states:
        pvx, pvy = st.velocity
        ssx, ssy = footprint_sigmas(st.length, st.width, pvx, pvy)
        px.append(st.x); py.append(st.y); vx.append(pvx); vy.append(pvy)
        sx.append(ssx); sy.append(ssy)
    arr = lambda v: np.asarray(v, dtype=np.float64)
    return StepComponents(arr(px), arr(py), arr(vx), arr(vy), arr(sx), arr(sy),
                          np.ones(len(px), dtype=np.float64))


def eval_components(qx: np.ndarray, qy: np.ndarray, comps: StepComponents,
                    params: RiskParams) -> np.ndarray:
    return kernels.eval_weighted(qx, qy, comps.px, comps.py, comps.vx, comps.vy,
                                 comps.sx, comps.sy, comps.weight,
                                 params.alpha, params.beta, params.velocity_skew_sign)


def multimodal_risk(q: tuple[float, float], predictions: list[PredictedTrajectorySet],
                    step: int, params: RiskParams) -> float:
    """Probability-weighted risk at ``q`` from all predicted trajectories at ``step``."""
    if not all(math.isfinite(v) for v in q):
        raise RiskError(f"non-finite query point {q}")
    comps = components_at_step(predictions, step)
    if len(comps) == 0:
        return 0.0
    out = eval_components(np.asarray([q[0]]), np.asarray([q[1]]), comps, params)
    return float(out[0])


@dataclass(frozen=True)
class GridSpec:
    """Regular sampling grid (x0 + ix*dx, y0 + iy*dy)."""

    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if self.nx < 1 or self.ny < 1:
            raise RiskError(f"grid must be non-empty, got nx={self.nx} ny={self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise RiskError(f"grid spacing must be positive, got dx={self.dx} dy={self.dy}")

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.x0 + self.dx * np.arange(self.nx)
        ys = self.y0 + self.dy * np.arange(self.ny)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return gx.ravel(), gy.ravel()


@dataclass
class RiskField:
    """Risk values sampled on a grid for one future time step ``i`` (t_i = i*t_s)."""

    step: int
    t_s: float
    grid: GridSpec
    values: np.ndarray   # shape (nx, ny)

    @property
    def t(self) -> float:
        return self.step * self.t_s


@dataclass
class LevelSet:
    threshold: float
    mask: np.ndarray     # True where admissible (risk <= threshold)


def sample_field(predictions: list[PredictedTrajectorySet], step: int,
                 grid: GridSpec, params: RiskParams, t_s: float = 0.2) -> RiskField:
    """Sample the multimodal risk cost on ``grid`` at prediction step ``step``."""
    qx, qy = grid.points()
    comps = components_at_step(predictions, step)
    if len(comps) == 0:
        values = np.zeros(qx.shape[0], dtype=np.float64)
    else:
        values = eval_components(qx, qy, comps, params)
    return RiskField(step=step, t_s=t_s, grid=grid,
                     values=values.reshape(grid.nx, grid.ny))


def level_set(fieldv: RiskField, threshold: float) -> LevelSet:
    """Admissible mask: points whose risk does not exceed ``threshold`` (inclusive)."""
    if threshold < 0:
        raise RiskError(f"threshold must be >= 0, got {threshold}")
    return LevelSet(threshold=threshold, mask=fieldv.values <= threshold)


# ---------------------------------------------------------------------------
# export formats


def fields_to_csv(fields: list[RiskField]) -> str:
    """CSV export, one row per grid point per time step."""
    lines = ["i,t_s,x_m,y_m,risk"]
    for f in fields:
        xs = f.grid.x0 + f.grid.dx * np.arange(f.grid.nx)
        ys = f.grid.y0 + f.grid.dy * np.arange(f.grid.ny)
        for ix in range(f.grid.nx):
            for iy in range(f.grid.ny):
                lines.append(f"{f.step},{f.t_s!r},{xs[ix]!r},{ys[iy]!r},{f.values[ix, iy]!r}")
    return "\n".join(lines) + "\n"


def field_to_doc(f: RiskField) -> dict:
    return {
        "i": f.step,
        "t_s": f.t_s,
        "grid": {"x0": f.grid.x0, "y0": f.grid.y0, "dx": f.grid.dx,
                 "dy": f.grid.dy, "nx": f.grid.nx, "ny": f.grid.ny},
        "values": [[float(v) for v in row] for row in f.values],
    }
