"""Risk-kernel backends.

The weighted rectangular higher-order Gaussian sum is the hot loop of the
whole library: it runs for every grid point, planner node and trajectory
component, every time step. A compiled extension (``riskpath._riskcore``,
built from Cython) is used when available; a vectorized numpy fallback with
identical semantics is selected otherwise. Set ``RISKPATH_BACKEND=numpy``
to force the fallback (the benchmark uses this to compare both).
"""

from __future__ import annotations

import os
import warnings

import numpy as np

# exp(x) overflows float64 near x=709.8; clipping the sigmoid argument keeps
# the far-field result an exact 0.0 without tripping overflow warnings.
_EXP_CLIP = 700.0


def _eval_weighted_numpy(qx, qy, px, py, vx, vy, sx, sy, w, alpha, beta, skew):
    """Sum of weighted rectangular Gaussians with a velocity-skew sigmoid.

    out[i] = sum_c w[c] * exp(-(dx^2/sx^2)^beta - (dy^2/sy^2)^beta)
                        / (1 + exp(skew*alpha*(vx*dx + vy*dy)))
    with dx = qx[i]-px[c], dy = qy[i]-py[c].
    """
    dx = qx[:, None] - px[None, :]
    dy = qy[:, None] - py[None, :]
    tx = (dx * dx) / (sx * sx)[None, :]
    ty = (dy * dy) / (sy * sy)[None, :]
    gauss = np.exp(-(tx**beta) - (ty**beta))
    z = np.clip(skew * alpha * (vx[None, :] * dx + vy[None, :] * dy), None, _EXP_CLIP)
    vals = gauss / (1.0 + np.exp(z))
    return vals @ w


_BACKENDS: dict[str, object] = {"numpy": _eval_weighted_numpy}

try:  # compiled core is optional; the numpy path is always present
    from . import _riskcore as _compiled

    def _eval_weighted_compiled(qx, qy, px, py, vx, vy, sx, sy, w, alpha, beta, skew):
        out = np.empty(qx.shape[0], dtype=np.float64)
        _compiled.eval_weighted(qx, qy, px, py, vx, vy, sx, sy, w,
                                float(alpha), float(beta), float(skew), out)
        return out

    _BACKENDS["compiled"] = _eval_weighted_compiled
except ImportError:
    _compiled = None

_active = os.environ.get("RISKPATH_BACKEND", "")
if _active not in _BACKENDS:
    if _active:
        warnings.warn(f"RISKPATH_BACKEND={_active!r} unavailable, using default")
    _active = "compiled" if "compiled" in _BACKENDS else "numpy"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = name


def eval_weighted(qx, qy, px, py, vx, vy, sx, sy, w, alpha, beta, skew,
                  backend: str | None = None) -> np.ndarray:
    """Evaluate the weighted risk-kernel sum at each query point.

    All array arguments must be contiguous float64; returns one value per
    (qx, qy) pair. Components are accumulated in index order, so results are
    deterministic for a fixed backend.
    """
    fn = _BACKENDS[backend if backend is not None else _active]
    qx = np.ascontiguousarray(qx, dtype=np.float64)
    qy = np.ascontiguousarray(qy, dtype=np.float64)
    if qx.shape != qy.shape or qx.ndim != 1:
        raise ValueError("query coordinate arrays must be 1-D and equal length")
    arrs = [np.ascontiguousarray(a, dtype=np.float64) for a in (px, py, vx, vy, sx, sy, w)]
    n = arrs[0].shape[0]
    if any(a.shape != (n,) for a in arrs):
        raise ValueError("component arrays must share one length")
    if n == 0:
        return np.zeros(qx.shape[0], dtype=np.float64)
    return fn(qx, qy, *arrs, float(alpha), float(beta), float(skew))
