"""Static SVG heatmap of a sampled risk field (one rectangle per grid cell)."""

from __future__ import annotations

from .riskfield import RiskField


def _cell_color(v: float, vmax: float) -> str:
    # low risk blue -> high risk yellow
    u = 0.0 if vmax <= 0 else min(max(v / vmax, 0.0), 1.0)
    r = int(255 * u)
    g = int(60 + 195 * u)
    b = int(255 * (1.0 - u))
    return f"rgb({r},{g},{b})"


def field_to_svg(field: RiskField, scale: float = 4.0) -> str:
    """Render the field as an SVG document; x maps across, y maps up the page."""
    g = field.grid
    width = g.nx * g.dx * scale
    height = g.ny * g.dy * scale
    vmax = float(field.values.max()) if field.values.size else 0.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" '
        f'height="{height:.1f}" viewBox="0 0 {width:.1f} {height:.1f}">',
        f"<!-- risk field at step {field.step} (t={field.t:.2f}s), max={vmax:.4f} -->",
    ]
    for ix in range(g.nx):
        for iy in range(g.ny):
            px = ix * g.dx * scale
            py = height - (iy + 1) * g.dy * scale
            color = _cell_color(float(field.values[ix, iy]), vmax)
            parts.append(
                f'<rect x="{px:.2f}" y="{py:.2f}" width="{g.dx * scale:.2f}" '
                f'height="{g.dy * scale:.2f}" fill="{color}"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
