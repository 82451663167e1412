import os
from pathlib import Path
from typing import NamedTuple, Optional, Tuple

import numpy as np

from refmod.environments import EpisodeTrace, load_episode_csv
from refmod.pure_pursuit import PlanPath, load_plan_path
from refmod.sim_core import ObstacleMap, load_obstacle_map

PAD = 1.0
NETWORK_WIDTH, NETWORK_HEIGHT, NETWORK_MARGIN = 800, 300, 40


class PlotInput(NamedTuple):
    trace: EpisodeTrace
    obstacle_map: Optional[ObstacleMap]
    plan: Optional[PlanPath]


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def _points(xy: np.ndarray) -> str:
    # world y grows north, SVG y grows down
    return " ".join(f"{_fmt(x)},{_fmt(-y)}" for x, y in xy)


def view_box(plot: PlotInput) -> Tuple[float, float, float, float]:
    """(min_x, min_y, width, height) in SVG coordinates, covering the map, plan and trajectory."""
    pts = [np.column_stack([plot.trace.rows["x"], plot.trace.rows["y"]])]
    if plot.obstacle_map is not None and (plot.obstacle_map.boundaries or plot.obstacle_map.obstacles):
        xmin, ymin, xmax, ymax = plot.obstacle_map.bounds
        pts.append(np.array([[xmin, ymin], [xmax, ymax]]))
    if plot.plan is not None:
        pts.append(plot.plan.waypoints)
    allpts = np.vstack([p for p in pts if len(p)]) if any(len(p) for p in pts) else np.zeros((1, 2))
    xmin, ymin = allpts.min(axis=0) - PAD
    xmax, ymax = allpts.max(axis=0) + PAD
    return float(xmin), float(-ymax), float(xmax - xmin), float(ymax - ymin)


def trajectory_svg(plot: PlotInput) -> str:
    """
    Trajectory over the map: borders in grey, obstacles as rectangles, the
    reference path green dashed and the driven trajectory red.

    Args:
        plot: episode trace with its map and plan (either may be None)

    Returns:
        SVG document text; identical input gives identical bytes
    """
    vx, vy, vw, vh = view_box(plot)
    stroke = _fmt(max(vw, vh) / 400.0)
    body = []
    if plot.obstacle_map is not None:
        for ring in plot.obstacle_map.boundaries:
            body.append(f'<polygon class="border" points="{_points(ring)}" fill="none" stroke="#555555" stroke-width="{stroke}"/>')
        for obs in plot.obstacle_map.obstacles:
            body.append(
                f'<rect class="obstacle" x="{_fmt(obs.cx - obs.width / 2)}" y="{_fmt(-(obs.cy + obs.height / 2))}" '
                f'width="{_fmt(obs.width)}" height="{_fmt(obs.height)}" fill="#333333"/>'
            )
    if plot.plan is not None:
        wp = plot.plan.waypoints
        if plot.plan.closed:
            wp = np.vstack([wp, wp[:1]])
        body.append(f'<polyline class="reference" points="{_points(wp)}" fill="none" stroke="#2ca02c" '
                    f'stroke-width="{stroke}" stroke-dasharray="{_fmt(4 * float(stroke))}"/>')
    xy = np.column_stack([plot.trace.rows["x"], plot.trace.rows["y"]])
    if len(xy):
        body.append(f'<polyline class="trajectory" points="{_points(xy)}" fill="none" stroke="#d62728" stroke-width="{stroke}"/>')

    svg_template = """<svg xmlns="http://www.w3.org/2000/svg" viewBox="{vx} {vy} {vw} {vh}">
<rect x="{vx}" y="{vy}" width="{vw}" height="{vh}" fill="#ffffff"/>
{body}
</svg>
"""
    return svg_template.format(vx=_fmt(vx), vy=_fmt(vy), vw=_fmt(vw), vh=_fmt(vh), body="\n".join(body))


def network_svg(trace: EpisodeTrace) -> str:
    """Network steering modification delta_nn against time."""
    t = trace.rows["t"]
    d = trace.rows["delta_nn"]
    w, h, m = NETWORK_WIDTH, NETWORK_HEIGHT, NETWORK_MARGIN
    t_max = float(t.max()) if len(t) and t.max() > 0 else 1.0
    d_max = max(float(np.abs(d).max()) if len(d) else 0.0, 1e-3)
    sx = (w - 2 * m) / t_max
    sy = (h / 2 - m) / d_max
    pts = " ".join(f"{_fmt(m + ti * sx)},{_fmt(h / 2 - di * sy)}" for ti, di in zip(t, d))
    line = f'<polyline class="delta_nn" points="{pts}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>' if len(t) else ""

    svg_template = """<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}">
<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>
<line class="axis" x1="{m}" y1="{mid}" x2="{right}" y2="{mid}" stroke="#000000"/>
<line class="axis" x1="{m}" y1="{m}" x2="{m}" y2="{bottom}" stroke="#000000"/>
<text x="{m}" y="{label_y}" font-size="12">delta_nn (rad), +/-{d_max}</text>
<text x="{right}" y="{bottom_label}" font-size="12" text-anchor="end">t (s), 0..{t_max}</text>
{line}
</svg>
"""
    return svg_template.format(
        w=w, h=h, m=m, mid=h // 2, right=w - m, bottom=h - m, label_y=m - 10, bottom_label=h - 10,
        d_max=_fmt(d_max), t_max=_fmt(t_max), line=line,
    )


def load_plot_input(trace_path: str) -> PlotInput:
    """Episode CSV plus the map and plan files its preamble names (resolved next to the CSV)."""
    trace = load_episode_csv(trace_path)
    base = Path(trace_path).parent
    obstacle_map = load_obstacle_map(base / trace.map_file) if trace.map_file else None
    closed = trace.meta.get("closed", "false").lower() == "true"
    plan = load_plan_path(base / trace.plan_file, closed) if trace.plan_file else None
    return PlotInput(trace, obstacle_map, plan)


def generate_svg_report(trace_path: str, output_dir: str) -> Tuple[str, str]:
    """
    Write ``<name>_trajectory.svg`` and ``<name>_network.svg`` for one episode CSV.

    Returns:
        Paths of the two generated files
    """
    plot = load_plot_input(trace_path)
    name = Path(trace_path).stem
    os.makedirs(output_dir, exist_ok=True)
    outputs = []
    for suffix, content in (("trajectory", trajectory_svg(plot)), ("network", network_svg(plot.trace))):
        out = os.path.join(output_dir, f"{name}_{suffix}.svg")
        with open(out, 'w', encoding='utf-8') as f:
            f.write(content)
        outputs.append(os.path.abspath(out))
    return outputs[0], outputs[1]
