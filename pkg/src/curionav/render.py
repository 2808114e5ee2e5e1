"""SVG rendering of an episode: map, landmarks, pedestrians, trajectory,
covariance ellipses, and a final-tick crowd-density heatmap.

Pure string assembly, no imaging dependency. World coordinates map to SVG
with the y axis flipped so the map reads with +y up.
"""

from __future__ import annotations

import math

import numpy as np

from . import crowd
from .simkit import EpisodeTrace
from .world import Scenario

PX_PER_M = 28.0
MAX_HEAT_CELLS = 4000
ELLIPSE_COUNT = 30


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


class _Canvas:
    def __init__(self, size_y: float) -> None:
        self.size_y = size_y

    def pt(self, x: float, y: float) -> tuple[float, float]:
        return x, self.size_y - y


def render_svg(trace: EpisodeTrace | None, scenario: Scenario) -> str:
    """Layered SVG document; an empty/None trace draws only the map."""
    grid = scenario.grid
    ticks = trace.ticks if trace is not None else []
    if ticks:
        for t in ticks[:1]:
            x, y = t.true_state.x, t.true_state.y
            if not (0 <= x <= grid.size_x and 0 <= y <= grid.size_y):
                raise ValueError("trace lies outside the scenario grid bounds")
    cv = _Canvas(grid.size_y)
    w_px = grid.size_x * PX_PER_M
    h_px = grid.size_y * PX_PER_M
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w_px:.0f}" '
        f'height="{h_px:.0f}" viewBox="0 0 {_fmt(grid.size_x)} {_fmt(grid.size_y)}">',
        f'<rect x="0" y="0" width="{_fmt(grid.size_x)}" height="{_fmt(grid.size_y)}" '
        'fill="#fafafa"/>',
    ]
    parts.append(_grid_layer(scenario, cv))
    parts.append(_heatmap_layer(scenario, ticks, cv))
    parts.append(_landmark_layer(scenario, cv))
    parts.append(_pedestrian_layer(ticks, cv))
    parts.append(_ellipse_layer(ticks, cv))
    parts.append(_trajectory_layer(scenario, ticks, cv))
    parts.append("</svg>")
    return "\n".join(p for p in parts if p)


def _grid_layer(scenario: Scenario, cv: _Canvas) -> str:
    grid = scenario.grid
    res = grid.resolution
    rects = []
    ys, xs = np.nonzero(grid.occupied)
    for ix, iy in zip(xs, ys):
        x = ix * res
        y = (iy + 1) * res
        px, py = cv.pt(x, y)
        rects.append(
            f'<rect x="{_fmt(px)}" y="{_fmt(py)}" width="{_fmt(res)}" '
            f'height="{_fmt(res)}" fill="#37474f"/>'
        )
    return f'<g id="grid">{"".join(rects)}</g>'


def _landmark_layer(scenario: Scenario, cv: _Canvas) -> str:
    marks = []
    for lm in scenario.landmarks:
        px, py = cv.pt(lm.x, lm.y)
        marks.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="0.14" '
            'fill="#1565c0" stroke="white" stroke-width="0.04"/>'
        )
    return f'<g id="landmarks">{"".join(marks)}</g>'


def _pedestrian_layer(ticks, cv: _Canvas) -> str:
    if not ticks:
        return '<g id="pedestrians"/>'
    first = np.asarray(ticks[0].ped_positions).reshape(-1, 2)
    last = np.asarray(ticks[-1].ped_positions).reshape(-1, 2)
    marks = []
    for x, y in first:
        px, py = cv.pt(float(x), float(y))
        marks.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="0.12" fill="none" '
            'stroke="#ef6c00" stroke-width="0.05"/>'
        )
    for x, y in last:
        px, py = cv.pt(float(x), float(y))
        marks.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="0.12" fill="#ef6c00"/>'
        )
    return f'<g id="pedestrians">{"".join(marks)}</g>'


def _trajectory_layer(scenario: Scenario, ticks, cv: _Canvas) -> str:
    start = scenario.robot_start
    goal = scenario.goal
    sx, sy = cv.pt(start.x, start.y)
    gx, gy = cv.pt(float(goal[0]), float(goal[1]))
    parts = [
        f'<circle cx="{_fmt(sx)}" cy="{_fmt(sy)}" r="0.18" fill="#2e7d32"/>',
        f'<circle cx="{_fmt(gx)}" cy="{_fmt(gy)}" r="0.18" fill="none" '
        'stroke="#2e7d32" stroke-width="0.07"/>',
    ]
    if ticks:
        pts = " ".join(
            "{},{}".format(*map(_fmt, cv.pt(t.true_state.x, t.true_state.y)))
            for t in ticks
        )
        parts.append(
            f'<polyline id="trajectory-line" points="{pts}" fill="none" '
            'stroke="#c62828" stroke-width="0.08" stroke-linejoin="round"/>'
        )
    return f'<g id="trajectory">{"".join(parts)}</g>'


def _ellipse_layer(ticks, cv: _Canvas) -> str:
    if not ticks:
        return '<g id="ellipses"/>'
    idx = np.unique(np.linspace(0, len(ticks) - 1, min(len(ticks), ELLIPSE_COUNT)).astype(int))
    parts = []
    for i in idx:
        t = ticks[i]
        cov = np.asarray(t.belief_cov, dtype=float)[:2, :2]
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        vals = np.clip(vals, 0.0, None)
        rx, ry = math.sqrt(vals[1]), math.sqrt(vals[0])
        ang = math.degrees(math.atan2(vecs[1, 1], vecs[0, 1]))
        px, py = cv.pt(t.belief_mean.x, t.belief_mean.y)
        parts.append(
            f'<ellipse cx="0" cy="0" rx="{_fmt(max(rx, 1e-3))}" ry="{_fmt(max(ry, 1e-3))}" '
            f'transform="translate({_fmt(px)} {_fmt(py)}) rotate({_fmt(-ang)})" '
            'fill="none" stroke="#7b1fa2" stroke-width="0.03" opacity="0.6"/>'
        )
    return f'<g id="ellipses">{"".join(parts)}</g>'


def _heatmap_layer(scenario: Scenario, ticks, cv: _Canvas) -> str:
    if not ticks:
        return '<g id="hccdm"/>'
    last = ticks[-1]
    positions = np.asarray(last.ped_positions).reshape(-1, 2)
    if positions.shape[0] == 0:
        return '<g id="hccdm"/>'
    params = scenario.params
    peds = [
        crowd.Pedestrian(i, positions[i], np.zeros(2), last.time)
        for i in range(positions.shape[0])
    ]
    retained = crowd.update_working_zone(
        peds, last.true_state.position(), params.working_zone_radius
    )
    clusters = crowd.cluster_pedestrians(retained, params.d_sd) if retained else []
    if not clusters:
        return '<g id="hccdm"/>'
    hmap = crowd.build_hccdm(
        clusters, params.d_pd, timestamp=last.time,
        zone_center=last.true_state.position(),
        zone_radius=params.working_zone_radius,
    )
    grid = scenario.grid
    step = grid.resolution
    while (grid.size_x / step) * (grid.size_y / step) > MAX_HEAT_CELLS:
        step *= 2.0
    nx = int(grid.size_x / step)
    ny = int(grid.size_y / step)
    xs = (np.arange(nx) + 0.5) * step
    ys = (np.arange(ny) + 0.5) * step
    gx, gy = np.meshgrid(xs, ys)
    density = np.zeros_like(gx)
    for comp in hmap.components:
        d2 = (gx - comp.mu[0]) ** 2 + (gy - comp.mu[1]) ** 2
        density += comp.weight * np.exp(-0.5 * d2 / comp.sigma) / (2.0 * math.pi * comp.sigma)
    peak = density.max()
    if peak <= 0:
        return '<g id="hccdm"/>'
    rects = []
    for iy in range(ny):
        for ix in range(nx):
            a = 0.55 * density[iy, ix] / peak
            if a < 0.02:
                continue
            px, py = cv.pt(ix * step, (iy + 1) * step)
            rects.append(
                f'<rect x="{_fmt(px)}" y="{_fmt(py)}" width="{_fmt(step)}" '
                f'height="{_fmt(step)}" fill="#e53935" fill-opacity="{a:.3f}"/>'
            )
    return f'<g id="hccdm">{"".join(rects)}</g>'
