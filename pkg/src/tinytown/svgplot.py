"""Top-down SVG rendering of a map and a driven trajectory.

Output bytes are deterministic for identical inputs: fixed float formatting,
fixed element order.
"""

from __future__ import annotations

import math

from .sim import Trajectory
from .world import (
    TileKind,
    TileMap,
    ZONE_OFF_ROAD,
    ZONE_RIGHT_LANE,
    ZONE_WRONG_LANE,
)

SCALE = 200.0  # px per meter

ZONE_COLORS = {
    ZONE_RIGHT_LANE: "#2e7d32",
    ZONE_WRONG_LANE: "#ef6c00",
    ZONE_OFF_ROAD: "#c62828",
}

_ROAD_FILL = "#3a3a3a"
_GROUND_FILL = "#1d3b1d"


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class _Svg:
    def __init__(self, width_m: float, height_m: float):
        self.height_px = height_m * SCALE
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width_m * SCALE)}" '
            f'height="{_fmt(height_m * SCALE)}" '
            f'viewBox="0 0 {_fmt(width_m * SCALE)} {_fmt(height_m * SCALE)}">'
        ]

    def px(self, x: float, y: float) -> tuple[float, float]:
        return x * SCALE, self.height_px - y * SCALE

    def rect(self, x, y, w, h, fill) -> None:
        px, py = self.px(x, y + h)
        self.parts.append(
            f'<rect x="{_fmt(px)}" y="{_fmt(py)}" width="{_fmt(w * SCALE)}" '
            f'height="{_fmt(h * SCALE)}" fill="{fill}"/>'
        )

    def line(self, x1, y1, x2, y2, stroke, width, dash=None) -> None:
        p1, p2 = self.px(x1, y1), self.px(x2, y2)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_fmt(p1[0])}" y1="{_fmt(p1[1])}" x2="{_fmt(p2[0])}" '
            f'y2="{_fmt(p2[1])}" stroke="{stroke}" '
            f'stroke-width="{_fmt(width * SCALE)}"{dash_attr}/>'
        )

    def arc(self, cx, cy, radius, a0, a1, stroke, width, dash=None) -> None:
        x0, y0 = self.px(cx + radius * math.cos(a0), cy + radius * math.sin(a0))
        x1, y1 = self.px(cx + radius * math.cos(a1), cy + radius * math.sin(a1))
        sweep = 0 if a1 > a0 else 1  # y-flip inverts the sweep sense
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<path d="M {_fmt(x0)} {_fmt(y0)} A {_fmt(radius * SCALE)} '
            f'{_fmt(radius * SCALE)} 0 0 {sweep} {_fmt(x1)} {_fmt(y1)}" '
            f'fill="none" stroke="{stroke}" '
            f'stroke-width="{_fmt(width * SCALE)}"{dash_attr}/>'
        )

    def polyline(self, points, stroke, width) -> None:
        coords = " ".join(
            f"{_fmt(px)},{_fmt(py)}" for px, py in (self.px(x, y) for x, y in points)
        )
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_fmt(width * SCALE)}" stroke-linejoin="round"/>'
        )

    def circle(self, x, y, r, fill) -> None:
        px, py = self.px(x, y)
        self.parts.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{_fmt(r * SCALE)}" fill="{fill}"/>'
        )

    def render(self) -> str:
        return "".join(self.parts) + "</svg>"


_LEFT_CENTER = {"N": (0, 0), "W": (1, 0), "S": (1, 1), "E": (0, 1)}
_RIGHT_CENTER = {"N": (1, 0), "E": (0, 0), "S": (0, 1), "W": (1, 1)}


def _draw_tile_markings(svg: _Svg, m: TileMap, row: int, col: int) -> None:
    tile = m.tile(row, col)
    t = m.tile_size
    x0, y0 = m.cell_origin(row, col)
    white_off = m.lane_offset + m.lane_width / 2.0
    dash = f"{_fmt(m.dash_length * SCALE)} {_fmt(m.dash_gap * SCALE)}"
    o = tile.orientation
    if tile.kind is TileKind.STRAIGHT:
        vertical = o in ("N", "S")
        if vertical:
            cx = x0 + t / 2.0
            svg.line(cx, y0, cx, y0 + t, "#e7c94c", m.line_width, dash=dash)
            for off in (-white_off, white_off):
                svg.line(cx + off, y0, cx + off, y0 + t, "#eeeeee", m.line_width)
        else:
            cy = y0 + t / 2.0
            svg.line(x0, cy, x0 + t, cy, "#e7c94c", m.line_width, dash=dash)
            for off in (-white_off, white_off):
                svg.line(x0, cy + off, x0 + t, cy + off, "#eeeeee", m.line_width)
    elif tile.kind in (TileKind.CURVE_LEFT, TileKind.CURVE_RIGHT):
        centers = _LEFT_CENTER if tile.kind is TileKind.CURVE_LEFT else _RIGHT_CENTER
        fx, fy = centers[o]
        cx, cy = x0 + fx * t, y0 + fy * t
        # quadrant of the tile interior as seen from the corner
        a0 = {
            (0, 0): 0.0,
            (1, 0): math.pi / 2,
            (1, 1): math.pi,
            (0, 1): -math.pi / 2,
        }[(fx, fy)]
        a1 = a0 + math.pi / 2
        svg.arc(cx, cy, t / 2.0, a0, a1, "#e7c94c", m.line_width, dash=dash)
        for radius in (t / 2.0 - white_off, t / 2.0 + white_off):
            svg.arc(cx, cy, radius, a0, a1, "#eeeeee", m.line_width)
    elif tile.kind in (TileKind.THREE_WAY, TileKind.FOUR_WAY):
        depth = 0.048
        for side in tile.open_sides():
            if side == "N":
                svg.rect(x0 + t / 2 - white_off, y0 + t - depth, 2 * white_off, depth, "#b03030")
            elif side == "S":
                svg.rect(x0 + t / 2 - white_off, y0, 2 * white_off, depth, "#b03030")
            elif side == "E":
                svg.rect(x0 + t - depth, y0 + t / 2 - white_off, depth, 2 * white_off, "#b03030")
            else:
                svg.rect(x0, y0 + t / 2 - white_off, depth, 2 * white_off, "#b03030")


def emit_trajectory_svg(traj: Trajectory, m: TileMap) -> str:
    """Render map tiles, lane markings, and the zone-colored trajectory."""
    if not traj.samples:
        raise ValueError("empty trajectory")
    width_m = m.cols * m.tile_size
    height_m = m.rows * m.tile_size
    svg = _Svg(width_m, height_m)
    svg.rect(0.0, 0.0, width_m, height_m, _GROUND_FILL)
    for row in range(m.rows):
        for col in range(m.cols):
            if m.tile(row, col).drivable:
                x0, y0 = m.cell_origin(row, col)
                svg.rect(x0, y0, m.tile_size, m.tile_size, _ROAD_FILL)
    for row in range(m.rows):
        for col in range(m.cols):
            if m.tile(row, col).drivable:
                _draw_tile_markings(svg, m, row, col)

    # trajectory, split into runs of equal zone; each run keeps the previous
    # point so the path stays connected
    points = [(traj.start_state.x, traj.start_state.y)] + [
        (s.state.x, s.state.y) for s in traj.samples
    ]
    zones = [s.zone for s in traj.samples]
    start = 0
    for i in range(1, len(zones) + 1):
        if i == len(zones) or zones[i] != zones[start]:
            segment = points[start : i + 1]
            if len(segment) >= 2:
                svg.polyline(segment, ZONE_COLORS[zones[start]], 0.012)
            start = i
    svg.circle(points[0][0], points[0][1], 0.02, "#ffffff")
    return svg.render()
