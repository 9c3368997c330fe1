"""Ego-frame orthographic semantic raster of lane markings and obstacles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dynamics import RobotState
from .world import ORIENTATIONS, Tile, TileKind, TileMap

LABEL_BACKGROUND = 0
LABEL_WHITE = 1
LABEL_YELLOW = 2
LABEL_RED = 3
LABEL_OBSTACLE = 4

# fixed label -> grayscale mapping; gives Otsu a clean bimodal histogram
LABEL_GRAY = np.array([20, 230, 180, 140, 90], dtype=np.int16)

_KIND_INDEX = {k: i for i, k in enumerate(TileKind)}

# arc-center corner of a curve tile as (x, y) factors of tile_size,
# keyed by orientation (= entry heading)
_LEFT_CENTER = {"N": (0, 0), "W": (1, 0), "S": (1, 1), "E": (0, 1)}
_RIGHT_CENTER = {"N": (1, 0), "E": (0, 0), "S": (0, 1), "W": (1, 1)}

_STOP_DEPTH = 0.048


@dataclass(eq=False)
class RasterConfig:
    """Raster geometry: `width` lateral cells over `window_width` meters,
    `height` cells over `window_ahead` meters in front of the robot."""

    width: int = 64
    height: int = 48
    window_width: float = 1.2
    window_ahead: float = 1.8

    @property
    def cell_width(self) -> float:
        return self.window_width / self.width

    @property
    def cell_height(self) -> float:
        return self.window_ahead / self.height

    @cached_property
    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(ahead, left) coordinates of all cell centers, row-major flattened."""
        rows = np.arange(self.height)
        cols = np.arange(self.width)
        ahead = (self.height - rows - 0.5) * self.cell_height
        left = (self.width / 2.0 - cols - 0.5) * self.cell_width
        a, l = np.meshgrid(ahead, left, indexing="ij")
        return a.ravel(), l.ravel()

    def lateral_of_col(self, col: float) -> float:
        """Leftward offset (m) of a fractional column coordinate."""
        return (self.width / 2.0 - col - 0.5) * self.cell_width

    def ahead_of_row(self, row: float) -> float:
        return (self.height - row - 0.5) * self.cell_height


@dataclass(eq=False)
class SemanticImage:
    """Low-resolution ego raster: ground-truth labels plus the grayscale
    intensities (label gray values shifted by the episode's jitter) that
    perception pipelines consume."""

    width: int
    height: int
    labels: np.ndarray  # (H, W) uint8 label codes
    intensity: np.ndarray  # (H, W) uint8

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SemanticImage)
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.intensity, other.intensity)
        )


def intensity_from_labels(labels: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    gray = LABEL_GRAY[labels].astype(np.float64) + jitter
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)


def marking_labels(m: TileMap, obstacles, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Semantic label of every world-space query point (vectorized)."""
    n = xs.shape[0]
    labels = np.zeros(n, dtype=np.uint8)
    t = m.tile_size
    col = np.floor(xs / t).astype(np.int64)
    row_n = np.floor(ys / t).astype(np.int64)
    row = m.rows - 1 - row_n
    inb = (col >= 0) & (col < m.cols) & (row >= 0) & (row < m.rows)
    if not np.any(inb):
        _stamp_obstacles(labels, obstacles, xs, ys)
        return labels

    kind = np.full(n, _KIND_INDEX[TileKind.EMPTY], dtype=np.int8)
    orient = np.zeros(n, dtype=np.int8)
    kind[inb] = m.kind_grid[row[inb], col[inb]]
    orient[inb] = m.orient_grid[row[inb], col[inb]]
    lx = xs - col * t
    ly = ys - row_n * t

    yellow_half = m.line_width / 2.0
    white_off = m.lane_offset + m.lane_width / 2.0
    white_half = m.line_width / 2.0
    period = m.dash_length + m.dash_gap

    def paint_bands(mask, w, u):
        dash = np.mod(u, period) < m.dash_length
        yellow = mask & (np.abs(w) <= yellow_half) & dash
        white = mask & (
            (np.abs(w - white_off) <= white_half) | (np.abs(w + white_off) <= white_half)
        )
        labels[white] = LABEL_WHITE
        labels[yellow] = LABEL_YELLOW

    straight = kind == _KIND_INDEX[TileKind.STRAIGHT]
    if np.any(straight):
        vertical = straight & ((orient == 0) | (orient == 2))  # N or S
        horizontal = straight & ~vertical
        paint_bands(vertical, lx - t / 2.0, ly)
        paint_bands(horizontal, ly - t / 2.0, lx)

    for kind_enum, centers in (
        (TileKind.CURVE_LEFT, _LEFT_CENTER),
        (TileKind.CURVE_RIGHT, _RIGHT_CENTER),
    ):
        k_idx = _KIND_INDEX[kind_enum]
        curve = kind == k_idx
        if not np.any(curve):
            continue
        for o_idx, o in enumerate(ORIENTATIONS):
            mask = curve & (orient == o_idx)
            if not np.any(mask):
                continue
            fx, fy = centers[o]
            cx, cy = fx * t, fy * t
            dx = lx[mask] - cx
            dy = ly[mask] - cy
            rho = np.hypot(dx, dy)
            theta = np.arctan2(dy, dx)
            # local angles stay within one quadrant of the arc corner
            theta = np.mod(theta, 2 * math.pi)
            u = theta * (t / 2.0)  # arclength along the road axis
            sub = np.zeros(n, dtype=bool)
            sub[np.flatnonzero(mask)] = True
            w = np.zeros(n)
            w[mask] = rho - t / 2.0
            uu = np.zeros(n)
            uu[mask] = u
            paint_bands(sub, w, uu)

    for inter_kind in (TileKind.THREE_WAY, TileKind.FOUR_WAY):
        k_idx = _KIND_INDEX[inter_kind]
        inter = kind == k_idx
        if not np.any(inter):
            continue
        for o_idx, o in enumerate(ORIENTATIONS):
            mask = inter & (orient == o_idx)
            if not np.any(mask):
                continue
            sides = Tile(inter_kind, o).open_sides()
            for side in sides:
                if side == "N":
                    band = (ly >= t - _STOP_DEPTH) & (np.abs(lx - t / 2) <= white_off)
                elif side == "S":
                    band = (ly <= _STOP_DEPTH) & (np.abs(lx - t / 2) <= white_off)
                elif side == "E":
                    band = (lx >= t - _STOP_DEPTH) & (np.abs(ly - t / 2) <= white_off)
                else:
                    band = (lx <= _STOP_DEPTH) & (np.abs(ly - t / 2) <= white_off)
                labels[mask & band] = LABEL_RED

    _stamp_obstacles(labels, obstacles, xs, ys)
    return labels


def _stamp_obstacles(labels, obstacles, xs, ys) -> None:
    for obs in obstacles:
        hit = (xs - obs.x) ** 2 + (ys - obs.y) ** 2 <= obs.radius**2
        labels[hit] = LABEL_OBSTACLE


def render_semantic(
    m: TileMap,
    obstacles,
    state: RobotState,
    cfg: RasterConfig | None = None,
    intensity_jitter: float = 0.0,
) -> SemanticImage:
    """Render the ego-frame semantic raster at the robot's pose.

    Cells are labeled by marking occupancy at the cell center; output is a
    pure function of (map, obstacles, pose, config, jitter).
    """
    cfg = cfg or RasterConfig()
    ahead, left = cfg.cell_centers
    c, s = math.cos(state.theta), math.sin(state.theta)
    xs = state.x + ahead * c - left * s
    ys = state.y + ahead * s + left * c
    labels = marking_labels(m, obstacles, xs, ys).reshape(cfg.height, cfg.width)
    return SemanticImage(
        width=cfg.width,
        height=cfg.height,
        labels=labels,
        intensity=intensity_from_labels(labels, intensity_jitter),
    )
