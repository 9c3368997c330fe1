"""Tile-grid world model: map documents, lane geometry, projection, zones.

Coordinate conventions: x grows east, y grows north, angles CCW from +x.
Grid row 0 is the map's north edge, so tile (row, col) occupies
x in [col*T, (col+1)*T], y in [(rows-1-row)*T, (rows-row)*T].

A tile's orientation is the compass heading with which right-lane traffic
enters the tile; for straights this equals the exit heading, for curves the
exit is the entry rotated 90 deg toward the turn side.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from .dynamics import wrap_angle

ZONE_RIGHT_LANE = "right_lane"
ZONE_WRONG_LANE = "wrong_lane"
ZONE_OFF_ROAD = "off_road"


class MapError(ValueError):
    """Base error for malformed or invalid maps."""


class MapParseError(MapError):
    """Document does not conform to the map format."""


class MapValidationError(MapError):
    """Document parsed but the lane network is invalid."""


class MapTopologyError(MapError):
    """Map topology unsupported by the requested operation."""


class TileKind(Enum):
    STRAIGHT = "straight"
    CURVE_LEFT = "curve_left"
    CURVE_RIGHT = "curve_right"
    THREE_WAY = "three_way"
    FOUR_WAY = "four_way"
    EMPTY = "empty"


ORIENTATIONS = ("N", "E", "S", "W")

_DIR_VEC = {"N": (0.0, 1.0), "E": (1.0, 0.0), "S": (0.0, -1.0), "W": (-1.0, 0.0)}
_DIR_ANGLE = {"E": 0.0, "N": math.pi / 2, "W": math.pi, "S": -math.pi / 2}
_LEFT = {"N": "W", "W": "S", "S": "E", "E": "N"}
_RIGHT = {v: k for k, v in _LEFT.items()}
_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
# grid step (drow, dcol) to the neighbor in a compass direction (row 0 = north)
_DIR_STEP = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}

_DRIVABLE = (
    TileKind.STRAIGHT,
    TileKind.CURVE_LEFT,
    TileKind.CURVE_RIGHT,
    TileKind.THREE_WAY,
    TileKind.FOUR_WAY,
)
_INTERSECTIONS = (TileKind.THREE_WAY, TileKind.FOUR_WAY)


@dataclass(frozen=True)
class Tile:
    kind: TileKind
    orientation: str = "N"

    def __post_init__(self) -> None:
        if self.orientation not in ORIENTATIONS:
            raise MapParseError(f"bad orientation {self.orientation!r}")
        if self.kind is TileKind.EMPTY and self.orientation != "N":
            object.__setattr__(self, "orientation", "N")

    @property
    def drivable(self) -> bool:
        return self.kind in _DRIVABLE

    def exit_heading(self) -> str:
        """Compass heading of the directed right lane leaving this tile."""
        if self.kind is TileKind.STRAIGHT:
            return self.orientation
        if self.kind is TileKind.CURVE_LEFT:
            return _LEFT[self.orientation]
        if self.kind is TileKind.CURVE_RIGHT:
            return _RIGHT[self.orientation]
        raise MapTopologyError(f"{self.kind.value} tile has no single exit")

    def open_sides(self) -> tuple[str, ...]:
        """Sides of the tile where the road reaches the tile boundary."""
        o = self.orientation
        if self.kind is TileKind.STRAIGHT:
            return (o, _OPPOSITE[o])
        if self.kind is TileKind.CURVE_LEFT:
            return (_OPPOSITE[o], _LEFT[o])
        if self.kind is TileKind.CURVE_RIGHT:
            return (_OPPOSITE[o], _RIGHT[o])
        if self.kind is TileKind.THREE_WAY:
            return (o, _LEFT[o], _RIGHT[o])
        if self.kind is TileKind.FOUR_WAY:
            return ORIENTATIONS
        return ()


def _tile_code(tile: Tile) -> str:
    if tile.kind is TileKind.EMPTY:
        return "empty"
    return f"{tile.kind.value}/{tile.orientation}"


def _parse_tile_code(code: str) -> Tile:
    if code == "empty":
        return Tile(TileKind.EMPTY)
    if "/" not in code:
        raise MapParseError(f"unknown tile code {code!r}")
    kind_s, _, orient = code.partition("/")
    try:
        kind = TileKind(kind_s)
    except ValueError:
        raise MapParseError(f"unknown tile code {code!r}") from None
    if orient not in ORIENTATIONS:
        raise MapParseError(f"bad orientation in tile code {code!r}")
    return Tile(kind, orient)


@dataclass(eq=False)
class TileMap:
    """Grid of oriented road tiles plus lane-marking geometry."""

    grid: tuple[tuple[Tile, ...], ...]
    tile_size: float = 0.6
    lane_width: float | None = None
    lane_offset: float | None = None
    line_width: float = 0.06
    dash_length: float = 0.12
    dash_gap: float = 0.08

    def __post_init__(self) -> None:
        if self.tile_size <= 0:
            raise MapParseError("tile_size must be positive")
        if not self.grid or not self.grid[0]:
            raise MapParseError("grid must be at least 1x1")
        width = len(self.grid[0])
        if any(len(row) != width for row in self.grid):
            raise MapParseError("grid rows must have equal length")
        if self.lane_width is None:
            self.lane_width = self.tile_size / 4.0
        if self.lane_offset is None:
            self.lane_offset = self.tile_size / 4.0

    @property
    def rows(self) -> int:
        return len(self.grid)

    @property
    def cols(self) -> int:
        return len(self.grid[0])

    @property
    def lane_half_width(self) -> float:
        return self.lane_width / 2.0

    def tile(self, row: int, col: int) -> Tile:
        return self.grid[row][col]

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.rows and 0 <= col < self.cols

    def cell_origin(self, row: int, col: int) -> tuple[float, float]:
        """World coordinates of the tile's southwest corner."""
        return col * self.tile_size, (self.rows - 1 - row) * self.tile_size

    def cell_of_position(self, x: float, y: float) -> tuple[int, int] | None:
        col = int(math.floor(x / self.tile_size))
        row = self.rows - 1 - int(math.floor(y / self.tile_size))
        if self.in_bounds(row, col):
            return row, col
        return None

    def drivable_at(self, x: float, y: float) -> bool:
        cell = self.cell_of_position(x, y)
        return cell is not None and self.tile(*cell).drivable

    def drivable_cells(self) -> list[tuple[int, int]]:
        return [
            (r, c)
            for r in range(self.rows)
            for c in range(self.cols)
            if self.grid[r][c].drivable
        ]

    @cached_property
    def kind_grid(self) -> np.ndarray:
        kinds = list(TileKind)
        return np.array(
            [[kinds.index(t.kind) for t in row] for row in self.grid], dtype=np.int8
        )

    @cached_property
    def orient_grid(self) -> np.ndarray:
        return np.array(
            [[ORIENTATIONS.index(t.orientation) for t in row] for row in self.grid],
            dtype=np.int8,
        )


def map_from_document(obj: dict) -> TileMap:
    """Build and validate a TileMap from a parsed map document."""
    if not isinstance(obj, dict):
        raise MapParseError("map document must be a JSON object")
    known = {
        "tile_size_m",
        "grid",
        "lane_width_m",
        "lane_offset_m",
        "line_width_m",
        "dash_length_m",
        "dash_gap_m",
    }
    unknown = set(obj) - known
    if unknown:
        raise MapParseError(f"unknown map document keys: {sorted(unknown)}")
    if "tile_size_m" not in obj or "grid" not in obj:
        raise MapParseError("map document requires tile_size_m and grid")
    tile_size = obj["tile_size_m"]
    if not isinstance(tile_size, (int, float)) or isinstance(tile_size, bool):
        raise MapParseError("tile_size_m must be a number")
    grid_codes = obj["grid"]
    if not isinstance(grid_codes, list) or not grid_codes:
        raise MapParseError("grid must be a non-empty array")
    rows = []
    for row in grid_codes:
        if not isinstance(row, list) or not row:
            raise MapParseError("grid rows must be non-empty arrays")
        tiles = []
        for code in row:
            if not isinstance(code, str):
                raise MapParseError("tile codes must be strings")
            tiles.append(_parse_tile_code(code))
        rows.append(tuple(tiles))
    kwargs = {}
    for doc_key, attr in (
        ("lane_width_m", "lane_width"),
        ("lane_offset_m", "lane_offset"),
        ("line_width_m", "line_width"),
        ("dash_length_m", "dash_length"),
        ("dash_gap_m", "dash_gap"),
    ):
        if doc_key in obj:
            val = obj[doc_key]
            if not isinstance(val, (int, float)) or isinstance(val, bool) or val <= 0:
                raise MapParseError(f"{doc_key} must be a positive number")
            kwargs[attr] = float(val)
    m = TileMap(tuple(rows), float(tile_size), **kwargs)
    validate_map(m)
    return m


def load_map(document: str) -> TileMap:
    """Parse and validate a UTF-8 JSON map document."""
    try:
        obj = json.loads(document)
    except json.JSONDecodeError as exc:
        raise MapParseError(f"malformed map document: {exc}") from None
    return map_from_document(obj)


def map_to_document(m: TileMap) -> dict:
    doc: dict = {
        "tile_size_m": m.tile_size,
        "grid": [[_tile_code(t) for t in row] for row in m.grid],
    }
    defaults = {
        "lane_width_m": (m.lane_width, m.tile_size / 4.0),
        "lane_offset_m": (m.lane_offset, m.tile_size / 4.0),
        "line_width_m": (m.line_width, 0.06),
        "dash_length_m": (m.dash_length, 0.12),
        "dash_gap_m": (m.dash_gap, 0.08),
    }
    for key, (value, default) in defaults.items():
        if value != default:
            doc[key] = value
    return doc


def serialize_map(m: TileMap) -> str:
    """Canonical (deterministic) serialization; load_map inverts it."""
    return json.dumps(map_to_document(m), sort_keys=True, separators=(",", ":"))


def validate_map(m: TileMap) -> None:
    """Check the closed-lane-connectivity invariant.

    Maps without intersections must form closed directed lane loops: every
    drivable tile's exit must lead to a drivable neighbor whose orientation
    matches the exit heading. Maps with intersections are checked at the
    coarser side-compatibility level (no directed routing through them).
    """
    drivable = m.drivable_cells()
    has_intersection = any(m.tile(r, c).kind in _INTERSECTIONS for r, c in drivable)
    for r, c in drivable:
        tile = m.tile(r, c)
        for side in tile.open_sides():
            dr, dc = _DIR_STEP[side]
            nr, nc = r + dr, c + dc
            if not m.in_bounds(nr, nc) or not m.tile(nr, nc).drivable:
                raise MapValidationError(
                    f"tile ({r},{c}) {_tile_code(tile)} open to {side} has no road neighbor"
                )
            if _OPPOSITE[side] not in m.tile(nr, nc).open_sides():
                raise MapValidationError(
                    f"tiles ({r},{c}) and ({nr},{nc}) have mismatched road edges"
                )
        if not has_intersection:
            exit_h = tile.exit_heading()
            dr, dc = _DIR_STEP[exit_h]
            nr, nc = r + dr, c + dc
            if not m.in_bounds(nr, nc) or m.tile(nr, nc).orientation != exit_h:
                raise MapValidationError(
                    f"lane exiting ({r},{c}) toward {exit_h} has no matching entry"
                )


def _directed_successor(m: TileMap, cell: tuple[int, int]) -> tuple[int, int]:
    r, c = cell
    exit_h = m.tile(r, c).exit_heading()
    dr, dc = _DIR_STEP[exit_h]
    nr, nc = r + dr, c + dc
    if not m.in_bounds(nr, nc):
        raise MapTopologyError(f"lane leaves the grid at ({r},{c})")
    nxt = m.tile(nr, nc)
    if not nxt.drivable or nxt.orientation != exit_h:
        raise MapTopologyError(f"lane breaks between ({r},{c}) and ({nr},{nc})")
    return nr, nc


def generate_random_map(seed: int, rows: int, cols: int) -> TileMap:
    """Generate a random closed-loop lane-following map.

    Builds a random spanning tree of the cell grid, closes a random
    fundamental cycle, and writes the cycle out as straight/curve tiles.
    Same seed, same map.
    """
    if rows < 3 or cols < 3:
        raise MapValidationError("grid must be at least 3x3 to host a closed loop")
    rng = random.Random(seed)

    def neighbors(cell: tuple[int, int]) -> list[tuple[int, int]]:
        r, c = cell
        out = []
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < rows and 0 <= nc < cols:
                out.append((nr, nc))
        return out

    start = (rng.randrange(rows), rng.randrange(cols))
    parent: dict[tuple[int, int], tuple[int, int] | None] = {start: None}
    stack = [start]
    while stack:
        cur = stack.pop()
        nbrs = [n for n in neighbors(cur) if n not in parent]
        rng.shuffle(nbrs)
        for n in nbrs:
            parent[n] = cur
            stack.append(n)

    non_tree = []
    for cell in sorted(parent):
        for n in neighbors(cell):
            if n > cell and parent[cell] != n and parent[n] != cell:
                non_tree.append((cell, n))
    u, v = non_tree[rng.randrange(len(non_tree))]

    def ancestry(cell: tuple[int, int]) -> list[tuple[int, int]]:
        path = [cell]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        return path

    path_u, path_v = ancestry(u), ancestry(v)
    in_u = {cell: i for i, cell in enumerate(path_u)}
    lca_i_v = next(i for i, cell in enumerate(path_v) if cell in in_u)
    lca = path_v[lca_i_v]
    # u .. lca .. v, then the non-tree edge closes v -> u
    cycle = path_u[: in_u[lca] + 1] + list(reversed(path_v[:lca_i_v]))

    def direction(a: tuple[int, int], b: tuple[int, int]) -> str:
        dr, dc = b[0] - a[0], b[1] - a[1]
        return {(-1, 0): "N", (1, 0): "S", (0, 1): "E", (0, -1): "W"}[(dr, dc)]

    tiles = [[Tile(TileKind.EMPTY) for _ in range(cols)] for _ in range(rows)]
    n = len(cycle)
    for i, cell in enumerate(cycle):
        entry = direction(cycle[i - 1], cell)
        exit_h = direction(cell, cycle[(i + 1) % n])
        if exit_h == entry:
            kind = TileKind.STRAIGHT
        elif exit_h == _LEFT[entry]:
            kind = TileKind.CURVE_LEFT
        else:
            kind = TileKind.CURVE_RIGHT
        tiles[cell[0]][cell[1]] = Tile(kind, entry)
    m = TileMap(tuple(tuple(row) for row in tiles))
    validate_map(m)
    return m


@dataclass(eq=False)
class LanePolyline:
    """Discretized lane centerline with cumulative arclength."""

    points: np.ndarray  # (N, 2) float64
    cumulative_arclength: np.ndarray  # (N,) float64, strictly increasing
    closed: bool

    @cached_property
    def total_length(self) -> float:
        length = float(self.cumulative_arclength[-1])
        if self.closed:
            length += float(np.linalg.norm(self.points[-1] - self.points[0]))
        return length

    @cached_property
    def _segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        p0 = self.points if self.closed else self.points[:-1]
        p1 = np.roll(self.points, -1, axis=0) if self.closed else self.points[1:]
        d = p1 - p0
        len2 = np.einsum("ij,ij->i", d, d)
        s0 = (
            self.cumulative_arclength
            if self.closed
            else self.cumulative_arclength[:-1]
        )
        return p0, d, len2, s0

    def point_at(self, s: float) -> np.ndarray:
        """Interpolated point at arclength s (wrap-aware when closed)."""
        total = self.total_length
        if self.closed:
            s = s % total
        else:
            s = min(max(s, 0.0), total)
        cum = self.cumulative_arclength
        i = int(np.searchsorted(cum, s, side="right")) - 1
        i = max(i, 0)
        p0, d, len2, s0 = self._segments
        seg_len = math.sqrt(float(len2[i])) if i < len(p0) else 0.0
        if i >= len(p0) or seg_len == 0.0:
            return self.points[-1].copy()
        frac = (s - float(s0[i])) / seg_len
        return p0[i] + min(frac, 1.0) * d[i]


@dataclass(frozen=True)
class LanePose:
    """Arclength s, signed lateral offset d (left positive), heading error phi."""

    s: float
    d: float
    phi: float
    in_right_lane: bool


def _right_normal(o: str) -> tuple[float, float]:
    hx, hy = _DIR_VEC[o]
    return hy, -hx


def _left_normal(o: str) -> tuple[float, float]:
    hx, hy = _DIR_VEC[o]
    return -hy, hx


# Corner of the tile serving as arc center, as a (x, y) factor of tile_size.
_CURVE_LEFT_CENTER = {"N": (0, 0), "W": (1, 0), "S": (1, 1), "E": (0, 1)}
_CURVE_RIGHT_CENTER = {"N": (1, 0), "E": (0, 0), "S": (0, 1), "W": (1, 1)}


def _tile_lane_points(m: TileMap, row: int, col: int) -> list[tuple[float, float]]:
    """Sample the directed right-lane centerline across one tile.

    The tile's exit point is omitted; it coincides with the next tile's
    first sample.
    """
    tile = m.tile(row, col)
    t = m.tile_size
    off = m.lane_offset
    ds = t / 20.0
    x0, y0 = m.cell_origin(row, col)
    o = tile.orientation
    if tile.kind is TileKind.STRAIGHT:
        hx, hy = _DIR_VEC[o]
        nx, ny = _right_normal(o)
        sx = x0 + t / 2.0 - hx * t / 2.0 + nx * off
        sy = y0 + t / 2.0 - hy * t / 2.0 + ny * off
        n = math.ceil(t / ds)
        return [(sx + hx * k * ds, sy + hy * k * ds) for k in range(n)]
    if tile.kind in (TileKind.CURVE_LEFT, TileKind.CURVE_RIGHT):
        if tile.kind is TileKind.CURVE_LEFT:
            fx, fy = _CURVE_LEFT_CENTER[o]
            radius = t / 2.0 + off
            rx, ry = _right_normal(o)
            sweep = math.pi / 2.0
        else:
            fx, fy = _CURVE_RIGHT_CENTER[o]
            radius = t / 2.0 - off
            rx, ry = _left_normal(o)
            sweep = -math.pi / 2.0
        cx, cy = x0 + fx * t, y0 + fy * t
        theta0 = math.atan2(ry, rx)
        arc_len = radius * math.pi / 2.0
        n = math.ceil(arc_len / ds)
        pts = []
        for k in range(n):
            ang = theta0 + sweep * (k * ds / arc_len)
            pts.append((cx + radius * math.cos(ang), cy + radius * math.sin(ang)))
        return pts
    raise MapTopologyError(f"{tile.kind.value} tile has no single lane")


def lane_centerline(m: TileMap) -> LanePolyline:
    """Trace the closed right-lane centerline of a loop map.

    Rejects maps with intersection tiles, open lane chains, and maps whose
    drivable tiles form more than one loop.
    """
    drivable = m.drivable_cells()
    if not drivable:
        raise MapTopologyError("map has no drivable tiles")
    if any(m.tile(r, c).kind in _INTERSECTIONS for r, c in drivable):
        raise MapTopologyError("intersection tiles are not supported")
    # arclength zero sits at a straight tile when one exists; episode start
    # poses (s=0) are then away from curve entries
    straights = [c for c in drivable if m.tile(*c).kind is TileKind.STRAIGHT]
    start = straights[0] if straights else drivable[0]
    loop = [start]
    cur = _directed_successor(m, start)
    while cur != start:
        loop.append(cur)
        if len(loop) > len(drivable):
            raise MapTopologyError("lane network does not close")
        cur = _directed_successor(m, cur)
    if len(loop) != len(drivable):
        raise MapTopologyError("map contains more than one lane loop")
    pts: list[tuple[float, float]] = []
    for cell in loop:
        pts.extend(_tile_lane_points(m, *cell))
    points = np.asarray(pts, dtype=np.float64)
    deltas = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cumulative = np.concatenate(([0.0], np.cumsum(deltas)))
    return LanePolyline(points=points, cumulative_arclength=cumulative, closed=True)


def project_to_lane(
    polyline: LanePolyline, position, heading: float, lane_half_width: float = 0.075
) -> LanePose:
    """Project a world pose onto the nearest lane-centerline segment.

    Distance ties resolve to the smaller arclength. d is positive left of
    the lane tangent; phi is wrapped to (-pi, pi].
    """
    q = np.asarray(position, dtype=np.float64)
    p0, d, len2, s0 = polyline._segments
    rel = q - p0
    tpar = np.einsum("ij,ij->i", rel, d) / len2
    np.clip(tpar, 0.0, 1.0, out=tpar)
    proj = p0 + tpar[:, None] * d
    diff = q - proj
    dist2 = np.einsum("ij,ij->i", diff, diff)
    i = int(np.argmin(dist2))
    seg_len = math.sqrt(float(len2[i]))
    s = (float(s0[i]) + tpar[i] * seg_len) % polyline.total_length
    tx, ty = d[i] / seg_len
    dx, dy = diff[i]
    lateral = tx * dy - ty * dx
    phi = wrap_angle(heading - math.atan2(ty, tx))
    return LanePose(
        s=s, d=float(lateral), phi=phi, in_right_lane=abs(lateral) <= lane_half_width
    )


def classify_zone(m: TileMap, pose: LanePose, position) -> str:
    """Partition a query point into right_lane / wrong_lane / off_road."""
    x, y = float(position[0]), float(position[1])
    if not m.drivable_at(x, y):
        return ZONE_OFF_ROAD
    if abs(pose.d) <= m.lane_half_width:
        return ZONE_RIGHT_LANE
    return ZONE_WRONG_LANE


CANONICAL_RING_DOCUMENT = json.dumps(
    {
        "tile_size_m": 0.6,
        "grid": [
            ["curve_left/W", "straight/W", "curve_left/N"],
            ["straight/S", "empty", "straight/N"],
            ["curve_left/S", "straight/E", "curve_left/E"],
        ],
    }
)
