"""Client-side lane-marking pipeline over the semantic intensity raster.

Independent re-implementation of the published pipeline semantics: Otsu
binarization (smallest threshold on ties), 3x3 opening with zero padding,
4-connected components, background-mode intensity normalization against the
white=230 / yellow=180 references, per-row guide midpoints, and a total
least squares midline whose deviation from vertical (left positive) drives
the controller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# raster geometry of the published semantic observation
WINDOW_WIDTH_M = 1.2
WINDOW_AHEAD_M = 1.8

REF_WHITE = 230.0
REF_YELLOW = 180.0
REF_BACKGROUND = 20.0
CLASS_TOLERANCE = 15.0
CROP_TOP_FRACTION = 0.5


@dataclass(frozen=True)
class GuideFit:
    yellow_visible: bool
    white_visible: bool
    deviation_angle: float | None


def otsu(gray: np.ndarray) -> int:
    """Smallest threshold maximizing the between-class variance."""
    hist = np.bincount(gray.ravel(), minlength=256)[:256].astype(np.float64)
    total = hist.sum()
    w0 = np.cumsum(hist)
    w1 = total - w0
    s0 = np.cumsum(hist * np.arange(256))
    s1 = s0[-1] - s0
    valid = (w0 > 0) & (w1 > 0)
    score = np.zeros(256)
    score[valid] = (s0[valid] * w1[valid] - s1[valid] * w0[valid]) ** 2 / (
        w0[valid] * w1[valid]
    )
    return int(np.argmax(score))


def open3x3(binary: np.ndarray) -> np.ndarray:
    """Erode then dilate with a full 3x3 kernel, zero beyond the border."""

    def shiftmin(img, aggregate):
        padded = np.zeros((img.shape[0] + 2, img.shape[1] + 2), dtype=img.dtype)
        padded[1:-1, 1:-1] = img
        views = [
            padded[dr : dr + img.shape[0], dc : dc + img.shape[1]]
            for dr in range(3)
            for dc in range(3)
        ]
        return aggregate(views)

    eroded = shiftmin(binary, lambda v: np.minimum.reduce(v))
    return shiftmin(eroded, lambda v: np.maximum.reduce(v))


def label_components(binary: np.ndarray) -> list[np.ndarray]:
    """Cells of each 4-connected component, via two-pass union-find."""
    h, w = binary.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = [0]

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    next_label = 0
    for r in range(h):
        for c in range(w):
            if not binary[r, c]:
                continue
            up = labels[r - 1, c] if r else 0
            left = labels[r, c - 1] if c else 0
            if up and left:
                labels[r, c] = min(up, left)
                union(up, left)
            elif up or left:
                labels[r, c] = up or left
            else:
                next_label += 1
                parent.append(next_label)
                labels[r, c] = next_label
    groups: dict[int, list] = {}
    for r in range(h):
        for c in range(w):
            if labels[r, c]:
                groups.setdefault(find(labels[r, c]), []).append((r, c))
    return [np.array(cells) for _, cells in sorted(groups.items())]


def classify(cells_list, intensity: np.ndarray) -> list[str]:
    """white / yellow / other per component, after removing the frame's
    global intensity shift (estimated from the modal background value)."""
    counts = np.bincount(intensity.ravel(), minlength=256)
    shift = float(np.argmax(counts)) - REF_BACKGROUND
    out = []
    for cells in cells_list:
        mean = float(intensity[cells[:, 0], cells[:, 1]].mean())
        corrected = mean - shift
        d_white = abs(corrected - REF_WHITE)
        d_yellow = abs(corrected - REF_YELLOW)
        if min(d_white, d_yellow) > CLASS_TOLERANCE:
            out.append("other")
        elif d_white <= d_yellow:
            out.append("white")
        else:
            out.append("yellow")
    return out


def _cols_to_left_m(cols, width):
    cell_w = WINDOW_WIDTH_M / width
    return (width / 2.0 - cols - 0.5) * cell_w


def _rows_to_ahead_m(rows, height):
    cell_h = WINDOW_AHEAD_M / height
    return (height - rows - 0.5) * cell_h


def _tls_direction(us: np.ndarray, vs: np.ndarray) -> tuple[float, float]:
    """Principal direction of the point cloud, normalized to point ahead."""
    pts = np.stack([us - us.mean(), vs - vs.mean()])
    cov = pts @ pts.T
    eigvals, eigvecs = np.linalg.eigh(cov)
    du, dv = eigvecs[:, int(np.argmax(eigvals))]
    if dv < 0 or (dv == 0 and du < 0):
        du, dv = -du, -dv
    return float(du), float(dv)


def fit_guides(intensity: np.ndarray, crop_top: float = CROP_TOP_FRACTION) -> GuideFit:
    """Locate the yellow center line and the right lane's white edge and
    measure the lane's deviation from straight ahead."""
    height, width = intensity.shape
    cropped = intensity.copy()
    cropped[: int(round(height * crop_top)), :] = 0
    binary = (cropped > otsu(cropped)).astype(np.uint8)
    binary = open3x3(binary)
    components = label_components(binary)
    colors = classify(components, intensity)

    yellow_cells = [cells for cells, color in zip(components, colors) if color == "yellow"]
    white_cells = [cells for cells, color in zip(components, colors) if color == "white"]

    yellow_rows: dict[int, list] = {}
    for cells in yellow_cells:
        for r, c in cells:
            yellow_rows.setdefault(int(r), []).append(int(c))
    yellow_pts = np.array(
        [(r, float(np.mean(cs))) for r, cs in sorted(yellow_rows.items())]
    )
    yellow_visible = len(yellow_pts) >= 2

    if yellow_visible:
        centroids = [float(cells[:, 1].mean()) for cells in yellow_cells]
        col_bound = float(np.mean(centroids))
    else:
        col_bound = (width - 1) / 2.0
    white_rows: dict[int, list] = {}
    for cells in white_cells:
        for r, c in cells:
            if c > col_bound:
                white_rows.setdefault(int(r), []).append(int(c))
    white_pts = np.array(
        [(r, float(np.mean(cs))) for r, cs in sorted(white_rows.items())]
    )
    white_visible = len(white_pts) >= 2

    deviation = None
    dirs = []
    for pts, visible in ((white_pts, white_visible), (yellow_pts, yellow_visible)):
        if visible:
            us = _cols_to_left_m(pts[:, 1], width)
            vs = _rows_to_ahead_m(pts[:, 0], height)
            dirs.append(_tls_direction(us, vs))
    if dirs:
        du = sum(d[0] for d in dirs)
        dv = sum(d[1] for d in dirs)
        deviation = math.atan2(du, dv)
    return GuideFit(
        yellow_visible=yellow_visible,
        white_visible=white_visible,
        deviation_angle=deviation,
    )
