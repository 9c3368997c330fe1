"""Image-processing primitives for the lane-marking pipelines.

Grayscale rasters are plain uint8 numpy arrays; binary images are uint8
arrays of {0, 1}. All operations are deterministic: smallest-threshold tie
break for Otsu, raster-scan component discovery order, 4-connectivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import RasterConfig, SemanticImage

COLOR_WHITE = "white"
COLOR_YELLOW = "yellow"
COLOR_OTHER = "other"

# reference intensities at zero jitter (see raster.LABEL_GRAY)
REF_WHITE = 230.0
REF_YELLOW = 180.0
REF_BACKGROUND = 20.0
CLASS_TOLERANCE = 15.0

DEFAULT_CROP_TOP = 0.25


def intensity_histogram(gray: np.ndarray) -> np.ndarray:
    """256-bin histogram of a grayscale image."""
    return np.bincount(gray.ravel().astype(np.int64), minlength=256)[:256]


def otsu_threshold(hist) -> int:
    """Threshold maximizing the between-class variance; ties take the
    smallest threshold. Class 0 is intensities <= t.

    Computed in exact integer arithmetic so the argmax is invariant to
    scaling the histogram by any positive integer factor.
    """
    hist = [int(h) for h in hist]
    if len(hist) != 256:
        raise ValueError("histogram must have 256 bins")
    total = sum(hist)
    if total <= 0:
        raise ValueError("histogram is empty")
    total_sum = sum(i * h for i, h in enumerate(hist))
    best_t = 0
    best_num = 0  # score = num / den with den > 0; compare via cross products
    best_den = 1
    w0 = 0
    s0 = 0
    for t in range(256):
        w0 += hist[t]
        s0 += t * hist[t]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        s1 = total_sum - s0
        num = (s0 * w1 - s1 * w0) ** 2
        den = w0 * w1
        if num * best_den > best_num * den:
            best_num, best_den, best_t = num, den, t
    return best_t


def binarize(gray: np.ndarray, threshold: int) -> np.ndarray:
    return (gray > threshold).astype(np.uint8)


def morphology(img: np.ndarray, op: str) -> np.ndarray:
    """3x3 full-kernel erode/dilate; out-of-bounds neighbors count as 0."""
    if op not in ("erode", "dilate"):
        raise ValueError(f"unknown morphology op {op!r}")
    padded = np.zeros((img.shape[0] + 2, img.shape[1] + 2), dtype=np.uint8)
    padded[1:-1, 1:-1] = img
    stack = np.stack(
        [
            padded[i : i + img.shape[0], j : j + img.shape[1]]
            for i in range(3)
            for j in range(3)
        ]
    )
    if op == "erode":
        return stack.min(axis=0)
    return stack.max(axis=0)


def opening(img: np.ndarray) -> np.ndarray:
    """Erode then dilate; anti-extensive (never adds cells)."""
    return morphology(morphology(img, "erode"), "dilate")


@dataclass
class ComponentStats:
    label: int
    area: int
    centroid_row: float
    centroid_col: float
    mean_color: float


@dataclass(eq=False)
class ComponentLabeling:
    labels: np.ndarray  # (H, W) int32, 0 = background
    count: int
    components: list[ComponentStats]
    frame_mean: float
    frame_mode: float


def connected_components(img: np.ndarray, source: np.ndarray) -> ComponentLabeling:
    """4-connected components, ids assigned in raster-scan discovery order.

    `source` supplies per-cell intensities for the component color means and
    must share the binary image's dimensions.
    """
    if img.shape != source.shape:
        raise ValueError("binary image and source must share dimensions")
    h, w = img.shape
    labels = np.zeros((h, w), dtype=np.int32)
    comps: list[ComponentStats] = []
    fg = img != 0
    next_id = 0
    for r0 in range(h):
        for c0 in range(w):
            if not fg[r0, c0] or labels[r0, c0]:
                continue
            next_id += 1
            queue = [(r0, c0)]
            labels[r0, c0] = next_id
            cells = []
            while queue:
                r, c = queue.pop()
                cells.append((r, c))
                for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= nr < h and 0 <= nc < w and fg[nr, nc] and not labels[nr, nc]:
                        labels[nr, nc] = next_id
                        queue.append((nr, nc))
            rows = np.array([c[0] for c in cells], dtype=np.float64)
            cols = np.array([c[1] for c in cells], dtype=np.float64)
            colors = source[rows.astype(np.int64), cols.astype(np.int64)]
            comps.append(
                ComponentStats(
                    label=next_id,
                    area=len(cells),
                    centroid_row=float(rows.mean()),
                    centroid_col=float(cols.mean()),
                    mean_color=float(np.asarray(colors, dtype=np.float64).mean()),
                )
            )
    counts = np.bincount(np.asarray(source, dtype=np.int64).ravel(), minlength=256)
    return ComponentLabeling(
        labels=labels,
        count=next_id,
        components=comps,
        frame_mean=float(np.asarray(source, dtype=np.float64).mean()),
        frame_mode=float(np.argmax(counts)),
    )


def classify_components(labeling: ComponentLabeling) -> list[str]:
    """Nearest-centroid white/yellow classification of component colors.

    The global intensity shift of the frame is estimated from its modal
    (background) intensity and subtracted first, which cancels uniform
    intensity jitter regardless of how much road marking is in view.
    """
    shift = labeling.frame_mode - REF_BACKGROUND
    out = []
    for comp in labeling.components:
        color = comp.mean_color - shift
        d_white = abs(color - REF_WHITE)
        d_yellow = abs(color - REF_YELLOW)
        if min(d_white, d_yellow) > CLASS_TOLERANCE:
            out.append(COLOR_OTHER)
        elif d_white <= d_yellow:
            out.append(COLOR_WHITE)
        else:
            out.append(COLOR_YELLOW)
    return out


@dataclass
class LineFit:
    """TLS line fits through per-row white/yellow midpoints, in metric ego
    coordinates (u = leftward offset, v = distance ahead)."""

    white_visible: bool
    yellow_visible: bool
    white_point: tuple[float, float] | None
    white_dir: tuple[float, float] | None
    yellow_point: tuple[float, float] | None
    yellow_dir: tuple[float, float] | None
    intersection: tuple[float, float] | None  # (col, row) cell coordinates
    deviation_angle: float | None  # rad from image vertical, left positive


def _tls_line(us: np.ndarray, vs: np.ndarray):
    """Total-least-squares line; direction normalized to point up (dv > 0)."""
    mu, mv = float(us.mean()), float(vs.mean())
    du = us - mu
    dv = vs - mv
    sxx = float(du @ du)
    syy = float(dv @ dv)
    sxy = float(du @ dv)
    ang = 0.5 * math.atan2(2.0 * sxy, sxx - syy)
    dir_u, dir_v = math.cos(ang), math.sin(ang)
    if dir_v < 0 or (dir_v == 0 and dir_u < 0):
        dir_u, dir_v = -dir_u, -dir_v
    return (mu, mv), (dir_u, dir_v)


def _row_midpoints(labeling, classes, wanted, col_bound=None):
    """Per-row mean column of cells belonging to `wanted` components.

    `col_bound` restricts to cells right of the bound (larger columns),
    which selects the right lane's white edge over the far road edge.
    """
    ids = [c.label for c, cls in zip(labeling.components, classes) if cls == wanted]
    if not ids:
        return np.zeros((0, 2))
    mask = np.isin(labeling.labels, ids)
    if col_bound is not None:
        cols = np.arange(labeling.labels.shape[1])
        mask &= cols[None, :] > col_bound
    out = []
    for r in range(mask.shape[0]):
        cs = np.flatnonzero(mask[r])
        if cs.size:
            out.append((r, float(cs.mean())))
    return np.array(out, dtype=np.float64)


def fit_midline(
    labeling: ComponentLabeling, classes: list[str], cfg: RasterConfig | None = None
) -> LineFit:
    """Fit lines through per-row midpoints of the right lane's guides.

    The yellow center line bounds the right lane on the left and the nearest
    white edge right of it bounds it on the right; their midline's deviation
    from image vertical is the pipeline's steering signal.
    """
    cfg = cfg or RasterConfig()
    yellow_pts = _row_midpoints(labeling, classes, COLOR_YELLOW)
    yellow_visible = len(yellow_pts) >= 2
    if yellow_visible:
        yellow_mean_col = float(
            np.mean(
                [
                    c.centroid_col
                    for c, cls in zip(labeling.components, classes)
                    if cls == COLOR_YELLOW
                ]
            )
        )
        col_bound = yellow_mean_col
    else:
        col_bound = (cfg.width - 1) / 2.0
    white_pts = _row_midpoints(labeling, classes, COLOR_WHITE, col_bound=col_bound)
    white_visible = len(white_pts) >= 2

    def to_metric(pts):
        us = np.array([cfg.lateral_of_col(c) for _, c in pts])
        vs = np.array([cfg.ahead_of_row(r) for r, _ in pts])
        return us, vs

    white_line = _tls_line(*to_metric(white_pts)) if white_visible else None
    yellow_line = _tls_line(*to_metric(yellow_pts)) if yellow_visible else None

    deviation = None
    if white_line and yellow_line:
        du = white_line[1][0] + yellow_line[1][0]
        dv = white_line[1][1] + yellow_line[1][1]
        deviation = math.atan2(du, dv)
    elif white_line or yellow_line:
        line = white_line or yellow_line
        deviation = math.atan2(line[1][0], line[1][1])

    intersection = None
    if white_line and yellow_line:
        (pu1, pv1), (du1, dv1) = white_line
        (pu2, pv2), (du2, dv2) = yellow_line
        det = du1 * dv2 - dv1 * du2
        if abs(det) > 1e-12:
            a = ((pu2 - pu1) * dv2 - (pv2 - pv1) * du2) / det
            ui, vi = pu1 + a * du1, pv1 + a * dv1
            col = cfg.width / 2.0 - 0.5 - ui / cfg.cell_width
            row = cfg.height - 0.5 - vi / cfg.cell_height
            intersection = (col, row)

    return LineFit(
        white_visible=white_visible,
        yellow_visible=yellow_visible,
        white_point=white_line[0] if white_line else None,
        white_dir=white_line[1] if white_line else None,
        yellow_point=yellow_line[0] if yellow_line else None,
        yellow_dir=yellow_line[1] if yellow_line else None,
        intersection=intersection,
        deviation_angle=deviation,
    )


def estimate_lane_error(
    fit: LineFit,
    cfg: RasterConfig | None = None,
    lane_half_width: float = 0.075,
    lane_offset: float = 0.15,
) -> float | None:
    """Signed lateral offset (m, left positive) of the right-lane center at
    the bottom of the raster; None when no guide line is visible.

    The guides are not symmetric around the lane center (the yellow line
    sits at the road axis, lane_offset away; the white edge sits
    lane_half_width away), so the guide midpoint is referenced against its
    centered-pose position.
    """
    cfg = cfg or RasterConfig()
    v_ref = 0.5 * cfg.cell_height

    def u_at(line_point, line_dir):
        (pu, pv), (du, dv) = line_point, line_dir
        if abs(dv) < 1e-12:
            return pu
        return pu + du * (v_ref - pv) / dv

    if fit.white_visible and fit.yellow_visible:
        uw = u_at(fit.white_point, fit.white_dir)
        uy = u_at(fit.yellow_point, fit.yellow_dir)
        return (uw + uy) / 2.0 - (lane_offset - lane_half_width) / 2.0
    if fit.white_visible:
        return u_at(fit.white_point, fit.white_dir) + lane_half_width
    if fit.yellow_visible:
        return u_at(fit.yellow_point, fit.yellow_dir) - lane_offset
    return None


def crop_top(gray: np.ndarray, fraction: float = DEFAULT_CROP_TOP) -> np.ndarray:
    """Blank the far (top) rows of the raster; the row geometry is kept so
    downstream coordinates stay aligned."""
    out = gray.copy()
    out[: int(round(gray.shape[0] * fraction)), :] = 0
    return out


def run_lane_pipeline(
    semantic: SemanticImage,
    cfg: RasterConfig | None = None,
    crop_fraction: float = DEFAULT_CROP_TOP,
) -> LineFit:
    """Full marking pipeline: gray -> Otsu -> open -> components -> colors
    -> midline fit."""
    cfg = cfg or RasterConfig()
    cropped = crop_top(semantic.intensity, crop_fraction)
    hist = intensity_histogram(cropped)
    binary = binarize(cropped, otsu_threshold(hist))
    binary = opening(binary)
    # colors and the normalization anchor come from the uncropped frame so a
    # uniform jitter shifts the frame mean by exactly the jitter amount
    labeling = connected_components(binary, semantic.intensity)
    classes = classify_components(labeling)
    return fit_midline(labeling, classes, cfg)
