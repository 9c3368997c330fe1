import math
import random

import numpy as np
import pytest

from tinytown.perception import (
    COLOR_OTHER,
    COLOR_WHITE,
    COLOR_YELLOW,
    binarize,
    classify_components,
    connected_components,
    crop_top,
    estimate_lane_error,
    fit_midline,
    intensity_histogram,
    morphology,
    opening,
    otsu_threshold,
    run_lane_pipeline,
)
from tinytown.raster import RasterConfig, SemanticImage, intensity_from_labels


def brute_force_otsu(hist) -> int:
    """Independent exhaustive search maximizing w0*w1*(mu0-mu1)^2 in floats."""
    total = float(sum(hist))
    best_t, best_score = 0, -1.0
    for t in range(256):
        w0 = float(sum(hist[: t + 1]))
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            score = 0.0
        else:
            mu0 = sum(i * hist[i] for i in range(t + 1)) / w0
            mu1 = sum(i * hist[i] for i in range(t + 1, 256)) / w1
            score = w0 * w1 * (mu0 - mu1) ** 2
        if score > best_score:
            best_score, best_t = score, t
    return best_t


class TestOtsu:
    def test_two_spikes(self):
        hist = [0] * 256
        hist[10] = 100
        hist[200] = 100
        assert otsu_threshold(hist) == 10  # smallest tie wins

    def test_degenerate_single_intensity(self):
        hist = [0] * 256
        hist[77] = 500
        assert otsu_threshold(hist) == 0

    def test_empty_histogram(self):
        with pytest.raises(ValueError):
            otsu_threshold([0] * 256)

    def test_matches_brute_force(self):
        rng = random.Random(13)
        for _ in range(100):
            hist = [0] * 256
            for _ in range(rng.randrange(2, 6)):
                center = rng.randrange(256)
                mass = rng.randrange(1, 500)
                hist[center] += mass
            assert otsu_threshold(hist) == brute_force_otsu(hist)

    def test_scaling_invariance(self):
        rng = random.Random(14)
        for _ in range(50):
            hist = [rng.randrange(0, 30) for _ in range(256)]
            if sum(hist) == 0:
                hist[5] = 1
            t = otsu_threshold(hist)
            assert otsu_threshold([h * 7 for h in hist]) == t


class TestMorphology:
    def test_erode_border_rule(self):
        img = np.ones((5, 5), dtype=np.uint8)
        out = morphology(img, "erode")
        expected = np.zeros((5, 5), dtype=np.uint8)
        expected[1:4, 1:4] = 1
        assert np.array_equal(out, expected)

    def test_dilate_single_cell(self):
        img = np.zeros((5, 5), dtype=np.uint8)
        img[2, 2] = 1
        out = morphology(img, "dilate")
        expected = np.zeros((5, 5), dtype=np.uint8)
        expected[1:4, 1:4] = 1
        assert np.array_equal(out, expected)

    def test_dilate_clips_at_border(self):
        img = np.zeros((4, 4), dtype=np.uint8)
        img[0, 0] = 1
        out = morphology(img, "dilate")
        assert out.sum() == 4

    def test_sandwich_property(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            img = (rng.random((16, 16)) < 0.4).astype(np.uint8)
            er = morphology(img, "erode")
            di = morphology(img, "dilate")
            assert np.all(er <= img)
            assert np.all(img <= di)

    def test_opening_anti_extensive(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            img = (rng.random((16, 16)) < 0.5).astype(np.uint8)
            assert np.all(opening(img) <= img)

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            morphology(np.zeros((2, 2), dtype=np.uint8), "open")


def flood_fill_partition(img):
    """Recursive-style flood fill oracle returning frozensets of cells."""
    h, w = img.shape
    seen = np.zeros_like(img, dtype=bool)
    parts = []
    for r in range(h):
        for c in range(w):
            if img[r, c] and not seen[r, c]:
                cells = set()
                stack = [(r, c)]
                seen[r, c] = True
                while stack:
                    rr, cc = stack.pop(0)  # BFS order, different from impl
                    cells.add((rr, cc))
                    for nr, nc in ((rr, cc - 1), (rr, cc + 1), (rr - 1, cc), (rr + 1, cc)):
                        if 0 <= nr < h and 0 <= nc < w and img[nr, nc] and not seen[nr, nc]:
                            seen[nr, nc] = True
                            stack.append((nr, nc))
                parts.append(frozenset(cells))
    return set(parts)


def labeling_partition(labeling):
    out = {}
    h, w = labeling.labels.shape
    for r in range(h):
        for c in range(w):
            lab = labeling.labels[r, c]
            if lab:
                out.setdefault(lab, set()).add((r, c))
    return {frozenset(v) for v in out.values()}


class TestConnectedComponents:
    def test_two_blocks(self):
        img = np.zeros((6, 6), dtype=np.uint8)
        img[0:2, 0:2] = 1
        img[4:6, 4:6] = 1
        lab = connected_components(img, img * 200)
        assert lab.count == 2
        assert sorted(c.area for c in lab.components) == [4, 4]

    def test_diagonal_not_connected(self):
        img = np.zeros((4, 4), dtype=np.uint8)
        img[0, 0] = 1
        img[1, 1] = 1
        lab = connected_components(img, img)
        assert lab.count == 2

    def test_raster_scan_order(self):
        img = np.zeros((3, 5), dtype=np.uint8)
        img[2, 0] = 1  # discovered second
        img[0, 4] = 1  # discovered first
        lab = connected_components(img, img)
        assert lab.labels[0, 4] == 1
        assert lab.labels[2, 0] == 2

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            connected_components(
                np.zeros((3, 3), dtype=np.uint8), np.zeros((4, 4), dtype=np.uint8)
            )

    def test_matches_flood_fill(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            img = (rng.random((16, 16)) < 0.45).astype(np.uint8)
            lab = connected_components(img, img * 100)
            assert labeling_partition(lab) == flood_fill_partition(img)
            assert sum(c.area for c in lab.components) == int(img.sum())

    def test_transpose_invariant_count(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            img = (rng.random((12, 9)) < 0.4).astype(np.uint8)
            a = connected_components(img, img)
            b = connected_components(img.T.copy(), img.T.copy())
            assert a.count == b.count


def make_labeling(cells_by_component, shape=(10, 10), colors=None):
    img = np.zeros(shape, dtype=np.uint8)
    source = np.full(shape, 20, dtype=np.uint8)
    for i, cells in enumerate(cells_by_component):
        for j, (r, c) in enumerate(cells):
            img[r, c] = 1
            source[r, c] = colors[i][j] if colors else 230
    return connected_components(img, source)


class TestClassifyComponents:
    def test_pure_white(self):
        lab = make_labeling([[(0, 0), (0, 1)]], colors=[[230, 230]])
        assert classify_components(lab) == [COLOR_WHITE]

    def test_pure_yellow(self):
        lab = make_labeling([[(0, 0), (0, 1)]], colors=[[180, 180]])
        assert classify_components(lab) == [COLOR_YELLOW]

    def test_uniform_jitter_cancels(self):
        cells = [[(0, 0), (0, 1), (5, 5)]]
        base = make_labeling(cells, colors=[[230, 230, 180]])
        img = np.zeros((10, 10), dtype=np.uint8)
        src = np.full((10, 10), 60, dtype=np.uint8)  # background 20 + 40
        for r, c in cells[0]:
            img[r, c] = 1
        for (r, c), v in zip(cells[0], [270, 270, 220]):
            src[r, c] = min(v, 255)
        jittered = connected_components(img, src)
        assert classify_components(base) == classify_components(jittered)

    def test_mixed_component_is_other(self):
        lab = make_labeling([[(0, 0), (0, 1)]], colors=[[230, 180]])
        assert classify_components(lab) == [COLOR_OTHER]

    def test_obstacle_intensity_is_other(self):
        lab = make_labeling([[(0, 0), (0, 1)]], colors=[[90, 90]])
        assert classify_components(lab) == [COLOR_OTHER]


def synth_semantic(width=64, height=48, lines=()):
    """Rasterize ideal guide lines: (class, u0_m, slope du/dv) tuples."""
    cfg = RasterConfig(width=width, height=height)
    labels = np.zeros((height, width), dtype=np.uint8)
    code = {"white": 1, "yellow": 2}
    for cls, u0, slope in lines:
        for r in range(height):
            v = cfg.ahead_of_row(r)
            u = u0 + slope * v
            col = cfg.width / 2.0 - 0.5 - u / cfg.cell_width
            c0 = int(round(col))
            for c in (c0 - 1, c0, c0 + 1):
                if 0 <= c < width:
                    labels[r, c] = code[cls]
    return SemanticImage(
        width=width,
        height=height,
        labels=labels,
        intensity=intensity_from_labels(labels),
    )


class TestFitMidline:
    def test_vertical_symmetric_zero(self):
        img = synth_semantic(lines=[("yellow", 0.15, 0.0), ("white", -0.075, 0.0)])
        fit = run_lane_pipeline(img, crop_fraction=0.0)
        assert fit.white_visible and fit.yellow_visible
        assert fit.deviation_angle == pytest.approx(0.0, abs=1e-9)

    def test_tilted_lines(self):
        slope = math.tan(math.radians(10))
        img = synth_semantic(
            lines=[("yellow", 0.15, slope), ("white", -0.075, slope)]
        )
        fit = run_lane_pipeline(img, crop_fraction=0.0)
        assert fit.deviation_angle == pytest.approx(math.radians(10), abs=0.02)

    def test_mirror_oddness(self):
        slope = 0.2
        img = synth_semantic(lines=[("yellow", 0.15, slope), ("white", -0.075, slope)])
        mirrored = SemanticImage(
            width=img.width,
            height=img.height,
            labels=img.labels[:, ::-1].copy(),
            intensity=img.intensity[:, ::-1].copy(),
        )
        a = run_lane_pipeline(img, crop_fraction=0.0)
        b = run_lane_pipeline(mirrored, crop_fraction=0.0)
        assert a.deviation_angle == pytest.approx(-b.deviation_angle, abs=1e-6)

    def test_yellow_missing_flag(self):
        img = synth_semantic(lines=[("white", -0.075, 0.0)])
        fit = run_lane_pipeline(img, crop_fraction=0.0)
        assert not fit.yellow_visible
        assert fit.white_visible

    def test_intersection_of_tilted_lines(self):
        # converging guides meet well beyond the top of the frame
        img = synth_semantic(lines=[("yellow", 0.15, -0.03), ("white", -0.15, 0.03)])
        fit = run_lane_pipeline(img, crop_fraction=0.0)
        assert fit.white_visible and fit.yellow_visible
        assert fit.intersection is not None
        col, row = fit.intersection
        assert row < 0  # above the image, toward the horizon


class TestEstimateLaneError:
    def test_centered_zero(self):
        img = synth_semantic(lines=[("yellow", 0.15, 0.0), ("white", -0.075, 0.0)])
        fit = run_lane_pipeline(img, crop_fraction=0.0)
        assert estimate_lane_error(fit) == pytest.approx(0.0, abs=0.02)

    def test_offset_error_opposes(self):
        # robot 0.05 left of center: guides shift right by 0.05
        img = synth_semantic(lines=[("yellow", 0.10, 0.0), ("white", -0.125, 0.0)])
        fit = run_lane_pipeline(img, crop_fraction=0.0)
        assert estimate_lane_error(fit) == pytest.approx(-0.05, abs=0.02)

    def test_white_only_fallback(self):
        img = synth_semantic(lines=[("white", -0.075, 0.0)])
        fit = run_lane_pipeline(img, crop_fraction=0.0)
        assert estimate_lane_error(fit) == pytest.approx(0.0, abs=0.02)

    def test_blank_raster_no_estimate(self):
        img = synth_semantic(lines=[])
        fit = run_lane_pipeline(img)
        assert estimate_lane_error(fit) is None


@pytest.fixture(scope="module")
def corridor():
    from tinytown.world import Tile, TileKind, TileMap

    grid = tuple((Tile(TileKind.STRAIGHT, "N"),) for _ in range(8))
    return TileMap(grid)


class TestRenderedPipeline:

    def render(self, corridor, d=0.0, phi=0.0, jitter=0.0):
        from tinytown.dynamics import RobotState
        from tinytown.raster import render_semantic

        st = RobotState(0.45 - d, 2.0, math.pi / 2 + phi)
        return render_semantic(corridor, [], st, intensity_jitter=jitter)

    def test_deviation_tracks_heading_error(self, corridor):
        fit = run_lane_pipeline(self.render(corridor, phi=0.2))
        assert fit.deviation_angle == pytest.approx(-0.2, abs=0.05)

    def test_lane_error_round_trip(self, corridor):
        e0 = estimate_lane_error(run_lane_pipeline(self.render(corridor)))
        assert e0 == pytest.approx(0.0, abs=0.02)
        e = estimate_lane_error(run_lane_pipeline(self.render(corridor, d=0.05)))
        assert e == pytest.approx(-0.05, abs=0.02)

    def test_jitter_does_not_change_fit(self, corridor):
        f0 = run_lane_pipeline(self.render(corridor))
        f40 = run_lane_pipeline(self.render(corridor, jitter=40.0))
        assert f0.deviation_angle == pytest.approx(f40.deviation_angle, abs=1e-12)

    def test_crop_top_blanks_rows(self):
        gray = np.full((8, 4), 100, dtype=np.uint8)
        out = crop_top(gray, 0.25)
        assert np.all(out[:2] == 0)
        assert np.all(out[2:] == 100)


def test_histogram_shape():
    gray = np.array([[0, 255], [20, 20]], dtype=np.uint8)
    h = intensity_histogram(gray)
    assert h.shape == (256,)
    assert h[20] == 2 and h[0] == 1 and h[255] == 1


def test_binarize_strict_greater():
    gray = np.array([[10, 11]], dtype=np.uint8)
    assert binarize(gray, 10).tolist() == [[0, 1]]
