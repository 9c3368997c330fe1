import json
import re

import pytest

from tinytown.baselines import PurePursuitAgent
from tinytown.dynamics import Command
from tinytown.harness import InProcessAgent, TimingMode, run_episode
from tinytown.sim import EpisodeConfig, reset, step_episode
from tinytown.svgplot import emit_trajectory_svg
from tinytown.world import CANONICAL_RING_DOCUMENT, load_map


@pytest.fixture(scope="module")
def ring():
    return load_map(CANONICAL_RING_DOCUMENT)


def polyline_points(svg: str):
    pts = []
    for match in re.finditer(r'<polyline points="([^"]+)"', svg):
        for pair in match.group(1).split():
            x, y = pair.split(",")
            pts.append((float(x), float(y)))
    return pts


def run_lap_trajectory(ring):
    config = EpisodeConfig(map=ring, seed=1, max_duration=15.0)
    _run, traj = run_episode(
        InProcessAgent(PurePursuitAgent()), config, TimingMode()
    )
    return traj


class TestEmitTrajectorySvg:
    def test_oracle_lap_stays_in_band(self, ring):
        traj = run_lap_trajectory(ring)
        svg = emit_trajectory_svg(traj, ring)
        pts = polyline_points(svg)
        assert pts, "expected trajectory polylines"
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        size = 3 * 0.6 * 200  # map extent in px
        # closed curve spanning most of the map but inside it
        assert 0 <= min(xs) and max(xs) <= size
        assert 0 <= min(ys) and max(ys) <= size
        assert max(xs) - min(xs) > size * 0.5
        assert max(ys) - min(ys) > size * 0.5
        # the whole lap is in the right lane: one green polyline, no red
        assert svg.count("#c62828") == 0
        assert "#2e7d32" in svg

    def test_spin_in_place_degenerate_bbox(self, ring):
        config = EpisodeConfig(map=ring, seed=1, max_duration=3.0)
        sim = reset(config)
        while not sim.terminated:
            step_episode(sim, Command(0.0, 8.0))
        svg = emit_trajectory_svg(sim.trajectory, ring)
        pts = polyline_points(svg)
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        robot_diameter_px = 2 * 0.09 * 200
        assert max(xs) - min(xs) < robot_diameter_px
        assert max(ys) - min(ys) < robot_diameter_px

    def test_deterministic_bytes(self, ring):
        traj = run_lap_trajectory(ring)
        assert emit_trajectory_svg(traj, ring) == emit_trajectory_svg(traj, ring)

    def test_empty_trajectory_rejected(self, ring):
        config = EpisodeConfig(map=ring, seed=1)
        sim = reset(config)
        with pytest.raises(ValueError):
            emit_trajectory_svg(sim.trajectory, ring)

    def test_zone_coloring_split(self, ring):
        # drive straight off the road: polylines in more than one color
        config = EpisodeConfig(map=ring, seed=0, start_pose=(0.9, 0.15, 0.5))
        sim = reset(config)
        while not sim.terminated:
            step_episode(sim, Command(0.5, 0.0))
        svg = emit_trajectory_svg(sim.trajectory, ring)
        colors = {c for c in ("#2e7d32", "#ef6c00", "#c62828") if c in svg}
        assert len(colors) >= 2

    def test_markings_drawn(self, ring):
        traj = run_lap_trajectory(ring)
        svg = emit_trajectory_svg(traj, ring)
        assert "#e7c94c" in svg  # yellow center line
        assert "#eeeeee" in svg  # white edges
        assert svg.count("<path") >= 8  # corner arcs
