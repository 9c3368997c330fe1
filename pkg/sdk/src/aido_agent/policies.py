"""Example policies: random, constant, and the vision lane follower."""

from __future__ import annotations

import bisect
import random

from .session import Observation
from .vision import fit_guides

V_MAX = 0.8
OMEGA_MAX = 8.0

# published lookup-table behavior of the reference lane agent
LANE_BIN_EDGES = (-0.35, -0.1, 0.1, 0.35)
LANE_BIN_COMMANDS = ((0.2, -3.5), (0.35, -1.5), (0.5, 0.0), (0.35, 1.5), (0.2, 3.5))
LANE_FALLBACK = (0.1, -1.0)


def constant_policy(v: float = 0.2, omega: float = 0.0):
    def policy(obs: Observation):
        return v, omega

    return policy


def random_policy(seed: int = 0):
    rng = random.Random(seed)

    def policy(obs: Observation):
        return rng.uniform(0.0, V_MAX), rng.uniform(-OMEGA_MAX, OMEGA_MAX)

    return policy


def lane_policy():
    """Semantic-raster lane follower reproducing the reference lookup agent:
    bin the guide-line deviation angle, fall back to a gentle right drift
    when the yellow line is not visible, and stay neutral without a raster."""

    def policy(obs: Observation):
        if obs.semantic is None:
            return 0.0, 0.0
        fit = fit_guides(obs.semantic)
        if not fit.yellow_visible or fit.deviation_angle is None:
            return LANE_FALLBACK
        index = bisect.bisect_right(LANE_BIN_EDGES, fit.deviation_angle)
        return LANE_BIN_COMMANDS[index]

    return policy


POLICIES = {
    "constant": constant_policy,
    "random": random_policy,
    "lane": lane_policy,
}


def make_policy(name: str, **kwargs):
    try:
        return POLICIES[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; have {sorted(POLICIES)}") from None
