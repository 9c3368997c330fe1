"""Finalist control strategies as pluggable agents.

Four controllers: pure pursuit over ground-truth lane pose, a lookup-table
heading controller fed by the marking pipeline, a PID lane controller on the
pipeline's lateral error, and a heading-alignment proportional controller.
"""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass

from .dynamics import Command, KinematicParams, clamp_command, wrap_angle
from .perception import LineFit, estimate_lane_error, run_lane_pipeline
from .raster import RasterConfig
from .sim import Observation
from .world import LanePolyline, LanePose, lane_centerline, map_from_document

DEFAULT_KINEMATICS = KinematicParams()


@dataclass(frozen=True)
class PurePursuitParams:
    lookahead: float = 0.25
    v_cruise: float = 0.5

    def __post_init__(self) -> None:
        if self.lookahead <= 0:
            raise ValueError("lookahead must be positive")


def pure_pursuit(
    pose: LanePose,
    polyline: LanePolyline,
    params: PurePursuitParams = PurePursuitParams(),
    kin: KinematicParams = DEFAULT_KINEMATICS,
) -> Command:
    """Arc toward the centerline point one lookahead ahead of the robot.

    The robot pose is reconstructed from its lane pose; speed backs off with
    the bearing to the target: v = v_cruise * max(0.3, cos(alpha)).
    """
    here = polyline.point_at(pose.s)
    ahead = polyline.point_at(pose.s + polyline.total_length / 2000.0)
    tangent = math.atan2(ahead[1] - here[1], ahead[0] - here[0])
    x = float(here[0]) - math.sin(tangent) * pose.d
    y = float(here[1]) + math.cos(tangent) * pose.d
    heading = tangent + pose.phi
    target = polyline.point_at(pose.s + params.lookahead)
    alpha = wrap_angle(math.atan2(target[1] - y, target[0] - x) - heading)
    v = params.v_cruise * max(0.3, math.cos(alpha))
    omega = 2.0 * v * math.sin(alpha) / params.lookahead
    return clamp_command(Command(v, omega), kin)


@dataclass(frozen=True)
class LookupTable:
    """Angle-binned (v, omega) entries over (-pi/2, pi/2) plus a fallback for
    frames where the yellow guide is not visible."""

    edges: tuple[float, ...]
    entries: tuple[Command, ...]
    fallback: Command

    def __post_init__(self) -> None:
        if len(self.entries) != len(self.edges) + 1:
            raise ValueError("need one entry per bin")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("bin edges must increase")

    def entry_for(self, deviation: float) -> Command:
        return self.entries[bisect.bisect_right(self.edges, deviation)]


def default_lookup_table() -> LookupTable:
    """Frozen default table; speed decreases with deviation magnitude."""
    return LookupTable(
        edges=(-0.35, -0.1, 0.1, 0.35),
        entries=(
            Command(0.2, -3.5),
            Command(0.35, -1.5),
            Command(0.5, 0.0),
            Command(0.35, 1.5),
            Command(0.2, 3.5),
        ),
        fallback=Command(0.1, -1.0),
    )


def lookup_controller(
    fit: LineFit,
    table: LookupTable | None = None,
    kin: KinematicParams = DEFAULT_KINEMATICS,
) -> Command:
    """Preset command for the deviation-angle bin; drift gently right when
    the yellow line is not visible."""
    table = table or default_lookup_table()
    if not fit.yellow_visible or fit.deviation_angle is None:
        return clamp_command(table.fallback, kin)
    return clamp_command(table.entry_for(fit.deviation_angle), kin)


@dataclass
class PidParams:
    """PID gains plus controller state (integral, previous error)."""

    kp: float = 10.0
    ki: float = 0.5
    kd: float = 10.0
    setpoint_d: float = 0.0
    i_max: float = 1.0
    v_cruise: float = 0.3
    integral: float = 0.0
    prev_error: float | None = None

    def reset(self) -> None:
        self.integral = 0.0
        self.prev_error = None


def pid_controller(
    e: float, state: PidParams, dt: float, kin: KinematicParams = DEFAULT_KINEMATICS
) -> Command:
    """PID on the lateral error; integral clamped, derivative from the
    stored previous error."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    err = e - state.setpoint_d
    state.integral = min(max(state.integral + err * dt, -state.i_max), state.i_max)
    derivative = 0.0 if state.prev_error is None else (err - state.prev_error) / dt
    state.prev_error = err
    omega = state.kp * err + state.ki * state.integral + state.kd * derivative
    return clamp_command(Command(state.v_cruise, omega), kin)


def heading_alignment_controller(
    heading_dot: float,
    cross_sign: float,
    kp: float,
    v_max: float = 0.5,
    kin: KinematicParams = DEFAULT_KINEMATICS,
) -> Command:
    """Proportional push of the heading/lane dot product toward one at full
    speed; cross_sign (the sign of the heading error) picks the turn side."""
    omega = -kp * (1.0 - heading_dot) * cross_sign
    return clamp_command(Command(v_max, omega), kin)


class Agent:
    """Per-episode stateful policy: begin_episode then act per observation."""

    name = "agent"

    def begin_episode(self, map_document: dict, seed: int, dt: float) -> None:
        pass

    def act(self, obs: Observation) -> Command:
        raise NotImplementedError


class PurePursuitAgent(Agent):
    name = "pure_pursuit"

    def __init__(self, params: PurePursuitParams = PurePursuitParams()):
        self.params = params
        self.polyline: LanePolyline | None = None

    def begin_episode(self, map_document: dict, seed: int, dt: float) -> None:
        self.polyline = lane_centerline(map_from_document(map_document))

    def act(self, obs: Observation) -> Command:
        if obs.ground_truth is None or self.polyline is None:
            return Command(0.0, 0.0)
        return pure_pursuit(obs.ground_truth.pose, self.polyline, self.params)


class LookupAgent(Agent):
    """Marking-pipeline agent: raster -> line fit -> lookup table."""

    name = "lookup"

    def __init__(self, table: LookupTable | None = None, crop_fraction: float = 0.5):
        self.table = table or default_lookup_table()
        self.crop_fraction = crop_fraction
        self.raster = RasterConfig()

    def act(self, obs: Observation) -> Command:
        if obs.semantic is None:
            return self.table.fallback
        fit = run_lane_pipeline(obs.semantic, self.raster, self.crop_fraction)
        return lookup_controller(fit, self.table)


class PidAgent(Agent):
    """Marking-pipeline agent: raster -> lateral error -> PID."""

    name = "pid"

    def __init__(self, params: PidParams | None = None, crop_fraction: float = 0.5):
        self.params = params or PidParams()
        self.crop_fraction = crop_fraction
        self.raster = RasterConfig()
        self._last = Command(self.params.v_cruise, 0.0)
        self._dt = 1.0 / 30.0

    def begin_episode(self, map_document: dict, seed: int, dt: float) -> None:
        self.params.reset()
        self._last = Command(self.params.v_cruise, 0.0)
        self._dt = dt

    def act(self, obs: Observation) -> Command:
        if obs.semantic is None:
            return self._last
        fit = run_lane_pipeline(obs.semantic, self.raster, self.crop_fraction)
        e = estimate_lane_error(fit, self.raster)
        if e is None:
            return self._last
        self._last = pid_controller(e, self.params, self._dt)
        return self._last


class HeadingAgent(Agent):
    """Heading-alignment agent; a small lateral blend keeps the quadratic
    alignment term from drifting across the lane on curves."""

    name = "heading"

    def __init__(self, kp: float = 60.0, d_gain: float = 4.0, v_max: float = 0.5):
        self.kp = kp
        self.d_gain = d_gain
        self.v_max = v_max

    def act(self, obs: Observation) -> Command:
        if obs.ground_truth is None:
            return Command(0.0, 0.0)
        pose = obs.ground_truth.pose
        phi_eff = wrap_angle(pose.phi + math.atan(self.d_gain * pose.d))
        return heading_alignment_controller(
            math.cos(phi_eff),
            1.0 if phi_eff >= 0 else -1.0,
            self.kp,
            self.v_max,
        )


class ConstantAgent(Agent):
    name = "constant"

    def __init__(self, v: float = 0.2, omega: float = 0.0):
        self.command = Command(v, omega)

    def act(self, obs: Observation) -> Command:
        return self.command


class RandomAgent(Agent):
    name = "random"

    def __init__(self, seed: int = 0, kin: KinematicParams = DEFAULT_KINEMATICS):
        self.seed = seed
        self.kin = kin
        self._rng = random.Random(seed)

    def begin_episode(self, map_document: dict, seed: int, dt: float) -> None:
        self._rng = random.Random((self.seed << 32) ^ seed)

    def act(self, obs: Observation) -> Command:
        return Command(
            self._rng.uniform(0.0, self.kin.v_max),
            self._rng.uniform(-self.kin.omega_max, self.kin.omega_max),
        )


class ScriptedAgent(Agent):
    """Plays a fixed action list, then holds the neutral command."""

    name = "scripted"

    def __init__(self, actions):
        self.actions = [Command(v, om) for v, om in actions]
        self._i = 0

    def begin_episode(self, map_document: dict, seed: int, dt: float) -> None:
        self._i = 0

    def act(self, obs: Observation) -> Command:
        if self._i < len(self.actions):
            cmd = self.actions[self._i]
            self._i += 1
            return cmd
        return Command(0.0, 0.0)


BUILTIN_AGENTS = {
    "pure_pursuit": PurePursuitAgent,
    "lookup": LookupAgent,
    "pid": PidAgent,
    "heading": HeadingAgent,
    "constant": ConstantAgent,
    "random": RandomAgent,
}


def make_builtin(name: str) -> Agent:
    """Instantiate a builtin agent from a name or 'builtin:<name>' spec."""
    if name.startswith("builtin:"):
        name = name[len("builtin:") :]
    try:
        return BUILTIN_AGENTS[name]()
    except KeyError:
        raise ValueError(
            f"unknown builtin agent {name!r}; have {sorted(BUILTIN_AGENTS)}"
        ) from None


def observation_kinds_for(agent: Agent) -> tuple[str, ...]:
    """Observation kinds a builtin needs; perception agents want rasters."""
    if isinstance(agent, (LookupAgent, PidAgent)):
        return ("semantic",)
    return ("ground_truth",)
