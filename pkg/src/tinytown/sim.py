"""Episode lifecycle: reset/step, termination events, observations, reward.

One SimState is single-threaded; distinct episodes are independent. Identical
(config, seed, action sequence) produce byte-identical trajectories.
"""

from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import dataclass, field

from .dynamics import (
    Command,
    KinematicParams,
    NEUTRAL_COMMAND,
    RobotState,
    clamp_command,
    forward_kinematics,
    inverse_kinematics,
    step,
    wrap_angle,
)
from .raster import RasterConfig, SemanticImage, render_semantic
from .world import (
    LanePolyline,
    LanePose,
    TileMap,
    ZONE_OFF_ROAD,
    classify_zone,
    lane_centerline,
    project_to_lane,
)

ROBOT_RADIUS = 0.09

EVENT_COLLISION = "collision"
EVENT_OFF_ROAD = "off_road"
EVENT_TIMEOUT = "timeout"
# precedence order for the terminal event when several fire on one step
EVENT_PRECEDENCE = (EVENT_COLLISION, EVENT_OFF_ROAD, EVENT_TIMEOUT)

OBS_GROUND_TRUTH = "ground_truth"
OBS_SEMANTIC = "semantic"

OBSTACLE_KINDS = ("cone", "divider", "parked_vehicle", "duckie")


class EpisodeTerminated(RuntimeError):
    """step_episode called after a terminal event."""


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    radius: float
    kind: str = "cone"

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")
        if self.kind not in OBSTACLE_KINDS:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")


_RANDOMIZATION_KEYS = (
    "wheel_gain_left",
    "wheel_gain_right",
    "action_delay_steps",
    "start_d_noise",
    "start_phi_noise",
    "label_intensity_jitter",
)

_RANDOMIZATION_DEFAULTS = {
    "wheel_gain_left": (1.0, 1.0),
    "wheel_gain_right": (1.0, 1.0),
    "action_delay_steps": (0, 0),
    "start_d_noise": (0.0, 0.0),
    "start_phi_noise": (0.0, 0.0),
    "label_intensity_jitter": (0.0, 0.0),
}


@dataclass(frozen=True)
class RandomizationConfig:
    """Per-parameter uniform ranges for seeded domain randomization."""

    wheel_gain_left: tuple[float, float] = (1.0, 1.0)
    wheel_gain_right: tuple[float, float] = (1.0, 1.0)
    action_delay_steps: tuple[int, int] = (0, 0)
    start_d_noise: tuple[float, float] = (0.0, 0.0)
    start_phi_noise: tuple[float, float] = (0.0, 0.0)
    label_intensity_jitter: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        for key in _RANDOMIZATION_KEYS:
            lo, hi = getattr(self, key)
            if lo > hi:
                raise ValueError(f"{key}: min must not exceed max")
        lo, hi = self.action_delay_steps
        if lo < 0 or lo != int(lo) or hi != int(hi):
            raise ValueError("action_delay_steps bounds must be integers >= 0")

    @classmethod
    def from_json(cls, obj: dict) -> "RandomizationConfig":
        if not isinstance(obj, dict):
            raise ValueError("randomization config must be a JSON object")
        unknown = set(obj) - set(_RANDOMIZATION_KEYS)
        if unknown:
            raise ValueError(f"unknown randomization keys: {sorted(unknown)}")
        kwargs = {}
        for key, spec in obj.items():
            if not isinstance(spec, dict) or set(spec) != {"min", "max"}:
                raise ValueError(f"{key}: expected {{'min': ..., 'max': ...}}")
            kwargs[key] = (spec["min"], spec["max"])
        return cls(**kwargs)

    def to_json(self) -> dict:
        return {
            key: {"min": getattr(self, key)[0], "max": getattr(self, key)[1]}
            for key in _RANDOMIZATION_KEYS
            if getattr(self, key) != _RANDOMIZATION_DEFAULTS[key]
        }

    def draw(self, rng: random.Random) -> "DrawnParams":
        """Draw all parameters in a fixed order.

        Every parameter consumes exactly one uniform draw so that narrowing
        one range never shifts the values drawn for the others.
        """
        gain_left = rng.uniform(*self.wheel_gain_left)
        gain_right = rng.uniform(*self.wheel_gain_right)
        lo, hi = self.action_delay_steps
        delay = min(int(rng.uniform(lo, hi + 1)), hi)
        start_d = rng.uniform(*self.start_d_noise)
        start_phi = rng.uniform(*self.start_phi_noise)
        jitter = rng.uniform(*self.label_intensity_jitter)
        return DrawnParams(
            wheel_gain_left=gain_left,
            wheel_gain_right=gain_right,
            action_delay_steps=delay,
            start_d_noise=start_d,
            start_phi_noise=start_phi,
            label_intensity_jitter=jitter,
        )


@dataclass(frozen=True)
class DrawnParams:
    wheel_gain_left: float
    wheel_gain_right: float
    action_delay_steps: int
    start_d_noise: float
    start_phi_noise: float
    label_intensity_jitter: float


@dataclass
class EpisodeConfig:
    map: TileMap
    max_duration: float = 60.0
    dt: float = 1.0 / 30.0
    obstacles: tuple[Obstacle, ...] = ()
    start_pose: tuple[float, float, float] | None = None
    seed: int = 0
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    observations: tuple[str, ...] = (OBS_GROUND_TRUTH,)
    kinematics: KinematicParams = field(default_factory=KinematicParams)
    raster: RasterConfig = field(default_factory=RasterConfig)

    def __post_init__(self) -> None:
        if self.max_duration <= 0:
            raise ValueError("max_duration must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for kind in self.observations:
            if kind not in (OBS_GROUND_TRUTH, OBS_SEMANTIC):
                raise ValueError(f"unknown observation kind {kind!r}")


@dataclass(frozen=True)
class EgoObstacle:
    ahead: float
    left: float
    radius: float
    kind: str


@dataclass(frozen=True)
class GroundTruth:
    pose: LanePose
    heading_dot: float  # cos(phi)
    lane_cross_sign: float  # sign of d
    obstacles: tuple[EgoObstacle, ...]


@dataclass(frozen=True)
class Observation:
    t: float
    ground_truth: GroundTruth | None
    semantic: SemanticImage | None


@dataclass(frozen=True)
class TrajectorySample:
    state: RobotState
    command: Command  # effective command after clamping and action delay
    zone: str
    pose: LanePose


@dataclass
class Trajectory:
    dt: float
    v_max: float
    max_duration: float
    start_state: RobotState
    start_pose: LanePose
    samples: list[TrajectorySample] = field(default_factory=list)

    def to_json(self) -> str:
        """Canonical serialization used by the determinism checks."""
        doc = {
            "dt": self.dt,
            "v_max": self.v_max,
            "max_duration": self.max_duration,
            "start": [self.start_state.x, self.start_state.y, self.start_state.theta],
            "samples": [
                {
                    "x": s.state.x,
                    "y": s.state.y,
                    "theta": s.state.theta,
                    "t": s.state.t,
                    "v": s.command.v,
                    "omega": s.command.omega,
                    "zone": s.zone,
                    "s": s.pose.s,
                    "d": s.pose.d,
                    "phi": s.pose.phi,
                }
                for s in self.samples
            ],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def check_collision(position, obstacles, robot_radius: float = ROBOT_RADIUS) -> bool:
    """True iff the robot disc strictly overlaps any obstacle disc."""
    x, y = float(position[0]), float(position[1])
    for obs in obstacles:
        if math.hypot(x - obs.x, y - obs.y) < robot_radius + obs.radius:
            return True
    return False


class SimState:
    """Mutable state of one running episode."""

    def __init__(self, config: EpisodeConfig, polyline: LanePolyline):
        self.config = config
        self.map = config.map
        self.polyline = polyline
        rng = random.Random(config.seed)
        self.drawn = config.randomization.draw(rng)
        self.params = KinematicParams(
            baseline=config.kinematics.baseline,
            v_max=config.kinematics.v_max,
            omega_max=config.kinematics.omega_max,
            wheel_max=config.kinematics.wheel_max,
            gain_left=self.drawn.wheel_gain_left,
            gain_right=self.drawn.wheel_gain_right,
        )
        self._nominal = config.kinematics

        if config.start_pose is not None:
            x, y, theta = config.start_pose
        else:
            origin = polyline.point_at(0.0)
            ahead = polyline.point_at(polyline.total_length / 1000.0)
            tangent = math.atan2(ahead[1] - origin[1], ahead[0] - origin[0])
            d0 = self.drawn.start_d_noise
            x = float(origin[0]) - math.sin(tangent) * d0
            y = float(origin[1]) + math.cos(tangent) * d0
            theta = wrap_angle(tangent + self.drawn.start_phi_noise)
        self.robot = RobotState(x, y, wrap_angle(theta), 0.0)
        self.last_pose = project_to_lane(
            polyline, (x, y), self.robot.theta, self.map.lane_half_width
        )
        zone = classify_zone(self.map, self.last_pose, (x, y))
        if zone == ZONE_OFF_ROAD:
            raise ValueError("start pose is off-road")
        self.last_zone = zone
        self.current_speed = 0.0
        self.step_count = 0
        self.n_steps = int(math.floor(config.max_duration / config.dt + 1e-9))
        self.action_queue: deque[Command] = deque(
            [NEUTRAL_COMMAND] * self.drawn.action_delay_steps
        )
        self.trajectory = Trajectory(
            dt=config.dt,
            v_max=config.kinematics.v_max,
            max_duration=config.max_duration,
            start_state=self.robot,
            start_pose=self.last_pose,
        )
        self.events: list[tuple[str, float]] = []
        self.terminated = False

    @property
    def terminal_event(self) -> str | None:
        if not self.events:
            return None
        first_t = self.events[0][1]
        same_step = [kind for kind, t in self.events if t == first_t]
        for kind in EVENT_PRECEDENCE:
            if kind in same_step:
                return kind
        return same_step[0]


def reset(config: EpisodeConfig) -> SimState:
    """Start an episode; deterministic per (config, seed)."""
    polyline = lane_centerline(config.map)
    return SimState(config, polyline)


def observe(sim: SimState) -> Observation:
    ground_truth = None
    semantic = None
    if OBS_GROUND_TRUTH in sim.config.observations:
        pose = sim.last_pose
        c, s = math.cos(sim.robot.theta), math.sin(sim.robot.theta)
        ego = []
        for obs in sim.config.obstacles:
            dx, dy = obs.x - sim.robot.x, obs.y - sim.robot.y
            ego.append(
                EgoObstacle(
                    ahead=c * dx + s * dy,
                    left=-s * dx + c * dy,
                    radius=obs.radius,
                    kind=obs.kind,
                )
            )
        ground_truth = GroundTruth(
            pose=pose,
            heading_dot=math.cos(pose.phi),
            lane_cross_sign=1.0 if pose.d >= 0 else -1.0,
            obstacles=tuple(ego),
        )
    if OBS_SEMANTIC in sim.config.observations:
        semantic = render_semantic(
            sim.map,
            sim.config.obstacles,
            sim.robot,
            sim.config.raster,
            intensity_jitter=sim.drawn.label_intensity_jitter,
        )
    return Observation(t=sim.robot.t, ground_truth=ground_truth, semantic=semantic)


def step_episode(sim: SimState, cmd: Command) -> tuple[Observation, list[str]]:
    """Advance one tick: delay queue, gain-perturbed kinematics, integration,
    zone/collision/timeout events. Termination is absorbing."""
    if sim.terminated:
        raise EpisodeTerminated("episode already terminated")
    sim.action_queue.append(clamp_command(cmd, sim._nominal))
    effective = sim.action_queue.popleft()
    # commands are split into wheel speeds assuming calibrated actuators; the
    # episode's drawn gains then decide what the wheels actually do
    wheels = inverse_kinematics(effective, sim._nominal)
    actual = forward_kinematics(wheels, sim.params)
    sim.robot = step(sim.robot, actual, sim.config.dt)
    sim.current_speed = actual.v
    sim.step_count += 1

    pos = (sim.robot.x, sim.robot.y)
    sim.last_pose = project_to_lane(
        sim.polyline, pos, sim.robot.theta, sim.map.lane_half_width
    )
    zone = classify_zone(sim.map, sim.last_pose, pos)
    sim.last_zone = zone

    events = []
    if check_collision(pos, sim.config.obstacles):
        events.append(EVENT_COLLISION)
    if zone == ZONE_OFF_ROAD:
        events.append(EVENT_OFF_ROAD)
    if sim.step_count >= sim.n_steps:
        events.append(EVENT_TIMEOUT)

    sim.trajectory.samples.append(
        TrajectorySample(state=sim.robot, command=effective, zone=zone, pose=sim.last_pose)
    )
    if events:
        t = sim.robot.t
        sim.events.extend((kind, t) for kind in events)
        sim.terminated = True
    return observe(sim), events


def compute_reward(sim: SimState) -> float:
    """Speed-projected progress reward: current speed times cos(phi)."""
    return sim.current_speed * math.cos(sim.last_pose.phi)
