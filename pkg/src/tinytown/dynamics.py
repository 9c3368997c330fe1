"""Differential-drive robot state, wheel conversions, and exact unicycle integration."""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


@dataclass(frozen=True)
class RobotState:
    """Planar pose (x east, y north, theta CCW from +x) plus episode time."""

    x: float
    y: float
    theta: float
    t: float = 0.0


@dataclass(frozen=True)
class Command:
    """Linear velocity (m/s) and angular velocity (rad/s, CCW positive)."""

    v: float
    omega: float


NEUTRAL_COMMAND = Command(0.0, 0.0)


@dataclass(frozen=True)
class WheelCommand:
    """Left/right wheel surface speeds, m/s."""

    left: float
    right: float


@dataclass(frozen=True)
class KinematicParams:
    baseline: float = 0.1
    v_max: float = 0.8
    omega_max: float = 8.0
    wheel_max: float = 1.2
    gain_left: float = 1.0
    gain_right: float = 1.0

    def __post_init__(self) -> None:
        if self.baseline <= 0:
            raise ValueError("baseline must be positive")
        for g in (self.gain_left, self.gain_right):
            if not (0.0 < g <= 2.0):
                raise ValueError("wheel gains must lie in (0, 2]")


def clamp_command(cmd: Command, p: KinematicParams) -> Command:
    return Command(
        clamp(cmd.v, -p.v_max, p.v_max), clamp(cmd.omega, -p.omega_max, p.omega_max)
    )


def inverse_kinematics(cmd: Command, p: KinematicParams) -> WheelCommand:
    """Split a body twist into wheel speeds, compensating actuator gains."""
    left = (cmd.v - cmd.omega * p.baseline / 2.0) / p.gain_left
    right = (cmd.v + cmd.omega * p.baseline / 2.0) / p.gain_right
    return WheelCommand(
        clamp(left, -p.wheel_max, p.wheel_max), clamp(right, -p.wheel_max, p.wheel_max)
    )


def forward_kinematics(w: WheelCommand, p: KinematicParams) -> Command:
    """Body twist produced by wheel speeds under the actuator gains."""
    v = (p.gain_left * w.left + p.gain_right * w.right) / 2.0
    omega = (p.gain_right * w.right - p.gain_left * w.left) / p.baseline
    return Command(v, omega)


def _sinc(z: float) -> float:
    """sin(z)/z, stable through z = 0."""
    if abs(z) < 1e-4:
        z2 = z * z
        return 1.0 - z2 / 6.0 + z2 * z2 / 120.0
    return math.sin(z) / z


def step(state: RobotState, cmd: Command, dt: float) -> RobotState:
    """Integrate a constant twist exactly over dt seconds.

    Uses the mid-angle form of the circular-arc update,
    x' = x + v*dt*sinc(w*dt/2)*cos(theta + w*dt/2), which equals
    (v/w)*(sin(theta + w*dt) - sin(theta)) without the cancellation that
    amplifies rounding at small |w|, and degrades smoothly to the
    straight-line limit.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v, om, th = cmd.v, cmd.omega, state.theta
    half = om * dt / 2.0
    chord = v * dt * _sinc(half)
    x = state.x + chord * math.cos(th + half)
    y = state.y + chord * math.sin(th + half)
    return RobotState(x, y, wrap_angle(th + om * dt), state.t + dt)
