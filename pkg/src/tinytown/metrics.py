"""Competition scoring: progress distance, survival, lateral deviation,
infraction time, median aggregation, and the ranking order.

Progress is gated to defeat the known metric exploits: spinning in place and
driving the opposite lane both score zero distance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .sim import EVENT_PRECEDENCE, Trajectory
from .world import LanePolyline, ZONE_RIGHT_LANE

PROGRESS_CAP_FACTOR = 1.5
DEFAULT_LANE_HALF_WIDTH = 0.075


@dataclass(frozen=True)
class RunMetrics:
    distance: float
    survival: float
    lateral_median: float
    infraction_time: float
    terminal_event: str | None = None

    def to_record(self) -> dict:
        return {
            "distance_m": self.distance,
            "survival_s": self.survival,
            "lateral_m": self.lateral_median,
            "infraction_s": self.infraction_time,
            "terminal_event": self.terminal_event,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RunMetrics":
        return cls(
            distance=rec["distance_m"],
            survival=rec["survival_s"],
            lateral_median=rec["lateral_m"],
            infraction_time=rec["infraction_s"],
            terminal_event=rec.get("terminal_event"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class SubmissionScore:
    distance: float
    survival: float
    lateral_median: float
    infraction_time: float
    runs: int

    def to_record(self, submission_id: str | None = None) -> dict:
        rec = {
            "distance_m": self.distance,
            "survival_s": self.survival,
            "lateral_m": self.lateral_median,
            "infraction_s": self.infraction_time,
            "runs": self.runs,
        }
        if submission_id is not None:
            rec = {"id": submission_id, **rec}
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "SubmissionScore":
        return cls(
            distance=rec["distance_m"],
            survival=rec["survival_s"],
            lateral_median=rec["lateral_m"],
            infraction_time=rec["infraction_s"],
            runs=rec["runs"],
        )

    def to_json(self, submission_id: str | None = None) -> str:
        return json.dumps(
            self.to_record(submission_id), sort_keys=True, separators=(",", ":")
        )


@dataclass(frozen=True)
class FinalsRecord:
    """Live-finals style record: tiles traversed and seconds survived."""

    distance: float
    survival: float


def lower_median(values) -> float:
    """Median with the deterministic lower-middle convention for even counts."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("median of empty sequence")
    return ordered[(len(ordered) - 1) // 2]


def accumulate_progress(traj: Trajectory, polyline: LanePolyline) -> float:
    """Distance traveled along the lane, counted only while driving the right
    lane forward.

    A step's arclength increment counts only when the step ends in the right
    lane, heading within 90 degrees of the lane direction, and the increment
    is positive and physically plausible (at most v_max * dt * 1.5). Spinning
    in place, reversing, and opposite-lane driving all contribute zero.
    """
    total = polyline.total_length
    cap = traj.v_max * traj.dt * PROGRESS_CAP_FACTOR
    distance = 0.0
    prev_s = traj.start_pose.s
    for sample in traj.samples:
        ds = sample.pose.s - prev_s
        if ds < -total / 2.0:
            ds += total
        elif ds > total / 2.0:
            ds -= total
        prev_s = sample.pose.s
        if (
            sample.zone == ZONE_RIGHT_LANE
            and abs(sample.pose.phi) < math.pi / 2.0
            and 0.0 < ds <= cap
        ):
            distance += ds
    return distance


def survival_time(traj: Trajectory, events) -> float:
    """Time of the first terminal event, or max_duration when none fired.

    Events sharing the first step resolve by precedence
    collision < off_road < timeout.
    """
    if not events:
        return traj.max_duration
    first_t = min(t for _, t in events)
    same = [kind for kind, t in events if t == first_t]
    for kind in EVENT_PRECEDENCE:
        if kind in same:
            return min(first_t, traj.max_duration)
    return min(first_t, traj.max_duration)


def lateral_deviation_stats(
    traj: Trajectory, lane_half_width: float = DEFAULT_LANE_HALF_WIDTH
) -> float:
    """Median |d| over right-lane samples; worst case when never in lane."""
    if not traj.samples:
        raise ValueError("empty trajectory")
    lateral = [
        abs(s.pose.d) for s in traj.samples if s.zone == ZONE_RIGHT_LANE
    ]
    if not lateral:
        return lane_half_width
    return lower_median(lateral)


def infraction_time(traj: Trajectory) -> float:
    """Time spent outside the right lane (wrong lane or off the road)."""
    bad = sum(1 for s in traj.samples if s.zone != ZONE_RIGHT_LANE)
    return bad * traj.dt


def run_metrics(
    traj: Trajectory,
    events,
    polyline: LanePolyline,
    lane_half_width: float = DEFAULT_LANE_HALF_WIDTH,
    terminal_event: str | None = None,
) -> RunMetrics:
    """Bundle the four per-run metrics from one trajectory."""
    return RunMetrics(
        distance=accumulate_progress(traj, polyline),
        survival=survival_time(traj, events),
        lateral_median=lateral_deviation_stats(traj, lane_half_width),
        infraction_time=infraction_time(traj),
        terminal_event=terminal_event,
    )


def aggregate_runs(runs) -> SubmissionScore:
    """Per-metric lower median over a submission's runs."""
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to aggregate")
    return SubmissionScore(
        distance=lower_median(r.distance for r in runs),
        survival=lower_median(r.survival for r in runs),
        lateral_median=lower_median(r.lateral_median for r in runs),
        infraction_time=lower_median(r.infraction_time for r in runs),
        runs=len(runs),
    )


def rank_key(score) -> tuple:
    """Lexicographic competition order: distance desc, survival desc,
    lateral asc, infractions asc. Absent later keys rank equal."""
    lateral = getattr(score, "lateral_median", None)
    infractions = getattr(score, "infraction_time", None)
    return (
        -score.distance,
        -score.survival,
        0.0 if lateral is None else lateral,
        0.0 if infractions is None else infractions,
    )


def rank(entries):
    """Order (id, score) pairs by the competition rank key; stable on ties."""
    entries = list(entries)
    if not entries:
        raise ValueError("nothing to rank")
    return sorted(entries, key=lambda pair: rank_key(pair[1]))
