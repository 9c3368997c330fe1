"""Connection and episode loop management for competitor agents.

A policy is a callable Observation -> (v, omega). The session performs the
handshake, then answers every observation with exactly one action until the
harness announces the evaluation result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .wire import Connection, PROTOCOL_VERSION, WireError


@dataclass(frozen=True)
class Observation:
    """Client-side view of one observation message."""

    t: float
    ground_truth: dict | None
    semantic: np.ndarray | None  # (H, W) uint8 intensity raster


@dataclass
class SessionSummary:
    agent_name: str
    challenge: str
    dt: float
    timing_mode: dict
    episodes: list = field(default_factory=list)  # per-episode run metrics
    submission_score: dict | None = None


def _decode_observation(message: dict) -> Observation:
    semantic = None
    payload = message.get("semantic")
    if payload is not None:
        try:
            semantic = np.asarray(payload["intensity"], dtype=np.uint8).reshape(
                payload["height"], payload["width"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise WireError("bad_field", f"bad semantic payload: {exc}") from None
    return Observation(
        t=message.get("t", 0.0),
        ground_truth=message.get("ground_truth"),
        semantic=semantic,
    )


class AgentSession:
    """One evaluation session against a serving harness."""

    def __init__(self, host: str, port: int, agent_name: str = "sdk-agent"):
        self.agent_name = agent_name
        self.conn = Connection.dial(host, port)
        self.conn.send(
            {
                "type": "hello",
                "agent_name": agent_name,
                "protocol_version": PROTOCOL_VERSION,
            }
        )
        ack = self.conn.recv()
        if ack["type"] == "error":
            self.conn.close()
            raise WireError(ack.get("code", "error"), ack.get("detail", ""))
        if ack["type"] != "hello_ack":
            self.conn.close()
            raise WireError("protocol_violation", f"expected hello_ack, got {ack['type']}")
        self.summary = SessionSummary(
            agent_name=agent_name,
            challenge=ack.get("challenge", ""),
            dt=ack.get("dt", 0.0),
            timing_mode=ack.get("timing_mode", {}),
        )
        self.current_episode: dict | None = None

    def serve(self, policy, on_episode_start=None) -> SessionSummary:
        """Answer observations with policy actions until the evaluation ends.

        A policy exception closes the connection (the harness scores the
        disconnect) and re-raises to the caller.
        """
        try:
            while True:
                message = self.conn.recv()
                kind = message["type"]
                if kind == "episode_start":
                    self.current_episode = {
                        "map_document": message.get("map_document"),
                        "seed": message.get("seed"),
                        "observation_kinds": message.get("observation_kinds", []),
                    }
                    if on_episode_start is not None:
                        on_episode_start(self.current_episode)
                elif kind == "observation":
                    obs = _decode_observation(message)
                    v, omega = policy(obs)
                    self.conn.send(
                        {"type": "action", "v": float(v), "omega": float(omega)}
                    )
                elif kind == "episode_end":
                    self.summary.episodes.append(message.get("run_metrics", {}))
                    self.current_episode = None
                elif kind == "evaluation_result":
                    self.summary.submission_score = message.get("submission_score")
                    return self.summary
                elif kind == "error":
                    raise WireError(
                        message.get("code", "error"), message.get("detail", "")
                    )
                else:
                    raise WireError("protocol_violation", f"unexpected {kind}")
        finally:
            self.conn.close()


def connect_and_serve(
    host: str, port: int, policy, agent_name: str = "sdk-agent", on_episode_start=None
) -> SessionSummary:
    """Handshake with a harness and run the callback loop to completion."""
    session = AgentSession(host, port, agent_name=agent_name)
    return session.serve(policy, on_episode_start=on_episode_start)
