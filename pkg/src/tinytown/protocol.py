"""Framed wire protocol for out-of-process agents.

A frame is a 4-byte big-endian unsigned length N followed by N bytes of
UTF-8 JSON carrying a "type" tag. Any byte stream either yields a valid
message sequence or one ProtocolError; frames above 16 MiB are rejected
before allocation.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, fields

PROTOCOL_VERSION = "aido-sim/1"
MAX_FRAME_BYTES = 16 * 1024 * 1024
_HEADER = struct.Struct(">I")


class ProtocolError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


@dataclass(frozen=True)
class Hello:
    agent_name: str
    protocol_version: str = PROTOCOL_VERSION


@dataclass(frozen=True)
class HelloAck:
    challenge: str
    dt: float
    timing_mode: dict


@dataclass(frozen=True)
class EpisodeStart:
    map_document: dict
    seed: int
    observation_kinds: list


@dataclass(frozen=True)
class ObservationMsg:
    t: float
    ground_truth: dict | None = None
    semantic: dict | None = None


@dataclass(frozen=True)
class ActionMsg:
    v: float
    omega: float


@dataclass(frozen=True)
class EpisodeEnd:
    run_metrics: dict


@dataclass(frozen=True)
class EvaluationResult:
    submission_score: dict


@dataclass(frozen=True)
class ErrorMsg:
    code: str
    detail: str = ""


MESSAGE_TYPES = {
    "hello": Hello,
    "hello_ack": HelloAck,
    "episode_start": EpisodeStart,
    "observation": ObservationMsg,
    "action": ActionMsg,
    "episode_end": EpisodeEnd,
    "evaluation_result": EvaluationResult,
    "error": ErrorMsg,
}
_TYPE_TAGS = {cls: tag for tag, cls in MESSAGE_TYPES.items()}

_FIELD_CHECKS = {
    (Hello, "agent_name"): str,
    (Hello, "protocol_version"): str,
    (HelloAck, "challenge"): str,
    (HelloAck, "dt"): (int, float),
    (HelloAck, "timing_mode"): dict,
    (EpisodeStart, "map_document"): dict,
    (EpisodeStart, "seed"): int,
    (EpisodeStart, "observation_kinds"): list,
    (ObservationMsg, "t"): (int, float),
    (ObservationMsg, "ground_truth"): (dict, type(None)),
    (ObservationMsg, "semantic"): (dict, type(None)),
    (ActionMsg, "v"): (int, float),
    (ActionMsg, "omega"): (int, float),
    (EpisodeEnd, "run_metrics"): dict,
    (EvaluationResult, "submission_score"): dict,
    (ErrorMsg, "code"): str,
    (ErrorMsg, "detail"): str,
}


def message_to_payload(msg) -> dict:
    tag = _TYPE_TAGS.get(type(msg))
    if tag is None:
        raise ProtocolError("unknown_type", f"{type(msg).__name__} is not a message")
    payload = {"type": tag}
    for f in fields(msg):
        payload[f.name] = getattr(msg, f.name)
    return payload


def payload_to_message(payload):
    if not isinstance(payload, dict):
        raise ProtocolError("malformed_json", "payload must be a JSON object")
    tag = payload.get("type")
    if not isinstance(tag, str) or tag not in MESSAGE_TYPES:
        raise ProtocolError("unknown_type", f"unknown message type {tag!r}")
    cls = MESSAGE_TYPES[tag]
    names = [f.name for f in fields(cls)]
    extra = set(payload) - {"type", *names}
    if extra:
        raise ProtocolError("bad_field", f"unexpected fields {sorted(extra)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in payload:
            raise ProtocolError("bad_field", f"missing field {f.name!r}")
        value = payload[f.name]
        expected = _FIELD_CHECKS[(cls, f.name)]
        if isinstance(value, bool) or not isinstance(value, expected):
            raise ProtocolError("bad_field", f"field {f.name!r} has wrong type")
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            if not math.isfinite(value):
                raise ProtocolError("bad_field", f"field {f.name!r} must be finite")
        kwargs[f.name] = value
    return cls(**kwargs)


def encode_message(msg) -> bytes:
    """Serialize a message to one frame (length prefix + JSON)."""
    payload = message_to_payload(msg)
    try:
        body = json.dumps(
            payload, sort_keys=True, separators=(",", ":"), allow_nan=False
        ).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise ProtocolError("bad_field", f"unencodable payload: {exc}") from None
    if len(body) > MAX_FRAME_BYTES:
        raise ProtocolError("oversize", f"frame of {len(body)} bytes")
    return _HEADER.pack(len(body)) + body


def decode_message(frame: bytes):
    """Decode one complete frame; trailing or missing bytes are errors."""
    if len(frame) < _HEADER.size:
        raise ProtocolError("truncated", "frame shorter than its header")
    (length,) = _HEADER.unpack_from(frame)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError("oversize", f"declared length {length}")
    body = frame[_HEADER.size :]
    if len(body) != length:
        raise ProtocolError("truncated", f"want {length} bytes, have {len(body)}")
    return _decode_body(body)


def _decode_body(body: bytes):
    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("malformed_json", str(exc)) from None
    return payload_to_message(payload)


class MessageStream:
    """Framed-message transport over a connected socket.

    Partially received frames stay buffered, so a read timeout (fixed-step
    deadlines) never desynchronizes the stream.
    """

    def __init__(self, sock):
        self.sock = sock
        self._buf = bytearray()

    def send(self, msg) -> None:
        self.sock.sendall(encode_message(msg))

    def _fill(self, needed: int) -> None:
        while len(self._buf) < needed:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ProtocolError("truncated", "connection closed mid-frame")
            self._buf.extend(chunk)

    def recv(self):
        """Read one message; raises ProtocolError on EOF or bad frames."""
        self._fill(_HEADER.size)
        (length,) = _HEADER.unpack_from(bytes(self._buf[: _HEADER.size]))
        if length > MAX_FRAME_BYTES:
            raise ProtocolError("oversize", f"declared length {length}")
        total = _HEADER.size + length
        self._fill(total)
        body = bytes(self._buf[_HEADER.size : total])
        del self._buf[:total]
        return _decode_body(body)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def observation_to_msg(obs) -> ObservationMsg:
    """Encode a sim Observation into its wire form."""
    ground_truth = None
    if obs.ground_truth is not None:
        gt = obs.ground_truth
        ground_truth = {
            "s": gt.pose.s,
            "d": gt.pose.d,
            "phi": gt.pose.phi,
            "in_right_lane": bool(gt.pose.in_right_lane),
            "heading_dot": gt.heading_dot,
            "lane_cross_sign": gt.lane_cross_sign,
            "obstacles": [
                {"ahead": o.ahead, "left": o.left, "radius": o.radius, "kind": o.kind}
                for o in gt.obstacles
            ],
        }
    semantic = None
    if obs.semantic is not None:
        semantic = {
            "width": obs.semantic.width,
            "height": obs.semantic.height,
            "intensity": [int(v) for v in obs.semantic.intensity.ravel()],
        }
    return ObservationMsg(t=obs.t, ground_truth=ground_truth, semantic=semantic)


def msg_to_observation(msg: ObservationMsg):
    """Decode a wire observation back into sim types (for builtin agents
    driven over the protocol)."""
    import numpy as np

    from .sim import EgoObstacle, GroundTruth, Observation
    from .raster import SemanticImage
    from .world import LanePose

    try:
        ground_truth = None
        if msg.ground_truth is not None:
            g = msg.ground_truth
            ground_truth = GroundTruth(
                pose=LanePose(
                    s=g["s"], d=g["d"], phi=g["phi"], in_right_lane=g["in_right_lane"]
                ),
                heading_dot=g["heading_dot"],
                lane_cross_sign=g["lane_cross_sign"],
                obstacles=tuple(
                    EgoObstacle(o["ahead"], o["left"], o["radius"], o["kind"])
                    for o in g["obstacles"]
                ),
            )
        semantic = None
        if msg.semantic is not None:
            s = msg.semantic
            intensity = np.array(s["intensity"], dtype=np.uint8).reshape(
                s["height"], s["width"]
            )
            semantic = SemanticImage(
                width=s["width"],
                height=s["height"],
                labels=np.zeros((s["height"], s["width"]), dtype=np.uint8),
                intensity=intensity,
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError("bad_field", f"malformed observation: {exc}") from None
    return Observation(t=msg.t, ground_truth=ground_truth, semantic=semantic)
