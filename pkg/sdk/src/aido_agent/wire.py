"""Framing and message handling for the evaluation wire protocol.

Frames are a 4-byte big-endian length followed by UTF-8 JSON with a
"type" field; the protocol version string is "aido-sim/1". This is an
independent client-side implementation of the published format.
"""

from __future__ import annotations

import json
import socket
import struct

PROTOCOL_VERSION = "aido-sim/1"
MAX_FRAME_BYTES = 16 * 1024 * 1024

_LEN = struct.Struct(">I")

KNOWN_TYPES = {
    "hello",
    "hello_ack",
    "episode_start",
    "observation",
    "action",
    "episode_end",
    "evaluation_result",
    "error",
}


class WireError(Exception):
    """Protocol-level failure: framing, schema, or server-reported error."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


def pack(message: dict) -> bytes:
    if "type" not in message:
        raise WireError("bad_field", "message needs a type")
    body = json.dumps(
        message, sort_keys=True, separators=(",", ":"), allow_nan=False
    ).encode("utf-8")
    if len(body) > MAX_FRAME_BYTES:
        raise WireError("oversize", f"{len(body)} byte frame")
    return _LEN.pack(len(body)) + body


def unpack(frame: bytes) -> dict:
    """Decode one complete frame into a message dict."""
    if len(frame) < _LEN.size:
        raise WireError("truncated", "missing length header")
    (n,) = _LEN.unpack_from(frame)
    if n > MAX_FRAME_BYTES:
        raise WireError("oversize", f"declared {n} bytes")
    body = frame[_LEN.size :]
    if len(body) != n:
        raise WireError("truncated", f"declared {n}, have {len(body)}")
    try:
        message = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError("malformed_json", str(exc)) from None
    if not isinstance(message, dict):
        raise WireError("malformed_json", "payload is not an object")
    kind = message.get("type")
    if kind not in KNOWN_TYPES:
        raise WireError("unknown_type", repr(kind))
    return message


class Connection:
    """Blocking message transport over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock

    @classmethod
    def dial(cls, host: str, port: int, timeout: float | None = None) -> "Connection":
        return cls(socket.create_connection((host, port), timeout=timeout))

    def send(self, message: dict) -> None:
        self.sock.sendall(pack(message))

    def _recv_exactly(self, n: int) -> bytes:
        parts = []
        remaining = n
        while remaining:
            chunk = self.sock.recv(remaining)
            if not chunk:
                raise WireError("closed", "connection closed mid-frame")
            parts.append(chunk)
            remaining -= len(chunk)
        return b"".join(parts)

    def recv(self) -> dict:
        header = self._recv_exactly(_LEN.size)
        (n,) = _LEN.unpack(header)
        if n > MAX_FRAME_BYTES:
            raise WireError("oversize", f"declared {n} bytes")
        return unpack(header + self._recv_exactly(n))

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass
