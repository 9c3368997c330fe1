"""Client SDK for the driving-competition evaluation protocol."""

from .session import AgentSession, SessionSummary, connect_and_serve
from .wire import PROTOCOL_VERSION, WireError

__all__ = [
    "AgentSession",
    "SessionSummary",
    "connect_and_serve",
    "PROTOCOL_VERSION",
    "WireError",
]

__version__ = "0.1.0"
