"""Miniature autonomous-driving competition engine.

Tile-world lane-following simulator with exploit-hardened scoring,
baseline controllers, a fleet-dispatch simulator, and an out-of-process
agent evaluation harness.
"""

__version__ = "0.1.0"
