import socket
import threading

import numpy as np
import pytest

from aido_agent.policies import constant_policy, lane_policy, make_policy, random_policy
from aido_agent.session import AgentSession, Observation, connect_and_serve
from aido_agent.wire import Connection, PROTOCOL_VERSION, WireError, pack


class MockHarness:
    """Minimal server speaking the harness side of the protocol."""

    def __init__(self, script):
        self.script = script
        self.received = []
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(1)
        self.port = self.sock.getsockname()[1]
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _run(self):
        conn, _ = self.sock.accept()
        wire = Connection(conn)
        try:
            self.received.append(wire.recv())  # hello
            for step in self.script:
                if step[0] == "send":
                    wire.send(step[1])
                elif step[0] == "recv":
                    self.received.append(wire.recv())
        except WireError:
            pass
        finally:
            wire.close()
            self.sock.close()

    def join(self):
        self.thread.join(5.0)


def ack(timing=None):
    return {
        "type": "hello_ack",
        "challenge": "LF",
        "dt": 1 / 30,
        "timing_mode": timing or {"mode": "blocking"},
    }


def obs_msg(t=0.0, ground_truth=None, semantic=None):
    return {
        "type": "observation",
        "t": t,
        "ground_truth": ground_truth,
        "semantic": semantic,
    }


class TestHandshake:
    def test_version_sent_and_ack_parsed(self):
        script = [
            ("send", ack()),
            ("send", {"type": "evaluation_result", "submission_score": {"runs": 0}}),
        ]
        server = MockHarness(script)
        summary = connect_and_serve(
            "127.0.0.1", server.port, constant_policy(), agent_name="tester"
        )
        server.join()
        hello = server.received[0]
        assert hello["type"] == "hello"
        assert hello["protocol_version"] == PROTOCOL_VERSION
        assert hello["agent_name"] == "tester"
        assert summary.challenge == "LF"
        assert summary.submission_score == {"runs": 0}

    def test_version_mismatch_surfaced(self):
        script = [
            ("send", {"type": "error", "code": "version_mismatch", "detail": "nope"}),
        ]
        server = MockHarness(script)
        with pytest.raises(WireError) as err:
            connect_and_serve("127.0.0.1", server.port, constant_policy())
        server.join()
        assert err.value.code == "version_mismatch"

    def test_connection_refused(self):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        with pytest.raises(OSError):
            AgentSession("127.0.0.1", port)


class TestEpisodeLoop:
    def test_exactly_one_action_per_observation(self):
        episode = {
            "type": "episode_start",
            "map_document": {"tile_size_m": 0.6, "grid": [["empty"]]},
            "seed": 7,
            "observation_kinds": ["ground_truth"],
        }
        script = [
            ("send", ack()),
            ("send", episode),
        ]
        for i in range(5):
            script.append(("send", obs_msg(t=i / 30)))
            script.append(("recv", None))
        script.append(
            ("send", {"type": "episode_end", "run_metrics": {"distance_m": 0.5}})
        )
        script.append(
            ("send", {"type": "evaluation_result", "submission_score": {"runs": 1}})
        )
        server = MockHarness(script)
        starts = []
        summary = connect_and_serve(
            "127.0.0.1",
            server.port,
            constant_policy(v=0.3, omega=0.1),
            on_episode_start=starts.append,
        )
        server.join()
        actions = [m for m in server.received if m.get("type") == "action"]
        assert len(actions) == 5
        assert all(a == {"type": "action", "v": 0.3, "omega": 0.1} for a in actions)
        assert summary.episodes == [{"distance_m": 0.5}]
        assert starts[0]["seed"] == 7

    def test_policy_exception_closes_cleanly(self):
        script = [("send", ack()), ("send", obs_msg())]
        server = MockHarness(script)

        def angry(obs):
            raise RuntimeError("policy blew up")

        with pytest.raises(RuntimeError):
            connect_and_serve("127.0.0.1", server.port, angry)
        server.join()

    def test_semantic_payload_decoded(self):
        semantic = {
            "width": 4,
            "height": 2,
            "intensity": [20, 20, 230, 230, 20, 180, 180, 20],
        }
        script = [
            ("send", ack()),
            ("send", obs_msg(semantic=semantic)),
            ("recv", None),
            ("send", {"type": "evaluation_result", "submission_score": {}}),
        ]
        server = MockHarness(script)
        seen = []

        def spy(obs: Observation):
            seen.append(obs)
            return 0.0, 0.0

        connect_and_serve("127.0.0.1", server.port, spy)
        server.join()
        assert seen[0].semantic.shape == (2, 4)
        assert seen[0].semantic[0, 2] == 230


class TestPolicies:
    def test_constant(self):
        policy = constant_policy(v=0.4, omega=-0.2)
        assert policy(Observation(0.0, None, None)) == (0.4, -0.2)

    def test_random_seeded(self):
        a = random_policy(seed=9)
        b = random_policy(seed=9)
        obs = Observation(0.0, None, None)
        assert [a(obs) for _ in range(5)] == [b(obs) for _ in range(5)]

    def test_lane_neutral_without_raster(self):
        policy = lane_policy()
        assert policy(Observation(0.0, None, None)) == (0.0, 0.0)

    def test_lane_fallback_on_blank_raster(self):
        policy = lane_policy()
        blank = Observation(0.0, None, np.full((48, 64), 20, dtype=np.uint8))
        assert policy(blank) == (0.1, -1.0)

    def test_lane_centered_raster_goes_straight(self):
        img = np.full((48, 64), 20, dtype=np.uint8)
        for intensity, u0 in ((180, 0.15), (230, -0.075)):
            col = int(round(64 / 2.0 - 0.5 - u0 / (1.2 / 64)))
            img[:, col - 1 : col + 2] = intensity
        policy = lane_policy()
        assert policy(Observation(0.0, None, img)) == (0.5, 0.0)

    def test_make_policy(self):
        assert make_policy("constant", v=0.1)(Observation(0, None, None)) == (0.1, 0.0)
        with pytest.raises(ValueError):
            make_policy("clairvoyant")
