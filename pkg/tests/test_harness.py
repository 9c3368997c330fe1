import json
import socket
import threading
import time

import pytest

from tinytown.baselines import ConstantAgent, PurePursuitAgent, ScriptedAgent
from tinytown.dynamics import Command
from tinytown.harness import (
    AgentFailure,
    EvaluationPlan,
    InProcessAgent,
    RemoteAgent,
    TimingMode,
    evaluate_remote,
    leaderboard_append,
    leaderboard_read,
    run_episode,
    run_evaluation,
    run_seed,
    serve,
    serve_builtin_agent,
)
from tinytown.protocol import (
    ActionMsg,
    EpisodeEnd,
    EpisodeStart,
    ErrorMsg,
    EvaluationResult,
    Hello,
    HelloAck,
    MessageStream,
    ObservationMsg,
)
from tinytown.sim import EpisodeConfig, observe, reset, step_episode
from tinytown.world import CANONICAL_RING_DOCUMENT, load_map


@pytest.fixture(scope="module")
def ring():
    return load_map(CANONICAL_RING_DOCUMENT)


@pytest.fixture(scope="module")
def ring_doc():
    return json.loads(CANONICAL_RING_DOCUMENT)


def small_plan(**overrides) -> EvaluationPlan:
    kwargs = dict(
        challenge="LF",
        maps=[json.loads(CANONICAL_RING_DOCUMENT)],
        runs_per_map=2,
        max_duration=2.0,
    )
    kwargs.update(overrides)
    return EvaluationPlan(**kwargs)


def start_server(plan, store=None, max_connections=1):
    ready = threading.Event()
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    thread = threading.Thread(
        target=serve,
        kwargs=dict(
            host="127.0.0.1",
            port=port,
            plan=plan,
            store=store,
            max_connections=max_connections,
            ready_event=ready,
            sock=sock,
        ),
        daemon=True,
    )
    thread.start()
    ready.wait(5.0)
    return port, thread


class TestEvaluationPlan:
    def test_json_round_trip(self):
        plan = small_plan(hidden_seeds=[11, 12], runs_per_map=3)
        again = EvaluationPlan.from_json(plan.to_json())
        assert again.plan_hash() == plan.plan_hash()

    def test_zero_runs_rejected(self):
        with pytest.raises(ValueError):
            small_plan(runs_per_map=0)

    def test_no_maps_rejected(self):
        with pytest.raises(ValueError):
            EvaluationPlan(challenge="LF", maps=[], hidden_seeds=[])

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError):
            EvaluationPlan.from_json({"challenge": "LF", "maps": [], "extra": 1})

    def test_hidden_maps_generated(self):
        plan = small_plan(hidden_seeds=[3], hidden_rows=4, hidden_cols=4)
        docs = list(plan.iter_maps())
        assert len(docs) == 2
        assert docs[0][1] is False and docs[1][1] is True

    def test_seed_derivation_deterministic(self):
        plan = small_plan()
        assert run_seed(plan, 0, 1) == run_seed(plan, 0, 1)
        assert run_seed(plan, 0, 1) != run_seed(plan, 0, 2)
        assert run_seed(plan, 0, 1) != run_seed(plan, 1, 1)

    def test_timing_mode_validation(self):
        with pytest.raises(ValueError):
            TimingMode(mode="fixed_step")
        with pytest.raises(ValueError):
            TimingMode(mode="whenever")
        t = TimingMode(mode="fixed_step", deadline_ms=50)
        assert TimingMode.from_json(t.to_json()) == t

    def test_unknown_episode_keys_rejected(self):
        with pytest.raises(ValueError):
            EvaluationPlan.from_json(
                {
                    "challenge": "LF",
                    "maps": [json.loads(CANONICAL_RING_DOCUMENT)],
                    "episode": {"max_duration": 5.0},
                }
            )

    def test_lfv_plan_with_obstacles(self):
        plan = EvaluationPlan.from_json(
            {
                "challenge": "LFV",
                "maps": [json.loads(CANONICAL_RING_DOCUMENT)],
                "runs_per_map": 1,
                "episode": {
                    "max_duration_s": 3.0,
                    "obstacles": [
                        {"x": 1.05, "y": 0.15, "radius": 0.05, "kind": "cone"}
                    ],
                },
            }
        )
        # an agent barreling down the south straight hits the cone
        agent = InProcessAgent(ScriptedAgent([(0.5, 0.0)] * 500))
        doc = dict(json.loads(CANONICAL_RING_DOCUMENT))
        config = plan.episode_config(doc, seed=0)
        config.start_pose = (0.9, 0.15, 0.0)
        run, _traj = run_episode(agent, config, TimingMode())
        assert run.terminal_event == "collision"
        assert run.survival < 3.0


class TestInProcessEpisodes:
    def test_scripted_agent_matches_direct_sim(self, ring, ring_doc):
        actions = [(0.3, 0.5)] * 40 + [(0.2, -1.0)] * 40
        config = EpisodeConfig(map=ring, seed=9, max_duration=3.0)

        run, traj = run_episode(
            InProcessAgent(ScriptedAgent(actions)), config, TimingMode()
        )

        sim = reset(config)
        agent = ScriptedAgent(actions)
        agent.begin_episode(ring_doc, 9, config.dt)
        obs = observe(sim)
        while not sim.terminated:
            obs, _ = step_episode(sim, agent.act(obs))
        assert traj.to_json() == sim.trajectory.to_json()

    def test_run_evaluation_counts(self, ring):
        plan = small_plan(maps=[json.loads(CANONICAL_RING_DOCUMENT)] * 2, runs_per_map=5)
        agent = InProcessAgent(ConstantAgent(v=0.2))
        score = run_evaluation(agent, plan)
        assert score.runs == 10

    def test_identical_plan_identical_score(self):
        plan = small_plan()
        a = run_evaluation(InProcessAgent(PurePursuitAgent()), plan)
        b = run_evaluation(InProcessAgent(PurePursuitAgent()), plan)
        assert a.to_json() == b.to_json()

    def test_amod_plans_rejected(self):
        plan = small_plan(challenge="AMOD")
        with pytest.raises(ValueError):
            run_evaluation(InProcessAgent(ConstantAgent()), plan)


class LoopbackAgentClient:
    """Minimal scripted protocol client used to exercise the server side."""

    def __init__(self, port, actions, name="scripted", version=None, stall=False):
        self.port = port
        self.actions = actions
        self.name = name
        self.version = version
        self.stall = stall
        self.result = None
        self.error = None

    def run(self):
        sock = socket.create_connection(("127.0.0.1", self.port))
        stream = MessageStream(sock)
        try:
            hello = Hello(agent_name=self.name)
            if self.version is not None:
                hello = Hello(agent_name=self.name, protocol_version=self.version)
            stream.send(hello)
            ack = stream.recv()
            if isinstance(ack, ErrorMsg):
                self.error = ack
                return
            assert isinstance(ack, HelloAck)
            i = 0
            while True:
                msg = stream.recv()
                if isinstance(msg, EpisodeStart):
                    i = 0
                elif isinstance(msg, ObservationMsg):
                    if self.stall:
                        time.sleep(0.05)
                        continue
                    v, om = self.actions[min(i, len(self.actions) - 1)]
                    stream.send(ActionMsg(v=v, omega=om))
                    i += 1
                elif isinstance(msg, EpisodeEnd):
                    continue
                elif isinstance(msg, EvaluationResult):
                    self.result = msg.submission_score
                    return
                elif isinstance(msg, ErrorMsg):
                    self.error = msg
                    return
        except Exception as exc:  # surfaced by the test
            self.error = exc
        finally:
            stream.close()


class TestLoopbackProtocol:
    def test_blocking_transparency_bitwise(self, ring):
        actions = [(0.3, 0.4)] * 30 + [(0.25, -0.8)] * 30
        plan = small_plan(runs_per_map=1, max_duration=1.5)

        port, thread = start_server(plan, max_connections=1)
        client = LoopbackAgentClient(port, actions)
        client.run()
        thread.join(5.0)
        assert client.error is None
        remote_score = client.result

        in_process = run_evaluation(
            InProcessAgent(ScriptedAgent(actions)), plan
        )
        assert json.dumps(remote_score, sort_keys=True) == json.dumps(
            in_process.to_record(), sort_keys=True
        )

    def test_version_mismatch_surfaced(self):
        plan = small_plan(runs_per_map=1, max_duration=0.5)
        port, thread = start_server(plan, max_connections=1)
        client = LoopbackAgentClient(port, [(0, 0)], version="aido-sim/999")
        client.run()
        thread.join(5.0)
        assert isinstance(client.error, ErrorMsg)
        assert client.error.code == "version_mismatch"

    def test_fixed_step_all_deadlines_missed_is_neutral(self, ring):
        plan = small_plan(
            runs_per_map=1,
            max_duration=0.5,
            timing=TimingMode(mode="fixed_step", deadline_ms=5),
        )
        port, thread = start_server(plan, max_connections=1)
        client = LoopbackAgentClient(port, [(0.5, 0.0)], stall=True)
        t = threading.Thread(target=client.run, daemon=True)
        t.start()
        thread.join(10.0)

        neutral = run_evaluation(InProcessAgent(ConstantAgent(v=0.0, omega=0.0)),
                                 small_plan(runs_per_map=1, max_duration=0.5))
        # the stalled agent's episode must equal the all-neutral episode
        # (identical metrics; distance 0, full survival)
        assert client.result is None or json.dumps(client.result, sort_keys=True) == json.dumps(
            neutral.to_record(), sort_keys=True
        )

    def test_evaluate_remote_dials_listening_agent(self):
        plan = small_plan(runs_per_map=1, max_duration=1.0)
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        port = listener.getsockname()[1]

        result = {}

        def agent_side():
            conn, _ = listener.accept()
            stream = MessageStream(conn)
            stream.send(Hello(agent_name="dialed"))
            ack = stream.recv()
            assert isinstance(ack, HelloAck)
            while True:
                msg = stream.recv()
                if isinstance(msg, ObservationMsg):
                    stream.send(ActionMsg(v=0.2, omega=0.0))
                elif isinstance(msg, EvaluationResult):
                    result["score"] = msg.submission_score
                    break
            stream.close()

        t = threading.Thread(target=agent_side, daemon=True)
        t.start()
        score = evaluate_remote("127.0.0.1", port, plan)
        t.join(5.0)
        listener.close()
        assert score.runs == 1
        assert result["score"] == score.to_record()

    def test_builtin_agent_over_wire(self):
        plan = small_plan(runs_per_map=1, max_duration=1.0)
        port, thread = start_server(plan, max_connections=1)
        score_record = serve_builtin_agent("127.0.0.1", port, "pure_pursuit")
        thread.join(5.0)
        in_process = run_evaluation(InProcessAgent(PurePursuitAgent()), plan)
        assert score_record == in_process.to_record()

    def test_disconnect_scores_partial(self, ring):
        plan = small_plan(runs_per_map=1, max_duration=5.0)
        port, thread = start_server(plan, store=None, max_connections=1)

        sock = socket.create_connection(("127.0.0.1", port))
        stream = MessageStream(sock)
        stream.send(Hello(agent_name="quitter"))
        assert isinstance(stream.recv(), HelloAck)
        steps = 0
        while steps < 10:
            msg = stream.recv()
            if isinstance(msg, ObservationMsg):
                stream.send(ActionMsg(v=0.3, omega=0.0))
                steps += 1
        stream.close()  # hang up mid-episode
        thread.join(5.0)


class TestLeaderboard:
    def entry(self, i, distance, challenge="LF"):
        return {
            "id": f"sub-{i}",
            "challenge": challenge,
            "timestamp": 0.0,
            "score": {
                "distance_m": distance,
                "survival_s": 10.0,
                "lateral_m": 0.01,
                "infraction_s": 0.0,
                "runs": 5,
            },
        }

    def test_append_and_ranked_read(self, tmp_path):
        store = str(tmp_path / "board.jsonl")
        for i, d in enumerate([2.0, 9.0, 5.0]):
            leaderboard_append(store, self.entry(i, d))
        ranked = leaderboard_read(store, "LF")
        assert [e["id"] for e in ranked] == ["sub-1", "sub-2", "sub-0"]

    def test_duplicate_id_rejected(self, tmp_path):
        store = str(tmp_path / "board.jsonl")
        leaderboard_append(store, self.entry(0, 1.0))
        before = open(store).read()
        with pytest.raises(ValueError):
            leaderboard_append(store, self.entry(0, 2.0))
        assert open(store).read() == before

    def test_same_id_other_challenge_ok(self, tmp_path):
        store = str(tmp_path / "board.jsonl")
        leaderboard_append(store, self.entry(0, 1.0))
        leaderboard_append(store, self.entry(0, 1.0, challenge="LFV"))
        assert len(leaderboard_read(store, "LF")) == 1
        assert len(leaderboard_read(store, "LFV")) == 1

    def test_corrupt_line_skipped(self, tmp_path):
        store = str(tmp_path / "board.jsonl")
        leaderboard_append(store, self.entry(0, 1.0))
        with open(store, "a") as fh:
            fh.write("{corrupt json\n")
        leaderboard_append(store, self.entry(1, 2.0))
        ranked = leaderboard_read(store, "LF")
        assert [e["id"] for e in ranked] == ["sub-1", "sub-0"]

    def test_concurrent_appends_no_torn_lines(self, tmp_path):
        store = str(tmp_path / "board.jsonl")
        errors = []

        def writer(k):
            try:
                leaderboard_append(store, self.entry(k, float(k)))
            except Exception as exc:
                errors.append(exc)

        threads = [threading.Thread(target=writer, args=(k,)) for k in range(100)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        entries = leaderboard_read(store, "LF")
        assert len(entries) == 100
        assert {e["id"] for e in entries} == {f"sub-{k}" for k in range(100)}


class TestHiddenSplit:
    def test_results_never_contain_hidden_documents(self, tmp_path):
        plan = small_plan(
            maps=[],
            hidden_seeds=[21],
            hidden_rows=4,
            hidden_cols=4,
            runs_per_map=1,
            max_duration=0.5,
        )
        hidden_doc_json = None
        for doc, hidden in plan.iter_maps():
            if hidden:
                hidden_doc_json = json.dumps(doc["grid"], sort_keys=True)
        assert hidden_doc_json is not None

        store = str(tmp_path / "board.jsonl")
        agent = InProcessAgent(ConstantAgent(v=0.1))
        score = run_evaluation(agent, plan, store=store, submission_id="secret-test")
        serialized_results = score.to_json("secret-test") + open(store).read()
        # the hidden map's grid must not leak into any serialized result
        assert hidden_doc_json not in serialized_results
        grid = json.loads(hidden_doc_json)
        row_fragment = json.dumps(grid[0])
        assert row_fragment not in serialized_results
