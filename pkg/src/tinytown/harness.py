"""Out-of-process agent evaluation: episode driving over the wire protocol,
multi-map evaluation plans with hidden-split maps, and the leaderboard store.

Run seeds derive from the plan content hash, so identical plans always
replay identically; hidden map documents are generated from seeds and never
written to results or the leaderboard.
"""

from __future__ import annotations

import hashlib
import json
import logging
import socket
import threading
import time
from dataclasses import dataclass, field

from . import metrics as metrics_mod
from .baselines import Agent, make_builtin
from .dynamics import Command, NEUTRAL_COMMAND, clamp_command
from .protocol import (
    ActionMsg,
    EpisodeEnd,
    EpisodeStart,
    ErrorMsg,
    EvaluationResult,
    Hello,
    HelloAck,
    MessageStream,
    ObservationMsg,
    PROTOCOL_VERSION,
    ProtocolError,
    msg_to_observation,
    observation_to_msg,
)
from .sim import EpisodeConfig, RandomizationConfig, Obstacle, observe, reset, step_episode
from .world import generate_random_map, map_from_document, map_to_document

log = logging.getLogger(__name__)

CHALLENGES = ("LF", "LFV", "AMOD")

TIMING_BLOCKING = "blocking"
TIMING_FIXED_STEP = "fixed_step"


class AgentFailure(RuntimeError):
    """Agent disconnected or violated the protocol mid-evaluation."""


@dataclass(frozen=True)
class TimingMode:
    mode: str = TIMING_BLOCKING
    deadline_ms: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in (TIMING_BLOCKING, TIMING_FIXED_STEP):
            raise ValueError(f"unknown timing mode {self.mode!r}")
        if self.mode == TIMING_FIXED_STEP:
            if self.deadline_ms is None or self.deadline_ms <= 0:
                raise ValueError("fixed_step requires a positive deadline_ms")

    def to_json(self) -> dict:
        doc = {"mode": self.mode}
        if self.deadline_ms is not None:
            doc["deadline_ms"] = self.deadline_ms
        return doc

    @classmethod
    def from_json(cls, obj: dict) -> "TimingMode":
        if not isinstance(obj, dict) or "mode" not in obj:
            raise ValueError("timing mode must be {'mode': ...}")
        return cls(mode=obj["mode"], deadline_ms=obj.get("deadline_ms"))


@dataclass
class EvaluationPlan:
    challenge: str = "LF"
    maps: list = field(default_factory=list)  # public map documents (dicts)
    hidden_seeds: list = field(default_factory=list)
    hidden_rows: int = 5
    hidden_cols: int = 5
    runs_per_map: int = 5
    timing: TimingMode = field(default_factory=TimingMode)
    max_duration: float = 60.0
    dt: float = 1.0 / 30.0
    observation_kinds: tuple = ("ground_truth",)
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    obstacles: tuple = ()

    def __post_init__(self) -> None:
        if self.challenge not in CHALLENGES:
            raise ValueError(f"unknown challenge {self.challenge!r}")
        if self.runs_per_map < 1:
            raise ValueError("runs_per_map must be at least 1")
        if not self.maps and not self.hidden_seeds:
            raise ValueError("plan needs at least one map")

    @classmethod
    def from_json(cls, obj: dict) -> "EvaluationPlan":
        if not isinstance(obj, dict):
            raise ValueError("plan must be a JSON object")
        known = {
            "challenge",
            "maps",
            "hidden_maps",
            "runs_per_map",
            "timing",
            "episode",
        }
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        episode = obj.get("episode", {})
        episode_keys = {"max_duration_s", "dt_s", "observations", "randomization", "obstacles"}
        if set(episode) - episode_keys:
            raise ValueError(f"unknown episode keys: {sorted(set(episode) - episode_keys)}")
        hidden = obj.get("hidden_maps", {})
        if set(hidden) - {"seeds", "rows", "cols"}:
            raise ValueError(
                f"unknown hidden_maps keys: {sorted(set(hidden) - {'seeds', 'rows', 'cols'})}"
            )
        randomization = RandomizationConfig.from_json(
            episode.get("randomization", {})
        )
        obstacles = tuple(
            Obstacle(
                x=o["x"], y=o["y"], radius=o["radius"], kind=o.get("kind", "cone")
            )
            for o in episode.get("obstacles", [])
        )
        return cls(
            challenge=obj.get("challenge", "LF"),
            maps=list(obj.get("maps", [])),
            hidden_seeds=list(hidden.get("seeds", [])),
            hidden_rows=int(hidden.get("rows", 5)),
            hidden_cols=int(hidden.get("cols", 5)),
            runs_per_map=int(obj.get("runs_per_map", 5)),
            timing=TimingMode.from_json(obj.get("timing", {"mode": TIMING_BLOCKING})),
            max_duration=float(episode.get("max_duration_s", 60.0)),
            dt=float(episode.get("dt_s", 1.0 / 30.0)),
            observation_kinds=tuple(episode.get("observations", ["ground_truth"])),
            randomization=randomization,
            obstacles=obstacles,
        )

    def to_json(self) -> dict:
        episode = {
            "max_duration_s": self.max_duration,
            "dt_s": self.dt,
            "observations": list(self.observation_kinds),
        }
        rand = self.randomization.to_json()
        if rand:
            episode["randomization"] = rand
        if self.obstacles:
            episode["obstacles"] = [
                {"x": o.x, "y": o.y, "radius": o.radius, "kind": o.kind}
                for o in self.obstacles
            ]
        doc = {
            "challenge": self.challenge,
            "maps": self.maps,
            "runs_per_map": self.runs_per_map,
            "timing": self.timing.to_json(),
            "episode": episode,
        }
        if self.hidden_seeds:
            doc["hidden_maps"] = {
                "seeds": self.hidden_seeds,
                "rows": self.hidden_rows,
                "cols": self.hidden_cols,
            }
        return doc

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()

    def plan_hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def iter_maps(self):
        """Yield (map_document, hidden) pairs, public maps first."""
        for doc in self.maps:
            yield doc, False
        for seed in self.hidden_seeds:
            m = generate_random_map(seed, self.hidden_rows, self.hidden_cols)
            yield map_to_document(m), True

    def episode_config(self, map_document: dict, seed: int) -> EpisodeConfig:
        return EpisodeConfig(
            map=map_from_document(map_document),
            max_duration=self.max_duration,
            dt=self.dt,
            obstacles=self.obstacles,
            seed=seed,
            randomization=self.randomization,
            observations=self.observation_kinds,
        )


def run_seed(plan: EvaluationPlan, map_index: int, run_index: int) -> int:
    digest = hashlib.sha256(
        plan.canonical_bytes() + b"|%d|%d" % (map_index, run_index)
    ).digest()
    return int.from_bytes(digest[:8], "big")


class InProcessAgent:
    """Adapter driving a builtin Agent object without any transport."""

    def __init__(self, agent: Agent):
        self.agent = agent

    def begin_episode(self, map_document, seed, dt, observation_kinds) -> None:
        self.agent.begin_episode(map_document, seed, dt)

    def act(self, obs):
        return self.agent.act(obs)

    def end_episode(self, run_metrics) -> None:
        pass

    def finish(self, score) -> None:
        pass


class RemoteAgent:
    """Harness-side driver for one connected agent."""

    def __init__(self, stream: MessageStream, challenge: str, dt: float, timing: TimingMode):
        self.stream = stream
        self.timing = timing
        hello = stream.recv()
        if not isinstance(hello, Hello):
            stream.send(ErrorMsg(code="protocol_violation", detail="expected hello"))
            raise AgentFailure("expected hello first")
        if hello.protocol_version != PROTOCOL_VERSION:
            stream.send(
                ErrorMsg(
                    code="version_mismatch",
                    detail=f"server speaks {PROTOCOL_VERSION}",
                )
            )
            raise AgentFailure(f"version mismatch: {hello.protocol_version}")
        self.agent_name = hello.agent_name
        stream.send(
            HelloAck(challenge=challenge, dt=dt, timing_mode=timing.to_json())
        )

    def begin_episode(self, map_document, seed, dt, observation_kinds) -> None:
        self.stream.send(
            EpisodeStart(
                map_document=map_document,
                seed=seed,
                observation_kinds=list(observation_kinds),
            )
        )

    def act(self, obs):
        self.stream.send(observation_to_msg(obs))
        if self.timing.mode == TIMING_FIXED_STEP:
            return self._recv_action_with_deadline(self.timing.deadline_ms / 1000.0)
        msg = self._recv_action_blocking()
        return Command(msg.v, msg.omega)

    def _recv_action_blocking(self) -> ActionMsg:
        try:
            msg = self.stream.recv()
        except ProtocolError as exc:
            raise AgentFailure(f"agent connection failed: {exc}") from None
        if not isinstance(msg, ActionMsg):
            raise AgentFailure(f"expected action, got {type(msg).__name__}")
        return msg

    def _recv_action_with_deadline(self, deadline_s: float):
        """Return the action received within the deadline, or None to repeat
        the previous one."""
        self.stream.sock.settimeout(deadline_s)
        try:
            msg = self.stream.recv()
        except socket.timeout:
            return None
        except ProtocolError as exc:
            raise AgentFailure(f"agent connection failed: {exc}") from None
        finally:
            self.stream.sock.settimeout(None)
        if not isinstance(msg, ActionMsg):
            raise AgentFailure(f"expected action, got {type(msg).__name__}")
        return Command(msg.v, msg.omega)

    def end_episode(self, run_metrics) -> None:
        self.stream.send(EpisodeEnd(run_metrics=run_metrics.to_record()))

    def finish(self, score) -> None:
        self.stream.send(EvaluationResult(submission_score=score.to_record()))


def run_episode(agent, config: EpisodeConfig, timing: TimingMode):
    """Drive one episode and return (RunMetrics, Trajectory).

    blocking mode waits indefinitely for each action; fixed_step repeats the
    previous action (initially neutral) whenever the deadline lapses. On
    agent disconnect the episode ends with the trajectory gathered so far.
    """
    sim = reset(config)
    map_doc = map_to_document(config.map)
    agent.begin_episode(map_doc, config.seed, config.dt, config.observations)
    obs = observe(sim)
    last_action = NEUTRAL_COMMAND
    disconnected = False
    while not sim.terminated:
        try:
            action = agent.act(obs)
        except AgentFailure:
            disconnected = True
            break
        if action is None:
            action = last_action
        else:
            action = clamp_command(action, config.kinematics)
            last_action = action
        obs, _events = step_episode(sim, action)
    traj = sim.trajectory
    if not traj.samples:
        # disconnect before the first step: score as immediate termination
        run = metrics_mod.RunMetrics(
            distance=0.0,
            survival=0.0,
            lateral_median=config.map.lane_half_width,
            infraction_time=0.0,
            terminal_event="agent_failure",
        )
        return run, traj
    run = metrics_mod.run_metrics(
        traj,
        sim.events,
        sim.polyline,
        lane_half_width=config.map.lane_half_width,
        terminal_event="agent_failure" if disconnected else sim.terminal_event,
    )
    if disconnected:
        run = metrics_mod.RunMetrics(
            distance=run.distance,
            survival=traj.samples[-1].state.t,
            lateral_median=run.lateral_median,
            infraction_time=run.infraction_time,
            terminal_event="agent_failure",
        )
    else:
        try:
            agent.end_episode(run)
        except (ProtocolError, OSError):
            pass
    return run, traj


def run_evaluation(
    agent,
    plan: EvaluationPlan,
    store: str | None = None,
    submission_id: str | None = None,
):
    """Evaluate an agent over the full plan and aggregate the runs.

    Failed runs (agent errors, invalid maps) score as immediate termination.
    Hidden map documents flow to the agent during episodes but never into
    results or the leaderboard.
    """
    if plan.challenge == "AMOD":
        raise ValueError("AMOD evaluation runs through the scenario pipeline")
    runs = []
    map_index = 0
    for map_doc, _hidden in plan.iter_maps():
        for run_index in range(plan.runs_per_map):
            seed = run_seed(plan, map_index, run_index)
            try:
                config = plan.episode_config(map_doc, seed)
                run, _traj = run_episode(agent, config, plan.timing)
            except (AgentFailure, ProtocolError, OSError) as exc:
                log.warning("run %d/%d failed: %s", map_index, run_index, exc)
                run = metrics_mod.RunMetrics(
                    distance=0.0,
                    survival=0.0,
                    lateral_median=metrics_mod.DEFAULT_LANE_HALF_WIDTH,
                    infraction_time=0.0,
                    terminal_event="agent_failure",
                )
            runs.append(run)
        map_index += 1
    score = metrics_mod.aggregate_runs(runs)
    try:
        agent.finish(score)
    except (ProtocolError, OSError):
        pass
    if store is not None and submission_id is not None:
        leaderboard_append(
            store,
            {
                "id": submission_id,
                "timestamp": time.time(),
                "challenge": plan.challenge,
                "score": score.to_record(),
                "plan_hash": plan.plan_hash(),
            },
        )
    return score


_LEADERBOARD_LOCK = threading.Lock()


def leaderboard_append(store: str, entry: dict) -> None:
    """Append one entry to the JSON-lines store; duplicate ids per challenge
    are rejected and the file is left untouched."""
    for key in ("id", "challenge", "score"):
        if key not in entry:
            raise ValueError(f"leaderboard entry missing {key!r}")
    line = json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n"
    with _LEADERBOARD_LOCK:
        existing = _read_entries(store)
        if any(
            e.get("id") == entry["id"] and e.get("challenge") == entry["challenge"]
            for e in existing
        ):
            raise ValueError(f"duplicate leaderboard id {entry['id']!r}")
        with open(store, "a", encoding="utf-8") as fh:
            fh.write(line)


def _read_entries(store: str) -> list[dict]:
    entries = []
    try:
        with open(store, "r", encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    entries.append(json.loads(line))
                except json.JSONDecodeError:
                    log.warning("skipping corrupt leaderboard line %d", i + 1)
    except FileNotFoundError:
        pass
    return entries


def leaderboard_read(store: str, challenge: str) -> list[dict]:
    """Entries for one challenge, best first per the competition rank."""
    entries = [e for e in _read_entries(store) if e.get("challenge") == challenge]
    if not entries:
        return []
    scored = []
    for e in entries:
        try:
            score = metrics_mod.SubmissionScore.from_record(e["score"])
        except (KeyError, TypeError):
            log.warning("skipping malformed leaderboard entry %r", e.get("id"))
            continue
        scored.append((e, score))
    ranked = metrics_mod.rank([(i, s) for i, (_e, s) in enumerate(scored)])
    return [scored[i][0] for i, _s in ranked]


def serve(
    host: str,
    port: int,
    plan: EvaluationPlan,
    store: str | None = None,
    max_connections: int | None = None,
    ready_event: threading.Event | None = None,
    sock: socket.socket | None = None,
):
    """Accept agent connections and evaluate each against the plan."""
    own_sock = sock is None
    if own_sock:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, port))
    sock.listen(8)
    if ready_event is not None:
        ready_event.set()
    served = 0
    try:
        while max_connections is None or served < max_connections:
            conn, addr = sock.accept()
            served += 1
            stream = MessageStream(conn)
            try:
                agent = RemoteAgent(stream, plan.challenge, plan.dt, plan.timing)
                submission_id = f"{agent.agent_name}-{served}-{int(time.time() * 1000)}"
                score = run_evaluation(
                    agent,
                    plan,
                    store=store,
                    submission_id=submission_id if store else None,
                )
                log.info("evaluated %s: %s", agent.agent_name, score)
            except (AgentFailure, ProtocolError, OSError, ValueError) as exc:
                log.warning("connection from %s failed: %s", addr, exc)
            finally:
                stream.close()
    finally:
        if own_sock:
            sock.close()


def evaluate_remote(host: str, port: int, plan: EvaluationPlan, **kwargs):
    """Dial a listening agent and evaluate it against the plan."""
    sock = socket.create_connection((host, port))
    stream = MessageStream(sock)
    try:
        agent = RemoteAgent(stream, plan.challenge, plan.dt, plan.timing)
        return run_evaluation(agent, plan, **kwargs)
    finally:
        stream.close()


def serve_builtin_agent(host: str, port: int, name: str, agent: Agent | None = None):
    """Run a builtin agent as a wire-protocol client against a harness.

    Returns the SubmissionScore record announced by the harness.
    """
    agent = agent or make_builtin(name)
    sock = socket.create_connection((host, port))
    stream = MessageStream(sock)
    try:
        stream.send(Hello(agent_name=name))
        ack = stream.recv()
        if isinstance(ack, ErrorMsg):
            raise ProtocolError(ack.code, ack.detail)
        if not isinstance(ack, HelloAck):
            raise ProtocolError("bad_field", "expected hello_ack")
        dt = ack.dt
        while True:
            msg = stream.recv()
            if isinstance(msg, EpisodeStart):
                agent.begin_episode(msg.map_document, msg.seed, dt)
            elif isinstance(msg, ObservationMsg):
                cmd = agent.act(msg_to_observation(msg))
                stream.send(ActionMsg(v=cmd.v, omega=cmd.omega))
            elif isinstance(msg, EpisodeEnd):
                continue
            elif isinstance(msg, EvaluationResult):
                return msg.submission_score
            elif isinstance(msg, ErrorMsg):
                raise ProtocolError(msg.code, msg.detail)
            else:
                raise ProtocolError("unknown_type", type(msg).__name__)
    finally:
        stream.close()
