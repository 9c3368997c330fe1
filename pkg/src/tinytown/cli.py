"""The `engine` command line.

Subcommands: simulate, evaluate, serve, agent, map gen, amod, leaderboard.
Option values resolve as flags > ENGINE_* environment variables > config
file (--config or ENGINE_CONFIG) > defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import amod as amod_mod
from . import harness, metrics, svgplot
from .baselines import make_builtin, observation_kinds_for
from .sim import EpisodeConfig
from .world import generate_random_map, load_map, serialize_map


def _load_config_file(path: str | None) -> dict:
    path = path or os.environ.get("ENGINE_CONFIG")
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError("config file must hold a JSON object")
    return obj


def _resolve(args, config: dict, name: str, default=None, cast=str):
    """flags > ENGINE_<NAME> env > config file > default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    env = os.environ.get(f"ENGINE_{name.upper()}")
    if env is not None:
        return cast(env)
    if name in config:
        return config[name]
    return default


def _read_plan(path: str) -> harness.EvaluationPlan:
    with open(path, "r", encoding="utf-8") as fh:
        return harness.EvaluationPlan.from_json(json.load(fh))


def _cmd_simulate(args, config) -> int:
    with open(args.map, "r", encoding="utf-8") as fh:
        document = fh.read()
    world = load_map(document)
    agent = make_builtin(args.agent)
    episode = EpisodeConfig(
        map=world,
        seed=args.seed,
        max_duration=args.duration,
        observations=observation_kinds_for(agent),
    )
    run, traj = harness.run_episode(
        harness.InProcessAgent(agent), episode, harness.TimingMode()
    )
    print(run.to_json())
    svg_out = _resolve(args, config, "svg")
    if svg_out:
        with open(svg_out, "w", encoding="utf-8") as fh:
            fh.write(svgplot.emit_trajectory_svg(traj, world))
    return 0


def _cmd_evaluate(args, config) -> int:
    plan = _read_plan(args.plan)
    store = _resolve(args, config, "store")
    submission_id = args.id
    if args.connect:
        host, _, port = args.connect.rpartition(":")
        score = harness.evaluate_remote(
            host or "127.0.0.1",
            int(port),
            plan,
            store=store if submission_id else None,
            submission_id=submission_id,
        )
    elif args.agent:
        agent = harness.InProcessAgent(make_builtin(args.agent))
        score = harness.run_evaluation(
            agent,
            plan,
            store=store if submission_id else None,
            submission_id=submission_id,
        )
    else:
        print("evaluate needs --agent or --connect", file=sys.stderr)
        return 2
    print(score.to_json(submission_id))
    return 0


def _cmd_serve(args, config) -> int:
    plan = _read_plan(args.plan)
    host = _resolve(args, config, "host", "127.0.0.1")
    port = _resolve(args, config, "port", 7777, int)
    store = _resolve(args, config, "store")
    print(f"serving evaluation plan on {host}:{port}", file=sys.stderr)
    harness.serve(host, int(port), plan, store=store, max_connections=args.max_connections)
    return 0


def _cmd_agent(args, config) -> int:
    host, _, port = args.connect.rpartition(":")
    score = harness.serve_builtin_agent(host or "127.0.0.1", int(port), args.builtin)
    print(json.dumps(score, sort_keys=True, separators=(",", ":")))
    return 0


def _cmd_map_gen(args, config) -> int:
    m = generate_random_map(args.seed, args.rows, args.cols)
    print(serialize_map(m))
    return 0


def _cmd_amod(args, config) -> int:
    with open(args.scenario, "r", encoding="utf-8") as fh:
        scenario = amod_mod.load_scenario(fh.read())
    if args.mode:
        scenario.mode = args.mode
    fleet_metrics, record = amod_mod.run_scenario(scenario)
    out = {"metrics": fleet_metrics.to_record(), "score": record}
    print(json.dumps(out, sort_keys=True, separators=(",", ":")))
    store = _resolve(args, config, "store")
    if store and args.id:
        harness.leaderboard_append(
            store,
            {
                "id": args.id,
                "challenge": "AMOD",
                "score_record": record,
                "timestamp": time.time(),
            },
        )
    return 0


def _cmd_leaderboard(args, config) -> int:
    store = _resolve(args, config, "store", "leaderboard.jsonl")
    entries = harness.leaderboard_read(store, args.challenge)
    for entry in entries:
        print(json.dumps(entry, sort_keys=True, separators=(",", ":")))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="engine", description="miniature driving-competition engine"
    )
    parser.add_argument("--config", help="JSON config file with option defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one episode with a builtin agent")
    p.add_argument("--map", required=True, help="map document file")
    p.add_argument("--agent", default="builtin:pure_pursuit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--svg", help="write the trajectory plot here")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("evaluate", help="evaluate an agent against a plan")
    p.add_argument("--plan", required=True, help="evaluation plan file")
    p.add_argument("--agent", help="builtin:<name> to run in-process")
    p.add_argument("--connect", help="HOST:PORT of a listening agent")
    p.add_argument("--id", help="submission id for the leaderboard")
    p.add_argument("--store", help="leaderboard JSON-lines file")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("serve", help="accept agent connections and evaluate them")
    p.add_argument("--plan", required=True)
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--store")
    p.add_argument("--max-connections", type=int, dest="max_connections")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("agent", help="run a builtin agent against a serving harness")
    p.add_argument("--connect", required=True, help="HOST:PORT of the harness")
    p.add_argument("--builtin", default="pure_pursuit")
    p.set_defaults(func=_cmd_agent)

    p_map = sub.add_parser("map", help="map utilities")
    map_sub = p_map.add_subparsers(dest="map_command", required=True)
    p = map_sub.add_parser("gen", help="generate a random closed-loop map")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.set_defaults(func=_cmd_map_gen)

    p = sub.add_parser("amod", help="run a fleet-dispatch scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--mode", choices=amod_mod.SCORING_MODES)
    p.add_argument("--id", help="submission id for the leaderboard")
    p.add_argument("--store")
    p.set_defaults(func=_cmd_amod)

    p = sub.add_parser("leaderboard", help="print ranked leaderboard entries")
    p.add_argument("--challenge", default="LF", choices=harness.CHALLENGES)
    p.add_argument("--store")
    p.set_defaults(func=_cmd_leaderboard)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config_file(args.config)
        return args.func(args, config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
