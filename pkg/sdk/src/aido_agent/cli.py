"""The `aido-agent` command line: connect a policy to a serving harness."""

from __future__ import annotations

import argparse
import json
import sys

from .policies import make_policy
from .session import connect_and_serve
from .wire import WireError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="aido-agent", description="drive a policy against an evaluation harness"
    )
    parser.add_argument("--connect", required=True, help="HOST:PORT of the harness")
    parser.add_argument("--policy", default="lane", choices=("random", "constant", "lane"))
    parser.add_argument("--name", default=None, help="agent name for the handshake")
    parser.add_argument("--v", type=float, default=0.2, help="constant policy speed")
    parser.add_argument("--omega", type=float, default=0.0, help="constant policy turn rate")
    parser.add_argument("--seed", type=int, default=0, help="random policy seed")
    args = parser.parse_args(argv)

    host, _, port = args.connect.rpartition(":")
    kwargs = {}
    if args.policy == "constant":
        kwargs = {"v": args.v, "omega": args.omega}
    elif args.policy == "random":
        kwargs = {"seed": args.seed}
    policy = make_policy(args.policy, **kwargs)
    name = args.name or f"sdk-{args.policy}"
    try:
        summary = connect_and_serve(host or "127.0.0.1", int(port), policy, agent_name=name)
    except (WireError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        json.dumps(
            {
                "agent": summary.agent_name,
                "challenge": summary.challenge,
                "episodes": summary.episodes,
                "submission_score": summary.submission_score,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
