"""Fleet-level mobility-on-demand simulation on a road graph.

Epoch-stepped dispatch with continuous vehicle motion between epochs:
the dispatcher sees open requests and vehicle states every epoch_dt seconds,
pickups and dropoffs complete at exact travel times.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import random
from dataclasses import dataclass, field

VEHICLE_IDLE = "idle"
VEHICLE_TO_PICKUP = "to_pickup"
VEHICLE_WITH_CUSTOMER = "with_customer"
VEHICLE_REBALANCING = "rebalancing"

MODE_SERVICE_QUALITY = "service_quality"
MODE_EFFICIENCY = "efficiency"
MODE_FLEET_SIZE = "fleet_size"
SCORING_MODES = (MODE_SERVICE_QUALITY, MODE_EFFICIENCY, MODE_FLEET_SIZE)


class AmodError(ValueError):
    pass


@dataclass(eq=False)
class RoadGraph:
    """Directed road graph with travel times (s) and lengths (m)."""

    positions: dict[str, tuple[float, float]]
    edges: dict[str, list[tuple[str, float, float]]]  # node -> [(to, time, length)]

    def __post_init__(self) -> None:
        for node, outs in self.edges.items():
            if node not in self.positions:
                raise AmodError(f"edge from unknown node {node!r}")
            for to, t, length in outs:
                if to not in self.positions:
                    raise AmodError(f"edge to unknown node {to!r}")
                if t <= 0 or length <= 0:
                    raise AmodError("edge weights must be positive")
            outs.sort()
        for node in self.positions:
            self.edges.setdefault(node, [])
        if not self.strongly_connected():
            raise AmodError("road graph must be strongly connected")

    @property
    def nodes(self) -> list[str]:
        return sorted(self.positions)

    def strongly_connected(self) -> bool:
        nodes = self.nodes
        if not nodes:
            return False

        def reach(start, adjacency):
            seen = {start}
            stack = [start]
            while stack:
                for to in adjacency.get(stack.pop(), ()):
                    if to not in seen:
                        seen.add(to)
                        stack.append(to)
            return seen

        forward = {n: [e[0] for e in outs] for n, outs in self.edges.items()}
        backward: dict[str, list[str]] = {n: [] for n in nodes}
        for n, outs in self.edges.items():
            for to in outs:
                backward[to[0]].append(n)
        n0 = nodes[0]
        return len(reach(n0, forward)) == len(nodes) and len(
            reach(n0, backward)
        ) == len(nodes)

    @classmethod
    def from_json(cls, obj: dict) -> "RoadGraph":
        try:
            positions = {
                str(n["id"]): (float(n["x"]), float(n["y"])) for n in obj["nodes"]
            }
            edges: dict[str, list[tuple[str, float, float]]] = {}
            for e in obj["edges"]:
                edges.setdefault(str(e["from"]), []).append(
                    (str(e["to"]), float(e["travel_time_s"]), float(e["length_m"]))
                )
        except (KeyError, TypeError) as exc:
            raise AmodError(f"malformed road graph: {exc}") from None
        return cls(positions, edges)


@dataclass(frozen=True)
class Request:
    id: str
    origin: str
    destination: str
    t_request: float

    def __post_init__(self) -> None:
        if self.origin == self.destination:
            raise AmodError("request origin must differ from destination")


@dataclass
class Vehicle:
    """Dispatcher-visible vehicle state."""

    id: int
    node: str
    status: str = VEHICLE_IDLE
    odometer_total: float = 0.0
    odometer_empty: float = 0.0


@dataclass(frozen=True)
class DispatchCommand:
    vehicle_id: int
    action: str  # "assign" | "rebalance" | "hold"
    request_id: str | None = None
    node: str | None = None

    @classmethod
    def assign(cls, vehicle_id: int, request_id: str) -> "DispatchCommand":
        return cls(vehicle_id, "assign", request_id=request_id)

    @classmethod
    def rebalance(cls, vehicle_id: int, node: str) -> "DispatchCommand":
        return cls(vehicle_id, "rebalance", node=node)

    @classmethod
    def hold(cls, vehicle_id: int) -> "DispatchCommand":
        return cls(vehicle_id, "hold")


@dataclass(frozen=True)
class FleetMetrics:
    mean_wait: float
    p95_wait: float
    empty_distance: float
    total_distance: float
    unserved: int
    served: int = 0
    invalid_commands: int = 0

    def to_record(self) -> dict:
        return {
            "mean_wait_s": self.mean_wait,
            "p95_wait_s": self.p95_wait,
            "empty_distance_m": self.empty_distance,
            "total_distance_m": self.total_distance,
            "unserved": self.unserved,
            "served": self.served,
            "invalid_commands": self.invalid_commands,
        }


class TravelTimes:
    """Dijkstra with lexicographic tie-break, cached per source node."""

    def __init__(self, graph: RoadGraph):
        self.graph = graph
        self._cache: dict[str, dict[str, tuple[float, tuple[str, ...]]]] = {}

    def _run_dijkstra(self, source: str) -> dict[str, tuple[float, tuple[str, ...]]]:
        best: dict[str, tuple[float, tuple[str, ...]]] = {}
        heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (source,))]
        while heap:
            t, path = heapq.heappop(heap)
            node = path[-1]
            if node in best:
                continue
            best[node] = (t, path)
            for to, w, _length in self.graph.edges[node]:
                if to not in best:
                    heapq.heappush(heap, (t + w, path + (to,)))
        return best

    def query(self, a: str, b: str) -> tuple[float, tuple[str, ...]]:
        if a not in self.graph.positions or b not in self.graph.positions:
            raise AmodError(f"unknown node {a!r} or {b!r}")
        if a not in self._cache:
            self._cache[a] = self._run_dijkstra(a)
        try:
            return self._cache[a][b]
        except KeyError:
            raise AmodError(f"node {b!r} unreachable from {a!r}") from None

    def time(self, a: str, b: str) -> float:
        return self.query(a, b)[0]

    def path_length(self, path) -> float:
        length = 0.0
        for u, v in zip(path, path[1:]):
            for to, _t, l in self.graph.edges[u]:
                if to == v:
                    length += l
                    break
            else:
                raise AmodError(f"no edge {u!r} -> {v!r}")
        return length


def shortest_travel_time(graph: RoadGraph, a: str, b: str) -> tuple[float, list[str]]:
    """Minimal travel time and path; equal-time paths resolve to the
    lexicographically smallest node sequence."""
    t, path = TravelTimes(graph).query(a, b)
    return t, list(path)


def hungarian(cost) -> tuple[list[int | None], float]:
    """Minimum-cost assignment of rows to columns (perfect on the smaller
    side). Returns (row assignment, total cost); among optimal assignments
    the lexicographically smallest assignment vector wins (unassigned rows,
    possible when rows exceed columns, sort after any column).
    """
    rows = [list(map(float, r)) for r in cost]
    n = len(rows)
    m = len(rows[0]) if n else 0
    if any(len(r) != m for r in rows):
        raise AmodError("cost matrix must be rectangular")
    if any(c < 0 or not math.isfinite(c) for r in rows for c in r):
        raise AmodError("costs must be finite and non-negative")
    if n == 0 or m == 0:
        return [None] * n, 0.0

    base = _solve_rectangular(rows)
    # refine to the lexicographically smallest optimal assignment vector
    assignment: list[int | None] = [None] * n
    used: set[int] = set()
    remaining_cost = base
    rows_left = list(range(n))
    for i in range(n):
        rows_left.remove(i)
        choices: list[int | None] = [c for c in range(m) if c not in used]
        if len(rows_left) + 1 > m - len(used):
            choices.append(None)  # more rows than free columns: skipping allowed
        for c in choices:
            fixed = 0.0 if c is None else rows[i][c]
            sub = [
                [rows[r][col] for col in range(m) if col not in used and col != c]
                for r in rows_left
            ]
            rest = _solve_rectangular(sub) if rows_left and sub and sub[0] else 0.0
            if fixed + rest <= remaining_cost + 1e-9:
                assignment[i] = c
                if c is not None:
                    used.add(c)
                remaining_cost -= fixed
                break
    total = sum(rows[i][c] for i, c in enumerate(assignment) if c is not None)
    return assignment, total


def _solve_rectangular(rows) -> float:
    """Optimal assignment value via the potentials (Jonker-Volgenant style)
    algorithm; pads to rows <= cols by transposition."""
    n = len(rows)
    if n == 0:
        return 0.0
    m = len(rows[0])
    if m == 0:
        return 0.0
    if n > m:
        rows = [[rows[i][j] for i in range(n)] for j in range(m)]
        n, m = m, n
    INF = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)  # p[j]: row matched to column j (1-based; 0 = free)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        way = [0] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = rows[i0 - 1][j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    total = 0.0
    for j in range(1, m + 1):
        if p[j]:
            total += rows[p[j] - 1][j - 1]
    return total


def _ordered_open_requests(open_requests):
    # ties on t_request keep input order so metrics are invariant to
    # request id relabeling
    return sorted(
        enumerate(open_requests), key=lambda pair: (pair[1].t_request, pair[0])
    )


def greedy_dispatcher(travel: TravelTimes, open_requests, vehicles) -> list[DispatchCommand]:
    """Nearest-idle-vehicle assignment in request arrival order."""
    idle = [v for v in vehicles if v.status == VEHICLE_IDLE]
    commands = []
    taken: set[int] = set()
    for _, req in _ordered_open_requests(open_requests):
        best = None
        for v in idle:
            if v.id in taken:
                continue
            t = travel.time(v.node, req.origin)
            if best is None or t < best[0] or (t == best[0] and v.id < best[1].id):
                best = (t, v)
        if best is not None:
            taken.add(best[1].id)
            commands.append(DispatchCommand.assign(best[1].id, req.id))
    for v in idle:
        if v.id not in taken:
            commands.append(DispatchCommand.hold(v.id))
    return commands


def matching_dispatcher(travel: TravelTimes, open_requests, vehicles) -> list[DispatchCommand]:
    """Epoch-optimal assignment: Hungarian matching on pickup travel times."""
    idle = sorted(
        (v for v in vehicles if v.status == VEHICLE_IDLE), key=lambda v: v.id
    )
    ordered = _ordered_open_requests(open_requests)
    if not idle or not ordered:
        return [DispatchCommand.hold(v.id) for v in idle]
    cost = [[travel.time(v.node, req.origin) for v in idle] for _, req in ordered]
    assignment, _total = hungarian(cost)
    commands = []
    taken: set[int] = set()
    for (_, req), col in zip(ordered, assignment):
        if col is not None:
            v = idle[col]
            taken.add(v.id)
            commands.append(DispatchCommand.assign(v.id, req.id))
    for v in idle:
        if v.id not in taken:
            commands.append(DispatchCommand.hold(v.id))
    return commands


def hold_dispatcher(travel: TravelTimes, open_requests, vehicles) -> list[DispatchCommand]:
    return [DispatchCommand.hold(v.id) for v in vehicles if v.status == VEHICLE_IDLE]


DISPATCHERS = {
    "greedy": greedy_dispatcher,
    "matching": matching_dispatcher,
    "hold": hold_dispatcher,
}


@dataclass
class _Leg:
    kind: str  # "pickup" | "dropoff" | "rebalance"
    path: tuple[str, ...]
    depart: float
    arrive: float
    length: float
    request_id: str | None = None


@dataclass
class _VehicleState:
    vehicle: Vehicle
    legs: list[_Leg] = field(default_factory=list)

    def status_at(self) -> str:
        if not self.legs:
            return VEHICLE_IDLE
        kind = self.legs[0].kind
        return {
            "pickup": VEHICLE_TO_PICKUP,
            "dropoff": VEHICLE_WITH_CUSTOMER,
            "rebalance": VEHICLE_REBALANCING,
        }[kind]


def simulate_fleet(
    graph: RoadGraph,
    requests,
    fleet_size: int,
    dispatcher,
    horizon: float,
    epoch_dt: float = 10.0,
) -> FleetMetrics:
    """Run the epoch-stepped dispatch loop and measure fleet performance.

    Vehicles start idle, distributed round-robin over sorted nodes. Invalid
    dispatch commands are ignored and counted. Deterministic per inputs.
    """
    if fleet_size < 1:
        raise AmodError("fleet_size must be at least 1")
    if epoch_dt <= 0 or horizon <= 0:
        raise AmodError("horizon and epoch_dt must be positive")
    requests = list(requests)
    if any(
        a.t_request > b.t_request for a, b in zip(requests, requests[1:])
    ):
        raise AmodError("requests must be sorted by t_request")
    travel = TravelTimes(graph)
    nodes = graph.nodes
    fleet = [
        _VehicleState(Vehicle(id=i, node=nodes[i % len(nodes)]))
        for i in range(fleet_size)
    ]
    by_id = {vs.vehicle.id: vs for vs in fleet}
    t_pickup: dict[str, float] = {}
    assigned: set[str] = set()
    req_by_id = {r.id: r for r in requests}
    if len(req_by_id) != len(requests):
        raise AmodError("request ids must be unique")
    invalid = 0

    def settle(vs: _VehicleState, now: float) -> None:
        while vs.legs and vs.legs[0].arrive <= now + 1e-12:
            leg = vs.legs.pop(0)
            vs.vehicle.node = leg.path[-1]
            vs.vehicle.odometer_total += leg.length
            if leg.kind != "dropoff":
                vs.vehicle.odometer_empty += leg.length
            if leg.kind == "pickup":
                t_pickup[leg.request_id] = leg.arrive

    epochs = itertools.count()
    for k in epochs:
        now = k * epoch_dt
        if now >= horizon:
            break
        for vs in fleet:
            settle(vs, now)
            vs.vehicle.status = vs.status_at()
        open_requests = [
            r for r in requests if r.t_request <= now and r.id not in assigned
        ]
        commands = dispatcher(travel, open_requests, [vs.vehicle for vs in fleet])
        seen_vehicles: set[int] = set()
        for cmd in commands:
            vs = by_id.get(cmd.vehicle_id)
            if vs is None or cmd.vehicle_id in seen_vehicles:
                invalid += 1
                continue
            seen_vehicles.add(cmd.vehicle_id)
            if cmd.action == "hold":
                continue
            if vs.status_at() != VEHICLE_IDLE:
                invalid += 1
                continue
            if cmd.action == "assign":
                req = req_by_id.get(cmd.request_id)
                if req is None or req.id in assigned or req.t_request > now:
                    invalid += 1
                    continue
                assigned.add(req.id)
                t1, path1 = travel.query(vs.vehicle.node, req.origin)
                t2, path2 = travel.query(req.origin, req.destination)
                pickup_at = now + t1
                vs.legs.append(
                    _Leg(
                        "pickup",
                        path1,
                        now,
                        pickup_at,
                        travel.path_length(path1),
                        req.id,
                    )
                )
                vs.legs.append(
                    _Leg(
                        "dropoff",
                        path2,
                        pickup_at,
                        pickup_at + t2,
                        travel.path_length(path2),
                        req.id,
                    )
                )
            elif cmd.action == "rebalance":
                if cmd.node not in graph.positions:
                    invalid += 1
                    continue
                t1, path1 = travel.query(vs.vehicle.node, cmd.node)
                vs.legs.append(
                    _Leg("rebalance", path1, now, now + t1, travel.path_length(path1))
                )
            else:
                invalid += 1

    for vs in fleet:
        settle(vs, horizon)
        vs.vehicle.status = vs.status_at()

    waits = sorted(
        t_pickup[r.id] - r.t_request for r in requests if r.id in t_pickup
    )
    served = len(waits)
    mean_wait = sum(waits) / served if served else 0.0
    p95 = waits[max(0, math.ceil(0.95 * served) - 1)] if served else 0.0
    empty = sum(vs.vehicle.odometer_empty for vs in fleet)
    total = sum(vs.vehicle.odometer_total for vs in fleet)
    return FleetMetrics(
        mean_wait=mean_wait,
        p95_wait=p95,
        empty_distance=empty,
        total_distance=total,
        unserved=len(requests) - served,
        served=served,
        invalid_commands=invalid,
    )


@dataclass(frozen=True)
class ScoreRefs:
    wait_ref: float
    empty_ref: float
    wait_sla: float = 300.0

    def __post_init__(self) -> None:
        if self.wait_ref <= 0 or self.empty_ref <= 0:
            raise AmodError("reference scales must be positive")
        if self.wait_sla <= 0:
            raise AmodError("wait_sla must be positive")


def score_amod(
    metrics: FleetMetrics, mode: str, fleet_size: int, refs: ScoreRefs
) -> dict:
    """Score a fleet run under one of the three AMOD regimes.

    service_quality weights waiting 0.9 / empty distance 0.1; efficiency
    flips the weights; both are lower-is-better. fleet_size passes when the
    p95 wait meets the SLA (inclusive) with nobody unserved; smaller passing
    fleets rank better.
    """
    if mode not in SCORING_MODES:
        raise AmodError(f"unknown scoring mode {mode!r}")
    record = {
        "mode": mode,
        "fleet_size": fleet_size,
        "mean_wait_s": metrics.mean_wait,
        "p95_wait_s": metrics.p95_wait,
        "empty_distance_m": metrics.empty_distance,
        "unserved": metrics.unserved,
    }
    wait_term = metrics.mean_wait / refs.wait_ref
    empty_term = metrics.empty_distance / refs.empty_ref
    if mode == MODE_SERVICE_QUALITY:
        record["score"] = 0.9 * wait_term + 0.1 * empty_term
    elif mode == MODE_EFFICIENCY:
        record["score"] = 0.1 * wait_term + 0.9 * empty_term
    else:
        record["pass"] = metrics.p95_wait <= refs.wait_sla and metrics.unserved == 0
        record["value"] = fleet_size
    return record


@dataclass
class Scenario:
    graph: RoadGraph
    requests: list[Request]
    fleet_size: int
    mode: str
    refs: ScoreRefs
    horizon: float
    epoch_dt: float = 10.0
    dispatcher: str = "matching"


def poisson_requests(graph: RoadGraph, rate_per_s: float, horizon_s: float, seed: int):
    """Seeded Poisson request stream with uniform origin/destination pairs."""
    if rate_per_s <= 0 or horizon_s <= 0:
        raise AmodError("rate and horizon must be positive")
    rng = random.Random(seed)
    nodes = graph.nodes
    if len(nodes) < 2:
        raise AmodError("need at least two nodes for requests")
    out = []
    t = 0.0
    i = 0
    while True:
        t += rng.expovariate(rate_per_s)
        if t >= horizon_s:
            break
        origin = rng.choice(nodes)
        dest = rng.choice(nodes)
        while dest == origin:
            dest = rng.choice(nodes)
        out.append(Request(id=f"r{i}", origin=origin, destination=dest, t_request=t))
        i += 1
    return out


def load_scenario(text: str) -> Scenario:
    """Parse a scenario document (see README for the schema)."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AmodError(f"malformed scenario: {exc}") from None
    graph = RoadGraph.from_json(obj["graph"])
    if "requests" in obj:
        requests = [
            Request(
                id=str(r["id"]),
                origin=str(r["origin"]),
                destination=str(r["destination"]),
                t_request=float(r["t_request_s"]),
            )
            for r in obj["requests"]
        ]
        requests.sort(key=lambda r: r.t_request)
        horizon = float(obj.get("horizon_s") or (requests[-1].t_request + 3600.0))
    elif "poisson" in obj:
        spec = obj["poisson"]
        horizon = float(obj.get("horizon_s") or spec["horizon_s"])
        requests = poisson_requests(
            graph, float(spec["rate_per_s"]), float(spec["horizon_s"]), int(spec["seed"])
        )
    else:
        raise AmodError("scenario needs 'requests' or 'poisson'")
    refs_obj = obj.get("refs", {})
    refs = ScoreRefs(
        wait_ref=float(refs_obj.get("wait_ref_s", 300.0)),
        empty_ref=float(refs_obj.get("empty_ref_m", 10_000.0)),
        wait_sla=float(refs_obj.get("wait_sla_s", 300.0)),
    )
    mode = obj.get("mode", MODE_SERVICE_QUALITY)
    dispatcher = obj.get("dispatcher", "matching")
    if dispatcher not in DISPATCHERS:
        raise AmodError(f"unknown dispatcher {dispatcher!r}")
    return Scenario(
        graph=graph,
        requests=requests,
        fleet_size=int(obj["fleet_size"]),
        mode=mode,
        refs=refs,
        horizon=horizon,
        epoch_dt=float(obj.get("epoch_dt_s", 10.0)),
        dispatcher=dispatcher,
    )


def run_scenario(scenario: Scenario) -> tuple[FleetMetrics, dict]:
    metrics = simulate_fleet(
        scenario.graph,
        scenario.requests,
        scenario.fleet_size,
        DISPATCHERS[scenario.dispatcher],
        scenario.horizon,
        scenario.epoch_dt,
    )
    record = score_amod(metrics, scenario.mode, scenario.fleet_size, scenario.refs)
    return metrics, record
