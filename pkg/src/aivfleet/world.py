"""Circulation plan: typed directed graph, shortest-path routing, station occupancy."""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

__all__ = [
    "NodeKind",
    "RoutingError",
    "GraphError",
    "CirculationGraph",
    "StationState",
    "validate_graph",
    "shortest_path",
    "distances_to_stations",
    "load_graph",
]


class NodeKind(str, Enum):
    WAYPOINT = "waypoint"
    ENTRY = "entry_treadmill"
    EXIT = "exit_treadmill"
    STATION = "charging_station"


class RoutingError(Exception):
    pass


class GraphError(Exception):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True, eq=False)
class CirculationGraph:
    """Immutable after construction; all-pairs routes are computed lazily and cached."""

    nodes: dict[str, NodeKind]
    edges: tuple[tuple[str, str, float], ...]
    _adj: dict[str, list[tuple[str, float]]] = field(init=False, repr=False)
    _length: dict[tuple[str, str], float] = field(init=False, repr=False)
    _routes: dict[str, dict[str, tuple[tuple[str, ...], float]]] = field(init=False, repr=False)

    def __post_init__(self):
        nodes = {str(k): NodeKind(v) for k, v in self.nodes.items()}
        edges = tuple((str(a), str(b), float(w)) for a, b, w in self.edges)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        adj: dict[str, list[tuple[str, float]]] = {n: [] for n in nodes}
        length = {}
        for a, b, w in edges:
            if a in adj:
                adj[a].append((b, w))
            key = (a, b)
            length[key] = min(w, length.get(key, w))
        for out in adj.values():
            out.sort()
        object.__setattr__(self, "_adj", adj)
        object.__setattr__(self, "_length", length)
        object.__setattr__(self, "_routes", {})

    def of_kind(self, kind: NodeKind) -> list[str]:
        return sorted(n for n, k in self.nodes.items() if k is kind)

    @property
    def entry(self) -> str:
        return self.of_kind(NodeKind.ENTRY)[0]

    @property
    def exits(self) -> list[str]:
        return self.of_kind(NodeKind.EXIT)

    @property
    def stations(self) -> list[str]:
        return self.of_kind(NodeKind.STATION)

    @property
    def waypoints(self) -> list[str]:
        return self.of_kind(NodeKind.WAYPOINT)

    def successors(self, node: str) -> list[tuple[str, float]]:
        return self._adj[node]

    def edge_length(self, a: str, b: str) -> float:
        return self._length[(a, b)]

    def routes_from(self, source: str) -> dict[str, tuple[tuple[str, ...], float]]:
        """Shortest paths from ``source`` to every reachable node.

        Equal-length paths are resolved by the lexicographically smallest
        node sequence, which keeps every run reproducible.
        """
        cached = self._routes.get(source)
        if cached is not None:
            return cached
        if source not in self.nodes:
            raise RoutingError(f"unknown node {source!r}")
        settled: dict[str, tuple[tuple[str, ...], float]] = {}
        heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (source,))]
        while heap:
            dist, path = heapq.heappop(heap)
            node = path[-1]
            if node in settled:
                continue
            settled[node] = (path, dist)
            for nxt, w in self._adj[node]:
                if nxt not in settled:
                    heapq.heappush(heap, (dist + w, path + (nxt,)))
        self._routes[source] = settled
        return settled

    def distance(self, a: str, b: str) -> float:
        return shortest_path(self, a, b)[1]

    @property
    def diameter(self) -> float:
        """Longest finite shortest-path distance."""
        return max(d for n in self.nodes for _, d in self.routes_from(n).values())

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n, "kind": k.value} for n, k in self.nodes.items()],
            "edges": [{"from": a, "to": b, "length_m": w} for a, b, w in self.edges],
        }


def shortest_path(g: CirculationGraph, source: str, target: str) -> tuple[list[str], float]:
    if target not in g.nodes:
        raise RoutingError(f"unknown node {target!r}")
    found = g.routes_from(source).get(target)
    if found is None:
        raise RoutingError(f"{target} is unreachable from {source}")
    path, dist = found
    return list(path), dist


def distances_to_stations(g: CirculationGraph, source: str) -> list[tuple[str, float]]:
    pairs = [(s, shortest_path(g, source, s)[1]) for s in g.stations]
    return sorted(pairs, key=lambda p: (p[1], p[0]))


def validate_graph(g: CirculationGraph) -> list[str]:
    """Every violated invariant, as human-readable strings. Empty means ok."""
    violations = []
    entries = g.of_kind(NodeKind.ENTRY)
    if len(entries) != 1:
        violations.append(f"entry count: expected exactly 1 entry treadmill, found {len(entries)}")
    if not g.exits:
        violations.append("exit count: expected at least 1 exit treadmill, found 0")
    if len(g.stations) != 2:
        violations.append(f"station count: expected exactly 2 charging stations, found {len(g.stations)}")
    for a, b, w in g.edges:
        if not w > 0:
            violations.append(f"edge {a}->{b} has non-positive length {w}")
        for n in (a, b):
            if n not in g.nodes:
                violations.append(f"edge {a}->{b} references unknown node {n}")
    if violations and any("unknown node" in v for v in violations):
        return violations
    for entry in entries:
        reach = _reachable(g, entry)
        for n in g.exits + g.stations:
            if n not in reach:
                violations.append(f"{n} is unreachable from entry {entry}")
            if entry not in _reachable(g, n):
                violations.append(f"entry {entry} is unreachable from {n}")
    return violations


def _reachable(g: CirculationGraph, source: str) -> set[str]:
    seen = {source}
    todo = deque([source])
    while todo:
        node = todo.popleft()
        for nxt, _ in g._adj.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return seen


def graph_from_dict(doc: dict) -> CirculationGraph:
    try:
        nodes = {n["id"]: NodeKind(n["kind"]) for n in doc["nodes"]}
        edges = tuple((e["from"], e["to"], e["length_m"]) for e in doc["edges"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphError([f"malformed graph document: {exc}"]) from exc
    return CirculationGraph(nodes, edges)


def load_graph(path: str | Path, validate: bool = True) -> CirculationGraph:
    with open(path) as fh:
        g = graph_from_dict(json.load(fh))
    if validate:
        problems = validate_graph(g)
        if problems:
            raise GraphError(problems)
    return g


@dataclass
class StationState:
    """One charging slot with a FIFO waiting line."""

    station: str
    occupant: int | None = None
    waiting: deque = field(default_factory=deque)

    @property
    def free(self) -> bool:
        return self.occupant is None and not self.waiting

    def arrive(self, agent_id: int) -> bool:
        """Returns True when the agent is admitted straight away."""
        if agent_id == self.occupant or agent_id in self.waiting:
            raise ValueError(f"AIV {agent_id} already at station {self.station}")
        if self.free:
            self.occupant = agent_id
            return True
        self.waiting.append(agent_id)
        return False

    def admit_next(self) -> int | None:
        if self.occupant is None and self.waiting:
            self.occupant = self.waiting.popleft()
            return self.occupant
        return None

    def release(self, agent_id: int) -> None:
        if self.occupant != agent_id:
            raise ValueError(f"AIV {agent_id} is not charging at {self.station}")
        self.occupant = None


def default_graph_path() -> Path:
    return Path(__file__).parent / "data" / "graph_default.json"


def iter_edges_on_path(path: Iterable[str]):
    path = list(path)
    return zip(path, path[1:])
