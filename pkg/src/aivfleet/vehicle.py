"""AIV agent: state machine, kinematics on the circulation graph, battery."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .world import CirculationGraph, shortest_path

__all__ = [
    "AgentState",
    "MOVING_STATES",
    "IllegalTransition",
    "BatteryModel",
    "Mission",
    "AivAgent",
    "advance",
    "charge_tick",
    "remaining_workload",
    "availability",
    "mission_energy",
]

EPS = 1e-9


class AgentState(str, Enum):
    IDLE = "Idle"
    TO_PICKUP = "ToPickup"
    CARRYING = "Carrying"
    TO_STATION = "ToStation"
    QUEUED = "QueuedAtStation"
    CHARGING = "Charging"


MOVING_STATES = frozenset({AgentState.TO_PICKUP, AgentState.CARRYING, AgentState.TO_STATION})

_LEGAL = {
    AgentState.IDLE: {AgentState.TO_PICKUP, AgentState.TO_STATION},
    AgentState.TO_PICKUP: {AgentState.CARRYING},
    AgentState.CARRYING: {AgentState.IDLE, AgentState.TO_STATION},
    AgentState.TO_STATION: {AgentState.QUEUED, AgentState.CHARGING},
    AgentState.QUEUED: {AgentState.CHARGING},
    AgentState.CHARGING: {AgentState.IDLE},
}


class IllegalTransition(RuntimeError):
    pass


@dataclass(frozen=True)
class BatteryModel:
    """State of charge is a fraction of a normalised capacity of 1.0."""

    discharge_per_m: float = 2.5e-3
    idle_discharge_per_s: float = 0.0
    charge_rate_per_s: float = 0.05
    speed_exponent: float = 2.0
    enabled: bool = True

    def __post_init__(self):
        if min(self.discharge_per_m, self.idle_discharge_per_s, self.speed_exponent) < 0:
            raise ValueError("battery rates must be non-negative")
        if not self.charge_rate_per_s > 0:
            raise ValueError("charge_rate_per_s must be positive")

    def per_metre(self, speed_factor: float) -> float:
        if not self.enabled:
            return 0.0
        return self.discharge_per_m * speed_factor ** self.speed_exponent


@dataclass
class Mission:
    bag: int
    pickup: str
    dropoff: str
    t_arrival: float = 0.0
    t_assigned: float | None = None
    t_started: float | None = None
    t_pickup: float | None = None
    t_drop: float | None = None

    @property
    def duration(self) -> float | None:
        if self.t_drop is None or self.t_started is None:
            return None
        return self.t_drop - self.t_started


@dataclass
class AivAgent:
    id: int
    node: str
    nominal_speed: float = 1.0
    soc: float = 1.0
    speed_factor: float = 1.0
    state: AgentState = AgentState.IDLE
    edge: tuple[str, str] | None = None
    offset: float = 0.0
    route: list[str] = field(default_factory=list)
    queue: deque = field(default_factory=deque)
    mission: Mission | None = None
    handling_left: float = 0.0
    station: str | None = None
    charge_target: float = 1.0
    stranded: bool = False
    # counters, in ticks / events
    ticks: dict = field(default_factory=lambda: {s: 0 for s in AgentState})
    missions_done: int = 0
    mission_durations: list = field(default_factory=list)
    recharges_done: int = 0
    charge_episode_ticks: list = field(default_factory=list)

    def transition(self, new: AgentState) -> None:
        if new not in _LEGAL[self.state]:
            raise IllegalTransition(f"AIV {self.id}: {self.state.value} -> {new.value}")
        self.state = new

    @property
    def moving(self) -> bool:
        return self.state in MOVING_STATES

    @property
    def route_end(self) -> str:
        """Node where the current leg will finish (current node when stopped)."""
        if self.route:
            return self.route[-1]
        if self.edge is not None:
            return self.edge[1]
        return self.node

    def remaining_route_m(self, g: CirculationGraph) -> float:
        dist = 0.0
        here = self.node
        if self.edge is not None:
            dist += g.edge_length(*self.edge) - self.offset
            here = self.edge[1]
        for nxt in self.route:
            dist += g.edge_length(here, nxt)
            here = nxt
        return dist

    def set_route(self, g: CirculationGraph, target: str) -> None:
        """Plan from the current node; only valid while stopped at a node."""
        if self.edge is not None:
            raise RuntimeError(f"AIV {self.id} is between nodes")
        path, _ = shortest_path(g, self.node, target)
        self.route = path[1:]

    def start_mission(self, g: CirculationGraph, mission: Mission, now: float, handling_s: float) -> None:
        self.transition(AgentState.TO_PICKUP)
        mission.t_started = now
        self.mission = mission
        self.set_route(g, mission.pickup)
        if not self.route:
            self.handling_left = handling_s

    def send_to_station(self, g: CirculationGraph, station: str, target: float) -> None:
        self.transition(AgentState.TO_STATION)
        self.station = station
        self.charge_target = target
        self.set_route(g, station)


def mission_energy(g: CirculationGraph, battery: BatteryModel, start: str, mission: Mission, speed_factor: float = 1.0) -> float:
    dist = g.distance(start, mission.pickup) + g.distance(mission.pickup, mission.dropoff)
    return dist * battery.per_metre(speed_factor)


def advance(agent: AivAgent, dt: float, g: CirculationGraph, battery: BatteryModel, handling_s: float = 5.0) -> list[tuple]:
    """Move ``agent`` along its route for ``dt`` seconds.

    Returns the events that happened, in order: ``("node", id)``,
    ``("pickup", mission)``, ``("drop", mission)``, ``("at_station", id)``
    and ``("fault", reason)``. Handling (loading/unloading) consumes time
    at the pickup and drop-off nodes before the corresponding event.
    """
    events: list[tuple] = []
    if agent.stranded or not agent.moving:
        return events
    if battery.enabled and battery.idle_discharge_per_s:
        agent.soc = max(0.0, agent.soc - battery.idle_discharge_per_s * dt)
    budget = dt
    speed = agent.nominal_speed * agent.speed_factor
    per_m = battery.per_metre(agent.speed_factor)
    while budget > EPS and agent.moving:
        if agent.handling_left > EPS:
            used = min(budget, agent.handling_left)
            agent.handling_left -= used
            budget -= used
            if agent.handling_left <= EPS:
                agent.handling_left = 0.0
                _finish_handling(agent, g, handling_s, events)
            continue
        if agent.edge is None:
            if not agent.route:
                if _reach_destination(agent, g, handling_s, events):
                    break
                continue
            agent.edge = (agent.node, agent.route[0])
            agent.offset = 0.0
        length = g.edge_length(*agent.edge)
        step = min(length - agent.offset, speed * budget)
        if per_m > 0 and step * per_m > agent.soc:
            step = agent.soc / per_m
            agent.offset += step
            agent.soc = 0.0
            agent.stranded = True
            events.append(("fault", f"stranded on {agent.edge[0]}->{agent.edge[1]}"))
            return events
        agent.offset += step
        agent.soc = max(0.0, agent.soc - step * per_m)
        budget -= step / speed
        if length - agent.offset <= EPS:
            agent.node = agent.edge[1]
            agent.edge = None
            agent.offset = 0.0
            agent.route.pop(0)
            events.append(("node", agent.node))
            if not agent.route and _reach_destination(agent, g, handling_s, events):
                break
    return events


def _reach_destination(agent: AivAgent, g: CirculationGraph, handling_s: float, events: list) -> bool:
    """Returns True when the agent stops moving for the engine to take over."""
    if agent.state is AgentState.TO_STATION:
        events.append(("at_station", agent.node))
        return True
    if agent.handling_left <= EPS:
        agent.handling_left = handling_s
        if handling_s <= EPS:
            _finish_handling(agent, g, handling_s, events)
    return False


def _finish_handling(agent: AivAgent, g: CirculationGraph, handling_s: float, events: list) -> None:
    mission = agent.mission
    if agent.state is AgentState.TO_PICKUP:
        agent.transition(AgentState.CARRYING)
        events.append(("pickup", mission))
        agent.set_route(g, mission.dropoff)
        if not agent.route:
            agent.handling_left = handling_s
    elif agent.state is AgentState.CARRYING:
        agent.transition(AgentState.IDLE)
        agent.mission = None
        events.append(("drop", mission))


def charge_tick(agent: AivAgent, dt: float, battery: BatteryModel, target: float | None = None) -> bool:
    """Charge for ``dt`` seconds. Returns True once ``target`` is reached."""
    if agent.state is not AgentState.CHARGING:
        raise IllegalTransition(f"AIV {agent.id} is not charging")
    target = agent.charge_target if target is None else target
    if agent.soc >= target - EPS:
        agent.soc = max(agent.soc, min(1.0, target))
        return True
    agent.soc = min(target, agent.soc + battery.charge_rate_per_s * dt)
    return agent.soc >= target - EPS


def remaining_workload(agent: AivAgent, g: CirculationGraph, battery: BatteryModel, handling_s: float = 5.0) -> float:
    """Seconds of committed work: current leg, queued missions, charging."""
    speed = agent.nominal_speed * agent.speed_factor
    total = agent.handling_left
    total += agent.remaining_route_m(g) / speed
    here = agent.route_end
    if agent.state is AgentState.TO_PICKUP and agent.mission is not None:
        if agent.handling_left <= EPS:  # loading not started yet
            total += handling_s
        total += g.distance(agent.mission.pickup, agent.mission.dropoff) / speed + handling_s
        here = agent.mission.dropoff
    elif agent.state is AgentState.CARRYING and agent.handling_left <= EPS:
        total += handling_s
    if agent.state in (AgentState.TO_STATION, AgentState.QUEUED, AgentState.CHARGING):
        total += max(0.0, agent.charge_target - agent.soc) / battery.charge_rate_per_s
    for m in agent.queue:
        total += (g.distance(here, m.pickup) + g.distance(m.pickup, m.dropoff)) / speed + 2 * handling_s
        here = m.dropoff
    return total


def availability(agent: AivAgent, t_ref: float, g: CirculationGraph, battery: BatteryModel, handling_s: float = 5.0) -> float:
    if agent.state is AgentState.IDLE and not agent.queue:
        return 1.0
    return 1.0 - min(1.0, remaining_workload(agent, g, battery, handling_s) / t_ref)
