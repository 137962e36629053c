"""
Fixed-step fleet simulation.

Each tick runs the same sub-phases in the same order: arrivals, auctions,
recharge decisions, station admissions, agent motion and charging, speed
regulation, accounting. Every random draw comes from a named per-run stream,
so a config plus its seed fully determines the event log.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .allocation import (
    AuctionContext,
    Decision,
    FuzzyModels,
    decide_recharge,
    regulate_speed,
    run_auction,
    select_recharge_target,
    select_station,
    strategy_for,
)
from .config import FixedInterval, PiecewisePoisson, SimConfig
from .metrics import EventLog, Metrics, assemble
from .vehicle import AgentState, AivAgent, Mission, advance, charge_tick
from .world import CirculationGraph, GraphError, StationState, default_graph_path, load_graph, validate_graph

log = logging.getLogger(__name__)

__all__ = ["Simulation", "run", "spawn_arrivals", "arrival_times", "rng_stream", "STREAMS"]

STREAMS = {"arrivals": 1, "sc1_bids": 2, "exits": 3}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name]]))


def _poisson_between(segments, t0: float, t1: float, rng: np.random.Generator, limit: int | None = None) -> list[float]:
    """Piecewise-constant-rate Poisson points in [t0, t1).

    A gap that crosses a rate change is redrawn from the boundary at the new
    rate, which is exact for a memoryless process.
    """
    starts = [s for s, _ in segments]
    out: list[float] = []
    t = t0
    while t < t1 and (limit is None or len(out) < limit):
        i = max(j for j, s in enumerate(starts) if s <= t) if t >= starts[0] else 0
        rate = segments[i][1]
        boundary = starts[i + 1] if i + 1 < len(starts) else math.inf
        nxt = t + rng.exponential(1.0 / rate)
        if nxt >= boundary:
            t = boundary
            continue
        if nxt >= t1:
            break
        out.append(float(nxt))
        t = nxt
    return out


def spawn_arrivals(proc, t_prev: float, t_now: float, rng: np.random.Generator) -> list[float]:
    """Arrival times falling in ``[t_prev, t_now)``."""
    if t_now <= t_prev:
        return []
    if isinstance(proc, FixedInterval):
        k = math.ceil(t_prev / proc.period - 1e-9)
        times = []
        while k * proc.period < t_now - 1e-9:
            times.append(k * proc.period)
            k += 1
        return times
    return _poisson_between(proc.segments, t_prev, t_now, rng)


def arrival_times(proc, n: int, rng: np.random.Generator) -> list[float]:
    """The first ``n`` arrival times of a process, from t=0."""
    if n == 0:
        return []
    if isinstance(proc, FixedInterval):
        return [i * proc.period for i in range(n)]
    return _poisson_between(proc.segments, 0.0, math.inf, rng, limit=n)


@dataclass
class _AgentBook:
    """Event-driven accounting used for the live metrics."""

    busy_ticks: int = 0
    wait_ticks: int = 0
    charge_ticks: int = 0
    charges: int = 0
    charge_started_at: float | None = None
    queued_at: float | None = None


class Simulation:
    def __init__(self, config: SimConfig, graph: CirculationGraph | None = None, models: FuzzyModels | None = None):
        self.config = config
        if graph is None:
            graph = load_graph(config.graph or default_graph_path())
        problems = validate_graph(graph)
        if problems:
            raise GraphError(problems)
        self.graph = graph
        self.strategy = strategy_for(config.scenario)
        self.models = models or FuzzyModels.load(graph, config.models.model_dump())
        self.battery = config.battery.model()
        self.params = config.thresholds.params()
        self.dt = config.dt
        self.tick = 0
        self.log = EventLog()

        entry = graph.entry
        starts = sorted(graph.waypoints, key=lambda w: (graph.routes_from(w).get(entry, ((), math.inf))[1], w))
        starts = starts or [entry]
        self.agents = [
            AivAgent(i, starts[i % len(starts)], nominal_speed=config.nominal_speed)
            for i in range(config.n_aivs)
        ]
        self.books = [_AgentBook() for _ in self.agents]
        self.stations = {s: StationState(s) for s in graph.stations}
        self.rotation: deque[int] = deque(a.id for a in self.agents)

        self.arrival_rng = rng_stream(config.seed, "arrivals")
        self.bid_rng = rng_stream(config.seed, "sc1_bids")
        times = arrival_times(config.arrivals, config.n_bags, self.arrival_rng)
        exits = graph.exits
        self.upcoming = deque(
            Mission(bag=i, pickup=entry, dropoff=exits[i % len(exits)], t_arrival=t)
            for i, t in enumerate(times)
        )
        self.unassigned: deque[Mission] = deque()
        self.arrived = 0
        self.picked = 0
        self.delivered = 0
        self.max_pending = 0
        self.faults = 0
        self.awaiting_decision: set[int] = set()
        self.episodes: list[int] = []
        self.durations: list[list[float]] = [[] for _ in self.agents]
        self.finished = config.n_bags == 0
        self.complete = True
        self.sim_time = 0.0
        self.safety_breaches = 0

    # -- helpers ---------------------------------------------------------

    def time_of(self, tick: int) -> float:
        return round(tick * self.dt, 9)

    @property
    def now(self) -> float:
        return self.time_of(self.tick)

    @property
    def pending(self) -> int:
        return self.arrived - self.picked

    def context(self) -> AuctionContext:
        return AuctionContext(
            now=self.now, pending=self.pending, graph=self.graph, battery=self.battery,
            params=self.params, models=self.models, stations=self.stations, agents=self.agents,
            rotation=list(self.rotation), rng=self.bid_rng, handling_s=self.config.handling_s,
            mean_episode_s=(sum(self.episodes) * self.dt / len(self.episodes)) if self.episodes else None,
        )

    def _eligible(self, agent: AivAgent) -> bool:
        return (agent.state is AgentState.IDLE and not agent.queue and not agent.stranded
                and agent.id not in self.awaiting_decision)

    def _start_next(self, agent: AivAgent) -> None:
        mission = agent.queue.popleft()
        agent.start_mission(self.graph, mission, self.now, self.config.handling_s)

    # -- phases ----------------------------------------------------------

    def _arrivals(self) -> None:
        end = self.time_of(self.tick + 1)
        while self.upcoming and self.upcoming[0].t_arrival < end - 1e-9:
            bag = self.upcoming.popleft()
            self.arrived += 1
            self.unassigned.append(bag)
            self.log.append(self.now, "arrival", bag=bag.bag, dropoff=bag.dropoff, t_arrival=bag.t_arrival)
        self.max_pending = max(self.max_pending, self.pending)

    def _auctions(self) -> None:
        sc1 = self.strategy.number == 1
        while self.unassigned:
            bidders = self.agents if sc1 else [a for a in self.agents if self._eligible(a)]
            if not bidders:
                return
            bag = self.unassigned.popleft()
            ctx = self.context()
            self.log.append(self.now, "cfp", bag=bag.bag, bidders=[a.id for a in bidders])
            award = run_auction(bag, bidders, self.strategy, ctx)
            for b in award.bids:
                self.log.append(self.now, "bid", bag=bag.bag, agent=b.agent, cost=b.cost, basis=b.basis)
            self.log.append(self.now, "award", bag=bag.bag, agent=award.agent)
            winner = self.agents[award.agent]
            if self._eligible(winner):
                self._start_next(winner)

    def _decisions(self) -> None:
        for agent in self.agents:
            if agent.id in self.awaiting_decision:
                self.awaiting_decision.discard(agent.id)
                ctx = self.context()
                decision, reason = decide_recharge(self.strategy, agent, ctx)
                self.log.append(self.now, "recharge_decision", agent=agent.id,
                                decision=decision.value, soc=agent.soc, reason=reason)
                if decision is Decision.RECHARGE:
                    station = select_station(self.strategy, agent, ctx)
                    target = select_recharge_target(self.strategy, agent, ctx)
                    self.log.append(self.now, "station_select", agent=agent.id, station=station, target=target)
                    agent.send_to_station(self.graph, station, target)
                    continue
            if agent.state is AgentState.IDLE and agent.queue and not agent.stranded:
                self._start_next(agent)

    def _admissions(self) -> None:
        for name in sorted(self.stations):
            admitted = self.stations[name].admit_next()
            if admitted is not None:
                self._charge_start(self.agents[admitted], self.now)

    def _charge_start(self, agent: AivAgent, t: float) -> None:
        book = self.books[agent.id]
        agent.transition(AgentState.CHARGING)
        queued_at = book.queued_at if book.queued_at is not None else t
        book.wait_ticks += int(round((t - queued_at) / self.dt))
        book.queued_at = None
        book.charges += 1
        book.charge_started_at = t
        self.log.append(t, "charge_start", agent=agent.id, station=agent.station, soc=agent.soc, t_queued=queued_at)

    def _motion(self) -> None:
        t_end = self.time_of(self.tick + 1)
        for agent in self.agents:
            book = self.books[agent.id]
            if agent.state is AgentState.CHARGING:
                if charge_tick(agent, self.dt, self.battery):
                    agent.transition(AgentState.IDLE)
                    self.stations[agent.station].release(agent.id)
                    n = int(round((t_end - book.charge_started_at) / self.dt))
                    book.charge_ticks += n
                    book.charge_started_at = None
                    agent.recharges_done += 1
                    agent.charge_episode_ticks.append(n)
                    self.episodes.append(n)
                    self.log.append(t_end, "charge_end", agent=agent.id, station=agent.station, soc=agent.soc)
                continue
            for kind, info in advance(agent, self.dt, self.graph, self.battery, self.config.handling_s):
                if kind == "pickup":
                    info.t_pickup = t_end
                    self.picked += 1
                    self.log.append(t_end, "pickup", bag=info.bag, agent=agent.id)
                elif kind == "drop":
                    info.t_drop = t_end
                    self.delivered += 1
                    agent.missions_done += 1
                    agent.mission_durations.append(info.duration)
                    self.durations[agent.id].append(info.duration)
                    book.busy_ticks += int(round(info.duration / self.dt))
                    self.log.append(t_end, "drop", bag=info.bag, agent=agent.id, t_assigned=info.t_assigned,
                                    t_started=info.t_started, t_pickup=info.t_pickup)
                    self.awaiting_decision.add(agent.id)
                    if agent.id in self.rotation:
                        self.rotation.remove(agent.id)
                        self.rotation.append(agent.id)
                elif kind == "at_station":
                    if self.stations[agent.station].arrive(agent.id):
                        self._charge_start(agent, t_end)
                    else:
                        agent.transition(AgentState.QUEUED)
                        book.queued_at = t_end
                elif kind == "fault":
                    self.faults += 1
                    self.log.append(t_end, "fault", agent=agent.id, reason=info, soc=agent.soc)

    def headways(self) -> dict[int, tuple[float, int | None]]:
        """Distance to, and id of, the nearest leading AIV on the same edge."""
        by_edge: dict[tuple[str, str], list[AivAgent]] = {}
        for a in self.agents:
            if a.moving and a.edge is not None and not a.stranded:
                by_edge.setdefault(a.edge, []).append(a)
        out: dict[int, tuple[float, int | None]] = {}
        for a in self.agents:
            if a.moving and not a.stranded:
                out[a.id] = (math.inf, None)
        for group in by_edge.values():
            group.sort(key=lambda a: (-a.offset, a.id))
            for ahead, behind in zip(group, group[1:]):
                out[behind.id] = (ahead.offset - behind.offset, ahead.id)
        return out

    def _speed(self) -> None:
        if not self.strategy.speed_regulation:
            return
        ctx = self.context()
        heads = self.headways()
        # leaders first, so the safety cap sees their final factor
        order = sorted(heads, key=lambda i: (self.agents[i].edge or ("", ""), -self.agents[i].offset, i))
        for i in order:
            agent = self.agents[i]
            headway, leader = heads[i]
            leader_factor = self.agents[leader].speed_factor if leader is not None else None
            factor = regulate_speed(self.strategy, agent, ctx, headway, leader_factor)
            if abs(factor - agent.speed_factor) > 1e-9:
                agent.speed_factor = factor
                self.log.append(self.time_of(self.tick + 1), "speed_change", agent=i, factor=factor,
                                headway=None if math.isinf(headway) else headway)
        self.safety_breaches += len(self.safety_violations())

    def safety_violations(self) -> list[int]:
        bad = []
        for i, (headway, leader) in self.headways().items():
            if leader is not None and headway < self.params.d_safe:
                if self.agents[i].speed_factor > self.agents[leader].speed_factor + 1e-12:
                    bad.append(i)
        return bad

    # -- driver ----------------------------------------------------------

    def step(self) -> None:
        if self.finished:
            return
        self._arrivals()
        self._auctions()
        self._decisions()
        self._admissions()
        states = [a.state for a in self.agents]
        self._motion()
        self._speed()
        for agent, state in zip(self.agents, states):
            agent.ticks[state] += 1
        self.tick += 1
        if self.delivered == self.config.n_bags:
            self.finished = True
            self.sim_time = self.now
        elif self.now >= self.config.wall_limit_s or all(a.stranded for a in self.agents):
            self.finished = True
            self.complete = False
            self.sim_time = self.now

    def run(self) -> tuple[Metrics, EventLog]:
        while not self.finished:
            self.step()
        return self.metrics(), self.log

    def metrics(self) -> Metrics:
        if self.config.n_bags == 0:
            return Metrics.empty(len(self.agents))
        end = self.sim_time
        charge_ticks = []
        for book in self.books:
            n = book.charge_ticks
            if book.charge_started_at is not None:
                n += int(round((end - book.charge_started_at) / self.dt))
            charge_ticks.append(n)
        return assemble(
            n_aivs=len(self.agents), dt=self.dt, sim_time=end, max_pending=self.max_pending,
            durations=self.durations, busy_ticks=[b.busy_ticks for b in self.books],
            charge_ticks=charge_ticks, wait_ticks=[b.wait_ticks for b in self.books],
            charges_started=[b.charges for b in self.books], episode_ticks=self.episodes,
            faults=self.faults, complete=self.complete,
        )

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for a in self.agents:
            h.update(repr((a.id, a.state.value, a.node, a.edge, round(a.offset, 12), tuple(a.route),
                           round(a.soc, 12), a.speed_factor, [m.bag for m in a.queue],
                           a.mission.bag if a.mission else None, round(a.handling_left, 12))).encode())
        for name in sorted(self.stations):
            st = self.stations[name]
            h.update(repr((name, st.occupant, list(st.waiting))).encode())
        h.update(repr((self.tick, self.arrived, self.picked, self.delivered, list(self.rotation))).encode())
        return h.hexdigest()


def run(config: SimConfig, graph: CirculationGraph | None = None, models: FuzzyModels | None = None) -> tuple[Metrics, EventLog]:
    return Simulation(config, graph, models).run()
