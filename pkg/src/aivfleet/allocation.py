"""
Supervisor auction and the eight allocation strategies.

Every scenario runs through the same auction loop (minimum cost wins, lowest
agent id breaks ties); scenarios differ only in how bids are computed and in
which fuzzy decisions are switched on for recharging and speed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .fuzzy import FuzzyError, FuzzyModel, NoRuleFiredError, load_model
from .vehicle import AgentState, AivAgent, BatteryModel, Mission, availability
from .world import CirculationGraph, RoutingError, StationState, shortest_path

log = logging.getLogger(__name__)

__all__ = [
    "SCENARIOS",
    "Strategy",
    "strategy_for",
    "AllocationParams",
    "FuzzyModels",
    "Bid",
    "Award",
    "AuctionContext",
    "Decision",
    "bid",
    "run_auction",
    "decide_recharge",
    "select_station",
    "select_recharge_target",
    "regulate_speed",
    "station_availability",
    "energy_reserve",
]


@dataclass(frozen=True)
class Strategy:
    scenario: str
    name: str
    fuzzy_cost: bool = False
    fuzzy_recharge: bool = False
    fuzzy_station: bool = False
    variable_target: bool = False
    speed_regulation: bool = False

    @property
    def number(self) -> int:
        return int(self.scenario[2:])

    @property
    def flags(self) -> tuple[bool, ...]:
        return (self.fuzzy_cost, self.fuzzy_recharge, self.fuzzy_station,
                self.variable_target, self.speed_regulation)


def _cumulative(n: int, name: str) -> Strategy:
    flags = [n >= 4, n >= 5, n >= 6, n >= 7, n >= 8]
    return Strategy(f"Sc{n}", name, *flags)


SCENARIOS: dict[str, Strategy] = {
    s.scenario: s
    for s in (
        _cumulative(1, "Random"),
        _cumulative(2, "FIFO"),
        _cumulative(3, "Available"),
        _cumulative(4, "FuzzyCost"),
        _cumulative(5, "FuzzyRecharge"),
        _cumulative(6, "FuzzyStation"),
        _cumulative(7, "FuzzyRechargeTarget"),
        _cumulative(8, "FuzzySpeed"),
    )
}


def normalize_scenario(value: str) -> str:
    key = str(value).strip()
    if key.lower().startswith("sc"):
        key = "Sc" + key[2:]
    elif key.isdigit():
        key = "Sc" + key
    if key not in SCENARIOS:
        raise ValueError(f"unknown scenario {value!r} (expected one of Sc1..Sc8)")
    return key


def strategy_for(scenario: str) -> Strategy:
    return SCENARIOS[normalize_scenario(scenario)]


@dataclass(frozen=True)
class AllocationParams:
    recharge_threshold: float = 0.35
    recharge_decision_cut: float = 0.5
    full_target_cut: float = 0.9
    partial_target: float = 0.8
    p_max: float = 10.0
    w_ref: float = 60.0
    d_safe: float = 5.0
    t_ref: float = 120.0
    reserve_margin: float = 1.1
    default_episode_s: float = 15.0
    speed_min: float = 0.75
    speed_max: float = 1.25


MODEL_FILES = {
    "cost": "cost_sc4.json",
    "recharge": "cost_recharge_sc5.json",
    "station": "station_sc6.json",
    "rate": "rate_sc7.json",
    "speed": "speed_sc8.json",
}


def default_model_dir() -> Path:
    return Path(__file__).parent / "data" / "models"


@dataclass(frozen=True)
class FuzzyModels:
    cost: FuzzyModel
    recharge: FuzzyModel
    station: FuzzyModel
    rate: FuzzyModel
    speed: FuzzyModel

    @classmethod
    def load(cls, graph: CirculationGraph, paths: Mapping[str, str | Path] | None = None) -> "FuzzyModels":
        """Load the five rule bases; ``$diameter`` binds to the graph's longest route."""
        paths = dict(paths or {})
        unknown = set(paths) - set(MODEL_FILES)
        if unknown:
            raise FuzzyError(f"unknown model name(s): {sorted(unknown)}")
        bindings = {"diameter": graph.diameter}
        return cls(**{
            name: load_model(paths.get(name) or default_model_dir() / fname, bindings)
            for name, fname in MODEL_FILES.items()
        })


@dataclass(frozen=True)
class Bid:
    agent: int
    cost: float
    basis: str


@dataclass(frozen=True)
class Award:
    bag: int
    agent: int
    bids: tuple[Bid, ...]


class Decision(str, Enum):
    CONTINUE = "Continue"
    RECHARGE = "Recharge"


@dataclass
class AuctionContext:
    """What the supervisor and bidders know at decision time."""

    now: float
    pending: int
    graph: CirculationGraph
    battery: BatteryModel
    params: AllocationParams
    models: FuzzyModels | None = None
    stations: Mapping[str, StationState] = field(default_factory=dict)
    agents: Sequence[AivAgent] = ()
    rotation: Sequence[int] = ()
    rng: np.random.Generator | None = None
    handling_s: float = 5.0
    mean_episode_s: float | None = None

    @property
    def urgency(self) -> float:
        return min(1.0, self.pending / self.params.p_max)

    def station_availability(self, station: str, asking: int | None = None) -> float:
        return station_availability(self, station, asking)


def _availability(agent: AivAgent, ctx: AuctionContext) -> float:
    return availability(agent, ctx.params.t_ref, ctx.graph, ctx.battery, ctx.handling_s)


def _nearest_station(ctx: AuctionContext, node: str) -> tuple[str, float]:
    best = None
    for s in ctx.graph.stations:
        found = ctx.graph.routes_from(node).get(s)
        if found is not None and (best is None or (found[1], s) < (best[1], best[0])):
            best = (s, found[1])
    if best is None:
        raise RoutingError(f"no charging station reachable from {node}")
    return best


def _crisp_cost(agent: AivAgent, ctx: AuctionContext) -> float:
    return 1.0 - _availability(agent, ctx)


def bid(strategy: Strategy, agent: AivAgent, bag: Mission, ctx: AuctionContext) -> Bid:
    n = strategy.number
    if n == 1:
        if ctx.rng is None:
            raise ValueError("Sc1 bids need an RNG stream")
        return Bid(agent.id, float(ctx.rng.random()), "random")
    if n == 2:
        return Bid(agent.id, float(list(ctx.rotation).index(agent.id)), "rotation")
    if n == 3:
        return Bid(agent.id, _crisp_cost(agent, ctx), "availability")

    g = ctx.graph
    start = agent.route_end
    distance = g.distance(start, bag.pickup) + g.distance(bag.pickup, bag.dropoff)
    avail = _availability(agent, ctx)
    basis = "fuzzy_cost"
    try:
        if strategy.fuzzy_recharge:
            detour = _recharge_detour(agent, bag, distance, avail, ctx)
            if detour > 0:
                distance += detour
                basis = "fuzzy_cost+recharge"
        cost = ctx.models.cost.evaluate(
            Availability=avail, DistanceTarget=distance, EnergyLevel=agent.soc
        )
    except NoRuleFiredError:
        log.warning("AIV %d: cost model fired no rule, falling back to availability", agent.id)
        return Bid(agent.id, _crisp_cost(agent, ctx), "availability_fallback")
    return Bid(agent.id, cost, basis)


def _recharge_detour(agent: AivAgent, bag: Mission, distance: float, avail: float, ctx: AuctionContext) -> float:
    """Metre-equivalent of a recharge the mission would force, 0 if none."""
    g = ctx.graph
    after = agent.soc - distance * ctx.battery.per_metre(agent.speed_factor)
    station, to_station = _nearest_station(ctx, bag.dropoff)
    verdict = ctx.models.recharge.evaluate(
        EnergyLevel=max(0.0, after), DistanceStation=to_station, Availability=avail
    )
    if verdict <= ctx.params.recharge_decision_cut:
        return 0.0
    extra_m = to_station + g.distance(station, bag.pickup) - g.distance(bag.dropoff, bag.pickup)
    charge_s = max(0.0, 1.0 - after) / ctx.battery.charge_rate_per_s
    return max(0.0, extra_m) + charge_s * agent.nominal_speed


def run_auction(bag: Mission, agents: Sequence[AivAgent], strategy: Strategy, ctx: AuctionContext) -> Award:
    """Collect one bid per agent (in id order) and award to the cheapest."""
    if not agents:
        raise ValueError("an auction needs at least one bidder")
    bids = tuple(bid(strategy, a, bag, ctx) for a in sorted(agents, key=lambda a: a.id))
    winner = min(bids, key=lambda b: (b.cost, b.agent))
    bag.t_assigned = ctx.now
    next(a for a in agents if a.id == winner.agent).queue.append(bag)
    return Award(bag.bag, winner.agent, bids)


def energy_reserve(strategy: Strategy, agent: AivAgent, ctx: AuctionContext) -> float:
    """State of charge needed to serve one more worst-case mission and still reach a station.

    Independent of the scenario's decision policy: it only guards against
    stranding, using the fastest speed factor the scenario may apply.
    """
    if not ctx.battery.enabled:
        return 0.0
    g = ctx.graph
    here = agent.route_end
    try:
        to_pickup = g.distance(here, g.entry)
        worst = max(g.distance(g.entry, x) + _nearest_station(ctx, x)[1] for x in g.exits)
    except RoutingError:
        return 0.0
    factor = ctx.params.speed_max if strategy.speed_regulation else 1.0
    return ctx.params.reserve_margin * (to_pickup + worst) * ctx.battery.per_metre(factor)


def decide_recharge(strategy: Strategy, agent: AivAgent, ctx: AuctionContext) -> tuple[Decision, str]:
    """Returns the decision and a short reason for the event log."""
    if not ctx.battery.enabled:
        return Decision.CONTINUE, "battery disabled"
    threshold_says = agent.soc < ctx.params.recharge_threshold
    if strategy.fuzzy_recharge:
        try:
            _, to_station = _nearest_station(ctx, agent.route_end)
            out = ctx.models.recharge.evaluate(
                EnergyLevel=agent.soc, DistanceStation=to_station,
                Availability=_availability(agent, ctx),
            )
            wants = out > ctx.params.recharge_decision_cut
            reason = f"fuzzy {out:.3f}"
        except NoRuleFiredError:
            log.warning("AIV %d: recharge model fired no rule, using threshold", agent.id)
            wants, reason = threshold_says, "threshold fallback"
    else:
        wants, reason = threshold_says, "threshold"
    if not wants and agent.soc < energy_reserve(strategy, agent, ctx):
        wants, reason = True, "reserve"
    return (Decision.RECHARGE if wants else Decision.CONTINUE), reason


def station_availability(ctx: AuctionContext, station: str, asking: int | None = None) -> float:
    """1 when the station is free, decreasing with the charge time already committed to it."""
    state = ctx.stations.get(station)
    en_route = [a for a in ctx.agents
                if a.state is AgentState.TO_STATION and a.station == station and a.id != asking]
    if state is None:
        return 1.0
    if state.occupant is None and not state.waiting and not en_route:
        return 1.0
    episode = ctx.mean_episode_s or ctx.params.default_episode_s
    busy = 0.0
    if state.occupant is not None:
        occ = next((a for a in ctx.agents if a.id == state.occupant), None)
        if occ is not None:
            busy += max(0.0, occ.charge_target - occ.soc) / ctx.battery.charge_rate_per_s
        else:
            busy += episode
    busy += (len(state.waiting) + len(en_route)) * episode
    return max(0.0, 1.0 - busy / ctx.params.w_ref)


def select_station(strategy: Strategy, agent: AivAgent, ctx: AuctionContext) -> str:
    here = agent.route_end
    reachable = []
    for s in ctx.graph.stations:
        found = ctx.graph.routes_from(here).get(s)
        if found is not None:
            reachable.append((found[1], s))
    if not reachable:
        raise RoutingError(f"no charging station reachable from {here}")
    reachable.sort()
    if not strategy.fuzzy_station or len(reachable) == 1:
        return reachable[0][1]
    try:
        scored = [
            (ctx.models.station.evaluate(
                DistanceStation=dist, AvailabilityStation=station_availability(ctx, s, agent.id)),
             dist, s)
            for dist, s in reachable
        ]
    except NoRuleFiredError:
        log.warning("AIV %d: station model fired no rule, choosing nearest", agent.id)
        return reachable[0][1]
    return min(scored)[2]


def select_recharge_target(strategy: Strategy, agent: AivAgent, ctx: AuctionContext) -> float:
    if not strategy.variable_target:
        return 1.0
    try:
        out = ctx.models.rate.evaluate(Urgency=ctx.urgency, EnergyLevel=agent.soc)
    except NoRuleFiredError:
        log.warning("AIV %d: rate model fired no rule, charging fully", agent.id)
        return 1.0
    return 1.0 if out >= ctx.params.full_target_cut else ctx.params.partial_target


def regulate_speed(
    strategy: Strategy,
    agent: AivAgent,
    ctx: AuctionContext,
    headway: float,
    leader_factor: float | None = None,
) -> float:
    """Speed factor for the next tick. ``headway`` is inf on an open edge."""
    if not strategy.speed_regulation:
        return 1.0
    try:
        factor = ctx.models.speed.evaluate(Urgency=ctx.urgency, Headway=headway)
    except NoRuleFiredError:
        log.warning("AIV %d: speed model fired no rule, keeping unit speed", agent.id)
        factor = 1.0
    factor = min(ctx.params.speed_max, max(ctx.params.speed_min, factor))
    if headway < ctx.params.d_safe and leader_factor is not None:
        factor = min(factor, leader_factor)
    return factor
