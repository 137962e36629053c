import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aivfleet import allocation
from aivfleet.allocation import (
    SCENARIOS,
    AllocationParams,
    AuctionContext,
    Bid,
    Decision,
    FuzzyModels,
    decide_recharge,
    energy_reserve,
    normalize_scenario,
    regulate_speed,
    run_auction,
    select_recharge_target,
    select_station,
    station_availability,
    strategy_for,
)
from aivfleet.fuzzy import NoRuleFiredError
from aivfleet.vehicle import AgentState, AivAgent, BatteryModel, Mission
from aivfleet.world import RoutingError, StationState, graph_from_dict

BAT = BatteryModel()


def make_ctx(graph, models, agents=(), pending=0, rotation=None, stations=None, **kw):
    return AuctionContext(
        now=0.0, pending=pending, graph=graph, battery=kw.pop("battery", BAT),
        params=kw.pop("params", AllocationParams()), models=models,
        stations=stations if stations is not None else {s: StationState(s) for s in graph.stations},
        agents=list(agents), rotation=rotation if rotation is not None else [a.id for a in agents],
        rng=kw.pop("rng", np.random.default_rng(0)), **kw,
    )


def bag(g, i=0):
    return Mission(bag=i, pickup=g.entry, dropoff=g.exits[0])


# -- strategies -------------------------------------------------------------------

def test_capability_flags_are_cumulative():
    ordered = [SCENARIOS[f"Sc{n}"] for n in range(1, 9)]
    for prev, cur in zip(ordered, ordered[1:]):
        assert all(c >= p for p, c in zip(prev.flags, cur.flags))
        assert sum(cur.flags) - sum(prev.flags) == (1 if cur.number >= 4 else 0)
    assert ordered[-1].flags == (True,) * 5


@pytest.mark.parametrize("raw, expected", [("sc1", "Sc1"), ("SC8", "Sc8"), ("3", "Sc3"), (" Sc5 ", "Sc5")])
def test_scenario_names_normalised(raw, expected):
    assert normalize_scenario(raw) == expected


def test_unknown_scenario():
    with pytest.raises(ValueError, match="unknown scenario"):
        strategy_for("sc9")


# -- bids ---------------------------------------------------------------------------

def test_sc3_idle_agent_bids_zero(default_graph, models):
    a = AivAgent(0, default_graph.entry)
    ctx = make_ctx(default_graph, models, [a])
    b = allocation.bid(strategy_for("Sc3"), a, bag(default_graph), ctx)
    assert b.cost == 0.0


def test_sc2_bids_follow_rotation(default_graph, models):
    agents = [AivAgent(i, default_graph.entry) for i in range(3)]
    ctx = make_ctx(default_graph, models, agents, rotation=[2, 0, 1])
    costs = {a.id: allocation.bid(strategy_for("Sc2"), a, bag(default_graph), ctx).cost for a in agents}
    assert costs == {2: 0.0, 0: 1.0, 1: 2.0}


def test_sc1_bids_are_seeded(default_graph, models):
    a = AivAgent(0, default_graph.entry)
    draws = []
    for _ in range(2):
        ctx = make_ctx(default_graph, models, [a], rng=np.random.default_rng(42))
        draws.append(allocation.bid(strategy_for("Sc1"), a, bag(default_graph), ctx).cost)
    assert draws[0] == draws[1] and 0.0 <= draws[0] < 1.0


def test_sc4_prefers_close_charged_idle_agent(default_graph, models):
    g = default_graph
    near = AivAgent(0, g.entry, soc=1.0)
    far = AivAgent(1, g.exits[0], soc=0.3)
    ctx = make_ctx(g, models, [near, far])
    s4 = strategy_for("Sc4")
    c_near = allocation.bid(s4, near, bag(g), ctx).cost
    c_far = allocation.bid(s4, far, bag(g), ctx).cost
    assert c_near < c_far
    award = run_auction(bag(g), [far, near], s4, ctx)
    assert award.agent == 0


def test_sc5_adds_recharge_detour_for_drained_agent(default_graph, models):
    g = default_graph
    a = AivAgent(0, g.entry, soc=0.2)
    ctx = make_ctx(g, models, [a])
    b4 = allocation.bid(strategy_for("Sc4"), a, bag(g), ctx)
    b5 = allocation.bid(strategy_for("Sc5"), a, bag(g), ctx)
    assert b5.basis == "fuzzy_cost+recharge"
    assert b5.cost > b4.cost
    full = AivAgent(1, g.entry, soc=1.0)
    assert allocation.bid(strategy_for("Sc5"), full, bag(g), ctx).basis == "fuzzy_cost"


class _Silent:
    def evaluate(self, **_):
        raise NoRuleFiredError("nothing fires")


def test_cost_model_silence_falls_back_to_availability(default_graph, models):
    a = AivAgent(0, default_graph.entry)
    stub = replace(models, cost=_Silent())
    ctx = make_ctx(default_graph, stub, [a])
    b = allocation.bid(strategy_for("Sc4"), a, bag(default_graph), ctx)
    assert b.basis == "availability_fallback" and b.cost == 0.0


# -- auction ---------------------------------------------------------------------------

def _fixed_bids(monkeypatch, costs):
    monkeypatch.setattr(allocation, "bid", lambda strategy, agent, b, ctx: Bid(agent.id, costs[agent.id], "fixed"))


@pytest.mark.parametrize("costs, winner", [({0: 5, 1: 3, 2: 9}, 1), ({0: 3, 1: 3}, 0)])
def test_auction_argmin_and_tie_break(monkeypatch, default_graph, models, costs, winner):
    _fixed_bids(monkeypatch, costs)
    agents = [AivAgent(i, default_graph.entry) for i in costs]
    ctx = make_ctx(default_graph, models, agents)
    b = bag(default_graph)
    award = run_auction(b, agents, strategy_for("Sc4"), ctx)
    assert award.agent == winner
    assert list(agents[winner].queue) == [b]
    assert b.t_assigned == ctx.now
    assert sum(len(a.queue) for a in agents) == 1


@given(
    st.lists(st.integers(0, 1000).map(lambda k: k / 10), min_size=1, max_size=8),
    st.sampled_from(["scale", "shift", "exp", "cube"]),
)
def test_argmin_invariant_under_increasing_transform(costs, kind):
    f = {
        "scale": lambda x: 3.5 * x,
        "shift": lambda x: x + 17.0,
        "exp": lambda x: math.exp(x / 50.0),
        "cube": lambda x: x ** 3 + x,
    }[kind]
    original = min(range(len(costs)), key=lambda i: (costs[i], i))
    moved = min(range(len(costs)), key=lambda i: (f(costs[i]), i))
    assert original == moved


def test_auction_needs_bidders(default_graph, models):
    with pytest.raises(ValueError):
        run_auction(bag(default_graph), [], strategy_for("Sc2"), make_ctx(default_graph, models))


# -- recharge decision ------------------------------------------------------------------

@pytest.mark.parametrize("soc, expected", [(0.34, Decision.RECHARGE), (0.36, Decision.CONTINUE)])
def test_sc4_threshold(default_graph, models, soc, expected):
    a = AivAgent(0, default_graph.entry, soc=soc)
    decision, _ = decide_recharge(strategy_for("Sc4"), a, make_ctx(default_graph, models, [a]))
    assert decision is expected


def test_sc5_low_energy_next_to_station(default_graph, models):
    s = default_graph.stations[0]
    a = AivAgent(0, s, soc=0.05)
    decision, reason = decide_recharge(strategy_for("Sc5"), a, make_ctx(default_graph, models, [a]))
    assert decision is Decision.RECHARGE and reason.startswith("fuzzy")


def test_sc5_full_battery_continues(default_graph, models):
    a = AivAgent(0, default_graph.entry, soc=0.95)
    decision, _ = decide_recharge(strategy_for("Sc5"), a, make_ctx(default_graph, models, [a]))
    assert decision is Decision.CONTINUE


def test_reserve_overrides_policy(default_graph, models):
    g = default_graph
    a = AivAgent(0, g.exits[0], soc=0.36)
    ctx = make_ctx(g, models, [a], battery=BatteryModel(discharge_per_m=4e-3))
    assert energy_reserve(strategy_for("Sc4"), a, ctx) > 0.36
    decision, reason = decide_recharge(strategy_for("Sc4"), a, ctx)
    assert decision is Decision.RECHARGE and reason == "reserve"


def test_reserve_grows_with_speed_regulation(default_graph, models):
    a = AivAgent(0, default_graph.exits[0])
    ctx = make_ctx(default_graph, models, [a])
    assert energy_reserve(strategy_for("Sc8"), a, ctx) == pytest.approx(
        1.5625 * energy_reserve(strategy_for("Sc7"), a, ctx))


def test_battery_disabled_never_recharges(default_graph, models):
    a = AivAgent(0, default_graph.entry, soc=0.0)
    ctx = make_ctx(default_graph, models, [a], battery=BatteryModel(enabled=False))
    assert decide_recharge(strategy_for("Sc8"), a, ctx)[0] is Decision.CONTINUE


# -- station selection -------------------------------------------------------------------

def station_graph(d1=40.0, d2=90.0, reach_s2=True):
    edges = [
        {"from": "A", "to": "S1", "length_m": d1},
        {"from": "S1", "to": "E", "length_m": 10},
        {"from": "S2", "to": "E", "length_m": 10},
        {"from": "E", "to": "X", "length_m": 10},
        {"from": "X", "to": "A", "length_m": 10},
        {"from": "E", "to": "S2", "length_m": 200},
    ]
    if reach_s2:
        edges.append({"from": "A", "to": "S2", "length_m": d2})
    return graph_from_dict({
        "nodes": [{"id": n, "kind": k} for n, k in
                  [("E", "entry_treadmill"), ("X", "exit_treadmill"), ("S1", "charging_station"),
                   ("S2", "charging_station"), ("A", "waypoint")]],
        "edges": edges,
    })


@pytest.mark.parametrize("scenario", ["Sc5", "Sc6"])
def test_both_free_nearer_wins(scenario):
    g = station_graph(40, 90)
    a = AivAgent(0, "A")
    ctx = make_ctx(g, FuzzyModels.load(g), [a])
    assert select_station(strategy_for(scenario), a, ctx) == "S1"


def test_equal_distance_free_station_preferred():
    g = station_graph(60, 60)
    ms = FuzzyModels.load(g)
    charging = AivAgent(1, "S1", soc=0.1)
    charging.state = AgentState.CHARGING
    charging.charge_target = 1.0
    stations = {"S1": StationState("S1", occupant=1), "S2": StationState("S2")}
    a = AivAgent(0, "A")
    ctx = make_ctx(g, ms, [a, charging], stations=stations, battery=BatteryModel(charge_rate_per_s=0.01))
    assert station_availability(ctx, "S1") == 0.0
    assert station_availability(ctx, "S2") == 1.0
    assert select_station(strategy_for("Sc6"), a, ctx) == "S2"
    assert select_station(strategy_for("Sc5"), a, ctx) == "S1"  # id tie-break, no station model


def test_single_reachable_station():
    g = station_graph(reach_s2=False)
    a = AivAgent(0, "S1")  # S2 only reachable through E
    g2 = graph_from_dict({
        "nodes": [{"id": n, "kind": k} for n, k in g.nodes.items()],
        "edges": [{"from": x, "to": y, "length_m": w} for x, y, w in g.edges if (x, y) != ("E", "S2")],
    })
    ctx = make_ctx(g2, FuzzyModels.load(g), [a])
    assert select_station(strategy_for("Sc6"), a, ctx) == "S1"
    stuck = AivAgent(1, "E")  # dead end: no outgoing edges
    g3 = graph_from_dict({"nodes": [{"id": n, "kind": k} for n, k in g.nodes.items()],
                          "edges": [{"from": "S2", "to": "E", "length_m": 1.0}]})
    with pytest.raises(RoutingError):
        select_station(strategy_for("Sc6"), stuck, make_ctx(g3, FuzzyModels.load(g), [stuck]))


def test_en_route_agents_count_against_a_station(default_graph, models):
    s = default_graph.stations[0]
    coming = AivAgent(1, default_graph.entry)
    coming.state = AgentState.TO_STATION
    coming.station = s
    ctx = make_ctx(default_graph, models, [coming])
    assert station_availability(ctx, s) < 1.0
    assert station_availability(ctx, s, asking=1) == 1.0


# -- recharge target -----------------------------------------------------------------------

def test_target_before_sc7_is_full(default_graph, models):
    a = AivAgent(0, default_graph.entry, soc=0.3)
    assert select_recharge_target(strategy_for("Sc6"), a, make_ctx(default_graph, models, [a], pending=50)) == 1.0


@pytest.mark.parametrize("pending, expected", [(0, 1.0), (10, 0.8), (40, 0.8)])
def test_sc7_target_tracks_urgency(default_graph, models, pending, expected):
    a = AivAgent(0, default_graph.entry, soc=0.3)
    ctx = make_ctx(default_graph, models, [a], pending=pending)
    assert select_recharge_target(strategy_for("Sc7"), a, ctx) == expected


# -- speed regulation -------------------------------------------------------------------------

def test_speed_unregulated_before_sc8(default_graph, models):
    a = AivAgent(0, default_graph.entry)
    ctx = make_ctx(default_graph, models, [a], pending=20)
    assert regulate_speed(strategy_for("Sc7"), a, ctx, math.inf) == 1.0


def test_sc8_speeds_up_on_open_road_under_pressure(default_graph, models):
    a = AivAgent(0, default_graph.entry)
    ctx = make_ctx(default_graph, models, [a], pending=10)
    assert regulate_speed(strategy_for("Sc8"), a, ctx, math.inf) >= 1.15
    calm = make_ctx(default_graph, models, [a], pending=0)
    assert regulate_speed(strategy_for("Sc8"), a, calm, math.inf) == pytest.approx(1.0, abs=0.02)


def test_sc8_safety_cap(default_graph, models):
    a = AivAgent(0, default_graph.entry)
    ctx = make_ctx(default_graph, models, [a], pending=10)
    assert regulate_speed(strategy_for("Sc8"), a, ctx, 2.0, leader_factor=0.9) <= 0.9


@given(st.floats(0, 40), st.integers(0, 30), st.floats(0.75, 1.25))
def test_sc8_factor_bounded_and_capped(headway, pending, leader):
    from conftest import DATA
    from aivfleet.world import load_graph
    g = _CACHED.setdefault("g", load_graph(DATA / "graph_default.json"))
    ms = _CACHED.setdefault("m", FuzzyModels.load(g))
    a = AivAgent(0, g.entry)
    ctx = make_ctx(g, ms, [a], pending=pending)
    f = regulate_speed(strategy_for("Sc8"), a, ctx, headway, leader)
    assert 0.75 <= f <= 1.25
    if headway < ctx.params.d_safe:
        assert f <= leader


_CACHED: dict = {}
