"""Event log and run metrics.

Metrics can be computed two ways: live, from the engine's per-agent
counters, and offline, by replaying an event log (``compute_metrics``). The
two agree exactly for completed runs, which is what the replay tests check.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, NamedTuple

__all__ = [
    "EVENT_KINDS",
    "Event",
    "EventLog",
    "LogIntegrityError",
    "Metrics",
    "compute_metrics",
]

EVENT_KINDS = (
    "arrival", "cfp", "bid", "award", "pickup", "drop", "recharge_decision",
    "station_select", "charge_start", "charge_end", "speed_change", "fault",
)


class LogIntegrityError(ValueError):
    pass


class Event(NamedTuple):
    t: float
    kind: str
    payload: dict


class EventLog:
    def __init__(self, events: Iterable[Event] = ()):
        self.events: list[Event] = list(events)

    def append(self, t: float, kind: str, **payload: Any) -> None:
        self.events.append(Event(t, kind, payload))

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]

    def to_ndjson(self) -> str:
        return "".join(
            json.dumps({"t": e.t, "kind": e.kind, "payload": e.payload}, sort_keys=True) + "\n"
            for e in self.events
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ndjson())

    @classmethod
    def from_ndjson(cls, text: str) -> "EventLog":
        events = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                events.append(Event(float(rec["t"]), rec["kind"], rec["payload"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise LogIntegrityError(f"line {n}: {exc}") from None
        return cls(events)

    @classmethod
    def read(cls, path: str | Path) -> "EventLog":
        return cls.from_ndjson(Path(path).read_text())


@dataclass
class Metrics:
    max_pending: int = 0
    sim_time: float = 0.0
    avg_mission_time_per_aiv: list[float] = field(default_factory=list)
    missions_per_aiv: list[int] = field(default_factory=list)
    work_rate_per_aiv: list[float] = field(default_factory=list)
    recharge_time_total: float = 0.0
    recharge_wait_total: float = 0.0
    n_recharges: int = 0
    recharges_per_aiv: list[int] = field(default_factory=list)
    mean_charge_episode_s: float = 0.0
    mean_mission_time: float = 0.0
    faults: int = 0
    bags_delivered: int = 0
    complete: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def empty(cls, n_aivs: int) -> "Metrics":
        return cls(
            avg_mission_time_per_aiv=[0.0] * n_aivs,
            missions_per_aiv=[0] * n_aivs,
            work_rate_per_aiv=[0.0] * n_aivs,
            recharges_per_aiv=[0] * n_aivs,
        )


def _ticks(span: float, dt: float) -> int:
    return int(round(span / dt))


def assemble(
    *,
    n_aivs: int,
    dt: float,
    sim_time: float,
    max_pending: int,
    durations: list[list[float]],
    busy_ticks: list[int],
    charge_ticks: list[int],
    wait_ticks: list[int],
    charges_started: list[int],
    episode_ticks: list[int],
    faults: int,
    complete: bool,
) -> Metrics:
    """Shared final arithmetic for the live and replay paths."""
    all_durations = [d for ds in durations for d in ds]
    return Metrics(
        max_pending=max_pending,
        sim_time=sim_time,
        avg_mission_time_per_aiv=[sum(ds) / len(ds) if ds else 0.0 for ds in durations],
        missions_per_aiv=[len(ds) for ds in durations],
        work_rate_per_aiv=[min(1.0, b * dt / sim_time) if sim_time > 0 else 0.0 for b in busy_ticks],
        recharge_time_total=sum(charge_ticks) * dt,
        recharge_wait_total=sum(wait_ticks) * dt,
        n_recharges=sum(charges_started),
        recharges_per_aiv=list(charges_started),
        mean_charge_episode_s=(sum(episode_ticks) * dt / len(episode_ticks)) if episode_ticks else 0.0,
        mean_mission_time=(sum(all_durations) / len(all_durations)) if all_durations else 0.0,
        faults=faults,
        bags_delivered=len(all_durations),
        complete=complete,
    )


def compute_metrics(log: EventLog, n_aivs: int, dt: float, sim_time: float | None = None, complete: bool = True) -> Metrics:
    """Rebuild run metrics from an event log alone.

    ``sim_time`` defaults to the time of the last drop. Charging episodes
    still open at that time are closed there; waits count once admitted.
    """
    last_t = float("-inf")
    arrived: set[int] = set()
    picked: set[int] = set()
    pending = max_pending = 0
    group_t = None
    durations: list[list[float]] = [[] for _ in range(n_aivs)]
    busy = [0] * n_aivs
    charge = [0] * n_aivs
    wait = [0] * n_aivs
    started = [0] * n_aivs
    episodes: list[int] = []
    open_charge: dict[int, float] = {}
    cfp_seen: set[int] = set()
    bids_seen: dict[int, int] = {}
    last_drop = 0.0
    faults = 0

    def agent_of(ev: Event) -> int:
        a = ev.payload.get("agent")
        if not isinstance(a, int) or not 0 <= a < n_aivs:
            raise LogIntegrityError(f"t={ev.t}: bad agent id {a!r} in {ev.kind}")
        return a

    for ev in log:
        if ev.kind not in EVENT_KINDS:
            raise LogIntegrityError(f"t={ev.t}: unknown event kind {ev.kind!r}")
        if ev.t < last_t:
            raise LogIntegrityError(f"timestamps go backwards at t={ev.t}")
        if group_t is not None and ev.t != group_t:
            max_pending = max(max_pending, pending)
        group_t = last_t = ev.t
        p = ev.payload
        if ev.kind == "arrival":
            if p["bag"] in arrived:
                raise LogIntegrityError(f"bag {p['bag']} arrives twice")
            arrived.add(p["bag"])
            pending += 1
        elif ev.kind == "cfp":
            cfp_seen.add(p["bag"])
        elif ev.kind == "bid":
            if p["bag"] not in cfp_seen:
                raise LogIntegrityError(f"bid for bag {p['bag']} before its cfp")
            bids_seen[p["bag"]] = bids_seen.get(p["bag"], 0) + 1
        elif ev.kind == "award":
            if not bids_seen.get(p["bag"]):
                raise LogIntegrityError(f"award for bag {p['bag']} without bids")
        elif ev.kind == "pickup":
            if p["bag"] not in arrived or p["bag"] in picked:
                raise LogIntegrityError(f"unexpected pickup of bag {p['bag']}")
            picked.add(p["bag"])
            pending -= 1
        elif ev.kind == "drop":
            a = agent_of(ev)
            durations[a].append(ev.t - p["t_started"])
            busy[a] += _ticks(ev.t - p["t_started"], dt)
            last_drop = ev.t
        elif ev.kind == "charge_start":
            a = agent_of(ev)
            started[a] += 1
            open_charge[a] = ev.t
            wait[a] += _ticks(ev.t - p["t_queued"], dt)
        elif ev.kind == "charge_end":
            a = agent_of(ev)
            if a not in open_charge:
                raise LogIntegrityError(f"charge_end for AIV {a} without charge_start")
            n = _ticks(ev.t - open_charge.pop(a), dt)
            charge[a] += n
            episodes.append(n)
        elif ev.kind == "fault":
            faults += 1
    if group_t is not None:
        max_pending = max(max_pending, pending)
    end = last_drop if sim_time is None else sim_time
    for a, t0 in open_charge.items():
        charge[a] += _ticks(end - t0, dt)
    return assemble(
        n_aivs=n_aivs, dt=dt, sim_time=end, max_pending=max_pending, durations=durations,
        busy_ticks=busy, charge_ticks=charge, wait_ticks=wait, charges_started=started,
        episode_ticks=episodes, faults=faults, complete=complete,
    )
