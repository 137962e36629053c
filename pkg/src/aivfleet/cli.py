"""Command-line entry point: single runs, replication sweeps and scenario comparisons."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .allocation import SCENARIOS
from .config import ConfigError, SimConfig, apply_overrides, build_config, burst_profile
from .fuzzy import FuzzyError
from .metrics import Metrics
from .simulation import Simulation
from .world import GraphError, RoutingError

__all__ = ["main", "build_parser", "parse_request", "RunRequest", "EXIT_OK", "EXIT_CONFIG", "EXIT_ROUTING", "EXIT_FAULTS"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ROUTING = 3
EXIT_FAULTS = 4

SCALAR_ROWS = [
    ("max_pending", "Max pending bags"),
    ("sim_time", "Simulation time (s)"),
    ("mean_mission_time", "Mean mission time (s)"),
]
VECTOR_ROWS = [
    ("avg_mission_time_per_aiv", "Avg mission time per AIV (s)"),
    ("missions_per_aiv", "Missions per AIV"),
    ("work_rate_per_aiv", "Work rate per AIV"),
]
RECHARGE_ROWS = [
    ("recharge_time_total", "Recharge time (s)"),
    ("recharge_wait_total", "Waiting time for recharges (s)"),
    ("n_recharges", "Number of recharges"),
    ("mean_charge_episode_s", "Mean charge episode (s)"),
    ("faults", "Faults"),
]
AGGREGATED = [k for k, _ in SCALAR_ROWS + RECHARGE_ROWS]


@dataclass(frozen=True)
class RunRequest:
    scenarios: tuple[str, ...]
    replications: int
    base: SimConfig
    fmt: str = "table"
    out: str | None = None
    trace: str | None = None
    compare: bool = False
    jobs: int = 1
    verbose: bool = False

    def configs(self) -> list[tuple[str, int, SimConfig]]:
        """(scenario, replication, config) in report order."""
        doc = self.base.model_dump(mode="json")
        runs = []
        for sc in self.scenarios:
            for r in range(self.replications):
                cfg = build_config({**doc, "scenario": sc, "seed": self.base.seed + r})
                runs.append((sc, r, cfg))
        return runs


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="aivfleet",
        description="Simulate an AIV baggage fleet under one or more task-allocation scenarios.",
    )
    p.add_argument("--scenario", action="append", default=[],
                   help="scenario id Sc1..Sc8; repeat or comma-separate (default Sc1, or all with --compare)")
    p.add_argument("--bags", type=int, help="number of bags (default 100)")
    p.add_argument("--aivs", type=int, help="fleet size (default 5)")
    p.add_argument("--seed", type=int, help="base seed; replication i uses seed+i")
    p.add_argument("--dt", type=float, help="tick length in seconds")
    p.add_argument("--replications", type=int, default=1, help="runs per scenario")
    p.add_argument("--config", help="JSON config file mirroring SimConfig")
    p.add_argument("--arrivals", choices=["fixed", "burst"],
                   help="shortcut for the default fixed-interval flow or the burst profile")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. battery.charge_rate_per_s=0.04")
    p.add_argument("--format", dest="fmt", choices=["table", "csv", "json"], default="table")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--trace", help="write the event log (NDJSON); multi-run sweeps add .<scenario>.r<i>")
    p.add_argument("--compare", action="store_true", help="scenario-by-metric matrix of medians")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_request(argv: Sequence[str] | None = None) -> RunRequest:
    """Parse flags into a request. Raises ConfigError on bad input."""
    args = build_parser().parse_args(argv)
    overrides: dict[str, Any] = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for flag, key in (("bags", "n_bags"), ("aivs", "n_aivs"), ("seed", "seed"), ("dt", "dt")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    if args.arrivals == "burst":
        overrides["arrivals"] = burst_profile().model_dump(mode="json")
    elif args.arrivals == "fixed":
        overrides["arrivals"] = {"kind": "fixed-interval"}

    doc: dict[str, Any] = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
    names = [s.strip() for chunk in args.scenario for s in chunk.split(",") if s.strip()]
    if not names:
        names = list(SCENARIOS) if args.compare else [doc.get("scenario", "Sc1")]
    scenarios = []
    for name in names:
        cfg = build_config(apply_overrides(doc, {**overrides, "scenario": name}))
        if cfg.scenario not in scenarios:
            scenarios.append(cfg.scenario)
    if args.replications < 1:
        raise ConfigError("replications: must be at least 1")
    if args.jobs < 1:
        raise ConfigError("jobs: must be at least 1")
    base = build_config(apply_overrides(doc, {**overrides, "scenario": scenarios[0]}))
    return RunRequest(
        scenarios=tuple(scenarios), replications=args.replications, base=base, fmt=args.fmt,
        out=args.out, trace=args.trace, compare=args.compare, jobs=args.jobs, verbose=args.verbose,
    )


def _run_one(cfg_doc: dict, want_trace: bool) -> tuple[dict, str | None]:
    sim = Simulation(build_config(cfg_doc))
    metrics, events = sim.run()
    return metrics.to_dict(), (events.to_ndjson() if want_trace else None)


def _trace_path(base: str, scenario: str, rep: int, single: bool) -> Path:
    p = Path(base)
    if single:
        return p
    return p.with_name(f"{p.stem}.{scenario}.r{rep}{p.suffix}")


def execute(req: RunRequest) -> list[tuple[str, int, int, Metrics]]:
    runs = req.configs()
    docs = [cfg.model_dump(mode="json") for _, _, cfg in runs]
    want = req.trace is not None
    if req.jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=req.jobs) as pool:
            results = list(pool.map(_run_one, docs, [want] * len(docs)))
    else:
        results = [_run_one(d, want) for d in docs]
    out = []
    for (sc, rep, cfg), (mdict, trace) in zip(runs, results):
        if trace is not None:
            _trace_path(req.trace, sc, rep, len(runs) == 1).write_text(trace)
        out.append((sc, rep, cfg.seed, Metrics(**mdict)))
    return out


# -- reporting -------------------------------------------------------------

def _median_vector(vectors: list[list[float]]) -> list[float]:
    return [statistics.median(col) for col in zip(*vectors)] if vectors else []


def aggregate(results, scenarios) -> dict[str, dict[str, Any]]:
    agg: dict[str, dict[str, Any]] = {}
    for sc in scenarios:
        ms = [m for s, _, _, m in results if s == sc]
        entry: dict[str, Any] = {"runs": len(ms)}
        for key in AGGREGATED:
            vals = [getattr(m, key) for m in ms]
            entry[key] = {"median": statistics.median(vals), "min": min(vals), "max": max(vals)}
        for key, _ in VECTOR_ROWS + [("recharges_per_aiv", "")]:
            entry[key] = {"median": _median_vector([getattr(m, key) for m in ms])}
        entry["complete"] = all(m.complete for m in ms)
        agg[sc] = entry
    return agg


def _fmt(v: Any) -> str:
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, float):
        return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))
    return str(v)


def _config_header(req: RunRequest) -> dict[str, Any]:
    doc = req.base.model_dump(mode="json")
    doc.pop("scenario")
    doc["scenarios"] = list(req.scenarios)
    doc["replications"] = req.replications
    return doc


def render_table(req: RunRequest, results) -> str:
    agg = aggregate(results, req.scenarios)
    header = ["Metric"] + list(req.scenarios)
    rows = []
    for key, label in SCALAR_ROWS + VECTOR_ROWS + RECHARGE_ROWS:
        rows.append([label] + [_fmt(agg[sc][key]["median"]) for sc in req.scenarios])
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = [f"# config: {json.dumps(_config_header(req), sort_keys=True)}"]
    if req.replications > 1:
        lines.append(f"# medians over {req.replications} replications")
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return "\n".join(line.rstrip() for line in lines) + "\n"


def csv_columns(n_aivs: int) -> list[str]:
    cols = ["scenario", "replication", "seed", "max_pending", "sim_time_s", "mean_mission_time_s"]
    for prefix in ("avg_mission_time_s", "missions", "work_rate"):
        cols += [f"{prefix}_{i + 1}" for i in range(n_aivs)]
    cols += ["recharge_time_s", "recharge_wait_s", "n_recharges"]
    cols += [f"recharges_{i + 1}" for i in range(n_aivs)]
    cols += ["mean_charge_episode_s", "faults", "complete"]
    return cols


def _csv_row(sc: str, rep: Any, seed: Any, d: dict) -> list[Any]:
    row = [sc, rep, seed, d["max_pending"], d["sim_time"], d["mean_mission_time"]]
    row += list(d["avg_mission_time_per_aiv"]) + list(d["missions_per_aiv"]) + list(d["work_rate_per_aiv"])
    row += [d["recharge_time_total"], d["recharge_wait_total"], d["n_recharges"]]
    row += list(d["recharges_per_aiv"])
    row += [d["mean_charge_episode_s"], d["faults"], d["complete"]]
    return [round(x, 6) if isinstance(x, float) else x for x in row]


def render_csv(req: RunRequest, results) -> str:
    buf = io.StringIO()
    buf.write(f"# config: {json.dumps(_config_header(req), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_columns(req.base.n_aivs))
    agg = aggregate(results, req.scenarios)
    for sc in req.scenarios:
        for s, rep, seed, m in results:
            if s == sc:
                w.writerow(_csv_row(s, rep, seed, m.to_dict()))
        a = agg[sc]
        med = {k: a[k]["median"] for k in AGGREGATED}
        med.update({k: a[k]["median"] for k in ("avg_mission_time_per_aiv", "missions_per_aiv",
                                                 "work_rate_per_aiv", "recharges_per_aiv")})
        med["complete"] = a["complete"]
        w.writerow(_csv_row(sc, "median", "", med))
    return buf.getvalue()


def render_json(req: RunRequest, results) -> str:
    doc = {
        "config": _config_header(req),
        "runs": [{"scenario": s, "replication": r, "seed": seed, **m.to_dict()} for s, r, seed, m in results],
        "aggregates": aggregate(results, req.scenarios),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def render(req: RunRequest, results) -> str:
    if req.fmt == "csv":
        return render_csv(req, results)
    if req.fmt == "json":
        return render_json(req, results)
    return render_table(req, results)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        req = parse_request(argv)
    except ConfigError as exc:
        print(f"aivfleet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if req.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        results = execute(req)
    except (GraphError, RoutingError) as exc:
        print(f"aivfleet: routing error: {exc}", file=sys.stderr)
        return EXIT_ROUTING
    except (ConfigError, FuzzyError, OSError) as exc:
        print(f"aivfleet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = render(req, results)
    if req.out:
        Path(req.out).write_text(text)
    else:
        sys.stdout.write(text)
    bad = [(s, r) for s, r, _, m in results if m.faults or not m.complete]
    if bad:
        print(f"aivfleet: {len(bad)} run(s) completed with faults or hit the time limit", file=sys.stderr)
        return EXIT_FAULTS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
