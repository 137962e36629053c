from pathlib import Path

import pytest

from aivfleet.allocation import FuzzyModels
from aivfleet.world import default_graph_path, graph_from_dict, load_graph

DATA = Path(__file__).resolve().parents[1] / "src" / "aivfleet" / "data"

# lines registered by the acceptance suite, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def default_graph():
    return load_graph(default_graph_path())


@pytest.fixture(scope="session")
def test6_graph():
    return load_graph(DATA / "graph_test6.json")


@pytest.fixture(scope="session")
def models(default_graph):
    return FuzzyModels.load(default_graph)


def two_node_graph(length=50.0):
    """Entry and exit joined both ways, plus two stations hanging off the exit."""
    return graph_from_dict({
        "nodes": [
            {"id": "E", "kind": "entry_treadmill"},
            {"id": "X", "kind": "exit_treadmill"},
            {"id": "S1", "kind": "charging_station"},
            {"id": "S2", "kind": "charging_station"},
        ],
        "edges": [
            {"from": "E", "to": "X", "length_m": length},
            {"from": "X", "to": "E", "length_m": length},
            {"from": "X", "to": "S1", "length_m": 5.0},
            {"from": "S1", "to": "E", "length_m": 5.0},
            {"from": "X", "to": "S2", "length_m": 6.0},
            {"from": "S2", "to": "E", "length_m": 6.0},
        ],
    })


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
