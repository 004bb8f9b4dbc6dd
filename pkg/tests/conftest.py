import functools
from pathlib import Path

import pytest

from lowinertia import initialize, load_case

CASES = Path(__file__).resolve().parents[1] / "src" / "lowinertia" / "cases"
BUNDLED = ("omib", "case1_threebus", "case2_vsm_step", "case3_multimass", "case4_vsm_machine_dynlines")


@functools.lru_cache(maxsize=None)
def case(name):
    return load_case(CASES / f"{name}.yaml")


@functools.lru_cache(maxsize=None)
def operating_point(name):
    return initialize(case(name))


@pytest.fixture
def omib():
    return operating_point("omib")


@pytest.fixture
def case1():
    return operating_point("case1_threebus")


@pytest.fixture
def case2():
    return operating_point("case2_vsm_step")


def two_bus_doc(**sim):
    """Slack bus with a stiff source feeding bus 2 through X = 0.5."""
    doc = {
        "name": "two_bus",
        "buses": [{"number": 1, "type": "slack", "V": 1.0}, {"number": 2, "type": "PQ"}],
        "branches": [{"name": "l12", "from": 1, "to": 2, "R": 0.0, "X": 0.5}],
        "static_injections": [
            {"type": "source", "name": "grid", "bus": 1},
            {"type": "load", "name": "ld", "bus": 2, "P": 0.5, "Q": 0.0},
        ],
    }
    if sim:
        doc["simulation"] = sim
    return doc
