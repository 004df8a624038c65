import functools
from pathlib import Path

import pytest

from qcopf.testkit import TOPOLOGIES, RandomNetworkSpec, gen_feasible_point, gen_network

DATA = Path(__file__).parent / "data"


def instance_spec(seed: int) -> RandomNetworkSpec:
    topology = TOPOLOGIES[seed % 3]
    n = 2 + seed % 5
    if topology == "ring":
        n = max(n, 3)
    return RandomNetworkSpec(n_buses=n, topology=topology, seed=seed, tap_prob=0.3)


@functools.lru_cache(maxsize=None)
def instance(seed: int):
    """Random network plus a point that is AC feasible for it by construction."""
    return gen_feasible_point(gen_network(instance_spec(seed)), seed)


@pytest.fixture
def toy3_path():
    return DATA / "toy3.m"


@pytest.fixture
def two_bus():
    return instance(0)


# lines printed by the acceptance suite, repeated in the terminal summary
RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
