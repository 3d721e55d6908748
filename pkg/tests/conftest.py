import math

import pytest

from asyncnet import netfile
from asyncnet.core import NetworkState
from asyncnet.fixtures import figure3_network, figure3_regions, path

EPS = 0.1


def dwell(phi0, eps=EPS):
    """Closed-form time for |th1 - th2| to shrink from phi0 to eps under
    d(phi)/dt = -2 sin(phi)."""
    if phi0 <= eps:
        return 0.0
    return 0.5 * math.log(math.tan(phi0 / 2) / math.tan(eps / 2))


def railway_state(space, th1, th2=0.0):
    return NetworkState.from_mapping(space, {"x1": -1.0, "th1": th1, "x2": 1.0, "th2": th2})


@pytest.fixture(scope="session")
def railway():
    return netfile.load(path("railway.net")).functional


@pytest.fixture(scope="session")
def railway_return():
    return netfile.load(path("railway_return.net")).functional


@pytest.fixture(scope="session")
def fig3_esn():
    return figure3_regions()


@pytest.fixture(scope="session")
def fig3():
    return figure3_network()


def random_esn(rng, max_nodes=6, max_events=8, min_layers=1):
    """Random event-structured network: events are placed in a global order,
    event j occupying progress slot j on each of its nodes."""
    from asyncnet.factorize import EventRegion, EventStructuredNetwork, longest_chain, build_precedence

    while True:
        k = rng.randint(1, max_nodes)
        m = rng.randint(0, max_events)
        events = []
        for j in range(m):
            nodes = rng.sample(range(1, k + 1), rng.randint(1, min(3, k)))
            lo, hi = (j + 0.3) / m, (j + 0.7) / m
            events.append(EventRegion(f"e{j}", tuple((i, lo, hi) for i in nodes)))
        esn = EventStructuredNetwork(k, tuple(events))
        if longest_chain(esn.names, build_precedence(esn)) >= min_layers:
            return esn


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
