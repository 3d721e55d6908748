"""Shipped network files and the builder for the nine-node event fixture."""
from __future__ import annotations

from importlib import resources

from ..factorize import EventRegion, EventStructuredNetwork, factorize_left, rendezvous_network

# event -> participating nodes.  Chosen so that the precedence order has the
# left layering a,c | b | d,f | e,g | h and the right layering
# a | b | d | c,e,f | g,h, with N6..N9 meeting in g.
FIGURE3_INCIDENCE = {
    "a": (1, 3),
    "b": (1, 5),
    "c": (2, 8, 9),
    "d": (1, 3),
    "e": (3, 4),
    "f": (5, 6, 7),
    "g": (6, 7, 8, 9),
    "h": (1, 4),
}


def path(name: str):
    return resources.files(__name__).joinpath(name)


def figure3_regions() -> EventStructuredNetwork:
    """Nine nodes, eight events; each event sits in the progress slot of its
    earliest possible layer, so all participants share the same interval."""
    k = 9
    # earliest layer of each event, checked against the left factorization below
    order = {"a": 0, "c": 0, "b": 1, "d": 2, "f": 2, "e": 3, "g": 3, "h": 4}
    events = []
    for name, nodes in FIGURE3_INCIDENCE.items():
        j = order[name]
        lo, hi = (j + 0.3) / 5, (j + 0.7) / 5
        events.append(EventRegion(name, tuple((i, lo, hi) for i in nodes)))
    esn = EventStructuredNetwork(k, tuple(events))
    fac = factorize_left(esn)
    assert {n: j for j, l in enumerate(fac.layers) for n in l} == order
    return esn


def figure3_network():
    return rendezvous_network(figure3_regions())
