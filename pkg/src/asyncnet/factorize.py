"""Event-structured networks and their layered factorizations.

Every node carries a normalized progress coordinate in [0, 1] (0 on the
initialization set, 1 on the termination set).  An event occupies a progress
interval on each participating node; events sharing a node are ordered by
those intervals, which induces a strict partial order.  A factorization
groups the events into node-disjoint layers respecting the order; each layer
is an amalgamation and the layers are concatenated.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from . import exprlang as ex
from .algebra import amalgamate, chain
from .core import (
    AdmissibleField,
    AsyncNetwork,
    ConfigurationError,
    ConnectionStructure,
    EventMap,
    GeneralizedConnectionStructure,
    GuardTable,
    Interval,
    Node,
    PhaseSpace,
    comparison_atoms,
)
from .functional import FunctionalNetwork


class CyclicPrecedence(ConfigurationError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__("cyclic precedence: " + " < ".join(self.cycle))


@dataclass(frozen=True)
class EventRegion:
    name: str
    intervals: tuple  # of (node, entry, exit), node 1-based

    def __post_init__(self):
        ivs = tuple(sorted((int(i), float(a), float(b)) for i, a, b in self.intervals))
        if not ivs:
            raise ConfigurationError(f"event {self.name} has no nodes")
        if len({i for i, _, _ in ivs}) != len(ivs):
            raise ConfigurationError(f"event {self.name} lists a node twice")
        for i, a, b in ivs:
            if not 0.0 < a < b < 1.0:
                raise ConfigurationError(f"event {self.name}: interval ({a}, {b}) on node {i} not inside (0, 1)")
        object.__setattr__(self, "intervals", ivs)

    @property
    def nodes(self) -> frozenset:
        return frozenset(i for i, _, _ in self.intervals)

    def interval(self, node: int) -> tuple:
        for i, a, b in self.intervals:
            if i == node:
                return a, b
        raise KeyError(node)


@dataclass(frozen=True)
class EventStructuredNetwork:
    k: int
    events: tuple

    def __post_init__(self):
        evs = tuple(sorted(self.events, key=lambda e: e.name))
        names = [e.name for e in evs]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate event names {names}")
        for e in evs:
            if not e.nodes <= set(range(1, self.k + 1)):
                raise ConfigurationError(f"event {e.name} uses nodes outside 1..{self.k}")
        for i in range(1, self.k + 1):
            ivs = sorted((e.interval(i), e.name) for e in evs if i in e.nodes)
            for (a, n1), (b, n2) in zip(ivs, ivs[1:]):
                if a[1] > b[0]:
                    raise ConfigurationError(f"events {n1} and {n2} overlap on node {i}")
        object.__setattr__(self, "events", evs)
        build_precedence(self)  # rejects cycles

    def event(self, name: str) -> EventRegion:
        for e in self.events:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def names(self) -> tuple:
        return tuple(e.name for e in self.events)


def direct_precedence(esn: EventStructuredNetwork) -> dict:
    """Immediate successors: consecutive events on each node."""
    succ = {e.name: set() for e in esn.events}
    for i in range(1, esn.k + 1):
        on_node = sorted((e.interval(i)[0], e.name) for e in esn.events if i in e.nodes)
        for (_, a), (_, b) in zip(on_node, on_node[1:]):
            succ[a].add(b)
    return succ


def build_precedence(esn: EventStructuredNetwork) -> frozenset:
    """Strict partial order as the set of pairs ``(before, after)``."""
    succ = direct_precedence(esn)
    # cycle check by DFS colouring
    colour = {n: 0 for n in succ}
    parent = {}

    def visit(n):
        colour[n] = 1
        for m in sorted(succ[n]):
            if colour[m] == 1:
                cyc = [m, n]
                x = n
                while x != m and x in parent:
                    x = parent[x]
                    cyc.append(x)
                raise CyclicPrecedence(list(reversed(cyc)))
            if colour[m] == 0:
                parent[m] = n
                visit(m)
        colour[n] = 2

    for n in sorted(succ):
        if colour[n] == 0:
            visit(n)
    order = set()
    for n in succ:
        stack, seen = list(succ[n]), set()
        while stack:
            m = stack.pop()
            if m in seen:
                continue
            seen.add(m)
            order.add((n, m))
            stack.extend(succ[m])
    return frozenset(order)


@dataclass(frozen=True)
class Factorization:
    layers: tuple  # of tuples of event names, in temporal order
    boundaries: tuple  # per internal cut, tuple of (node, threshold)

    def thresholds(self, k: int) -> list:
        """Per node list [0, c_1, ..., c_{q-1}, 1]."""
        out = []
        for i in range(1, k + 1):
            row = [0.0] + [dict(b)[i] for b in self.boundaries] + [1.0]
            out.append(row)
        return out

    def notation(self) -> str:
        """Right-to-left product notation, e.g. ``P^h ◇ (P^e ⊔ P^g) ◇ ...``."""
        parts = []
        for layer in reversed(self.layers):
            inner = " ⊔ ".join(f"P^{n}" for n in layer)
            parts.append(f"({inner})" if len(layer) > 1 else inner)
        return " ◇ ".join(parts)

    def as_dict(self) -> dict:
        return {"layers": [list(l) for l in self.layers],
                "boundaries": [{str(i): c for i, c in b} for b in self.boundaries],
                "notation": self.notation()}


def _greedy_layers(names: Sequence[str], order: frozenset) -> list:
    preds = {n: {a for a, b in order if b == n} for n in names}
    placed, layers = set(), []
    while len(placed) < len(names):
        layer = sorted(n for n in names if n not in placed and preds[n] <= placed)
        if not layer:
            raise CyclicPrecedence(sorted(set(names) - placed))
        layers.append(layer)
        placed |= set(layer)
    return layers


def _boundaries(esn: EventStructuredNetwork, layers: Sequence) -> tuple:
    q = len(layers)
    where = {n: j for j, layer in enumerate(layers) for n in layer}
    cuts = [dict() for _ in range(max(q - 1, 0))]
    for i in range(1, esn.k + 1):
        evs = sorted((e.interval(i), where[e.name]) for e in esn.events if i in e.nodes)
        # cut c (between layer c and c+1) lies after events in layers <= c and before later ones
        for c in range(q - 1):
            before = [iv[1] for iv, j in evs if j <= c]
            after = [iv[0] for iv, j in evs if j > c]
            lo = max(before, default=0.0)
            hi = min(after, default=1.0)
            # all cuts sharing the same gap get equally spaced thresholds
            same = [cc for cc in range(q - 1)
                    if max([iv[1] for iv, j in evs if j <= cc], default=0.0) == lo
                    and min([iv[0] for iv, j in evs if j > cc], default=1.0) == hi]
            pos = same.index(c) + 1
            cuts[c][i] = lo + (hi - lo) * pos / (len(same) + 1)
    return tuple(tuple(sorted(c.items())) for c in cuts)


def _ordered(esn: EventStructuredNetwork, layers: list) -> tuple:
    """Within a layer, list events top to bottom (by smallest node, then name)."""
    key = lambda n: (min(esn.event(n).nodes), n)
    return tuple(tuple(sorted(layer, key=key)) for layer in layers)


def _check(esn: EventStructuredNetwork, layers: list) -> None:
    for layer in layers:
        used = set()
        for n in layer:
            nodes = esn.event(n).nodes
            assert not (used & nodes), f"layer {layer} is not node-disjoint"
            used |= nodes


def factorize_left(esn: EventStructuredNetwork) -> Factorization:
    """Earliest layering: each layer takes every event whose predecessors are placed."""
    order = build_precedence(esn)
    layers = _ordered(esn, _greedy_layers(esn.names, order))
    _check(esn, layers)
    return Factorization(layers, _boundaries(esn, layers))


def factorize_right(esn: EventStructuredNetwork) -> Factorization:
    """Latest layering: greedy on the reversed order, then reversed."""
    order = build_precedence(esn)
    reverse = frozenset((b, a) for a, b in order)
    layers = _ordered(esn, list(reversed(_greedy_layers(esn.names, reverse))))
    _check(esn, layers)
    return Factorization(layers, _boundaries(esn, layers))


def longest_chain(names: Sequence[str], order: frozenset) -> int:
    if not names:
        return 0
    preds = {n: [a for a, b in order if b == n] for n in names}
    depth = {}

    def d(n):
        if n not in depth:
            depth[n] = 1 + max((d(p) for p in preds[n]), default=0)
        return depth[n]

    return max(d(n) for n in names)


def layer_count_minimal(esn: EventStructuredNetwork) -> int:
    """Length of the longest precedence chain; both greedy layerings attain it."""
    q = longest_chain(esn.names, build_precedence(esn))
    assert len(factorize_left(esn).layers) == q
    assert len(factorize_right(esn).layers) == q
    return q


def validate_factorization(esn: EventStructuredNetwork, fac: Factorization) -> list:
    """Problems with ``fac`` found by walking the raw event list."""
    problems = []
    seen = [n for layer in fac.layers for n in layer]
    if sorted(seen) != sorted(esn.names):
        problems.append("events missing or repeated")
    where = {n: j for j, layer in enumerate(fac.layers) for n in layer}
    for j, layer in enumerate(fac.layers):
        for a in layer:
            for b in layer:
                if a < b and esn.event(a).nodes & esn.event(b).nodes:
                    problems.append(f"layer {j}: {a} and {b} share nodes")
    for a in esn.events:
        for b in esn.events:
            for i in a.nodes & b.nodes:
                if a.interval(i)[1] <= b.interval(i)[0] and not where.get(a.name, 0) < where.get(b.name, 0):
                    problems.append(f"{a.name} precedes {b.name} on node {i} but is not in an earlier layer")
    for c, cut in enumerate(fac.boundaries):
        cut = dict(cut)
        for e in esn.events:
            for i in e.nodes:
                a, b = e.interval(i)
                if where[e.name] <= c and not b < cut[i]:
                    problems.append(f"cut {c} on node {i} does not follow {e.name}")
                if where[e.name] > c and not cut[i] < a:
                    problems.append(f"cut {c} on node {i} does not precede {e.name}")
    for i in range(1, esn.k + 1):
        row = [0.0] + [dict(cut)[i] for cut in fac.boundaries] + [1.0]
        if any(x >= y for x, y in zip(row, row[1:])):
            problems.append(f"thresholds on node {i} are not increasing: {row}")
    return problems


# ---------------------------------------------------------------------------
# rendezvous dynamics: unit-speed progress, stop at an event's entry until
# every participant has arrived at its own entry point

def node_name(i: int) -> str:
    return f"N{i}"


def coord_name(i: int) -> str:
    return f"p{i}"


def _level(i: int, c: float) -> ex.Expression:
    return ex.normalize(ex.BinOp("-", ex.Var(coord_name(i)), ex.Num(c)))


def rendezvous_network(esn: EventStructuredNetwork, events: Sequence[str] | None = None,
                       lo: Sequence[float] | None = None, hi: Sequence[float] | None = None,
                       speed: float = 1.0) -> FunctionalNetwork:
    """Network on all ``esn.k`` nodes realizing the given events as rendezvous.

    Node ``i`` moves at ``speed``; at the entry of an event it stops (structure
    ``wait{i}_{event}``, constrained and dependent on the other participants)
    until every participant sits at its entry, then all move on.  ``lo`` and
    ``hi`` give the per-node init/term thresholds (default 0 and 1).
    """
    k = esn.k
    chosen = [esn.event(n) for n in (esn.names if events is None else events)]
    lo = [0.0] * k if lo is None else list(lo)
    hi = [1.0] * k if hi is None else list(hi)
    nodes = tuple(Node(node_name(i), ((coord_name(i), Interval(0.0, 1.0)),)) for i in range(1, k + 1))
    structures, fields, tables = [], [], []
    for i in range(1, k + 1):
        run = f"run{i}"
        structures.append(ConnectionStructure(run))
        fields.append(AdmissibleField(run, ((coord_name(i), ex.Num(speed)),)))
        guards = []
        for e in sorted((e for e in chosen if i in e.nodes), key=lambda e: e.interval(i)[0]):
            others = sorted(e.nodes - {i})
            if not others:
                continue
            wait = f"wait{i}_{e.name}"
            structures.append(ConnectionStructure(wait, frozenset({(0, i)} | {(j, i) for j in others})))
            fields.append(AdmissibleField(wait, ((coord_name(i), ex.Num(0.0)),)))
            at_entry = ex.Compare("=", ex.Var(coord_name(i)), ex.Num(e.interval(i)[0]))
            missing = None
            for j in others:
                atom = ex.Compare("<", ex.Var(coord_name(j)), ex.Num(e.interval(j)[0]))
                missing = atom if missing is None else ex.BoolOp("or", missing, atom)
            guards.append((ex.BoolOp("and", at_entry, missing), wait))
        tables.append(GuardTable(frozenset({i}), tuple(guards), run))
    net = AsyncNetwork(PhaseSpace(nodes), GeneralizedConnectionStructure(tuple(structures)),
                       tuple(fields), EventMap(tuple(tables)))
    return FunctionalNetwork(net, tuple(_level(i, lo[i - 1]) for i in range(1, k + 1)),
                             tuple(_level(i, hi[i - 1]) for i in range(1, k + 1)))


EventDynamics = Callable[[EventStructuredNetwork, EventRegion, Sequence[float], Sequence[float]], FunctionalNetwork]


def rendezvous_fragment(esn, event, lo, hi) -> FunctionalNetwork:
    return rendezvous_network(esn, [event.name], lo, hi)


def realize(esn: EventStructuredNetwork, fac: Factorization, event_dynamics: EventDynamics | None = None):
    """Materialize ``fac`` as a concatenation of amalgamations of per-event
    networks.  ``event_dynamics(esn, event, lo, hi)`` builds the network of a
    single event on all nodes (trivial off the event)."""
    event_dynamics = event_dynamics or rendezvous_fragment
    problems = validate_factorization(esn, fac)
    if problems:
        raise ConfigurationError("invalid factorization: " + "; ".join(problems))
    th = fac.thresholds(esn.k)
    if not fac.layers:
        return rendezvous_network(esn, [], [r[0] for r in th], [r[-1] for r in th])
    stages = []
    for j, layer in enumerate(fac.layers):
        lo = [r[j] for r in th]
        hi = [r[j + 1] for r in th]
        parts = [event_dynamics(esn, esn.event(n), lo, hi) for n in layer]
        stages.append(amalgamate(parts, [esn.event(n).nodes for n in layer]))
    return chain(stages)


def check_primitive(fragment: FunctionalNetwork, event: EventRegion) -> bool:
    """Structural sufficient test that an event's network is primitive.

    True when the participants' interaction graph (edges among them in every
    structure, constraining node ignored) is connected and all guard atoms
    ``coord <op> constant`` on participants are linked through shared guards
    into a single cluster, i.e. there is no internal cut in time.
    """
    net = fragment.net
    space = net.phase_space
    parts = set(event.nodes)
    # interaction graph among participants
    adj = {i: set() for i in parts}
    for s in net.structures.structures:
        for j, i in s.edges:
            if i in parts and j in parts:
                adj[i].add(j)
                adj[j].add(i)
    if not _connected(parts, adj):
        return False
    owner = dict(zip(space.coord_names, space.node_of_coord()))
    consts = set(net.constant_table)
    points_adj = {}
    for table in net.event_map.tables:
        for pred, _ in table.guards:
            pts = set()
            for atom in comparison_atoms(pred):
                for a, b in ((atom.left, atom.right), (atom.right, atom.left)):
                    if (isinstance(a, ex.Var) and owner.get(a.name) in parts
                            and not (ex.free_variables(b) - consts)):
                        pts.add((a.name, ex.evaluate(b, net.constant_table)))
            for p in pts:
                points_adj.setdefault(p, set()).update(pts - {p})
    if not points_adj:
        return True
    return _connected(set(points_adj), points_adj)


def _connected(vertices: set, adj: Mapping) -> bool:
    if not vertices:
        return True
    start = next(iter(vertices))
    seen, stack = {start}, [start]
    while stack:
        v = stack.pop()
        for w in adj.get(v, ()):
            if w in vertices and w not in seen:
                seen.add(w)
                stack.append(w)
    return seen == vertices
