"""Composition of functional asynchronous networks.

``product`` juxtaposes networks on disjoint node sets, ``amalgamate`` merges
networks acting on disjoint node subsets of a common node set, and
``concatenate`` chains two networks in time (the termination set of the first
is the initialization set of the second).  A concatenation is simulated
operationally: each node follows the first network until it crosses that
network's termination set and then follows the second.
"""
from __future__ import annotations

import math
import random
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from . import exprlang as ex
from .core import (
    AdmissibleField,
    AsyncNetwork,
    Circle,
    ConfigurationError,
    ConnectionStructure,
    EventMap,
    GeneralizedConnectionStructure,
    GuardTable,
    Interval,
    NetworkState,
    PhaseSpace,
)
from .functional import COMPLETED, FunctionalNetwork, run_generalized
from .semiflow import IntegratorConfig


class PreconditionFailed(ConfigurationError):
    pass


class BoundaryMismatch(ConfigurationError):
    pass


@dataclass(frozen=True)
class NodeEmbedding:
    """Where each factor's nodes sit in the composite (1-based indices)."""

    maps: tuple  # per factor, tuple of composite indices
    sigmas: tuple = ()  # amalgamation node subsets

    def __post_init__(self):
        seen = set()
        for m in self.maps:
            if len(set(m)) != len(m):
                raise PreconditionFailed("embedding is not injective")
            if seen & set(m):
                raise PreconditionFailed("factors overlap in the composite")
            seen |= set(m)
        for a, sa in enumerate(self.sigmas):
            for b, sb in enumerate(self.sigmas):
                if a < b and set(sa) & set(sb):
                    raise PreconditionFailed(f"Sigma({a + 1}) and Sigma({b + 1}) overlap on {sorted(set(sa) & set(sb))}")


@dataclass(frozen=True)
class Concatenation:
    """Chain of stages; node ``i`` runs stage ``s + 1`` after crossing the
    termination set of stage ``s``."""

    stages: tuple

    @property
    def phase_space(self) -> PhaseSpace:
        return self.stages[0].phase_space

    @property
    def k(self) -> int:
        return self.stages[0].k

    @property
    def init_levels(self) -> tuple:
        return self.stages[0].init_levels

    @property
    def term_levels(self) -> tuple:
        return self.stages[-1].term_levels

    def joined_structure(self, names: Sequence[str]) -> ConnectionStructure:
        """Join (edge union) of one structure per stage, e.g. from an event
        map reading; computed on demand."""
        structs = [st.net.structures[n] for st, n in zip(self.stages, names)]
        out = structs[0]
        for s in structs[1:]:
            out = out.join(s)
        return out


# ---------------------------------------------------------------------------
# helpers

def _single(fn, what: str) -> FunctionalNetwork:
    if len(fn.stages) != 1:
        raise PreconditionFailed(f"{what} of a concatenation is not supported")
    return fn.stages[0]


def _unique_name(name: str, taken: set, tag: str) -> str:
    if name not in taken:
        return name
    cand = f"{name}_{tag}"
    n = 2
    while cand in taken:
        cand = f"{name}_{tag}_{n}"
        n += 1
    return cand


def _assemble(factors: Sequence[FunctionalNetwork], placements: Sequence[Sequence[int]]) -> FunctionalNetwork:
    """Composite network with factor ``a``'s node ``j`` at ``placements[a][j-1]``."""
    k = sum(f.k for f in factors)
    slots = {}
    for a, (f, place) in enumerate(zip(factors, placements)):
        if len(place) != f.k:
            raise PreconditionFailed("placement does not cover the factor's nodes")
        for j, pos in enumerate(place, start=1):
            slots[pos] = (a, j)
    if sorted(slots) != list(range(1, k + 1)):
        raise PreconditionFailed("placements must be a permutation of 1..k")
    nodes = []
    init, term = [], []
    for pos in range(1, k + 1):
        a, j = slots[pos]
        nodes.append(factors[a].phase_space.nodes[j - 1])
        init.append(factors[a].init_levels[j - 1])
        term.append(factors[a].term_levels[j - 1])
    names = [n.name for n in nodes]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise PreconditionFailed(f"node-name collision: {dup}")
    try:
        space = PhaseSpace(tuple(nodes))
    except ConfigurationError as exc:
        raise PreconditionFailed(str(exc)) from exc

    constants = {}
    for f in factors:
        for n, v in f.net.constants:
            if n in constants and constants[n] != v:
                raise PreconditionFailed(f"constant {n!r} has conflicting values {constants[n]} and {v}")
            constants[n] = v

    taken = set()
    structures, fields, tables = [], [], []
    for a, (f, place) in enumerate(zip(factors, placements)):
        remap = {0: 0, **{j: place[j - 1] for j in range(1, f.k + 1)}}
        rename = {}
        for s in f.net.structures.structures:
            new = _unique_name(s.name, taken, f"f{a + 1}")
            taken.add(new)
            rename[s.name] = new
            structures.append(ConnectionStructure(new, frozenset((remap[j], remap[i]) for j, i in s.edges)))
        for fld in f.net.fields:
            fields.append(AdmissibleField(rename[fld.structure], fld.components))
        for tb in f.net.event_map.tables:
            tables.append(GuardTable(frozenset(remap[i] for i in tb.owned),
                                     tuple((p, rename[s]) for p, s in tb.guards), rename[tb.default]))
    tables.sort(key=lambda tb: min(tb.owned))
    net = AsyncNetwork(space, GeneralizedConnectionStructure(tuple(structures)), tuple(fields),
                       EventMap(tuple(tables)), tuple(sorted(constants.items())))
    return FunctionalNetwork(net, tuple(init), tuple(term))


def restrict(fn: FunctionalNetwork, nodes: Sequence[int]) -> FunctionalNetwork:
    """Sub-network on ``nodes`` (1-based); fails if the kept part reads or is
    wired to anything outside."""
    fn = _single(fn, "restriction")
    keep = sorted(set(nodes))
    net = fn.net
    space = net.phase_space
    remap = {0: 0, **{old: new for new, old in enumerate(keep, start=1)}}
    kept_coords = set()
    for i in keep:
        kept_coords |= space.node_coords(i)
    allowed = kept_coords | set(net.constant_table) | {"t"}
    tables, used = [], []
    for tb in net.event_map.tables:
        owned = tb.owned & set(keep)
        if not owned:
            continue
        for pred, _ in tb.guards:
            outside = ex.free_variables(pred) - allowed
            if outside:
                raise PreconditionFailed(
                    f"guard '{ex.to_text(pred)}' reads {sorted(outside)} outside nodes {keep}")
        tables.append(GuardTable(frozenset(remap[i] for i in owned), tb.guards, tb.default))
        used.extend(tb.targets)
    structures, fields = [], []
    for name in used:
        s = net.structures[name]
        edges = set()
        for j, i in s.edges:
            if i not in remap:
                continue
            if j not in remap:
                raise PreconditionFailed(f"structure {name!r} couples node {j} into node {i} across the cut")
            edges.add((remap[j], remap[i]))
        structures.append(ConnectionStructure(name, frozenset(edges)))
        comps = tuple((c, e) for c, e in net.field_for(name).components if c in kept_coords)
        fields.append(AdmissibleField(name, comps))
    sub = AsyncNetwork(PhaseSpace(tuple(space.nodes[i - 1] for i in keep)),
                       GeneralizedConnectionStructure(tuple(structures)), tuple(fields),
                       EventMap(tuple(tables)), net.constants)
    return FunctionalNetwork(sub, tuple(fn.init_levels[i - 1] for i in keep),
                             tuple(fn.term_levels[i - 1] for i in keep))


def trivial_restriction(fn: FunctionalNetwork, i: int) -> FunctionalNetwork:
    """Single-node network of node ``i``, which must be uncoupled and
    unconstrained in every structure its table can select."""
    fn = _single(fn, "restriction")
    net = fn.net
    space = net.phase_space
    node = space.nodes[i - 1]
    table = next(tb for tb in net.event_map.tables if i in tb.owned)
    comps = None
    for name in table.targets:
        s = net.structures[name]
        if s.sources(i):
            raise PreconditionFailed(f"node {node.name} has incoming edges {sorted(s.sources(i))} in {name!r}")
        fld = net.field_for(name)
        mine = tuple((c, ex.normalize(fld.component(c))) for c in node.coord_names)
        if comps is None:
            comps = mine
        elif comps != mine:
            raise PreconditionFailed(f"node {node.name} changes its dynamics with the event map")
    name = f"free_{node.name}"
    sub = AsyncNetwork(PhaseSpace((node,)),
                       GeneralizedConnectionStructure((ConnectionStructure(name),)),
                       (AdmissibleField(name, comps),),
                       EventMap((GuardTable(frozenset({1}), (), name),)), net.constants)
    return FunctionalNetwork(sub, (fn.init_levels[i - 1],), (fn.term_levels[i - 1],))


# ---------------------------------------------------------------------------
# operations

def product(factors: Sequence) -> FunctionalNetwork:
    """Product of networks with disjoint node sets; factor order gives node order."""
    if not factors:
        raise PreconditionFailed("product of no factors")
    factors = [_single(f, "product") for f in factors]
    if len(factors) == 1:
        return factors[0]
    placements, pos = [], 1
    for f in factors:
        placements.append(tuple(range(pos, pos + f.k)))
        pos += f.k
    NodeEmbedding(tuple(placements))
    return _assemble(factors, placements)


def is_trivial(fn) -> bool:
    """No interactions between nodes and no constraints in any structure."""
    return all(s.is_empty() for st in fn.stages for s in st.net.structures.structures)


def _same_boundaries(parts: Sequence[FunctionalNetwork]) -> None:
    first = parts[0]
    for p in parts[1:]:
        if p.phase_space != first.phase_space:
            raise PreconditionFailed("amalgamated networks must share the node set and phase space")
        for i in range(first.k):
            if not (ex.structurally_equal(p.init_levels[i], first.init_levels[i])
                    and ex.structurally_equal(p.term_levels[i], first.term_levels[i])):
                raise PreconditionFailed(
                    f"amalgamated networks disagree on the init/term sets of node {first.phase_space.nodes[i].name}")


def amalgamate(parts: Sequence, sigmas: Sequence) -> FunctionalNetwork:
    """Merge networks that interact on disjoint node subsets ``sigmas`` and
    are trivial elsewhere; the result is (prod of Sigma-parts) x trivial."""
    if not parts or len(parts) != len(sigmas):
        raise PreconditionFailed("need one Sigma per part")
    parts = [_single(p, "amalgamation") for p in parts]
    _same_boundaries(parts)
    k = parts[0].k
    sigmas = [frozenset(s) for s in sigmas]
    for a, s in enumerate(sigmas):
        if not s or not s <= set(range(1, k + 1)):
            raise PreconditionFailed(f"Sigma({a + 1}) = {sorted(s)} is not a nonempty subset of 1..{k}")
    NodeEmbedding(tuple(tuple(sorted(s)) for s in sigmas), tuple(sigmas))
    if len(parts) == 1 and sigmas[0] == frozenset(range(1, k + 1)):
        return parts[0]

    covered = frozenset().union(*sigmas)
    rest = [i for i in range(1, k + 1) if i not in covered]
    factors, placements = [], []
    for a, (p, sig) in enumerate(zip(parts, sigmas)):
        for i in range(1, k + 1):
            if i not in sig:
                try:
                    trivial_restriction(p, i)
                except PreconditionFailed as exc:
                    raise PreconditionFailed(f"part {a + 1} is not trivial off Sigma({a + 1}): {exc}") from None
        for s in p.net.structures.structures:
            for j, i in s.edges:
                if i in sig and j not in sig and j != 0:
                    raise PreconditionFailed(
                        f"part {a + 1}: structure {s.name!r} couples node {j} outside Sigma into node {i}")
        factors.append(restrict(p, sorted(sig)))
        placements.append(tuple(sorted(sig)))
    for i in rest:
        triv = [trivial_restriction(p, i) for p in parts]
        ref = triv[0]
        for a, other in enumerate(triv[1:], start=2):
            if other.net.fields != ref.net.fields:
                raise PreconditionFailed(f"parts 1 and {a} disagree on the trivial dynamics of node {i}")
        factors.append(ref)
        placements.append((i,))
    return _assemble(factors, placements)


ZERO_TOL = 1e-7


def _node_sample(node, rng, edge_prob: float = 0.25) -> dict:
    """Uniform point of the node's phase space; interval coordinates sit on an
    endpoint with probability ``edge_prob`` so boundary level sets are hit."""
    out = {}
    for c, kind in node.components:
        if isinstance(kind, Interval) and rng.random() < edge_prob:
            out[c] = kind.lo if rng.random() < 0.5 else kind.hi
        elif isinstance(kind, Interval):
            out[c] = rng.uniform(kind.lo, kind.hi)
        else:
            out[c] = rng.uniform(0.0, kind.period)
    return out


def _zero_points(level, node, consts, rng, samples: int) -> list:
    """Points on the zero set of ``level``: exact hits, or bisection between
    two samples of opposite sign."""
    ev = lambda p: ex.evaluate(level, dict(consts, **p))
    pts = []
    for _ in range(samples):
        p, q = _node_sample(node, rng), _node_sample(node, rng)
        fp, fq = ev(p), ev(q)
        if fp == 0.0:
            pts.append(p)
        elif fp * fq < 0:
            lo, hi = 0.0, 1.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                m = {c: p[c] + mid * (q[c] - p[c]) for c in p}
                if (ev(m) > 0) == (fp > 0):
                    lo = mid
                else:
                    hi = mid
            pts.append({c: p[c] + lo * (q[c] - p[c]) for c in p})
    return pts


def _boundaries_match(first: FunctionalNetwork, second: FunctionalNetwork, samples: int = 1000) -> None:
    """Termination sets of ``first`` must equal initialization sets of
    ``second`` node by node: structurally, or else as sampled zero sets."""
    if first.phase_space != second.phase_space:
        raise BoundaryMismatch("concatenated networks must share the node set and phase space")
    space = first.phase_space
    consts = dict(first.net.constant_table)
    consts.update(second.net.constant_table)
    rng = random.Random(12345)
    for i in range(first.k):
        f1, i2 = first.term_levels[i], second.init_levels[i]
        if ex.structurally_equal(f1, i2):
            continue
        node = space.nodes[i]
        found = 0
        for src, other in ((f1, i2), (i2, f1)):
            pts = _zero_points(src, node, consts, rng, samples)
            found += len(pts)
            for p in pts:
                if abs(ex.evaluate(other, dict(consts, **p))) > ZERO_TOL:
                    raise BoundaryMismatch(
                        f"node {node.name}: termination set '{ex.to_text(f1)}' of the first network differs "
                        f"from initialization set '{ex.to_text(i2)}' of the second (near {p})")
        if not found:
            raise BoundaryMismatch(f"node {node.name}: cannot locate the level sets to compare them")
        warnings.warn(f"node {node.name}: boundaries accepted by sampling only", RuntimeWarning, stacklevel=3)


def concatenate(first, second) -> Concatenation:
    """Temporal merge: ``first`` then ``second`` (written second <> first)."""
    stages = tuple(first.stages) + tuple(second.stages)
    _boundaries_match(first.stages[-1], second.stages[0])
    return Concatenation(stages)


def chain(stages: Sequence):
    """Concatenate stage_1, stage_2, ... in temporal order."""
    out = stages[0]
    for st in stages[1:]:
        out = concatenate(out, st)
    return out


# ---------------------------------------------------------------------------
# verification of the composition formula

@dataclass
class CompositionReport:
    max_state_error: float
    max_time_error: float
    per_sample: list = field(default_factory=list)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_state_error <= tol and self.max_time_error <= tol

    def as_dict(self) -> dict:
        return {"max_state_error": self.max_state_error, "max_time_error": self.max_time_error,
                "per_sample": self.per_sample}


def state_distance(space: PhaseSpace, a: Sequence, b: Sequence) -> float:
    """Max coordinate deviation; circle coordinates use the geodesic distance."""
    kinds = space.kinds
    out = 0.0
    flat_a = [v for node in a for v in node]
    flat_b = [v for node in b for v in node]
    for kind, x, y in zip(kinds, flat_a, flat_b):
        d = ex.circ_dist(x, y) if isinstance(kind, Circle) else abs(x - y)
        out = max(out, d)
    return out


def compare_results(space, r1, r2) -> dict:
    if r1.status != r2.status:
        return {"status": f"{r1.status}/{r2.status}", "state_error": math.inf, "time_error": math.inf}
    if r1.status != COMPLETED:
        return {"status": r1.status, "state_error": 0.0, "time_error": 0.0}
    return {
        "status": COMPLETED,
        "state_error": state_distance(space, r1.final_states, r2.final_states),
        "time_error": max(abs(x - y) for x, y in zip(r1.times, r2.times)),
    }


def staged_run(fn, x0: NetworkState, T: Sequence[float], cfg: IntegratorConfig):
    """Iterated composition G^q(... G^2(G^1(X, T), S^1(X, T)) ...) over the
    stages of ``fn``; each stage is simulated on its own."""
    state, starts, r = x0, list(T), None
    for st in fn.stages:
        r = run_generalized(st, state, starts, cfg)
        if r.status != COMPLETED:
            return r
        state = NetworkState(tuple(r.final_states), x0.clock)
        starts = [s - x0.clock for s in r.times]
    return r


def two_stage(first, second, x0: NetworkState, T: Sequence[float], cfg: IntegratorConfig):
    """G2(G1(X, T), S1(X, T)) and S2(G1(X, T), S1(X, T))."""
    return staged_run(Concatenation(tuple(first.stages) + tuple(second.stages)), x0, T, cfg)


def _verify_one(args):
    first, second, composite, x0, T, cfg = args
    direct = run_generalized(composite, x0, T, cfg)
    staged = two_stage(first, second, x0, T, cfg)
    row = compare_results(composite.phase_space, direct, staged)
    row["T"] = list(T)
    return row


def verify_composition(first, second, samples: Sequence, cfg: IntegratorConfig | None = None,
                       workers: int = 1) -> CompositionReport:
    """Compare the direct simulation of ``second <> first`` with the two-stage
    composition on ``samples`` of ``(X, T)``."""
    cfg = cfg or IntegratorConfig()
    composite = concatenate(first, second)
    jobs = [(first, second, composite, x0, list(T), cfg) for x0, T in samples]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_verify_one, jobs))
    else:
        rows = [_verify_one(j) for j in jobs]
    return CompositionReport(
        max((r["state_error"] for r in rows), default=0.0),
        max((r["time_error"] for r in rows), default=0.0),
        rows,
    )


def _realization_one(args):
    reference, candidate, x0, T, cfg = args
    row = compare_results(reference.phase_space, run_generalized(reference, x0, T, cfg),
                          staged_run(candidate, x0, T, cfg))
    row["T"] = list(T)
    return row


def verify_realization(reference, candidate, samples: Sequence, cfg: IntegratorConfig | None = None,
                       workers: int = 1) -> CompositionReport:
    """Compare direct simulation of ``reference`` with the stage-by-stage
    composition of ``candidate`` (e.g. a monolithic network against its
    realized factorization)."""
    cfg = cfg or IntegratorConfig()
    if reference.phase_space != candidate.phase_space:
        raise PreconditionFailed("networks live on different phase spaces")
    jobs = [(reference, candidate, x0, list(T), cfg) for x0, T in samples]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_realization_one, jobs))
    else:
        rows = [_realization_one(j) for j in jobs]
    return CompositionReport(
        max((r["state_error"] for r in rows), default=0.0),
        max((r["time_error"] for r in rows), default=0.0),
        rows,
    )
