"""Domain types for asynchronous networks.

Node numbering follows the usual convention: nodes are ``1..k`` and ``0`` is
the constraining node.  An edge ``(j, i)`` means ``N_j -> N_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import exprlang as ex
from .exprlang import Expression

TWO_PI = ex.TWO_PI


class ConfigurationError(Exception):
    """Invalid network description (bad symbols, admissibility, shapes)."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigurationError(f"interval requires lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Circle:
    period: float = TWO_PI


PhaseComponent = "Interval | Circle"


@dataclass(frozen=True)
class Node:
    name: str
    components: tuple  # of (coordinate name, Interval | Circle)

    def __post_init__(self):
        if not self.components:
            raise ConfigurationError(f"node {self.name} has no phase components")

    @property
    def coord_names(self) -> tuple:
        return tuple(c for c, _ in self.components)


@dataclass(frozen=True)
class PhaseSpace:
    nodes: tuple

    def __post_init__(self):
        if not self.nodes:
            raise ConfigurationError("a network needs at least one node")
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate node names in {names}")
        coords = [c for n in self.nodes for c in n.coord_names]
        if len(set(coords)) != len(coords):
            raise ConfigurationError(f"duplicate coordinate names in {coords}")

    @property
    def k(self) -> int:
        return len(self.nodes)

    @property
    def coord_names(self) -> tuple:
        return tuple(c for n in self.nodes for c in n.coord_names)

    @property
    def kinds(self) -> tuple:
        return tuple(kind for n in self.nodes for _, kind in n.components)

    @property
    def dim(self) -> int:
        return sum(len(n.components) for n in self.nodes)

    def offsets(self) -> tuple:
        out, pos = [], 0
        for n in self.nodes:
            out.append(pos)
            pos += len(n.components)
        out.append(pos)
        return tuple(out)

    def node_slice(self, i: int) -> slice:
        """Flat-coordinate slice of node ``i`` (1-based)."""
        off = self.offsets()
        return slice(off[i - 1], off[i])

    def node_of_coord(self) -> tuple:
        return tuple(i + 1 for i, n in enumerate(self.nodes) for _ in n.components)

    def coord_index(self) -> dict:
        return {c: idx for idx, c in enumerate(self.coord_names)}

    def node_index(self, name: str) -> int:
        for i, n in enumerate(self.nodes, start=1):
            if n.name == name:
                return i
        raise ConfigurationError(f"unknown node {name!r}")

    def node_coords(self, i: int) -> frozenset:
        return frozenset(self.nodes[i - 1].coord_names)

    def normalize(self, flat: Sequence[float]) -> tuple:
        """Wrap circle coordinates into [0, 2pi); reject out-of-range intervals."""
        out = []
        for v, kind, name in zip(flat, self.kinds, self.coord_names):
            v = float(v)
            if isinstance(kind, Circle):
                v = ex.mod2pi(v)
            elif not kind.lo <= v <= kind.hi:
                raise ConfigurationError(f"{name}={v} outside [{kind.lo}, {kind.hi}]")
            out.append(v)
        return tuple(out)


@dataclass(frozen=True)
class NetworkState:
    """A network point X = (x_1, ..., x_k) together with the global clock."""

    coords: tuple  # per node, tuple of floats
    clock: float = 0.0

    def __post_init__(self):
        if self.clock < 0:
            raise ConfigurationError("clock must be non-negative")

    @property
    def flat(self) -> tuple:
        return tuple(v for node in self.coords for v in node)

    @classmethod
    def from_flat(cls, space: PhaseSpace, flat: Sequence[float], clock: float = 0.0) -> "NetworkState":
        vals = space.normalize(flat)
        off = space.offsets()
        return cls(tuple(tuple(vals[off[i]:off[i + 1]]) for i in range(space.k)), float(clock))

    @classmethod
    def from_mapping(cls, space: PhaseSpace, values: Mapping[str, float], clock: float = 0.0) -> "NetworkState":
        missing = [c for c in space.coord_names if c not in values]
        if missing:
            raise ConfigurationError(f"missing coordinates {missing}")
        return cls.from_flat(space, [values[c] for c in space.coord_names], clock)

    def as_mapping(self, space: PhaseSpace) -> dict:
        return dict(zip(space.coord_names, self.flat))


@dataclass(frozen=True)
class ConnectionStructure:
    name: str
    edges: frozenset = frozenset()

    def __post_init__(self):
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if i == 0:
                raise ConfigurationError(f"{self.name}: edges into the constraining node are not allowed")
            if j == i:
                raise ConfigurationError(f"{self.name}: self-loop on node {i}")
            if j < 0 or i < 0:
                raise ConfigurationError(f"{self.name}: negative node index")
        object.__setattr__(self, "edges", edges)

    def sources(self, i: int) -> frozenset:
        return frozenset(j for j, t in self.edges if t == i)

    def is_empty(self) -> bool:
        return not self.edges

    def join(self, other: "ConnectionStructure") -> "ConnectionStructure":
        return ConnectionStructure(join_name((self.name, other.name)), self.edges | other.edges)


def join_name(names: Sequence[str]) -> str:
    return "|".join(names)


@dataclass(frozen=True)
class GeneralizedConnectionStructure:
    structures: tuple

    def __post_init__(self):
        if not self.structures:
            raise ConfigurationError("a generalized connection structure must be nonempty")
        names = [s.name for s in self.structures]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate structure names in {names}")

    def __getitem__(self, name: str) -> ConnectionStructure:
        for s in self.structures:
            if s.name == name:
                return s
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(s.name == name for s in self.structures)

    @property
    def names(self) -> tuple:
        return tuple(s.name for s in self.structures)


@dataclass(frozen=True)
class AdmissibleField:
    """Network vector field attached to one connection structure.

    ``components`` maps coordinate names to expressions.  Coordinates not
    listed evolve with the literal 0 field.
    """

    structure: str
    components: tuple  # of (coord name, Expression)

    def component(self, coord: str) -> Expression:
        for c, e in self.components:
            if c == coord:
                return e
        return ex.Num(0.0)

    def as_dict(self) -> dict:
        return dict(self.components)


def check_admissibility(fld: AdmissibleField, alpha: ConnectionStructure, space: PhaseSpace,
                        constants: Mapping[str, float] = (), nodes: Sequence[int] | None = None) -> list:
    """Forbidden dependencies of ``fld`` under ``alpha`` as ``(node, variable)`` pairs.

    Node ``i`` may read its own coordinates, those of every ``j`` with
    ``(j, i)`` in ``alpha``, the declared constants and the clock ``t``.
    """
    if fld.structure != alpha.name:
        raise ConfigurationError(f"field for {fld.structure} checked against {alpha.name}")
    constants = set(constants)
    violations = []
    check_nodes = range(1, space.k + 1) if nodes is None else nodes
    for i in check_nodes:
        allowed = set(space.node_coords(i)) | constants | {"t"}
        for j in alpha.sources(i):
            if j > 0:
                allowed |= space.node_coords(j)
        for coord in space.nodes[i - 1].coord_names:
            for var in sorted(ex.free_variables(fld.component(coord))):
                if var not in allowed:
                    violations.append((i, var))
    return sorted(set(violations))


@dataclass(frozen=True)
class GuardTable:
    """Ordered ``when <predicate> use <structure>`` rules with a default.

    ``owned`` are the nodes whose field components this table governs;
    first matching guard wins.
    """

    owned: frozenset
    guards: tuple  # of (predicate Expression, structure name)
    default: str

    @property
    def targets(self) -> tuple:
        seen = []
        for _, s in self.guards:
            if s not in seen:
                seen.append(s)
        if self.default not in seen:
            seen.append(self.default)
        return tuple(seen)


@dataclass(frozen=True)
class EventMap:
    """State-dependent selector of the active connection structure.

    A single table is the common case.  Several tables with disjoint node
    ownership are combined by joining their targets (edge union), each table
    supplying the field components of its own nodes.
    """

    tables: tuple

    @classmethod
    def single(cls, k: int, guards: Sequence, default: str) -> "EventMap":
        return cls((GuardTable(frozenset(range(1, k + 1)), tuple(guards), default),))


@dataclass(frozen=True)
class AsyncNetwork:
    phase_space: PhaseSpace
    structures: GeneralizedConnectionStructure
    fields: tuple  # of AdmissibleField, one per structure
    event_map: EventMap
    constants: tuple = ()  # of (name, value)
    _compiled: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "constants", tuple((str(n), float(v)) for n, v in self.constants))
        self.validate()

    # -- accessors ---------------------------------------------------------
    @property
    def k(self) -> int:
        return self.phase_space.k

    @property
    def constant_table(self) -> dict:
        return dict(self.constants)

    def field_for(self, name: str) -> AdmissibleField:
        for f in self.fields:
            if f.structure == name:
                return f
        raise KeyError(name)

    def table_of_structure(self) -> dict:
        out = {}
        for ti, table in enumerate(self.event_map.tables):
            for s in table.targets:
                out[s] = ti
        return out

    def symbols(self) -> set:
        return set(self.phase_space.coord_names) | set(self.constant_table) | {"t"}

    # -- validation --------------------------------------------------------
    def validate(self) -> None:
        space = self.phase_space
        k = space.k
        consts = self.constant_table
        clash = set(consts) & set(space.coord_names)
        if clash:
            raise ConfigurationError(f"constants shadow coordinates: {sorted(clash)}")
        for s in self.structures.structures:
            for j, i in s.edges:
                if i > k or j > k:
                    raise ConfigurationError(f"{s.name}: edge {j}->{i} references a node beyond k={k}")
        field_names = [f.structure for f in self.fields]
        if sorted(field_names) != sorted(self.structures.names):
            raise ConfigurationError("every connection structure needs exactly one admissible field "
                                     f"(structures {sorted(self.structures.names)}, fields {sorted(field_names)})")
        owned_all = []
        for table in self.event_map.tables:
            owned_all.extend(table.owned)
        if sorted(owned_all) != list(range(1, k + 1)):
            raise ConfigurationError("event tables must partition the nodes 1..k")
        symbols = self.symbols()
        owner_of = {}
        for ti, table in enumerate(self.event_map.tables):
            for target in table.targets:
                if target not in self.structures:
                    raise ConfigurationError(f"event map targets unknown structure {target!r}")
                if target in owner_of and owner_of[target] != ti:
                    raise ConfigurationError(f"structure {target!r} used by two event tables")
                owner_of[target] = ti
                alpha = self.structures[target]
                for j, i in alpha.edges:
                    if i not in table.owned:
                        raise ConfigurationError(
                            f"structure {target!r} has edge {j}->{i} into a node its table does not own")
            for pred, _ in table.guards:
                ex.check_kinds(pred, "bool")
                unknown = ex.free_variables(pred) - symbols
                if unknown:
                    raise ConfigurationError(f"guard '{ex.to_text(pred)}' uses undeclared {sorted(unknown)}")
        for f in self.fields:
            for coord, e in f.components:
                if coord not in space.coord_names:
                    raise ConfigurationError(f"field {f.structure} sets unknown coordinate {coord!r}")
                ex.check_kinds(e, "real")
                unknown = ex.free_variables(e) - symbols
                if unknown:
                    raise ConfigurationError(
                        f"field {f.structure}.{coord} uses undeclared {sorted(unknown)}")
            alpha = self.structures[f.structure]
            ti = owner_of.get(f.structure)
            nodes = sorted(self.event_map.tables[ti].owned) if ti is not None else None
            bad = check_admissibility(f, alpha, space, consts, nodes)
            if bad:
                raise ConfigurationError(f"field {f.structure} is not admissible: {bad}")

    # -- semantics -------------------------------------------------------------
    def active_names(self, state: NetworkState) -> tuple:
        return tuple(self.event_map.tables[ti].targets[idx]
                     for ti, idx in enumerate(self.compiled().key(list(state.flat), state.clock)))

    def compiled(self) -> "CompiledNetwork":
        c = self._compiled.get("net")
        if c is None:
            c = CompiledNetwork(self)
            self._compiled["net"] = c
        return c

    def __getstate__(self):
        d = dict(self.__dict__)
        d["_compiled"] = {}
        return d

    def __setstate__(self, d):
        self.__dict__.update(d)


def evaluate_event_map(net: AsyncNetwork, state: NetworkState) -> ConnectionStructure:
    """Active connection structure E(X): first matching guard per table, joined."""
    env = state.as_mapping(net.phase_space)
    env.update(net.constant_table)
    env["t"] = state.clock
    chosen = []
    for table in net.event_map.tables:
        target = table.default
        for pred, name in table.guards:
            try:
                hit = ex.evaluate(pred, env)
            except ex.EvaluationError as exc:
                raise ConfigurationError(str(exc)) from exc
            if hit:
                target = name
                break
        chosen.append(net.structures[target])
    if len(chosen) == 1:
        return chosen[0]
    return ConnectionStructure(join_name([c.name for c in chosen]),
                               frozenset().union(*(c.edges for c in chosen)))


def network_field(net: AsyncNetwork, state: NetworkState) -> tuple:
    """F(X) = f^{E(X)}(X) as a flat tangent vector."""
    c = net.compiled()
    s = list(state.flat)
    try:
        return tuple(c.velocity(c.key(s, state.clock), s, state.clock))
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise ConfigurationError(f"field evaluation failed: {exc}") from exc


class CompiledNetwork:
    """Fast evaluators for an AsyncNetwork over flat coordinate lists.

    The active-structure key is a tuple with one target index per table.
    """

    def __init__(self, net: AsyncNetwork):
        self.net = net
        space = net.phase_space
        self.dim = space.dim
        self.coord_names = space.coord_names
        slots = {c: f"s[{i}]" for i, c in enumerate(space.coord_names)}
        slots["t"] = "t"
        self.slots = slots
        consts = net.constant_table
        self.consts = consts
        self.circle_idx = tuple(i for i, kd in enumerate(space.kinds) if isinstance(kd, Circle))
        self.bounds = tuple((i, kd.lo, kd.hi) for i, kd in enumerate(space.kinds) if isinstance(kd, Interval))
        node_of = space.node_of_coord()
        self.node_of = node_of
        self.tables = net.event_map.tables
        self._key_fn = self._compile_key()
        self._velocity_cache = {}
        self.snaps = self._collect_snaps()

    def _compile_key(self):
        parts = []
        for table in self.tables:
            targets = table.targets
            body = repr(targets.index(table.default))
            for pred, name in reversed(table.guards):
                cond = ex.to_python(pred, self.slots, self.consts)
                body = f"({targets.index(name)} if {cond} else {body})"
            parts.append(body)
        return ex.compile_function("s, t", "(" + ", ".join(parts) + ",)")

    def key(self, s, t) -> tuple:
        return self._key_fn(s, t)

    def velocity_fn(self, key: tuple):
        fn = self._velocity_cache.get(key)
        if fn is None:
            comps = ["0.0"] * self.dim
            for table, idx in zip(self.tables, key):
                fld = self.net.field_for(table.targets[idx])
                for ci, coord in enumerate(self.coord_names):
                    if self.node_of[ci] in table.owned:
                        e = fld.component(coord)
                        comps[ci] = ex.to_python(e, self.slots, self.consts)
            fn = ex.compile_function("s, t", "[" + ", ".join(comps) + "]")
            self._velocity_cache[key] = fn
        return fn

    def velocity(self, key: tuple, s, t) -> list:
        return self.velocity_fn(key)(s, t)

    def structure_name(self, key: tuple) -> str:
        return join_name([table.targets[idx] for table, idx in zip(self.tables, key)])

    def structure(self, key: tuple) -> ConnectionStructure:
        structs = [self.net.structures[table.targets[idx]] for table, idx in zip(self.tables, key)]
        if len(structs) == 1:
            return structs[0]
        return ConnectionStructure(self.structure_name(key), frozenset().union(*(s.edges for s in structs)))

    def _collect_snaps(self) -> tuple:
        """Equality atoms ``coord = constant-expr`` in any guard.

        Crossing such a surface inside a step is localized and the coordinate
        is set exactly onto it, so tolerance-free equalities can fire.
        """
        index = {c: i for i, c in enumerate(self.coord_names)}
        out = set()
        for table in self.tables:
            for pred, _ in table.guards:
                for atom in equality_atoms(pred):
                    lhs, rhs = atom.left, atom.right
                    if not isinstance(lhs, ex.Var) or lhs.name not in index:
                        lhs, rhs = rhs, lhs
                    if not isinstance(lhs, ex.Var) or lhs.name not in index:
                        continue
                    if ex.free_variables(rhs) - set(self.consts):
                        continue
                    value = float(ex.evaluate(rhs, self.consts))
                    out.add((index[lhs.name], value))
        return tuple(sorted(out))


def equality_atoms(e: Expression):
    if isinstance(e, ex.Compare):
        if e.op == "=":
            yield e
        return
    for c in ex.children(e):
        yield from equality_atoms(c)


def comparison_atoms(e: Expression):
    if isinstance(e, ex.Compare):
        yield e
        return
    for c in ex.children(e):
        yield from comparison_atoms(c)
