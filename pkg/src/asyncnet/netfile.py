"""Plain-text network description format (``asyncnet v1``).

Example::

    asyncnet v1
    constants:
      a = 1
    nodes:
      T1: x1 in [-a, 1], th1 circle
    structures:
      empty:
      alpha1: 0 -> T1
    fields:
      alpha1:
        x1 = 0
    events:
      when x1 = 0 use alpha1
      default empty
    functional:
      T1: init x1 + a; term x1 - 1

Top-level section headers start in column 0; everything else is indented.
``#`` starts a comment.  Several event tables are written as
``table T1, T2:`` blocks, each governing the listed nodes.  An optional
``event_regions:`` section lists ``name: N1 (entry, exit), N2 (entry, exit)``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

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
    Node,
    PhaseSpace,
)
from .exprlang import TWO_PI

HEADER = "asyncnet v1"
SECTIONS = ("constants", "nodes", "structures", "fields", "events", "functional", "event_regions")


class FormatError(ConfigurationError):
    def __init__(self, line: int, msg: str):
        self.line = line
        super().__init__(f"line {line}: {msg}")


@dataclass(frozen=True)
class NetworkFile:
    net: AsyncNetwork
    functional: object = None  # FunctionalNetwork
    regions: object = None  # EventStructuredNetwork


def _strip(line: str) -> str:
    return line.split("#", 1)[0].rstrip()


def _sections(text: str) -> dict:
    lines = text.splitlines()
    body = [(n, _strip(l)) for n, l in enumerate(lines, start=1)]
    body = [(n, l) for n, l in body if l.strip()]
    if not body or body[0][1].strip() != HEADER:
        raise FormatError(body[0][0] if body else 1, f"expected header '{HEADER}'")
    out, current = {}, None
    for n, l in body[1:]:
        if not l[0].isspace():
            m = re.fullmatch(r"(\w+):", l)
            if not m or m.group(1) not in SECTIONS:
                raise FormatError(n, f"unknown section header {l!r}")
            current = m.group(1)
            if current in out:
                raise FormatError(n, f"section {current} appears twice")
            out[current] = []
        elif current is None:
            raise FormatError(n, "content before the first section")
        else:
            out[current].append((n, l))
    for req in ("nodes", "structures", "events"):
        if req not in out:
            raise FormatError(len(lines), f"missing section '{req}'")
    return out


def _expr(n: int, src: str) -> ex.Expression:
    try:
        return ex.parse(src)
    except ex.ParseError as exc:
        raise FormatError(n, f"{exc}") from exc


def _const_value(n: int, src: str, consts: dict) -> float:
    env = {"pi": math.pi, **consts}
    try:
        return float(ex.evaluate(_expr(n, src), env))
    except ex.EvaluationError as exc:
        raise FormatError(n, str(exc)) from exc


def _split_top(s: str, sep: str = ",") -> list:
    """Split on ``sep`` outside brackets."""
    parts, depth, cur = [], 0, ""
    for ch in s:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [p.strip() for p in parts if p.strip()]


def _parse_nodes(rows, consts) -> PhaseSpace:
    nodes = []
    for n, l in rows:
        name, _, rest = l.strip().partition(":")
        comps = []
        for part in _split_top(rest):
            m = re.fullmatch(r"(\w+)\s+in\s+\[(.*)\]", part)
            if m:
                lo, hi = _split_top(m.group(2))
                comps.append((m.group(1), Interval(_const_value(n, lo, consts), _const_value(n, hi, consts))))
                continue
            m = re.fullmatch(r"(\w+)\s+circle(?:\((.*)\))?", part)
            if m:
                period = TWO_PI if m.group(2) is None else _const_value(n, m.group(2), consts)
                comps.append((m.group(1), Circle(period)))
                continue
            raise FormatError(n, f"bad phase component {part!r}")
        nodes.append(Node(name.strip(), tuple(comps)))
    return PhaseSpace(tuple(nodes))


def _node_ref(n: int, tok: str, space: PhaseSpace) -> int:
    tok = tok.strip()
    if tok.isdigit():
        return int(tok)
    try:
        return space.node_index(tok)
    except (KeyError, ConfigurationError, ValueError) as exc:
        raise FormatError(n, f"unknown node {tok!r}") from exc


def _parse_structures(rows, space) -> GeneralizedConnectionStructure:
    out = []
    for n, l in rows:
        name, _, rest = l.strip().partition(":")
        edges = set()
        for part in _split_top(rest):
            a, arrow, b = part.partition("->")
            if not arrow:
                raise FormatError(n, f"bad edge {part!r}")
            edges.add((_node_ref(n, a, space), _node_ref(n, b, space)))
        out.append(ConnectionStructure(name.strip(), frozenset(edges)))
    return GeneralizedConnectionStructure(tuple(out))


def _indent(l: str) -> int:
    return len(l) - len(l.lstrip())


def _parse_fields(rows, structures) -> tuple:
    comps = {s: [] for s in structures.names}
    current, base = None, None
    for n, l in rows:
        if base is None:
            base = _indent(l)
        if _indent(l) == base:
            m = re.fullmatch(r"(\S+):", l.strip())
            if not m or m.group(1) not in comps:
                raise FormatError(n, f"expected a structure name, got {l.strip()!r}")
            current = m.group(1)
        else:
            coord, eq, rhs = l.strip().partition("=")
            if not eq or current is None:
                raise FormatError(n, f"expected 'coord = expr', got {l.strip()!r}")
            comps[current].append((coord.strip(), _expr(n, rhs)))
    return tuple(AdmissibleField(s, tuple(c)) for s, c in comps.items())


def _parse_guards(n_rows, k) -> tuple:
    guards, default = [], None
    for n, l in n_rows:
        s = l.strip()
        m = re.fullmatch(r"when\s+(.*)\s+use\s+(\S+)", s)
        if m:
            if default is not None:
                raise FormatError(n, "guard after default")
            guards.append((_expr(n, m.group(1)), m.group(2)))
            continue
        m = re.fullmatch(r"default\s+(\S+)", s)
        if m:
            default = m.group(1)
            continue
        raise FormatError(n, f"expected 'when ... use ...' or 'default ...', got {s!r}")
    if default is None:
        raise FormatError(n_rows[-1][0] if n_rows else 0, "event table without default")
    return tuple(guards), default


def _parse_events(rows, space) -> EventMap:
    if rows and rows[0][1].strip().startswith("table "):
        tables, block, owned = [], [], None
        for n, l in rows + [(0, "table END:")]:
            s = l.strip()
            if s.startswith("table "):
                if owned is not None:
                    guards, default = _parse_guards(block, space.k)
                    tables.append(GuardTable(owned, guards, default))
                if s == "table END:" and n == 0:
                    break
                m = re.fullmatch(r"table\s+(.*):", s)
                if not m:
                    raise FormatError(n, f"bad table header {s!r}")
                owned = frozenset(_node_ref(n, t, space) for t in _split_top(m.group(1)))
                block = []
            else:
                block.append((n, l))
        return EventMap(tuple(tables))
    guards, default = _parse_guards(rows, space.k)
    return EventMap.single(space.k, guards, default)


def _parse_functional(rows, net):
    from .functional import FunctionalNetwork

    init, term = {}, {}
    for n, l in rows:
        name, _, rest = l.strip().partition(":")
        i = _node_ref(n, name, net.phase_space)
        for part in rest.split(";"):
            kw, _, src = part.strip().partition(" ")
            kw = kw.rstrip(":")
            if kw == "init":
                init[i] = _expr(n, src)
            elif kw == "term":
                term[i] = _expr(n, src)
            else:
                raise FormatError(n, f"expected 'init' or 'term', got {kw!r}")
    k = net.k
    if set(init) != set(range(1, k + 1)) or set(term) != set(range(1, k + 1)):
        raise FormatError(rows[0][0] if rows else 0, "functional section needs init and term for every node")
    return FunctionalNetwork(net, tuple(init[i] for i in range(1, k + 1)),
                             tuple(term[i] for i in range(1, k + 1)))


def _parse_regions(rows, space):
    from .factorize import EventRegion, EventStructuredNetwork

    events = []
    for n, l in rows:
        name, _, rest = l.strip().partition(":")
        ivs = []
        for m in re.finditer(r"(\w+)\s*\(([^)]*)\)", rest):
            a, b = _split_top(m.group(2))
            ivs.append((_node_ref(n, m.group(1), space), float(a), float(b)))
        if not ivs:
            raise FormatError(n, f"event {name.strip()} lists no intervals")
        events.append(EventRegion(name.strip(), tuple(ivs)))
    return EventStructuredNetwork(space.k, tuple(events))


def loads(text: str) -> NetworkFile:
    sec = _sections(text)
    consts = {}
    for n, l in sec.get("constants", []):
        name, eq, rhs = l.strip().partition("=")
        if not eq or not re.fullmatch(r"[A-Za-z_]\w*", name.strip()):
            raise FormatError(n, f"expected 'name = value', got {l.strip()!r}")
        consts[name.strip()] = _const_value(n, rhs, consts)
    space = _parse_nodes(sec["nodes"], consts)
    structures = _parse_structures(sec["structures"], space)
    fields = _parse_fields(sec.get("fields", []), structures)
    emap = _parse_events(sec["events"], space)
    net = AsyncNetwork(space, structures, fields, emap, tuple(consts.items()))
    fn = _parse_functional(sec["functional"], net) if "functional" in sec else None
    regions = _parse_regions(sec["event_regions"], space) if "event_regions" in sec else None
    return NetworkFile(net, fn, regions)


def load(path) -> NetworkFile:
    return loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# serialization

def _num(v: float) -> str:
    return ex.format_number(float(v)) if v >= 0 else "-" + ex.format_number(-float(v))


def dumps(net: AsyncNetwork, functional=None, regions=None) -> str:
    space = net.phase_space
    names = [nd.name for nd in space.nodes]
    out = [HEADER]
    if net.constants:
        out.append("constants:")
        out += [f"  {n} = {_num(v)}" for n, v in net.constants]
    out.append("nodes:")
    for nd in space.nodes:
        parts = []
        for c, kind in nd.components:
            if isinstance(kind, Interval):
                parts.append(f"{c} in [{_num(kind.lo)}, {_num(kind.hi)}]")
            elif kind.period == TWO_PI:
                parts.append(f"{c} circle")
            else:
                parts.append(f"{c} circle({_num(kind.period)})")
        out.append(f"  {nd.name}: " + ", ".join(parts))

    def ref(i):
        return "0" if i == 0 else names[i - 1]

    out.append("structures:")
    for s in net.structures.structures:
        edges = ", ".join(f"{ref(j)} -> {ref(i)}" for j, i in sorted(s.edges))
        out.append(f"  {s.name}:" + (f" {edges}" if edges else ""))
    out.append("fields:")
    for f in net.fields:
        out.append(f"  {f.structure}:")
        out += [f"    {c} = {ex.to_text(e)}" for c, e in f.components]
    out.append("events:")
    tables = net.event_map.tables
    single = len(tables) == 1 and tables[0].owned == frozenset(range(1, net.k + 1))
    for t in tables:
        pad = "  "
        if not single:
            out.append("  table " + ", ".join(ref(i) for i in sorted(t.owned)) + ":")
            pad = "    "
        out += [f"{pad}when {ex.to_text(p)} use {s}" for p, s in t.guards]
        out.append(f"{pad}default {t.default}")
    if functional is not None:
        out.append("functional:")
        for i, (a, b) in enumerate(zip(functional.init_levels, functional.term_levels), start=1):
            out.append(f"  {ref(i)}: init {ex.to_text(a)}; term {ex.to_text(b)}")
    if regions is not None:
        out.append("event_regions:")
        for e in regions.events:
            ivs = ", ".join(f"{ref(i)} ({a!r}, {b!r})" for i, a, b in e.intervals)
            out.append(f"  {e.name}: {ivs}")
    return "\n".join(out) + "\n"


def dump(path, net: AsyncNetwork, functional=None, regions=None) -> None:
    Path(path).write_text(dumps(net, functional, regions), encoding="utf-8")
