"""Functional asynchronous networks: getting from the initialization set to
the termination set.

Each node ``i`` carries level functions for its initialization hypersurface
(``init``) and termination hypersurface (``term``).  ``term`` is negative
before the node has done its job and crosses zero upward on arrival.  Nodes
freeze on their first arrival.  With generalized start times a node is held
at its initial point (visible to the event map) until its start time.
"""
from __future__ import annotations

import math
import random
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from . import exprlang as ex
from .core import AsyncNetwork, ConfigurationError, Interval, NetworkState
from .semiflow import INF, Integrator, IntegratorConfig, Trajectory

ON_SET_TOL = 1e-9

COMPLETED = "completed"
DEADLOCKED = "deadlocked"
ERROR = "error"


class NotOnInitialSet(ConfigurationError):
    pass


@dataclass(frozen=True)
class FunctionalNetwork:
    net: AsyncNetwork
    init_levels: tuple  # per node, Expression
    term_levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "init_levels", tuple(self.init_levels))
        object.__setattr__(self, "term_levels", tuple(self.term_levels))
        self.validate()

    @property
    def phase_space(self):
        return self.net.phase_space

    @property
    def k(self) -> int:
        return self.net.k

    @property
    def stages(self) -> tuple:
        return (self,)

    def validate(self, samples: int = 200) -> None:
        space = self.phase_space
        k = space.k
        if len(self.init_levels) != k or len(self.term_levels) != k:
            raise ConfigurationError("need one init and one term level function per node")
        consts = self.net.constant_table
        rng = random.Random(0)
        for i in range(1, k + 1):
            own = space.node_coords(i)
            li, lf = self.init_levels[i - 1], self.term_levels[i - 1]
            for e in (li, lf):
                ex.check_kinds(e, "real")
                extra = ex.free_variables(e) - own - set(consts)
                if extra:
                    raise ConfigurationError(
                        f"level function '{ex.to_text(e)}' of node {space.nodes[i - 1].name} "
                        f"depends on {sorted(extra)}")
            if ex.structurally_equal(li, lf):
                raise ConfigurationError(f"node {space.nodes[i - 1].name}: init and term sets coincide")
            node = space.nodes[i - 1]
            for _ in range(samples):
                env = dict(consts)
                for c, kind in node.components:
                    env[c] = (rng.uniform(kind.lo, kind.hi) if isinstance(kind, Interval)
                              else rng.uniform(0.0, kind.period))
                try:
                    a, b = ex.evaluate(li, env), ex.evaluate(lf, env)
                except ex.EvaluationError:
                    continue
                if abs(a) <= ON_SET_TOL and abs(b) <= ON_SET_TOL:
                    raise ConfigurationError(f"node {node.name}: init and term sets intersect")


@dataclass
class TransitionResult:
    status: str
    final_states: tuple = ()  # per node coords at first arrival (completed runs)
    times: tuple = ()  # per node first arrival time
    t_final: float = 0.0
    t_max: float = 0.0
    message: str = ""
    trajectory: Trajectory | None = field(default=None, repr=False)
    # partial information, also present for deadlocked runs
    arrived: tuple = ()  # per node arrival time or None

    @property
    def completed(self) -> bool:
        return self.status == COMPLETED


class _TransitionRun(Integrator):
    """Integrator over a chain of stages (one stage for a plain network).

    Each node follows the dynamics of its current stage and moves to the next
    one when it crosses that stage's termination set.  When evaluating stage
    ``s``, nodes that already left it are seen at their exit points.
    """

    def __init__(self, stages: Sequence[FunctionalNetwork], start_times, cfg, record):
        self.stages = list(stages)
        self.comps = [st.net.compiled() for st in self.stages]
        super().__init__(self.comps[0], cfg, record)
        space = self.stages[0].phase_space
        self.space = space
        k = space.k
        off = space.offsets()
        self.slices = [(off[i], off[i + 1]) for i in range(k)]
        self.k = k
        self.start = [float(x) for x in start_times]
        self.waiting = [T > 0.0 for T in self.start]
        self.stage = [0] * k
        self.done_at = [None] * k
        self.final = [None] * k
        self.exit_points = [[] for _ in self.stages]  # stage -> list of (lo, hi, values)
        self.node_coords = [tuple(range(a, b)) for a, b in self.slices]
        self.levels = []
        for st, comp in zip(self.stages, self.comps):
            self.levels.append([ex.compile_expr(e, comp.slots, comp.consts, params="s")
                                for e in st.term_levels])
        self.multi = len(self.stages) > 1
        self._refresh()

    # -- bookkeeping ---------------------------------------------------------
    def _refresh(self):
        frozen = []
        for i in range(self.k):
            if self.waiting[i] or self.done_at[i] is not None:
                frozen.extend(self.node_coords[i])
        self._frozen = tuple(frozen)
        used = sorted({self.stage[i] for i in range(self.k) if self.done_at[i] is None})
        self.used = used or [len(self.stages) - 1]
        self._members = {s: [i for i in range(self.k) if self.stage[i] == s and self.done_at[i] is None]
                         for s in self.used}
        snaps = []
        for s in self.used:
            mine = {c for i in self._members[s] for c in self.node_coords[i]}
            snaps.extend((c, v) for c, v in self.comps[s].snaps if c in mine)
        self._snaps = tuple(snaps)
        watches = []
        for i in range(self.k):
            if not self.waiting[i] and self.done_at[i] is None:
                watches.append((i, self.levels[self.stage[i]][i]))
        self._watches = watches

    def _view(self, s, stage):
        pts = self.exit_points[stage]
        if not pts:
            return s
        v = list(s)
        for a, b, vals in pts:
            v[a:b] = vals
        return v

    # -- integrator hooks ------------------------------------------------------
    def key(self, s, t):
        if not self.multi:
            return self.comps[0].key(s, t)
        return tuple((st, self.comps[st].key(self._view(s, st), t)) for st in self.used)

    def velocity(self, key, s, t):
        if not self.multi:
            return self.comps[0].velocity(key, s, t)
        out = [0.0] * len(s)
        for st, sk in key:
            v = self.comps[st].velocity(sk, self._view(s, st), t)
            for i in self._members.get(st, ()):
                a, b = self.slices[i]
                out[a:b] = v[a:b]
        return out

    def structure_name(self, key):
        if not self.multi:
            return self.comps[0].structure_name(key)
        return "|".join(f"{st}:{self.comps[st].structure_name(sk)}" for st, sk in key)

    def frozen(self):
        return self._frozen

    def snaps(self):
        return self._snaps

    def watch_levels(self):
        return self._watches

    def on_watch(self, i, t, y):
        st = self.stage[i]
        a, b = self.slices[i]
        self._check_transversal(i, st, t, y)
        self.exit_points[st].append((a, b, tuple(y[a:b])))
        if st == len(self.stages) - 1:
            self.done_at[i] = t
            self.final[i] = tuple(y[a:b])
        else:
            self.stage[i] = st + 1
        self._refresh()

    def _check_transversal(self, i, st, t, y):
        comp = self.comps[st]
        key = comp.key(self._view(y, st), t)
        v = comp.velocity(key, self._view(y, st), t)
        a, b = self.slices[i]
        lvl = self.levels[st][i]
        d = 1e-6
        yp = list(y)
        ym = list(y)
        for c in range(a, b):
            yp[c] += d * v[c]
            ym[c] -= d * v[c]
        rate = (lvl(yp) - lvl(ym)) / (2 * d)
        if abs(rate) < 1e-9:
            warnings.warn(f"node {self.space.nodes[i].name} meets its termination set tangentially "
                          f"at t={t:.6g}", RuntimeWarning, stacklevel=2)

    def next_time_event(self):
        pending = [self.start[i] for i in range(self.k) if self.waiting[i]]
        return min(pending) if pending else INF

    def on_time_event(self, t, s):
        for i in range(self.k):
            if self.waiting[i] and self.start[i] <= t:
                self.waiting[i] = False
        self._refresh()

    def done(self):
        return all(d is not None for d in self.done_at)


def on_initial_set(fn, state: NetworkState, tol: float = ON_SET_TOL) -> list:
    """Nodes (1-based) whose initial level function is not zero at ``state``."""
    first = fn.stages[0]
    comp = first.net.compiled()
    s = list(state.flat)
    bad = []
    for i, e in enumerate(first.init_levels, start=1):
        val = ex.compile_expr(e, comp.slots, comp.consts, params="s")(s)
        if abs(val) > tol:
            bad.append(i)
    return bad


def run_generalized(fn, x0: NetworkState, start_times: Sequence[float],
                    cfg: IntegratorConfig | None = None, record: bool = False) -> TransitionResult:
    """Generalized transition and timing functions G(X, T), S^(X, T)."""
    cfg = cfg or IntegratorConfig()
    stages = fn.stages
    k = stages[0].k
    if len(start_times) != k or any(T < 0 for T in start_times):
        raise ConfigurationError("start_times needs one non-negative entry per node")
    bad = on_initial_set(fn, x0)
    if bad:
        raise NotOnInitialSet(f"initial state not on the initialization set for nodes {bad}")
    run = _TransitionRun(stages, [x0.clock + T for T in start_times], cfg, record)
    try:
        traj = run.run(x0.flat, x0.clock, cfg.t_max)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        return TransitionResult(ERROR, t_max=cfg.t_max, message=f"evaluation failed: {exc}")
    arrived = tuple(run.done_at)
    t_final = traj.t_end
    if run.done():
        return TransitionResult(COMPLETED, tuple(run.final), arrived, t_final, cfg.t_max,
                                trajectory=traj if record else None, arrived=arrived)
    return TransitionResult(DEADLOCKED, t_final=t_final, t_max=cfg.t_max,
                            message="deadlock: budget exhausted",
                            trajectory=traj if record else None, arrived=arrived)


def run_transition(fn, x0: NetworkState, cfg: IntegratorConfig | None = None,
                   record: bool = False) -> TransitionResult:
    """Transition function G0 and timing function S from a point on the
    initialization set (all nodes start at the initial clock)."""
    return run_generalized(fn, x0, [0.0] * fn.stages[0].k, cfg, record)


# ---------------------------------------------------------------------------
# domain estimation

@dataclass
class DomainReport:
    sampled: int
    completed: int
    deadlocked: int
    errors: int
    t_max: float
    entries: list  # of (NetworkState, TransitionResult)

    def statuses(self) -> list:
        return [r.status for _, r in self.entries]


def grid_states(space, base: NetworkState, axes: Sequence) -> list:
    """Cartesian grid; ``axes`` holds ``(coord, lo, hi, n)`` with ``n``
    equispaced points ``lo + (hi - lo) * j / n`` (``hi`` excluded)."""
    states = [dict(base.as_mapping(space))]
    for coord, lo, hi, n in axes:
        if coord not in space.coord_names:
            raise ConfigurationError(f"unknown grid coordinate {coord!r}")
        states = [dict(s, **{coord: lo + (hi - lo) * (j / n)}) for s in states for j in range(int(n))]
    return [NetworkState.from_mapping(space, s, base.clock) for s in states]


def random_states(space, base: NetworkState, ranges: Sequence, n: int, seed: int) -> list:
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        vals = base.as_mapping(space)
        for coord, lo, hi in ranges:
            vals[coord] = rng.uniform(lo, hi)
        out.append(NetworkState.from_mapping(space, vals, base.clock))
    return out


def _classify(args):
    fn, state, cfg, T = args
    try:
        return run_generalized(fn, state, T, cfg)
    except Exception as exc:  # recorded per sample
        return TransitionResult(ERROR, t_max=cfg.t_max, message=f"{type(exc).__name__}: {exc}")


def estimate_domain(fn, sampler: Iterable[NetworkState], cfg: IntegratorConfig | None = None,
                    workers: int = 1, start_times: Sequence[float] | None = None) -> DomainReport:
    """Classify sampled initial points as completed or deadlocked."""
    cfg = cfg or IntegratorConfig()
    states = list(sampler)
    T = list(start_times) if start_times is not None else [0.0] * fn.stages[0].k
    jobs = [(fn, s, cfg, T) for s in states]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_classify, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_classify(j) for j in jobs]
    entries = list(zip(states, results))
    return DomainReport(
        sampled=len(entries),
        completed=sum(r.status == COMPLETED for r in results),
        deadlocked=sum(r.status == DEADLOCKED for r in results),
        errors=sum(r.status == ERROR for r in results),
        t_max=cfg.t_max,
        entries=entries,
    )


def sample_node_point(node, rng) -> dict:
    return {c: (rng.uniform(kd.lo, kd.hi) if isinstance(kd, Interval) else rng.uniform(0, 2 * math.pi))
            for c, kd in node.components}
