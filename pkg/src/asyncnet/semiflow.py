"""Forward integration of the state-dependent network vector field.

Classical RK4 on a fixed step under the structure active at the start of the
step.  A step during which anything discrete happens (the event map changes
its value, a guard equality surface is crossed, a watched level function
changes sign) is cut back by bisection to the first such time, to within
``tau_event``.  Each bisection probe re-integrates from the step start, so
located states carry full RK4 accuracy.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .core import AsyncNetwork, ConfigurationError, NetworkState
from .exprlang import TWO_PI

INF = math.inf


class ChatterDetected(RuntimeError):
    """Too many structure switches inside a short window (Zeno/chattering)."""


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 2.0 ** -8
    tau_event: float = 1e-10
    min_dwell: float = 0.0
    t_max: float = 100.0
    chatter_limit: int = 50
    output_stride: int = 1

    def __post_init__(self):
        if not self.step > 0 or not self.tau_event > 0 or not self.t_max > 0:
            raise ConfigurationError("step, tau_event and t_max must be positive")
        if not self.tau_event < self.step:
            raise ConfigurationError("tau_event must be smaller than step")
        if not 0 <= self.min_dwell < self.t_max:
            raise ConfigurationError("min_dwell must lie in [0, t_max)")
        if self.chatter_limit < 1 or self.output_stride < 1:
            raise ConfigurationError("chatter_limit and output_stride must be >= 1")

    @property
    def chatter_window(self) -> float:
        return max(self.min_dwell, 1000.0 * self.tau_event)


@dataclass
class Segment:
    structure: str
    t_start: float
    t_end: float
    samples: list = field(default_factory=list)  # of (t, flat coords)


@dataclass
class Trajectory:
    coord_names: tuple
    segments: list = field(default_factory=list)
    switch_times: list = field(default_factory=list)

    @property
    def t_start(self) -> float:
        return self.segments[0].t_start

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end

    @property
    def final(self) -> tuple:
        return self.segments[-1].samples[-1][1]

    def structures(self) -> list:
        return [s.structure for s in self.segments]

    def rows(self):
        """(t, structure, coords) rows; boundary samples appear once."""
        last = None
        for seg in self.segments:
            for t, coords in seg.samples:
                if last is not None and t == last[0] and coords == last[1]:
                    continue
                last = (t, coords)
                yield t, seg.structure, coords


class Integrator:
    """Event-aware fixed-step RK4 engine.

    ``system`` provides ``dim``, ``circle_idx``, ``bounds``, ``key(s, t)``,
    ``velocity(key, s, t)``, ``structure_name(key)`` and ``snaps``.  Subclasses
    add discrete behaviour through the hook methods (frozen coordinates,
    watched level functions, scheduled time events).
    """

    def __init__(self, system, cfg: IntegratorConfig, record: bool = True):
        self.system = system
        self.cfg = cfg
        self.record = record
        self.hold_until = -INF

    # -- hooks -------------------------------------------------------------
    def key(self, s, t):
        return self.system.key(s, t)

    def velocity(self, key, s, t):
        return self.system.velocity(key, s, t)

    def structure_name(self, key) -> str:
        return self.system.structure_name(key)

    def frozen(self) -> Sequence[int]:
        return ()

    def snaps(self) -> Sequence:
        return self.system.snaps

    def watch_levels(self) -> list:
        """(tag, fn) pairs; an event fires when fn goes from < 0 to >= 0."""
        return []

    def on_watch(self, tag, t, s) -> None:
        pass

    def next_time_event(self) -> float:
        return INF

    def on_time_event(self, t, s) -> None:
        pass

    def done(self) -> bool:
        return False

    # -- numerics ----------------------------------------------------------
    def _deriv(self, key, s, t, frozen):
        v = self.velocity(key, s, t)
        for i in frozen:
            v[i] = 0.0
        return v

    def rk4(self, s, t, key, h, frozen=()):
        k1 = self._deriv(key, s, t, frozen)
        hh = 0.5 * h
        s2 = [a + hh * b for a, b in zip(s, k1)]
        k2 = self._deriv(key, s2, t + hh, frozen)
        s3 = [a + hh * b for a, b in zip(s, k2)]
        k3 = self._deriv(key, s3, t + hh, frozen)
        s4 = [a + h * b for a, b in zip(s, k3)]
        k4 = self._deriv(key, s4, t + h, frozen)
        out = [a + h * (b1 + 2.0 * b2 + 2.0 * b3 + b4) / 6.0
               for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4)]
        return self.project(out)

    def project(self, s):
        sys = self.system
        for i in sys.circle_idx:
            v = s[i]
            if v >= TWO_PI or v < 0.0:
                v = math.fmod(v, TWO_PI)
                if v < 0.0:
                    v += TWO_PI
                    if v >= TWO_PI:
                        v = 0.0
                s[i] = v
        for i, lo, hi in sys.bounds:
            if s[i] < lo:
                s[i] = lo
            elif s[i] > hi:
                s[i] = hi
        return s

    # -- main loop -------------------------------------------------------------
    def run(self, s0: Sequence[float], t0: float, t_end: float) -> Trajectory:
        cfg = self.cfg
        s = list(s0)
        t = float(t0)
        traj = Trajectory(getattr(self.system, "coord_names", ()))
        while self.next_time_event() <= t:
            self.on_time_event(t, s)
        key = self.key(s, t)
        name = self.structure_name(key)
        seg = Segment(name, t, t, [(t, tuple(s))])
        recent = deque()
        nsteps = 0
        while t < t_end and not self.done():
            h = min(cfg.step, t_end - t, self.next_time_event() - t)
            if self.hold_until > t:
                h = min(h, self.hold_until - t)
            holding = self.hold_until > t
            frozen = tuple(self.frozen())
            snaps = [(i, v) for i, v in self.snaps() if i not in frozen]
            watches = self.watch_levels()
            w0 = [fn(s) for _, fn in watches]

            def probe(sig):
                y = self.rk4(s, t, key, sig, frozen)
                for i, v in snaps:
                    a, b = s[i] - v, y[i] - v
                    if a * b < 0.0 or (b == 0.0 and a != 0.0):
                        return True, y
                for (tag, fn), lv in zip(watches, w0):
                    if lv < 0.0 <= fn(y):
                        return True, y
                if not holding and self.key(y, t + sig) != key:
                    return True, y
                return False, y

            fired, y = probe(h)
            if fired:
                lo, hi = 0.0, h
                while hi - lo > cfg.tau_event:
                    mid = 0.5 * (lo + hi)
                    f_mid, y_mid = probe(mid)
                    if f_mid:
                        hi, y = mid, y_mid
                    else:
                        lo = mid
                h = hi
                for i, v in snaps:
                    a, b = s[i] - v, y[i] - v
                    if a * b < 0.0 or (b == 0.0 and a != 0.0):
                        y[i] = v
                t_new = t + h
                for (tag, fn), lv in zip(watches, w0):
                    if lv < 0.0 <= fn(y):
                        self.on_watch(tag, t_new, y)
            else:
                t_new = t + h
            s, t = y, t_new
            nsteps += 1
            while self.next_time_event() <= t:
                self.on_time_event(t, s)
            new_key = key if (self.hold_until > t) else self.key(s, t)
            if new_key != key:
                key = new_key
                new_name = self.structure_name(key)
                if new_name != name:
                    seg.t_end = t
                    seg.samples.append((t, tuple(s)))
                    traj.segments.append(seg)
                    traj.switch_times.append(t)
                    name = new_name
                    seg = Segment(name, t, t, [(t, tuple(s))])
                    recent.append(t)
                    while recent and recent[0] < t - cfg.chatter_window:
                        recent.popleft()
                    if len(recent) > cfg.chatter_limit:
                        raise ChatterDetected(
                            f"{len(recent)} switches within {cfg.chatter_window:g} time units near t={t:.17g}")
                    if cfg.min_dwell > 0:
                        self.hold_until = t + cfg.min_dwell
            elif self.record and (fired or nsteps % cfg.output_stride == 0):
                seg.samples.append((t, tuple(s)))
        seg.t_end = t
        if seg.samples[-1][0] != t or seg.samples[-1][1] != tuple(s):
            seg.samples.append((t, tuple(s)))
        traj.segments.append(seg)
        return traj


# ---------------------------------------------------------------------------
# public operations on plain asynchronous networks

def _key_for(net: AsyncNetwork, structure) -> tuple:
    names = structure.split("|") if isinstance(structure, str) else [structure.name]
    tables = net.event_map.tables
    if len(names) != len(tables):
        raise ConfigurationError(f"structure {structure!r} does not name one target per event table")
    return tuple(t.targets.index(n) for t, n in zip(tables, names))


def step_smooth(net: AsyncNetwork, state: NetworkState, structure, h: float,
                cfg: IntegratorConfig | None = None) -> NetworkState:
    """One RK4 step of the fixed field f^structure."""
    if not h > 0:
        raise ValueError("h must be positive")
    eng = Integrator(net.compiled(), cfg or IntegratorConfig())
    y = eng.rk4(list(state.flat), state.clock, _key_for(net, structure), h)
    return NetworkState.from_flat(net.phase_space, y, state.clock + h)


def locate_event(net: AsyncNetwork, state_a: NetworkState, state_b: NetworkState,
                 cfg: IntegratorConfig | None = None) -> tuple:
    """First time in (t_a, t_b] at which the event map changes value.

    ``state_b`` is only used to check the bracket; the search re-integrates
    from ``state_a`` under the structure active there.
    """
    cfg = cfg or IntegratorConfig()
    comp = net.compiled()
    t_a, t_b = state_a.clock, state_b.clock
    sa = list(state_a.flat)
    key = comp.key(sa, t_a)
    if comp.key(list(state_b.flat), t_b) == key:
        raise ValueError("bracket does not contain a structure change")
    if not 0 < t_b - t_a <= cfg.step:
        raise ValueError("bracket must have positive length at most one step")
    eng = Integrator(comp, cfg)
    lo, hi = 0.0, t_b - t_a
    y = eng.rk4(sa, t_a, key, hi)
    if comp.key(y, t_b) == key:
        # the integrated trajectory from state_a does not switch; trust state_b
        return t_b, state_b
    while hi - lo > cfg.tau_event:
        mid = 0.5 * (lo + hi)
        ym = eng.rk4(sa, t_a, key, mid)
        if comp.key(ym, t_a + mid) != key:
            hi, y = mid, ym
        else:
            lo = mid
    return t_a + hi, NetworkState.from_flat(net.phase_space, y, t_a + hi)


def flow(net: AsyncNetwork, state0: NetworkState, duration: float,
         cfg: IntegratorConfig | None = None) -> Trajectory:
    """Piecewise-smooth integral curve from ``state0`` for ``duration``."""
    cfg = cfg or IntegratorConfig()
    if duration < 0:
        raise ValueError("only forward time is supported")
    if duration > cfg.t_max - state0.clock + 1e-12:
        raise ValueError("duration exceeds the t_max budget")
    eng = Integrator(net.compiled(), cfg)
    try:
        return eng.run(state0.flat, state0.clock, state0.clock + duration)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise ConfigurationError(f"field evaluation failed: {exc}") from exc
