import pytest
from hypothesis import given, settings, strategies as st

from asyncnet import exprlang as ex
from asyncnet.core import (
    AdmissibleField,
    AsyncNetwork,
    ConnectionStructure,
    EventMap,
    GeneralizedConnectionStructure,
    Interval,
    NetworkState,
    Node,
    PhaseSpace,
)
from asyncnet.semiflow import ChatterDetected, IntegratorConfig, flow, locate_event, step_smooth

from conftest import railway_state


def one_node(guards, fields, default, lo=-5.0, hi=5.0, consts=()):
    space = PhaseSpace((Node("N", (("x", Interval(lo, hi)),)),))
    names = sorted(fields)
    gcs = GeneralizedConnectionStructure(tuple(ConnectionStructure(n, {(0, 1)} if n == "stop" else set())
                                               for n in names))
    flds = tuple(AdmissibleField(n, (("x", ex.parse(fields[n])),)) for n in names)
    em = EventMap.single(1, tuple((ex.parse(g), s) for g, s in guards), default)
    return AsyncNetwork(space, gcs, flds, em, consts)


def test_stopped_train_is_bit_identical(railway):
    s0 = NetworkState.from_mapping(railway.phase_space, dict(x1=0.0, th1=0.3, x2=0.4, th2=1.0))
    s1 = step_smooth(railway.net, s0, "alpha1", 0.01)
    assert s1.coords[0][0] == 0.0
    assert s1.coords[1][0] == pytest.approx(0.39)


@pytest.mark.parametrize("c", [0.7, 1.0, 3.3])
def test_linear_crossing_time(c):
    net = one_node([("x >= 0", "stop")], {"go": "v", "stop": "0"}, "go", consts=(("v", c),))
    cfg = IntegratorConfig(t_max=10)
    traj = flow(net, NetworkState.from_flat(net.phase_space, [-1.0]), 3.0, cfg)
    assert traj.structures() == ["go", "stop"]
    assert abs(traj.switch_times[0] - 1.0 / c) <= 2 * cfg.tau_event
    assert traj.final[0] == pytest.approx(0.0, abs=1e-9)


def test_locate_event_brackets(railway):
    cfg = IntegratorConfig()
    a = NetworkState.from_mapping(railway.phase_space, dict(x1=-0.3, th1=1.0, x2=0.3, th2=0.0), 0.7)
    b = NetworkState.from_mapping(railway.phase_space, dict(x1=-0.3 + cfg.step, th1=1.0, x2=0.3, th2=0.0),
                                  0.7 + cfg.step)
    with pytest.raises(ValueError):
        locate_event(railway.net, a, b, cfg)


def test_zero_duration_single_sample(railway):
    traj = flow(railway.net, railway_state(railway.phase_space, 1.0), 0.0)
    assert len(list(traj.rows())) == 1


def test_snap_makes_equality_guard_fire(railway):
    # speed 1 from -1: lands on x1 = 0 on a step boundary; speed 0.7 must be snapped
    net = one_node([("x = 0", "stop")], {"go": "0.7", "stop": "0"}, "go")
    traj = flow(net, NetworkState.from_flat(net.phase_space, [-1.0]), 3.0)
    assert traj.structures() == ["go", "stop"]
    assert traj.final[0] == 0.0


def test_chatter_detected():
    net = one_node([("x > 0", "down")], {"up": "1", "down": "0 - 1"}, "up")
    with pytest.raises(ChatterDetected):
        flow(net, NetworkState.from_flat(net.phase_space, [-0.5]), 5.0, IntegratorConfig(t_max=10))


def test_min_dwell_suppresses_chatter():
    net = one_node([("x > 0", "down")], {"up": "1", "down": "0 - 1"}, "up")
    cfg = IntegratorConfig(t_max=10, min_dwell=0.05)
    traj = flow(net, NetworkState.from_flat(net.phase_space, [-0.5]), 2.0, cfg)
    gaps = [b - a for a, b in zip(traj.switch_times, traj.switch_times[1:])]
    assert gaps and min(gaps) >= 0.05 - 1e-12
    assert abs(traj.final[0]) < 0.1


def _beta_state(space, phi, th2=0.2):
    return NetworkState.from_mapping(space, dict(x1=0.0, th1=th2 + phi, x2=0.0, th2=th2))


def _dist(space, a, b):
    kinds = space.kinds
    return max(ex.circ_dist(x, y) if not isinstance(k, Interval) else abs(x - y)
               for k, x, y in zip(kinds, a, b))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.01, 0.3), st.floats(0.01, 0.3))
def test_semigroup_on_smooth_segment(railway, phi, s, tp):
    net, sp = railway.net, railway.phase_space
    x0 = _beta_state(sp, phi)
    # stay inside the coupled segment: the dwell from phi exceeds s + tp
    whole = flow(net, x0, s + tp)
    assert whole.structures() == ["beta"]
    mid = flow(net, x0, s)
    again = flow(net, NetworkState.from_flat(sp, mid.final, s), tp)
    assert _dist(sp, whole.final, again.final) <= 1e-8 * (s + tp)


@pytest.mark.parametrize("phi", [0.5, 1.5, 2.5, 3.0])
def test_kuramoto_sum_conservation(railway, phi):
    net, sp = railway.net, railway.phase_space
    x0 = _beta_state(sp, phi)
    sum0 = x0.flat[1] + x0.flat[3]
    for t in (0.05, 0.1, 0.2):
        traj = flow(net, x0, t)
        assert traj.structures() == ["beta"]
        f = traj.final
        drift = ex.circ_dist(ex.mod2pi(f[1] + f[3]), ex.mod2pi(sum0 + 2.0 * t))
        assert drift <= 1e-8 * t


def test_full_railway_flow_segments(railway):
    traj = flow(railway.net, railway_state(railway.phase_space, 0.0), 3.0)
    assert traj.structures() == ["empty"]
    traj = flow(railway.net, railway_state(railway.phase_space, 2.0), 6.0)
    assert traj.structures() == ["empty", "beta", "empty"]
    assert traj.switch_times[0] == 1.0


def test_config_validation():
    with pytest.raises(Exception):
        IntegratorConfig(step=0)
    with pytest.raises(Exception):
        IntegratorConfig(step=1e-3, tau_event=1e-2)
