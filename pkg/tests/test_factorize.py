import random

import pytest
from hypothesis import given, settings, strategies as st

from asyncnet.core import ConfigurationError, NetworkState
from asyncnet.factorize import (
    CyclicPrecedence,
    EventRegion,
    EventStructuredNetwork,
    build_precedence,
    check_primitive,
    factorize_left,
    factorize_right,
    layer_count_minimal,
    realize,
    rendezvous_fragment,
    rendezvous_network,
    validate_factorization,
)
from asyncnet.fixtures import FIGURE3_INCIDENCE
from asyncnet.functional import run_generalized

from conftest import random_esn

LEFT = "P^h ◇ (P^e ⊔ P^g) ◇ (P^d ⊔ P^f) ◇ P^b ◇ (P^a ⊔ P^c)"
RIGHT = "(P^h ⊔ P^g) ◇ (P^c ⊔ P^e ⊔ P^f) ◇ P^d ◇ P^b ◇ P^a"


def ev(name, *ivs):
    return EventRegion(name, tuple(ivs))


def brute_longest_chain(names, order):
    """Largest set of pairwise comparable events, by exhaustive extension."""
    best = 0
    succ = {n: [m for m in names if (n, m) in order] for n in names}

    def grow(last, length):
        nonlocal best
        best = max(best, length)
        for m in succ[last]:
            grow(m, length + 1)

    for n in names:
        grow(n, 1)
    return best


def test_figure3_factorizations(fig3_esn):
    assert factorize_left(fig3_esn).notation() == LEFT
    assert factorize_right(fig3_esn).notation() == RIGHT
    assert layer_count_minimal(fig3_esn) == 5


def test_figure3_stated_facts(fig3_esn):
    order = build_precedence(fig3_esn)
    assert set(FIGURE3_INCIDENCE["g"]) == {6, 7, 8, 9}
    assert ("f", "g") in order
    assert ("g", "h") not in order and ("h", "g") not in order


def test_layers_are_node_disjoint_and_cover(fig3_esn):
    for fac in (factorize_left(fig3_esn), factorize_right(fig3_esn)):
        assert validate_factorization(fig3_esn, fac) == []
        rows = fac.thresholds(9)
        assert all(r[0] == 0.0 and r[-1] == 1.0 for r in rows)


def test_brute_force_oracle_on_random_dags():
    rng = random.Random(2024)
    for _ in range(200):
        esn = random_esn(rng, max_nodes=6, max_events=12)
        want = brute_longest_chain(esn.names, build_precedence(esn))
        assert layer_count_minimal(esn) == want


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_factorizations_valid_property(seed):
    esn = random_esn(random.Random(seed), max_nodes=5, max_events=8)
    for fac in (factorize_left(esn), factorize_right(esn)):
        assert validate_factorization(esn, fac) == []


def test_cyclic_precedence_reports_cycle():
    with pytest.raises(CyclicPrecedence) as info:
        EventStructuredNetwork(2, (ev("a", (1, 0.1, 0.2), (2, 0.6, 0.7)),
                                   ev("b", (1, 0.4, 0.5), (2, 0.2, 0.3))))
    assert set(info.value.cycle) >= {"a", "b"}


def test_overlapping_intervals_rejected():
    with pytest.raises(ConfigurationError):
        EventStructuredNetwork(1, (ev("a", (1, 0.1, 0.5)), ev("b", (1, 0.4, 0.6))))


def test_single_event_and_antichain():
    one = EventStructuredNetwork(2, (ev("a", (1, 0.2, 0.4), (2, 0.3, 0.5)),))
    assert factorize_left(one).notation() == "P^a" and layer_count_minimal(one) == 1
    anti = EventStructuredNetwork(4, (ev("a", (1, 0.2, 0.4), (2, 0.3, 0.5)),
                                      ev("b", (3, 0.1, 0.2), (4, 0.5, 0.6))))
    fac = factorize_left(anti)
    assert fac.layers == (("a", "b"),) and factorize_right(anti).layers == fac.layers


def test_no_events_realizes_trivial_stage():
    esn = EventStructuredNetwork(3, ())
    fac = factorize_left(esn)
    assert fac.layers == () and layer_count_minimal(esn) == 0
    fn = realize(esn, fac)
    r = run_generalized(fn, NetworkState.from_flat(fn.phase_space, [0.0] * 3), [0.0, 0.2, 0.4])
    assert r.times == pytest.approx((1.0, 1.2, 1.4), abs=1e-9)


def test_rendezvous_waits_for_all_participants():
    esn = EventStructuredNetwork(2, (ev("a", (1, 0.25, 0.5), (2, 0.5, 0.75)),))
    fn = rendezvous_network(esn)
    r = run_generalized(fn, NetworkState.from_flat(fn.phase_space, [0.0, 0.0]), [0.0, 0.0])
    # node 1 reaches its entry at 0.25 and waits until node 2 reaches 0.5
    assert r.times[0] == pytest.approx(1.25, abs=1e-9)
    assert r.times[1] == pytest.approx(1.0, abs=1e-9)


def test_check_primitive(fig3_esn, railway):
    for name in fig3_esn.names:
        e = fig3_esn.event(name)
        frag = rendezvous_fragment(fig3_esn, e, [0.0] * 9, [1.0] * 9)
        assert check_primitive(frag, e)
    loop = ev("loop", (1, 0.4, 0.6), (2, 0.4, 0.6))
    assert check_primitive(railway, loop)
    # two unrelated meetings treated as one event split into two pieces
    esn = EventStructuredNetwork(4, (ev("p", (1, 0.2, 0.3), (2, 0.2, 0.3)),
                                     ev("q", (3, 0.6, 0.7), (4, 0.6, 0.7))))
    both = rendezvous_network(esn)
    assert not check_primitive(both, ev("pq", (1, 0.2, 0.3), (2, 0.2, 0.3), (3, 0.6, 0.7), (4, 0.6, 0.7)))


def test_left_and_right_realizations_agree(fig3_esn, fig3):
    from asyncnet.algebra import verify_realization

    left = realize(fig3_esn, factorize_left(fig3_esn))
    right = realize(fig3_esn, factorize_right(fig3_esn))
    rng = random.Random(5)
    x0 = NetworkState.from_flat(fig3.phase_space, [0.0] * 9)
    samples = [(x0, [rng.uniform(0, 1) for _ in range(9)]) for _ in range(5)]
    assert verify_realization(left, right, samples).ok(1e-6)
    assert verify_realization(fig3, left, samples).ok(1e-6)
