import random

import pytest

from asyncnet.algebra import (
    BoundaryMismatch,
    Concatenation,
    PreconditionFailed,
    amalgamate,
    chain,
    concatenate,
    is_trivial,
    product,
    restrict,
    staged_run,
    trivial_restriction,
    verify_composition,
    verify_realization,
)
from asyncnet.core import NetworkState
from asyncnet.factorize import (
    EventRegion,
    EventStructuredNetwork,
    factorize_left,
    realize,
    rendezvous_network,
)
from asyncnet.functional import COMPLETED, run_generalized
from asyncnet.semiflow import IntegratorConfig

from conftest import random_esn, railway_state


def pair_esn():
    # nodes 1,2 meet in event p; nodes 3,4 meet in event q
    return EventStructuredNetwork(4, (
        EventRegion("p", ((1, 0.2, 0.4), (2, 0.3, 0.5))),
        EventRegion("q", ((3, 0.6, 0.7), (4, 0.1, 0.2))),
    ))


def test_restrict_and_product_reassemble():
    fn = rendezvous_network(pair_esn())
    left, right = restrict(fn, [1, 2]), restrict(fn, [3, 4])
    assert left.k == 2 and right.k == 2
    prod = product([left, right])
    x0 = NetworkState.from_flat(fn.phase_space, [0.0] * 4)
    T = [0.1, 0.4, 0.0, 0.3]
    a, b = run_generalized(fn, x0, T), run_generalized(prod, x0, T)
    assert a.times == b.times and a.final_states == b.final_states


def test_product_times_are_factorwise():
    fn = rendezvous_network(pair_esn())
    left, right = restrict(fn, [1, 2]), restrict(fn, [3, 4])
    prod = product([left, right])
    T = [0.1, 0.4, 0.0, 0.3]
    full = run_generalized(prod, NetworkState.from_flat(prod.phase_space, [0.0] * 4), T)
    l = run_generalized(left, NetworkState.from_flat(left.phase_space, [0.0] * 2), T[:2])
    r = run_generalized(right, NetworkState.from_flat(right.phase_space, [0.0] * 2), T[2:])
    # step grids differ once events cut steps short; agreement is up to event localization
    assert max(abs(a - b) for a, b in zip(full.times, l.times + r.times)) <= 1e-9


def _single_node(name):
    from asyncnet.netfile import loads

    return loads(f"""asyncnet v1
nodes:
  {name}: u{name} in [0, 1]
structures:
  go:
fields:
  go:
    u{name} = 1
events:
  default go
functional:
  {name}: init u{name}; term u{name} - 1
""").functional


def test_product_renames_clashing_structures():
    prod = product([_single_node("A"), _single_node("B")])
    names = prod.net.structures.names
    assert len(set(names)) == len(names) == 2 and "go" in names
    assert is_trivial(prod)


def test_product_rejects_node_name_collision():
    with pytest.raises(PreconditionFailed):
        product([_single_node("A"), _single_node("A")])


def test_restrict_rejects_cut_through_coupling():
    fn = rendezvous_network(pair_esn())
    with pytest.raises(PreconditionFailed):
        restrict(fn, [1, 3])


def test_trivial_restriction_requires_uncoupled_node(railway):
    with pytest.raises(PreconditionFailed):
        trivial_restriction(railway, 1)


def test_amalgamation_matches_joint_network():
    esn = pair_esn()
    whole = rendezvous_network(esn)
    parts = [rendezvous_network(esn, ["p"]), rendezvous_network(esn, ["q"])]
    am = amalgamate(parts, [{1, 2}, {3, 4}])
    x0 = NetworkState.from_flat(whole.phase_space, [0.0] * 4)
    rng = random.Random(2)
    for _ in range(10):
        T = [rng.uniform(0, 1) for _ in range(4)]
        a, b = run_generalized(whole, x0, T), run_generalized(am, x0, T)
        assert max(abs(u - v) for u, v in zip(a.times, b.times)) <= 1e-9


def test_amalgamation_preconditions():
    esn = pair_esn()
    parts = [rendezvous_network(esn, ["p"]), rendezvous_network(esn, ["q"])]
    with pytest.raises(PreconditionFailed, match="overlap"):
        amalgamate(parts, [{1, 2, 3}, {3, 4}])
    with pytest.raises(PreconditionFailed, match="not trivial"):
        amalgamate(parts, [{1}, {3, 4}])
    other = rendezvous_network(esn, ["q"], hi=[0.9] * 4)
    with pytest.raises(PreconditionFailed):
        amalgamate([parts[0], other], [{1, 2}, {3, 4}])


def test_concatenation_boundary_checks(railway, railway_return):
    with pytest.raises(BoundaryMismatch):
        concatenate(railway, railway)
    both = concatenate(railway, railway_return)
    assert isinstance(both, Concatenation) and len(both.stages) == 2
    assert both.init_levels == railway.init_levels
    assert both.term_levels == railway_return.term_levels
    assert both.joined_structure(["beta", "empty"]).edges == railway.net.structures["beta"].edges


@pytest.mark.filterwarnings("ignore:.*sampling only")
def test_concatenation_is_associative_in_stages(railway, railway_return):
    a = concatenate(concatenate(railway, railway_return), railway)
    b = concatenate(railway, concatenate(railway_return, railway))
    assert a.stages == b.stages


def test_two_stage_railway_composition(railway, railway_return):
    rng = random.Random(7)
    sp = railway.phase_space
    samples = [(railway_state(sp, rng.uniform(0, 6.28), rng.uniform(0, 6.28)),
                [rng.uniform(0, 1), rng.uniform(0, 1)]) for _ in range(10)]
    rep = verify_composition(railway, railway_return, samples)
    assert rep.ok(1e-6)
    assert {r["status"] for r in rep.per_sample} == {COMPLETED}


def test_two_stage_railway_against_fine_reference(railway, railway_return):
    # independent run at a step eight times smaller
    sp = railway.phase_space
    both = concatenate(railway, railway_return)
    fine = IntegratorConfig(step=2.0 ** -11)
    for phi in (0.7, 2.9):
        x0 = railway_state(sp, phi)
        a = staged_run(both, x0, [0.0, 0.3], IntegratorConfig())
        b = run_generalized(both, x0, [0.0, 0.3], fine)
        assert max(abs(x - y) for x, y in zip(a.times, b.times)) <= 1e-6


def test_random_instances_compose():
    rng = random.Random(99)
    for _ in range(10):
        esn = random_esn(rng, min_layers=2)
        realized = realize(esn, factorize_left(esn))
        first, rest = realized.stages[0], chain(list(realized.stages[1:]))
        x0 = NetworkState.from_flat(first.phase_space, [0.0] * esn.k)
        samples = [(x0, [rng.uniform(0, 1) for _ in range(esn.k)]) for _ in range(2)]
        assert verify_composition(first, rest, samples).ok(1e-6)
        assert verify_realization(rendezvous_network(esn), realized, samples).ok(1e-6)
