"""Acceptance criteria 1-7.  Each test prints one PASS/FAIL line; the lines
are repeated in the pytest terminal summary."""
import math
import random
import time

from hypothesis import given, settings, strategies as st

from asyncnet import exprlang as ex
from asyncnet import netfile
from asyncnet.algebra import chain, verify_composition, verify_realization
from asyncnet.cli import main
from asyncnet.core import NetworkState
from asyncnet.factorize import build_precedence, factorize_left, factorize_right, layer_count_minimal, realize
from asyncnet.fixtures import path
from asyncnet.functional import COMPLETED, DEADLOCKED, estimate_domain, grid_states, run_transition
from asyncnet.semiflow import IntegratorConfig, flow

from conftest import dwell, random_esn, railway_state
from test_core import _perturb_checks
from test_exprlang import bool_exprs, real_exprs
from test_factorize import LEFT, RIGHT, brute_longest_chain
from test_functional import reference_dwell
from test_semiflow import _beta_state, _dist

RESULTS = []


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_1_deadlock(railway):
    sp = railway.phase_space
    cfg = IntegratorConfig(t_max=100.0)
    t0 = time.perf_counter()
    anti = run_transition(railway, railway_state(sp, math.pi), cfg)
    near = run_transition(railway, railway_state(sp, math.pi - 0.1), cfg)
    elapsed = time.perf_counter() - t0
    ok = anti.status == DEADLOCKED and anti.t_final == 100.0 and near.status == COMPLETED and elapsed < 1.0
    report(1, ok, f"phi0=pi -> {anti.status} at t={anti.t_final:g}; phi0=pi-0.1 -> {near.status}; "
                  f"{elapsed:.2f}s (limit 1s)")


def test_criterion_2_timing(railway):
    sp = railway.phase_space
    t0 = time.perf_counter()
    worst, worst_ref = 0.0, 0.0
    for phi0 in (0.5, 1.0, 2.0, 3.0):
        want = 2.0 + dwell(phi0)
        worst_ref = max(worst_ref, abs(dwell(phi0) - reference_dwell(phi0)))
        r = run_transition(railway, railway_state(sp, phi0))
        if r.status != COMPLETED:
            worst = math.inf
            continue
        worst = max(worst, *(abs(s - want) for s in r.times))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and worst_ref <= 1e-6 and elapsed < 5.0
    report(2, ok, f"max |S - closed form| = {worst:.2e}, closed form vs reference {worst_ref:.2e} "
                  f"(tol 1e-6); {elapsed:.2f}s (limit 5s)")


def test_criterion_3_domain(railway):
    sp = railway.phase_space
    grid = grid_states(sp, railway_state(sp, 0.0), [("th1", 0.0, 2 * math.pi, 360)])
    t0 = time.perf_counter()
    rep = estimate_domain(railway, grid, IntegratorConfig(t_max=100.0))
    elapsed = time.perf_counter() - t0
    st_ = rep.statuses()
    dead = [j for j, s in enumerate(st_) if s == DEADLOCKED]
    pi_bin = 180  # bin [pi, pi + 2pi/360) starts exactly at pi
    ok = (pi_bin in dead and set(dead) <= {pi_bin - 1, pi_bin, pi_bin + 1}
          and rep.completed >= 357 and elapsed < 30.0)
    report(3, ok, f"deadlocked bins {dead}, completed {rep.completed}/360; {elapsed:.2f}s (limit 30s)")


def test_criterion_4_factorization(capsys, fig3_esn):
    code = main(["factorize", str(path("figure3.net")), "--side", "both"])
    out = capsys.readouterr().out.splitlines()
    exact = code == 0 and out == [f"left: {LEFT}", f"right: {RIGHT}", "layers: 5"]
    rng = random.Random(4)
    agree = 0
    for _ in range(200):
        esn = random_esn(rng, max_nodes=6, max_events=12)
        agree += layer_count_minimal(esn) == brute_longest_chain(esn.names, build_precedence(esn))
    ok = exact and agree == 200 and layer_count_minimal(fig3_esn) == 5
    report(4, ok, f"published factorizations reproduced: {exact}; layer count = brute force on {agree}/200 DAGs")


def test_criterion_5_composition(railway, railway_return):
    t0 = time.perf_counter()
    rng = random.Random(55)
    sp = railway.phase_space
    rail_samples = [(railway_state(sp, rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)),
                     [rng.uniform(0, 1), rng.uniform(0, 1)]) for _ in range(20)]
    rail = verify_composition(railway, railway_return, rail_samples)
    worst = max(rail.max_state_error, rail.max_time_error)
    statuses = {r["status"] for r in rail.per_sample}
    for _ in range(100):
        esn = random_esn(rng, max_nodes=6, max_events=8, min_layers=2)
        stages = realize(esn, factorize_left(esn)).stages
        x0 = NetworkState.from_flat(stages[0].phase_space, [0.0] * esn.k)
        T = [rng.uniform(0, 1) for _ in range(esn.k)]
        rep = verify_composition(stages[0], chain(list(stages[1:])), [(x0, T)])
        worst = max(worst, rep.max_state_error, rep.max_time_error)
        statuses |= {r["status"] for r in rep.per_sample}
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and statuses == {COMPLETED} and elapsed < 60.0
    report(5, ok, f"two-stage railway + 100 random instances: max error {worst:.2e} (tol 1e-6); "
                  f"{elapsed:.2f}s (limit 60s)")


def test_criterion_6_realization(fig3_esn, fig3):
    left = realize(fig3_esn, factorize_left(fig3_esn))
    right = realize(fig3_esn, factorize_right(fig3_esn))
    rng = random.Random(6)
    x0 = NetworkState.from_flat(fig3.phase_space, [0.0] * 9)
    samples = [(x0, [rng.uniform(0, 1) for _ in range(9)]) for _ in range(50)]
    worst = 0.0
    for ref, cand in ((fig3, left), (fig3, right), (left, right)):
        rep = verify_realization(ref, cand, samples)
        worst = max(worst, rep.max_state_error, rep.max_time_error)
    ok = worst <= 1e-6
    report(6, ok, f"figure-3 monolithic vs left/right realizations on 50 samples: max error {worst:.2e} (tol 1e-6)")


def test_criterion_7_properties(railway, fig3):
    notes = []
    adm = _perturb_checks(railway.net, random.Random(70), 500) + _perturb_checks(fig3.net, random.Random(71), 500)
    notes.append(f"admissibility {adm} cases")

    rng = random.Random(72)
    sp = railway.phase_space
    semi = 0.0
    for _ in range(50):
        phi, s, tp = rng.uniform(0.5, 3.0), rng.uniform(0.01, 0.3), rng.uniform(0.01, 0.3)
        x0 = _beta_state(sp, phi)
        whole = flow(railway.net, x0, s + tp)
        mid = flow(railway.net, x0, s)
        again = flow(railway.net, NetworkState.from_flat(sp, mid.final, s), tp)
        semi = max(semi, _dist(sp, whole.final, again.final) / (s + tp))
    notes.append(f"semigroup {semi:.1e}/unit time")

    kur = 0.0
    for phi in (0.5, 1.5, 2.5, 3.0):
        x0 = _beta_state(sp, phi)
        for t in (0.1, 0.3):
            f = flow(railway.net, x0, t).final
            drift = ex.circ_dist(ex.mod2pi(f[1] + f[3]), ex.mod2pi(x0.flat[1] + x0.flat[3] + 2.0 * t))
            kur = max(kur, drift / t)
    notes.append(f"Kuramoto sum drift {kur:.1e}*t")

    count = 0

    @settings(max_examples=1000, deadline=None, database=None)
    @given(st.one_of(real_exprs(), bool_exprs()))
    def round_trip(e):
        nonlocal count
        count += 1
        assert ex.parse(ex.to_text(e)) == e

    round_trip()
    notes.append(f"{count} expression round trips")

    files = 0
    for name in ("railway.net", "railway_return.net", "figure3.net"):
        nf = netfile.load(path(name))
        files += netfile.loads(netfile.dumps(nf.net, nf.functional, nf.regions)) == nf
    notes.append(f"{files}/3 fixture round trips")

    ok = adm == 1000 and semi <= 1e-8 and kur <= 1e-8 and count >= 1000 and files == 3
    report(7, ok, "; ".join(notes))
