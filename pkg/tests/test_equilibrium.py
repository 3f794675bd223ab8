"""Solvers: optima, homogeneous/heterogeneous Nash flows, oracle, gaps."""

import numpy as np
import pytest

from tollgame.core import (
    Edge,
    FlowProfile,
    InputError,
    Network,
    PolyLatency,
    Population,
    close,
)
from tollgame.equilibrium import (
    Solver,
    certify,
    check_parallel_ordering,
    nash_flow,
    nash_flow_general,
    nash_flow_homogeneous,
    nash_flow_parallel_heterogeneous,
    nash_gap,
    optimal_flow,
    oracle_nash_flows,
    transfer_certificate,
)
from tollgame.mechanisms import Mechanism
from tollgame.scenarios import (
    build_example1,
    build_pigou,
    build_theorem1_construction,
    random_corpus,
    shift_population,
)


def _pigou_optimum_by_grid(alpha, d, demand=1.0, resolution=1e-5):
    """1-D brute-force minimizer of total latency on the two-link family."""
    f1 = np.arange(0.0, demand + resolution, resolution)
    f1 = np.minimum(f1, demand)
    latency = alpha * f1 ** (d + 1) + (demand - f1) * 1.0
    i = int(np.argmin(latency))
    return float(f1[i]), float(latency[i])


# --- optimal flow -------------------------------------------------------------

def test_optimal_flow_example1():
    sc = build_example1("hetero")
    opt = optimal_flow(sc.network)
    assert close(opt.total_latency, 4.0, 1e-8)
    np.testing.assert_allclose(opt.flow.aggregate, [0.0, 1.0, 1.0, 0.0], atol=1e-7)
    assert opt.solver is Solver.POTENTIAL_MIN
    assert opt.diagnostics["transfer_certified"]


def test_optimal_flow_single_link():
    net = Network.build(
        ["s", "t"], [Edge("s", "t", PolyLatency((1.0, 2.0)))], "s", "t", 1.5
    )
    opt = optimal_flow(net)
    assert close(opt.total_latency, 1.5 * (1.0 + 2.0 * 1.5))


def test_optimal_flow_pigou_vs_grid_oracle():
    sc = build_pigou(1.0, 1)
    opt = optimal_flow(sc.network)
    f1_oracle, latency_oracle = _pigou_optimum_by_grid(1.0, 1)
    assert abs(opt.flow.aggregate[0] - f1_oracle) <= 2e-5
    assert abs(opt.total_latency - latency_oracle) <= 2e-5
    assert close(opt.total_latency, 0.75, 1e-6)


def test_transfer_certificate_flags_suboptimal_flow():
    sc = build_pigou(1.0, 1)
    bad = np.array([1.0, 0.0])
    assert transfer_certificate(sc.network, bad) > 1e-9


# --- homogeneous Nash ----------------------------------------------------------

@pytest.mark.parametrize("s", [0.0, 0.3, 1.0])
def test_example1_homogeneous_marginal_tolls(s):
    sc = build_example1("homog")
    res = nash_flow_homogeneous(sc.network, Mechanism.marginal_cost(), s)
    assert res.certified
    assert close(res.total_latency, 4.0, 1e-7)
    np.testing.assert_allclose(res.flow.aggregate, [0.0, 1.0, 1.0, 0.0], atol=1e-7)


def test_pigou_untolled_all_on_congestible():
    sc = build_pigou(1.0, 1)
    res = nash_flow_homogeneous(sc.network, Mechanism.zero(), 1.0)
    assert res.certified
    np.testing.assert_allclose(res.flow.aggregate, [1.0, 0.0], atol=1e-9)
    assert close(res.total_latency, 1.0)


def test_pigou_marginal_tolls_recover_optimum():
    sc = build_pigou(1.0, 1)
    res = nash_flow_homogeneous(sc.network, Mechanism.marginal_cost(), 1.0)
    f1_oracle, latency_oracle = _pigou_optimum_by_grid(1.0, 1)
    assert abs(res.flow.aggregate[0] - f1_oracle) <= 2e-5
    assert close(res.total_latency, 0.75, 1e-6)


def test_homogeneous_latency_unique_across_solvers():
    sc = build_example1("homog")
    potential = nash_flow_homogeneous(sc.network, Mechanism.marginal_cost(), 1.0)
    br = nash_flow_general(
        sc.network, Mechanism.marginal_cost(), sc.population, restarts=4, seed=1
    )
    assert abs(potential.total_latency - br.total_latency) <= 1e-7


# --- heterogeneous parallel ------------------------------------------------------

def test_parallel_hetero_pigou_vs_oracle():
    sc = build_pigou(1.0, 1)
    pop = Population.build([(0.5, 1e-6), (0.5, 1.0)], bounds=(0.0, 1.0))
    mech = Mechanism.marginal_cost()
    res = nash_flow_parallel_heterogeneous(sc.network, mech, pop)
    assert res.certified and res.nash_gap <= 1e-7
    # insensitive users take the congestible link, sensitive ones avoid it
    assert res.flow.path_flows[0, 0] > 0.49
    assert res.flow.path_flows[1, 1] > 0.49
    candidates = oracle_nash_flows(sc.network, mech, pop, 1e-3)
    assert candidates
    distances = [
        float(np.abs(c.flow.path_flows - res.flow.path_flows).max()) for c in candidates
    ]
    assert min(distances) <= 2e-3


def test_parallel_hetero_homogeneous_consistency():
    sc = build_pigou(0.8, 2)
    pop = Population.homogeneous(1.0, 0.7)
    a = nash_flow_parallel_heterogeneous(sc.network, Mechanism.marginal_cost(), pop)
    b = nash_flow_homogeneous(sc.network, Mechanism.marginal_cost(), 0.7)
    np.testing.assert_allclose(a.flow.aggregate, b.flow.aggregate, atol=1e-7)


def test_parallel_hetero_symmetric_links():
    lin = PolyLatency((0.0, 1.0))
    net = Network.build(
        ["s", "t"], [Edge("s", "t", lin), Edge("s", "t", lin)], "s", "t", 2.0
    )
    pop = Population.build([(1.0, 0.2), (1.0, 1.5)], bounds=(0.0, 2.0))
    res = nash_flow_parallel_heterogeneous(net, Mechanism.generalized(0.5, 1.0), pop)
    np.testing.assert_allclose(res.flow.aggregate, [1.0, 1.0], atol=1e-9)


def test_parallel_hetero_rejects_general_network():
    sc = build_example1("hetero")
    with pytest.raises(InputError, match="nash_flow_general"):
        nash_flow_parallel_heterogeneous(
            sc.network, Mechanism.marginal_cost(), sc.population
        )


def test_parallel_hetero_rejects_fixed_tolls():
    sc = build_pigou(1.0, 1)
    pop = Population.build([(0.5, 0.5), (0.5, 1.0)], bounds=(0.0, 1.0))
    with pytest.raises(InputError):
        nash_flow_parallel_heterogeneous(sc.network, Mechanism.fixed_tolls([0.1, 0.0]), pop)


def test_parallel_hetero_ordering_and_boundaries():
    net = Network.build(
        ["s", "t"],
        [
            Edge("s", "t", PolyLatency((0.0, 1.0))),
            Edge("s", "t", PolyLatency((0.4, 0.3))),
            Edge("s", "t", PolyLatency((1.2,))),
        ],
        "s", "t", 2.0,
    )
    pop = Population.build([(0.8, 0.1), (0.7, 0.9), (0.5, 2.0)], bounds=(0.0, 2.0))
    res = nash_flow_parallel_heterogeneous(net, Mechanism.generalized(0.5, 1.0), pop)
    assert res.certified
    ordering = res.diagnostics["ordering"]
    assert ordering["latency_ascending_violation"] <= 1e-6
    assert ordering["marginal_cost_descending_violation"] <= 1e-6
    for resid in res.diagnostics["boundary_residuals"]:
        assert resid <= 1e-9


# --- general heterogeneous -------------------------------------------------------

@pytest.mark.parametrize("kappa2", [0.25, 0.5, 1.0])
def test_theorem1_construction_equilibria(kappa2):
    sc = build_theorem1_construction(0.0, kappa2, 1.0)
    gamma2 = sc.expected["gamma2"].value
    tolled = nash_flow_general(sc.network, sc.mechanism, sc.population, seed=0)
    assert tolled.certified
    np.testing.assert_allclose(tolled.flow.aggregate, [1.0, 0.0, 0.0, 1.0], atol=1e-6)
    assert close(tolled.total_latency, 4.0 + gamma2, 1e-6)
    untolled = nash_flow(sc.network, Mechanism.zero(), sc.population)
    expected_flow = sc.expected["untolled_flow"].value
    np.testing.assert_allclose(untolled.flow.aggregate, expected_flow, atol=1e-6)
    assert close(untolled.total_latency, 4.0 + gamma2 / 2.0, 1e-6)


def test_general_solver_matches_parallel_solver():
    sc = build_pigou(1.5, 1)
    pop = Population.build([(0.4, 0.2), (0.6, 1.0)], bounds=(0.0, 1.0))
    mech = Mechanism.generalized(0.0, 0.8)
    a = nash_flow_parallel_heterogeneous(sc.network, mech, pop)
    b = nash_flow_general(sc.network, mech, pop, restarts=8, seed=3)
    assert abs(a.total_latency - b.total_latency) <= 1e-6


def test_general_solver_restart_records():
    sc = build_example1("hetero")
    res = nash_flow_general(sc.network, sc.mechanism, sc.population, restarts=16, seed=0)
    assert len(res.diagnostics["restarts"]) == 16
    assert any(r["certified"] for r in res.diagnostics["restarts"])
    # worst certified equilibrium is reported
    certified = [r["latency"] for r in res.diagnostics["restarts"] if r["certified"]]
    assert close(res.total_latency, max(certified), 1e-9)


# --- nash gap ----------------------------------------------------------------------

def test_nash_gap_zero_at_constructed_equilibrium():
    sc = build_theorem1_construction(0.0, 1.0, 1.0)
    flow = FlowProfile.build(sc.network, [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    assert nash_gap(sc.network, sc.mechanism, sc.population, flow) <= 1e-12


def test_nash_gap_positive_on_dominated_path():
    sc = build_example1("hetero")
    flow = FlowProfile.build(sc.network, [[0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0]])
    assert nash_gap(sc.network, Mechanism.zero(), sc.population, flow) > 0.5


def test_nash_gap_zero_at_optimum_under_unit_weight():
    # optimality conditions coincide with equilibrium under marginal costs
    sc = build_pigou(1.0, 1)
    opt = optimal_flow(sc.network)
    pop = Population.homogeneous(1.0, 1.0)
    flow = FlowProfile.build(sc.network, opt.flow.aggregate.reshape(1, -1))
    assert nash_gap(sc.network, Mechanism.marginal_cost(), pop, flow) <= 1e-9
    candidates = oracle_nash_flows(sc.network, Mechanism.marginal_cost(), pop, 1e-3)
    best = min(np.abs(c.flow.aggregate[0] - opt.flow.aggregate[0]) for c in candidates)
    assert best <= 2e-3


def test_certified_results_reverify():
    for scenario in random_corpus(31, 10, kind="parallel"):
        res = nash_flow(scenario.network, Mechanism.generalized(0.5, 1.0), scenario.population)
        gap, eps_abs, ok = certify(
            scenario.network, Mechanism.generalized(0.5, 1.0), scenario.population, res.flow
        )
        assert ok == res.certified
        assert abs(gap - res.nash_gap) <= 1e-12


# --- oracle -------------------------------------------------------------------------

def test_oracle_pigou_cluster():
    sc = build_pigou(1.0, 1)
    pop = Population.homogeneous(1.0, 1.0)
    candidates = oracle_nash_flows(sc.network, Mechanism.zero(), pop, 1e-3)
    assert candidates
    for c in candidates:
        assert abs(c.flow.aggregate[0] - 1.0) <= 5e-3


def test_oracle_example1_contains_perverse_flow():
    sc = build_example1("hetero")
    candidates = oracle_nash_flows(sc.network, sc.mechanism, sc.population, 1.0 / 8.0)
    assert candidates
    target = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    best = min(float(np.abs(c.flow.path_flows - target).max()) for c in candidates)
    assert best <= 1e-9  # the grid contains the exact corner


def test_oracle_theorem1_untolled_cluster():
    sc = build_theorem1_construction(0.0, 1.0, 1.0)
    candidates = oracle_nash_flows(sc.network, Mechanism.zero(), sc.population, 1.0 / 16.0)
    assert candidates
    expected = np.array(sc.expected["untolled_flow"].value)
    best = min(float(np.abs(c.flow.aggregate - expected).max()) for c in candidates)
    assert best <= 1.0 / 8.0


def test_oracle_size_limits():
    sc = build_example1("hetero")
    with pytest.raises(InputError):
        oracle_nash_flows(sc.network, sc.mechanism, sc.population, 1e-4)
    big = Network.build(
        ["s", "m", "t"],
        [
            Edge("s", "m", PolyLatency((0.0, 1.0))),
            Edge("s", "m", PolyLatency((1.0,))),
            Edge("m", "t", PolyLatency((0.0, 1.0))),
            Edge("m", "t", PolyLatency((1.0,))),
            Edge("s", "t", PolyLatency((2.0,))),
        ],
        "s", "t", 1.0,
    )
    assert big.n_paths == 5
    with pytest.raises(InputError):
        oracle_nash_flows(big, Mechanism.zero(), Population.homogeneous(1.0, 1.0), 0.1)


# --- dispatch and shift ---------------------------------------------------------------

def test_fixed_tolls_equilibria():
    sc = build_pigou(1.0, 1)
    mech = Mechanism.fixed_tolls([0.5, 0.0])
    homog = nash_flow_homogeneous(sc.network, mech, 1.0)
    assert homog.certified
    # congestible link carries flow until f + 0.5 meets the constant link
    np.testing.assert_allclose(homog.flow.aggregate, [0.5, 0.5], atol=1e-9)
    pop = Population.build([(0.5, 0.2), (0.5, 1.0)], bounds=(0.0, 1.0))
    hetero = nash_flow(sc.network, mech, pop)
    assert hetero.solver is Solver.BEST_RESPONSE  # fixed tolls bypass the parallel solver
    assert hetero.certified
    np.testing.assert_allclose(hetero.flow.aggregate, [0.5, 0.5], atol=1e-6)
    assert hetero.flow.path_flows[0, 0] > 0.49  # toll-blind users keep the tolled link


def test_dispatch_solver_selection():
    pigou = build_pigou(1.0, 1)
    hetero = Population.build([(0.5, 0.3), (0.5, 1.0)], bounds=(0.0, 1.0))
    assert (
        nash_flow(pigou.network, Mechanism.zero(), hetero).solver is Solver.POTENTIAL_MIN
    )  # zero tolls collapse every class to one cost function
    assert (
        nash_flow(pigou.network, Mechanism.marginal_cost(), hetero).solver
        is Solver.PARALLEL_ORDERED
    )
    example = build_example1("hetero")
    assert (
        nash_flow(example.network, example.mechanism, example.population).solver
        is Solver.BEST_RESPONSE
    )


def test_population_shift_latency_monotone_small():
    scenario = random_corpus(77, 1, kind="parallel")[0]
    mech = Mechanism.generalized(0.5, 1.0)
    latencies = []
    for alpha in np.linspace(0.0, scenario.network.demand, 5):
        shifted = shift_population(scenario.population, float(alpha))
        res = nash_flow(scenario.network, mech, shifted)
        assert res.certified
        latencies.append(res.total_latency)
    for a, b in zip(latencies[:-1], latencies[1:]):
        assert b >= a - 1e-7


def test_claim_ordering_helper_detects_violation():
    sc = build_pigou(1.0, 1)
    pop = Population.build([(0.5, 0.1), (0.5, 1.0)], bounds=(0.0, 1.0))
    # deliberately put the sensitive class on the congestible link
    flow = FlowProfile.build(sc.network, [[0.0, 0.5], [0.5, 0.0]])
    report = check_parallel_ordering(sc.network, pop, flow)
    assert report["latency_ascending_violation"] > 0.0


def test_solver_flows_near_oracle_candidates_on_small_corpus():
    # small instances: the solver lands within one grid cell of some
    # enumerated near-equilibrium candidate
    mech = Mechanism.generalized(0.3, 0.7)
    resolution = 1e-2
    checked = 0
    for sc in random_corpus(901, 12, max_links=3, max_degree=2, max_classes=2):
        if sc.network.n_paths > 3:
            continue
        res = nash_flow(sc.network, mech, sc.population)
        assert res.certified
        candidates = oracle_nash_flows(sc.network, mech, sc.population, resolution)
        assert candidates
        best = min(
            float(np.abs(c.flow.path_flows - res.flow.path_flows).max())
            for c in candidates
        )
        assert best <= 1.5 * resolution * (1.0 + sc.network.demand)
        checked += 1
    assert checked >= 8
