"""Acceptance criteria.

One test per criterion; each prints a single PASS/FAIL line (visible with
``pytest -s`` or in captured output) and enforces its runtime budget.
Criteria 5 and 6 cache their certified equilibria for the ordering checks of
criterion 7 and the re-verification pass of criterion 10.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
from tollgame.equilibrium import (
    certify,
    check_parallel_ordering,
    nash_flow,
    nash_flow_homogeneous,
    optimal_flow,
)
from tollgame.mechanisms import Mechanism, gmc_feasible
from tollgame.metrics import (
    evaluation_log,
    optimal_nonperverse_coefficients,
    pi_homogeneous_closed_form,
    pi_instance,
    pigou_family_worst_poa,
    poa_closed_form_nonperverse,
    poa_homogeneous_closed_form,
    poa_instance,
    tradeoff_poa_minimizer,
)
from tollgame.scenarios import (
    build_example1,
    build_pigou,
    build_theorem1_construction,
    pigou_witness_alpha,
    random_corpus,
    shift_population,
)


@contextmanager
def criterion(number: int, description: str, budget_seconds: float):
    start = time.perf_counter()
    try:
        yield
    except Exception:
        elapsed = time.perf_counter() - start
        print(f"ACCEPTANCE {number:>2} FAIL ({elapsed:6.2f}s): {description}")
        raise
    elapsed = time.perf_counter() - start
    assert elapsed < budget_seconds, (
        f"criterion {number} took {elapsed:.2f}s, budget {budget_seconds}s"
    )
    print(f"ACCEPTANCE {number:>2} PASS ({elapsed:6.2f}s): {description}")


# certified equilibria records shared between criteria 5/6 and 7/10
_RECORDS: dict[str, list] = {"nonperverse": [], "shift": []}


def test_criterion_01_example1_reproduction():
    with criterion(1, "flow-varying tolls backfire on the bypassed diamond", 1.0):
        sc = build_example1("hetero")
        untolled = nash_flow(sc.network, Mechanism.zero(), sc.population)
        assert untolled.certified
        assert abs(untolled.total_latency - 4.0) <= 1e-6
        tolled = nash_flow(sc.network, sc.mechanism, sc.population, seed=0)
        assert tolled.certified
        assert abs(tolled.total_latency - 5.0) <= 1e-6
        report = pi_instance(sc.network, sc.mechanism, sc.population, scenario_id=sc.id)
        assert abs(report.ratio - 1.25) <= 1e-6


def test_criterion_02_two_class_construction():
    with criterion(2, "two-class construction: tolled 4+g, untolled 4+g/2", 5.0):
        for kappa2 in (0.25, 0.5, 1.0):
            sc = build_theorem1_construction(0.0, kappa2, 1.0)
            gamma2 = sc.expected["gamma2"].value
            tolled = nash_flow(sc.network, sc.mechanism, sc.population, seed=0)
            assert tolled.certified
            np.testing.assert_allclose(
                tolled.flow.aggregate, [1.0, 0.0, 0.0, 1.0], atol=1e-6
            )
            assert abs(tolled.total_latency - (4.0 + gamma2)) <= 1e-6
            untolled = nash_flow(sc.network, Mechanism.zero(), sc.population)
            assert untolled.certified
            np.testing.assert_allclose(
                untolled.flow.aggregate,
                [gamma2 / 4.0, 1.0 - gamma2 / 8.0, 1.0 - gamma2 / 8.0, 0.0],
                atol=1e-6,
            )
            assert abs(untolled.total_latency - (4.0 + gamma2 / 2.0)) <= 1e-6


def test_criterion_03_closed_form_vs_certified_sweeps():
    with criterion(3, "underweighted closed form matches certified sweeps", 60.0):
        for d in (1, 2, 3, 4):
            for beta in (0.0, 0.25, 0.5, 0.75, 1.0):
                empirical = pigou_family_worst_poa(d, beta, n_alpha=2000)
                closed = poa_closed_form_nonperverse(d, 1.0, 1.0, 0.0, beta)
                assert abs(empirical.value - closed) <= 1e-3, (d, beta)


def test_criterion_04_overweighted_branch_witnesses():
    with criterion(4, "overweighted closed form attained by witness scales", 5.0):
        for d in (1, 2):
            for beta in (1.5, 2.0, 4.0):
                alpha = pigou_witness_alpha(d, beta)
                sc = build_pigou(alpha, d)
                nash = nash_flow_homogeneous(sc.network, Mechanism.generalized(0.0, beta), 1.0)
                opt = optimal_flow(sc.network)
                assert nash.certified and opt.certified
                ratio = nash.total_latency / opt.total_latency
                expected = beta ** (-d) * ((1.0 + d * beta) / (1.0 + d)) ** (d + 1)
                assert abs(ratio - expected) <= 1e-6, (d, beta)


def test_criterion_05_nonperversity_property_suite():
    with criterion(5, "valid coefficient tolls never worsen parallel traffic", 120.0):
        corpus = random_corpus(20240501, 500, max_links=5, max_degree=3, max_classes=3)
        rng = np.random.default_rng(909)
        pairs = []
        while len(pairs) < 20:
            k2 = float(rng.uniform(0.0, 1.5))
            k1 = float(k2 - 0.5 + rng.uniform(0.01, 1.0))
            if gmc_feasible(k1, k2, 2.0):
                pairs.append((k1, k2))
        violations = 0
        for sc in corpus:
            untolled = nash_flow(sc.network, Mechanism.zero(), sc.population)
            assert untolled.certified
            for k1, k2 in pairs:
                mech = Mechanism.generalized_checked(k1, k2, sc.population.bounds)
                tolled = nash_flow(sc.network, mech, sc.population)
                assert tolled.certified, (sc.id, k1, k2)
                if tolled.total_latency > untolled.total_latency + 1e-6:
                    violations += 1
                if not sc.population.is_homogeneous:
                    _RECORDS["nonperverse"].append(
                        (sc.network, mech, sc.population, tolled)
                    )
        assert violations == 0


def test_criterion_06_population_shift_monotonicity():
    with criterion(6, "latency nondecreasing while sensitive mass shifts down", 60.0):
        corpus = random_corpus(61006, 100, max_links=5, max_degree=3, max_classes=3)
        mech = Mechanism.generalized_checked(0.5, 1.0, (0.05, 2.0))
        for sc in corpus:
            latencies = []
            for alpha in np.linspace(0.0, sc.network.demand, 21):
                shifted = shift_population(sc.population, float(alpha))
                res = nash_flow(sc.network, mech, shifted)
                assert res.certified, (sc.id, alpha)
                latencies.append(res.total_latency)
                if not shifted.is_homogeneous:
                    _RECORDS["shift"].append((sc.network, mech, shifted, res))
            for earlier, later in zip(latencies[:-1], latencies[1:]):
                assert later >= earlier - 1e-7, sc.id


def test_criterion_07_equilibrium_orderings():
    with criterion(7, "latency ascends and marginal cost descends in sensitivity", 60.0):
        records = _RECORDS["nonperverse"] + _RECORDS["shift"]
        assert records, "criteria 5 and 6 must run first"
        for network, mech, population, result in records:
            report = check_parallel_ordering(network, population, result.flow)
            assert report["latency_ascending_violation"] <= 1e-6
            assert report["marginal_cost_descending_violation"] <= 1e-6


def test_criterion_08_optimal_coefficients_grid_agreement():
    with criterion(8, "analytic coefficient optimum matches grid search", 30.0):
        resolution = 1e-2
        for d in (1, 2):
            for s_upper in (1.0, 2.0, math.inf):
                for kmax in (0.5, 1.0):
                    s_lower = 0.1
                    k1_star, k2_star = optimal_nonperverse_coefficients(
                        d, s_lower, s_upper, kmax
                    )
                    inv_su = 0.0 if math.isinf(s_upper) else 1.0 / s_upper
                    k1_grid = np.arange(-inv_su + resolution, kmax + 1e-12, resolution)
                    best = (math.inf, None, None)
                    for k1 in k1_grid:
                        k2_hi = min(kmax, k1 + inv_su) if inv_su > 0.0 else (
                            min(kmax, k1) if k1 >= 0 else -1.0
                        )
                        if k2_hi < 0.0:
                            continue
                        k2s = np.arange(0.0, k2_hi + 1e-12, resolution)
                        if k2s.size == 0 or k2s[-1] < k2_hi - 1e-12:
                            k2s = np.append(k2s, k2_hi)
                        betas = k2s * s_lower / (1.0 + k1 * s_lower)
                        term = d * np.exp(
                            (d + 1) / d * np.log((1.0 + d * betas) / (1.0 + d))
                        )
                        values = 1.0 / (1.0 + d * betas - term)
                        i = int(np.argmin(values))
                        if values[i] < best[0]:
                            best = (float(values[i]), float(k1), float(k2s[i]))
                    assert abs(best[1] - k1_star) <= resolution + 1e-9, (d, s_upper, kmax)
                    assert abs(best[2] - k2_star) <= resolution + 1e-9, (d, s_upper, kmax)


def test_criterion_09_tradeoff_crossing():
    with criterion(9, "anarchy-minimizing tolls equalize both worst cases above 1", 10.0):
        d, s_lower, s_upper, kmax = 1, 0.5, 2.0, 1.0
        k1_star, k2_star, value = tradeoff_poa_minimizer(d, s_lower, s_upper, kmax)
        assert k2_star == kmax
        poa_hm = poa_homogeneous_closed_form(d, s_lower, k1_star, k2_star)
        pi_hm = pi_homogeneous_closed_form(d, s_upper, k1_star, k2_star)
        assert abs(poa_hm - pi_hm) <= 1e-8
        assert value > 1.0 + 1e-6
        # independent fine grid over the coefficient interval
        grid = np.arange(-1.0 / s_upper + 1e-5, kmax - 1.0 / s_upper, 1e-5)
        worst = np.maximum(
            [poa_homogeneous_closed_form(d, s_lower, g, kmax) for g in grid],
            [poa_homogeneous_closed_form(d, s_upper, g, kmax) for g in grid],
        )
        i = int(np.argmin(worst))
        assert abs(grid[i] - k1_star) <= 1e-5 + 1e-12
        # the sampled optimum sits within one grid cell of the crossing, so
        # its value agrees up to the branch slope times the cell width
        assert abs(worst[i] - value) <= 1e-6


def test_criterion_10_global_sanity():
    with criterion(10, "perversity never exceeds anarchy; certificates re-verify", 120.0):
        # instance ratios on the built-in scenarios and a corpus sample
        cases = [
            (build_example1("hetero"), None),
            (build_theorem1_construction(0.0, 1.0, 1.0), None),
            (build_theorem1_construction(0.25, 0.5, 2.0), None),
            (build_pigou(1.0, 1), Mechanism.marginal_cost()),
            (build_pigou(4.0 / 9.0, 1), Mechanism.generalized(0.0, 2.0)),
        ]
        for sc in random_corpus(555, 20, max_links=4, max_degree=2, max_classes=3):
            cases.append((sc, Mechanism.generalized(0.4, 0.8)))
        for sc, mech in cases:
            mech = mech or sc.mechanism
            poa = poa_instance(sc.network, mech, sc.population, scenario_id=sc.id)
            pi = pi_instance(sc.network, mech, sc.population, scenario_id=sc.id)
            assert pi.ratio <= poa.ratio + 1e-9, sc.id
        # every ratio logged anywhere in this run satisfies the same bound
        by_key: dict[str, dict[str, float]] = {}
        for entry in evaluation_log():
            if entry["key"] is not None:
                by_key.setdefault(entry["key"], {})[entry["kind"]] = entry["ratio"]
        paired = [v for v in by_key.values() if "poa" in v and "pi" in v]
        assert paired
        for v in paired:
            assert v["pi"] <= v["poa"] + 1e-9
        # certified equilibria recorded by criteria 5 and 6 re-verify with the
        # independent gap implementation
        records = _RECORDS["nonperverse"] + _RECORDS["shift"]
        assert records, "criteria 5 and 6 must run first"
        for network, mech, population, result in records:
            gap, eps_abs, ok = certify(network, mech, population, result.flow)
            assert ok and gap <= eps_abs
