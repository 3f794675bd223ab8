"""Taxation mechanisms: toll derivation, effective sensitivities, validity."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tollgame.core import DomainError, Edge, InputError, Network, PolyLatency
from tollgame.equilibrium import nash_flow_homogeneous
from tollgame.mechanisms import (
    Mechanism,
    derive_tolls,
    effective_sensitivity_beta,
    gmc_feasible,
    normalized_cost,
)
from tollgame.scenarios import build_pigou, random_corpus


def _finite_difference_marginal(latency, f, h=1e-6):
    return f * (latency(f + h) - latency(f - h)) / (2.0 * h)


# --- derive_tolls ------------------------------------------------------------

def test_marginal_cost_toll_linear_link():
    net = build_pigou(1.0, 1).network  # link 0 has latency f
    tolls = derive_tolls(Mechanism.marginal_cost(), net)
    for f in np.linspace(0.0, 1.0, 11):
        assert math.isclose(tolls.tau(0, float(f)), float(f), abs_tol=1e-12)


def test_marginal_cost_toll_constant_link_is_zero():
    net = build_pigou(1.0, 1).network  # link 1 is constant
    tolls = derive_tolls(Mechanism.marginal_cost(), net)
    for f in np.linspace(0.0, 1.0, 11):
        assert tolls.tau(1, float(f)) == 0.0


@pytest.mark.parametrize("alpha,d", [(0.5, 1), (2.0, 2), (1.5, 3)])
def test_generalized_toll_monomial_vs_finite_differences(alpha, d):
    coeffs = tuple([0.0] * d + [alpha])
    net = Network.build(
        ["s", "t"], [Edge("s", "t", PolyLatency(coeffs))], "s", "t", 1.0
    )
    k1, k2 = 0.3, 0.7
    tolls = derive_tolls(Mechanism.generalized(k1, k2), net)
    lat = net.edges[0].latency
    for f in np.linspace(0.05, 1.0, 10):
        f = float(f)
        symbolic = tolls.tau(0, f)
        expected = k1 * alpha * f**d + k2 * d * alpha * f**d
        assert math.isclose(symbolic, expected, rel_tol=1e-12)
        numeric = k1 * lat(f) + k2 * _finite_difference_marginal(lat, f)
        assert math.isclose(symbolic, numeric, rel_tol=1e-6)


def test_network_agnosticity_shared_latency():
    shared = PolyLatency((0.3, 1.2, 0.5))
    net_a = Network.build(
        ["s", "t"],
        [Edge("s", "t", shared), Edge("s", "t", PolyLatency((1.0,)))],
        "s", "t", 1.0,
    )
    net_b = Network.build(
        ["s", "m", "t"],
        [Edge("s", "m", shared), Edge("m", "t", PolyLatency((0.0, 2.0))),
         Edge("s", "t", PolyLatency((5.0,)))],
        "s", "t", 2.0,
    )
    for mech in (Mechanism.marginal_cost(), Mechanism.generalized(-0.2, 0.4)):
        ta = derive_tolls(mech, net_a)
        tb = derive_tolls(mech, net_b)
        for f in np.linspace(0.0, 2.0, 100):
            assert ta.tau(0, float(f)) == tb.tau(0, float(f))


def test_fixed_tolls_need_per_edge_constants():
    net = build_pigou(1.0, 1).network
    tolls = derive_tolls(Mechanism.fixed_tolls([0.5, 0.0]), net)
    assert tolls.tau(0, 0.7) == 0.5
    with pytest.raises(InputError):
        derive_tolls(Mechanism.fixed_tolls([0.5]), net)
    with pytest.raises(InputError):
        Mechanism.fixed_tolls([-0.1, 0.0])


# --- effective sensitivity ----------------------------------------------------

def test_beta_unit_sensitivity_marginal_cost():
    assert effective_sensitivity_beta(1.0, 0.0, 1.0) == 1.0


def test_beta_zero_sensitivity():
    assert effective_sensitivity_beta(0.0, 0.7, 0.9) == 0.0


def test_beta_rescaling_equivalence():
    # (k1, k2) = (1, 2) at s = 1 has the same induced weight as plain
    # marginal-cost tolls, hence the same equilibrium flows
    assert effective_sensitivity_beta(1.0, 1.0, 2.0) == 1.0
    sc = build_pigou(0.8, 2)
    a = nash_flow_homogeneous(sc.network, Mechanism.generalized(1.0, 2.0), 1.0)
    b = nash_flow_homogeneous(sc.network, Mechanism.marginal_cost(), 1.0)
    np.testing.assert_allclose(a.flow.aggregate, b.flow.aggregate, atol=1e-9)


def test_beta_domain_errors():
    with pytest.raises(DomainError):
        effective_sensitivity_beta(2.0, -0.5, 0.2)  # 1 + k1*s = 0
    with pytest.raises(DomainError):
        effective_sensitivity_beta(math.inf, 0.0, 1.0)  # no finite limit
    assert effective_sensitivity_beta(math.inf, 2.0, 1.0) == 0.5


@settings(max_examples=200, deadline=None)
@given(
    s1=st.floats(0.0, 50.0),
    ds=st.floats(1e-6, 50.0),
    k1=st.floats(-0.4, 3.0),
    k2=st.floats(1e-9, 3.0),
)
def test_beta_monotone_increasing_in_sensitivity(s1, ds, k1, k2):
    s2 = s1 + ds
    # keep both sensitivities inside the model domain (1 + k1*s > 0)
    if 1.0 + k1 * s2 <= 1e-9:
        return
    b1 = effective_sensitivity_beta(s1, k1, k2)
    b2 = effective_sensitivity_beta(s2, k1, k2)
    assert b2 > b1 - 1e-15


# --- normalized cost -----------------------------------------------------------

def test_normalized_cost_marginal_linear():
    lat = PolyLatency((0.0, 1.0))
    cost = normalized_cost(lat, 1.0, Mechanism.marginal_cost())
    assert cost.coeffs == (0.0, 2.0)


def test_normalized_cost_zero_mechanism():
    lat = PolyLatency((0.0, 1.0))
    cost = normalized_cost(lat, 5.0, Mechanism.zero())
    assert cost.coeffs == lat.coeffs


@pytest.mark.parametrize("alpha,d,beta", [(1.0, 1, 0.5), (2.0, 3, 0.25), (0.7, 2, 1.0)])
def test_normalized_cost_monomial_scaling(alpha, d, beta):
    lat = PolyLatency(tuple([0.0] * d + [alpha]))
    mech = Mechanism.generalized(0.0, beta)  # beta(s=1) = beta
    cost = normalized_cost(lat, 1.0, mech)
    assert math.isclose(cost.coeffs[d], alpha * (1.0 + beta * d), rel_tol=1e-12)
    # cross-check against the finite-difference marginal term
    for f in np.linspace(0.1, 1.0, 5):
        f = float(f)
        expected = lat(f) + beta * _finite_difference_marginal(lat, f)
        assert math.isclose(cost(f), expected, rel_tol=1e-6)


def test_normalized_cost_fixed_tolls():
    lat = PolyLatency((0.0, 1.0))
    mech = Mechanism.fixed_tolls([0.4])
    cost = normalized_cost(lat, 2.0, mech, fixed_toll=0.4)
    assert cost.coeffs == (0.8, 1.0)
    with pytest.raises(InputError):
        normalized_cost(lat, 2.0, mech)


# --- validity region ------------------------------------------------------------

@pytest.mark.parametrize(
    "k1,k2,su,ok",
    [
        (0.0, 0.5, 2.0, True),
        (0.0, 0.5, 1.0, True),
        (0.0, 1.1, 1.0, False),   # k2 > k1 + 1/SU
        (-0.5, 0.0, 2.0, False),  # k1 = -1/SU not allowed
        (-0.4, 0.05, 2.0, True),
        (0.0, -0.1, 2.0, False),  # k2 < 0
        (1.0, 1.0, math.inf, True),
        (1.0, 1.0001, math.inf, False),
        (0.0, 0.0, math.inf, True),
    ],
)
def test_gmc_feasible_region(k1, k2, su, ok):
    assert gmc_feasible(k1, k2, su) is ok
    if ok:
        mech = Mechanism.generalized_checked(k1, k2, (0.0, su))
        assert mech.checked_bounds == (0.0, su)
    else:
        with pytest.raises(DomainError):
            Mechanism.generalized_checked(k1, k2, (0.0, su))


def test_kappa2_zero_is_trivial():
    # latency-proportional taxes rescale every cost identically, so the
    # equilibrium matches the untolled one on every instance
    for scenario in random_corpus(5, 10, kind="parallel"):
        for k1 in (-0.3, 0.0, 0.8):
            tolled = nash_flow_homogeneous(
                scenario.network, Mechanism.generalized(k1, 0.0), 1.3
            )
            untolled = nash_flow_homogeneous(scenario.network, Mechanism.zero(), 1.3)
            np.testing.assert_allclose(
                tolled.flow.aggregate, untolled.flow.aggregate, atol=1e-8
            )


def test_mechanism_kappas_view():
    assert Mechanism.zero().kappas == (0.0, 0.0)
    assert Mechanism.marginal_cost().kappas == (0.0, 1.0)
    assert Mechanism.generalized(0.25, 0.75).kappas == (0.25, 0.75)
    with pytest.raises(InputError):
        Mechanism.fixed_tolls([1.0]).kappas
