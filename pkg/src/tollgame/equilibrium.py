"""Equilibrium and optimal-flow computation with certification.

Solvers:

* ``potential-min`` -- homogeneous (or effectively homogeneous) populations.
  On parallel networks the common-cost level is found by a water-filling
  search; on general networks a pairwise-transfer descent on the convex
  edge-separable potential is used.  Optimal flows reuse the same machinery
  with marginal-cost functions, since minimizing total latency is the
  equilibrium problem for ``l + f l'``.
* ``parallel-ordered`` -- heterogeneous populations on parallel networks:
  a fixed-point sweep of exact single-class water-fill responses, exploiting
  the ordered structure of such equilibria (latency ascending / marginal cost
  descending in class sensitivity); boundary indifference levels come out of
  the per-class common-cost bisection.
* ``best-response`` -- heterogeneous populations on general networks: damped
  best-response iteration on per-class path flows with multi-restart, keeping
  the worst (largest total latency) certified equilibrium.
* ``oracle`` -- exhaustive grid enumeration for small instances, used as an
  independent cross-check.

Every result is certified by recomputing the Nash gap with code that is
independent of the solver kernels.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import (
    SUPPORT_TOL,
    FlowProfile,
    InputError,
    Network,
    Population,
    SolverError,
    check_population_matches,
)
from .mechanisms import (
    Mechanism,
    Variant,
    class_betas,
    effective_sensitivity_beta,
    normalized_cost,
)

EPS_NASH_REL = 1e-7
MAX_POTENTIAL_ITERS = 10**6
MAX_BR_ROUNDS = 10**5


class Solver(str, Enum):
    POTENTIAL_MIN = "potential-min"
    PARALLEL_ORDERED = "parallel-ordered"
    BEST_RESPONSE = "best-response"
    ORACLE = "oracle"


@dataclass(frozen=True)
class EquilibriumResult:
    flow: FlowProfile
    nash_gap: float
    total_latency: float
    solver: Solver
    iterations: int
    certified: bool
    eps_nash: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PathCostDecomposition:
    """Per-path latency, marginal part and marginal cost at a given flow."""

    latency: np.ndarray
    marginal: np.ndarray
    marginal_cost: np.ndarray


def path_cost_decomposition(network: Network, flow: FlowProfile) -> PathCostDecomposition:
    fe = flow.edge_flows
    lat = np.zeros(network.n_paths)
    marg = np.zeros(network.n_paths)
    for p, edge_ids in enumerate(network.paths):
        for e in edge_ids:
            lat[p] += network.edges[e].latency(fe[e])
            marg[p] += network.edges[e].latency.marginal(fe[e])
    for a in (lat, marg):
        a.setflags(write=False)
    mc = lat + marg
    mc.setflags(write=False)
    return PathCostDecomposition(latency=lat, marginal=marg, marginal_cost=mc)


# --------------------------------------------------------------------------
# Vectorized class-cost tables (solver side)
# --------------------------------------------------------------------------

class _CostModel:
    """Per-class effective edge/path cost polynomials, vectorized for solvers."""

    def __init__(self, network: Network, mechanism: Mechanism, population: Population):
        self.network = network
        self.mechanism = mechanism
        self.population = population
        m = population.n_classes
        E = network.n_edges

        if mechanism.variant is Variant.FIXED:
            if len(mechanism.fixed or ()) != E:
                raise InputError(
                    f"fixed mechanism carries {len(mechanism.fixed or ())} constants, "
                    f"network has {E} edges"
                )
            self.betas = None
        else:
            self.betas = class_betas(mechanism, population.sensitivities)

        polys = []
        for c in range(m):
            row = []
            for e in range(E):
                latency = network.edges[e].latency
                q = mechanism.fixed[e] if mechanism.variant is Variant.FIXED else None
                row.append(
                    normalized_cost(latency, population.sensitivities[c], mechanism, q)
                    if mechanism.variant is Variant.FIXED
                    else latency.with_beta(self.betas[c])
                )
            polys.append(row)
        self.edge_polys = polys

        kmax = max(len(p.coeffs) for row in polys for p in row)
        C = np.zeros((m, E, kmax))
        for c in range(m):
            for e in range(E):
                cs = polys[c][e].coeffs
                C[c, e, : len(cs)] = cs
        self.edge_coeffs = C

        self._path_coeffs: np.ndarray | None = None

    @property
    def path_coeffs(self) -> np.ndarray:
        """(m, P, K) per-class path cost polynomials; valid on parallel networks
        only, where each edge of a path carries exactly the path flow."""
        if self._path_coeffs is None:
            if not self.network.is_parallel:
                raise InputError("path cost polynomials need a parallel network")
            m, _, K = self.edge_coeffs.shape
            P = self.network.n_paths
            PC = np.zeros((m, P, K))
            for p, edge_ids in enumerate(self.network.paths):
                for e in edge_ids:
                    PC[:, p, :] += self.edge_coeffs[:, e, :]
            self._path_coeffs = PC
        return self._path_coeffs

    def edge_costs(self, edge_flows: np.ndarray) -> np.ndarray:
        """(m, E) costs at the given aggregate edge flows."""
        C = self.edge_coeffs
        acc = np.broadcast_to(C[:, :, -1], C.shape[:2]).copy()
        for k in range(C.shape[2] - 2, -1, -1):
            acc = acc * edge_flows[None, :] + C[:, :, k]
        return acc

    def path_costs(self, path_flows: np.ndarray) -> np.ndarray:
        """(m, P) class path costs for a (m, P) path-flow matrix."""
        fe = path_flows.sum(axis=0) @ self.network.incidence
        return self.edge_costs(fe) @ self.network.incidence.T

    def internal_gap(self, path_flows: np.ndarray) -> tuple[float, float]:
        """(gap, min class cost) from the solver-side tables."""
        pc = self.path_costs(path_flows)
        mins = pc.min(axis=1)
        support = path_flows > SUPPORT_TOL
        excess = np.where(support, pc - mins[:, None], 0.0)
        return float(max(excess.max(), 0.0)), float(mins.min())


# --------------------------------------------------------------------------
# Independent Nash-gap recomputation (kept as plain scalar code on purpose)
# --------------------------------------------------------------------------

def nash_gap(
    network: Network,
    mechanism: Mechanism,
    population: Population,
    flow: FlowProfile,
    support_tol: float = SUPPORT_TOL,
) -> float:
    """Worst cost excess over the per-class minimum, across used paths.

    Costs are the per-class normalized costs (latency plus beta-weighted
    marginal term for coefficient mechanisms; latency plus sensitivity-scaled
    constant for fixed tolls), so the zero set coincides with Nash flows.
    """
    if flow.path_flows.shape[0] != population.n_classes:
        raise InputError(
            f"flow has {flow.path_flows.shape[0]} class rows, expected {population.n_classes}"
        )
    gap = 0.0
    for c, cls in enumerate(population.classes):
        edge_cost = []
        for e in range(network.n_edges):
            lat = network.edges[e].latency
            fe = float(flow.edge_flows[e])
            if mechanism.variant is Variant.FIXED:
                edge_cost.append(lat(fe) + cls.sensitivity * mechanism.fixed[e])
            else:
                k1, k2 = mechanism.kappas
                beta = effective_sensitivity_beta(cls.sensitivity, k1, k2)
                edge_cost.append(lat(fe) + beta * fe * lat.slope(fe))
        path_cost = [sum(edge_cost[e] for e in p) for p in network.paths]
        best = min(path_cost)
        for p in range(network.n_paths):
            if flow.path_flows[c, p] > support_tol:
                gap = max(gap, path_cost[p] - best)
    return max(gap, 0.0)


def class_path_costs(
    network: Network, mechanism: Mechanism, population: Population, flow: FlowProfile
) -> np.ndarray:
    """(n_classes, n_paths) normalized per-class path costs at a flow."""
    model = _CostModel(network, mechanism, population)
    return model.path_costs(np.asarray(flow.path_flows))


def _min_class_cost(
    network: Network, mechanism: Mechanism, population: Population, flow: FlowProfile
) -> float:
    best = math.inf
    for cls in population.classes:
        for p in range(network.n_paths):
            cost = 0.0
            for e in network.paths[p]:
                lat = network.edges[e].latency
                fe = float(flow.edge_flows[e])
                if mechanism.variant is Variant.FIXED:
                    cost += lat(fe) + cls.sensitivity * mechanism.fixed[e]
                else:
                    k1, k2 = mechanism.kappas
                    beta = effective_sensitivity_beta(cls.sensitivity, k1, k2)
                    cost += lat(fe) + beta * fe * lat.slope(fe)
            best = min(best, cost)
    return best


def certify(
    network: Network,
    mechanism: Mechanism,
    population: Population,
    flow: FlowProfile,
    eps_rel: float = EPS_NASH_REL,
) -> tuple[float, float, bool]:
    """(gap, eps_abs, certified) with the gap recomputed independently."""
    gap = nash_gap(network, mechanism, population, flow)
    eps_abs = eps_rel * (1.0 + _min_class_cost(network, mechanism, population, flow))
    return gap, eps_abs, gap <= eps_abs


def _make_result(
    network: Network,
    mechanism: Mechanism,
    population: Population,
    path_flows: np.ndarray,
    solver: Solver,
    iterations: int,
    eps_rel: float,
    diagnostics: dict | None = None,
) -> EquilibriumResult:
    from .core import total_latency  # local import to keep module load cheap

    flow = FlowProfile.build(network, path_flows)
    gap, eps_abs, ok = certify(network, mechanism, population, flow, eps_rel)
    return EquilibriumResult(
        flow=flow,
        nash_gap=gap,
        total_latency=total_latency(network, flow),
        solver=solver,
        iterations=iterations,
        certified=ok,
        eps_nash=eps_abs,
        diagnostics=diagnostics or {},
    )


# --------------------------------------------------------------------------
# Water-filling on parallel path cost polynomials
# --------------------------------------------------------------------------

def _horner(coeffs: tuple, u: float) -> float:
    acc = coeffs[-1]
    for k in range(len(coeffs) - 2, -1, -1):
        acc = acc * u + coeffs[k]
    return acc


def _horner_deriv(coeffs: tuple, u: float) -> float:
    n = len(coeffs)
    if n == 1:
        return 0.0
    acc = coeffs[-1] * (n - 1)
    for k in range(n - 2, 0, -1):
        acc = acc * u + coeffs[k] * k
    return acc


def _invert_monotone(coeffs: tuple, lam: float, hi: float, start: float) -> float:
    """u >= 0 with c(u) = lam for a nondecreasing convex polynomial; clamps to
    0 when c(0) >= lam and to ``hi`` when c(hi) < lam.  ``start`` may carry a
    warm upper estimate from a previous level; Newton from above the root
    descends monotonically, so any start with c(start) >= lam is valid."""
    if coeffs[0] >= lam:
        return 0.0
    u = start if (0.0 < start <= hi and _horner(coeffs, start) >= lam) else hi
    if _horner(coeffs, u) < lam:
        return hi
    tol = 1e-14 * (1.0 + abs(lam))
    for _ in range(100):
        resid = _horner(coeffs, u) - lam
        if abs(resid) <= tol:
            break
        du = _horner_deriv(coeffs, u)
        if du <= 0.0:
            break
        u -= resid / du
        if u < 0.0:
            u = 0.0
    return u


def _waterfill(
    path_coeffs: list[tuple], offsets, mass: float
) -> tuple[np.ndarray, float]:
    """Single-class equilibrium response on parallel paths.

    ``path_coeffs`` holds this class's path cost polynomial per path and
    ``offsets`` the flow other classes already place there.  Returns the
    class's path flows (summing to ``mass``) and the common cost level: every
    path carrying class flow costs the level, every other path costs at least
    it.  Flow-independent paths are elastic exactly at their constant cost;
    the lexicographically first one absorbs any remainder there.
    """
    P = len(path_coeffs)
    offs = [float(o) for o in offsets]
    strict_ids = [p for p in range(P) if any(c > 0.0 for c in path_coeffs[p][1:])]
    const_ids = [p for p in range(P) if p not in strict_ids]
    cost_at_off = [_horner(path_coeffs[p], offs[p]) for p in range(P)]

    x = np.zeros(P)
    if not strict_ids:
        best = min(range(P), key=lambda p: cost_at_off[p])
        x[best] = mass
        return x, float(cost_at_off[best])

    v_min = min((path_coeffs[p][0] for p in const_ids), default=math.inf)
    hi0 = max(offs) + mass + 1.0
    warm = {p: hi0 for p in strict_ids}

    def strict_flows(lam: float) -> tuple[dict, float, float]:
        """Per-path class flow at level lam, the total, and dD/dlam."""
        flows = {}
        total = 0.0
        slope_sum = 0.0
        for p in strict_ids:
            u = _invert_monotone(path_coeffs[p], lam, hi0, warm[p])
            warm[p] = u if u > 0.0 else hi0
            xv = u - offs[p]
            if xv > 0.0:
                flows[p] = xv
                total += xv
                du = _horner_deriv(path_coeffs[p], u)
                if du > 0.0:
                    slope_sum += 1.0 / du
            else:
                flows[p] = 0.0
        return flows, total, slope_sum

    if math.isfinite(v_min):
        flows, total, _ = strict_flows(v_min)
        if total <= mass:
            for p, xv in flows.items():
                x[p] = xv
            group = [
                p for p in const_ids
                if abs(path_coeffs[p][0] - v_min) <= 1e-12 * (1.0 + abs(v_min))
            ]
            x[group[0]] += mass - total
            return x, float(v_min)

    lam_lo = min(cost_at_off)
    lam_hi = min(
        v_min, min(_horner(path_coeffs[p], offs[p] + mass) for p in strict_ids)
    )
    lo, hi = lam_lo, lam_hi
    lam = hi
    flows, total, slope_sum = strict_flows(lam)
    tol = 1e-13 * (1.0 + mass)
    for _ in range(80):
        if abs(total - mass) <= tol or hi - lo <= 1e-16 * (1.0 + abs(hi)):
            break
        if total < mass:
            lo = lam
        else:
            hi = lam
        proposal = lam - (total - mass) / slope_sum if slope_sum > 0.0 else 0.5 * (lo + hi)
        lam = proposal if lo < proposal < hi else 0.5 * (lo + hi)
        flows, total, slope_sum = strict_flows(lam)
    if total <= 0.0:
        lam = hi
        flows, total, slope_sum = strict_flows(lam)
    scale = mass / total
    for p, xv in flows.items():
        x[p] = xv * scale
    return x, float(lam)


# --------------------------------------------------------------------------
# Homogeneous solver (potential minimization)
# --------------------------------------------------------------------------

def _solve_homogeneous_aggregate(
    network: Network,
    cost_polys,
    mass: float,
    target_rel: float,
    max_iters: int = MAX_POTENTIAL_ITERS,
) -> tuple[np.ndarray, int]:
    """Aggregate path flows minimizing the convex edge-separable potential.

    ``cost_polys`` is the per-edge effective cost list; the descent stops once
    the equilibrium gap under those costs falls below ``target_rel`` scaled by
    (1 + minimum path cost).
    """
    P = network.n_paths
    if network.is_parallel:
        coeffs = [_path_poly(network, cost_polys, p).coeffs for p in range(P)]
        x, _ = _waterfill(coeffs, np.zeros(P), mass)
        return x, 1

    inc = network.incidence
    f = np.full(P, mass / P)

    def path_costs(fp: np.ndarray) -> np.ndarray:
        fe = fp @ inc
        ce = np.array([cost_polys[e](fe[e]) for e in range(network.n_edges)])
        return inc @ ce

    support_tol = SUPPORT_TOL * (1.0 + mass)
    gap = math.inf
    for it in range(max_iters):
        pc = path_costs(f)
        used = f > support_tol
        gap = float(pc[used].max() - pc.min())
        if gap <= target_rel * (1.0 + float(pc.min())):
            return f, it + 1
        q = int(np.flatnonzero(used)[np.argmax(pc[used])])
        p = int(np.argmin(pc))
        if p == q:
            return f, it + 1
        # exact 1-D minimization along the transfer direction q -> p
        gain = inc[p] - inc[q]

        def directional(delta: float) -> float:
            fe = (f + 0.0) @ inc + delta * gain
            cp = sum(cost_polys[e](fe[e]) for e in network.paths[p])
            cq = sum(cost_polys[e](fe[e]) for e in network.paths[q])
            return cp - cq

        hi = float(f[q])
        if directional(hi) <= 0.0:
            delta = hi
        else:
            lo_d, hi_d = 0.0, hi
            for _ in range(80):
                mid = 0.5 * (lo_d + hi_d)
                if directional(mid) <= 0.0:
                    lo_d = mid
                else:
                    hi_d = mid
                if hi_d - lo_d <= 1e-16 * (1.0 + hi):
                    break
            delta = 0.5 * (lo_d + hi_d)
        f[p] += delta
        f[q] = max(f[q] - delta, 0.0)
    raise SolverError(
        f"potential descent did not reach relative gap {target_rel} in {max_iters} "
        f"transfers (last gap {gap})"
    )


def _path_poly(network: Network, cost_polys, p: int):
    poly = cost_polys[network.paths[p][0]]
    for e in network.paths[p][1:]:
        poly = poly.add(cost_polys[e])
    return poly


def nash_flow_homogeneous(
    network: Network,
    mechanism: Mechanism,
    sensitivity: float,
    eps_rel: float = EPS_NASH_REL,
) -> EquilibriumResult:
    """Nash flow for a single-sensitivity population filling the whole demand."""
    population = Population.build(
        [(network.demand, sensitivity)],
        bounds=None,
        allow_zero_sensitivity=(sensitivity == 0.0),
    )
    model = _CostModel(network, mechanism, population)
    # solve with headroom below the certification threshold
    agg, iters = _solve_homogeneous_aggregate(
        network, model.edge_polys[0], network.demand, 0.05 * eps_rel
    )
    return _make_result(
        network, mechanism, population, agg.reshape(1, -1),
        Solver.POTENTIAL_MIN, iters, eps_rel,
    )


def transfer_certificate(
    network: Network, aggregate: np.ndarray, delta: float = 1e-6
) -> float:
    """Largest total-latency decrease achievable by moving ``delta`` mass
    between any ordered path pair; nonpositive within tolerance at optima."""
    inc = network.incidence
    fe = aggregate @ inc

    def latency_total(flows_e: np.ndarray) -> float:
        return float(
            sum(flows_e[e] * network.edges[e].latency(flows_e[e]) for e in range(network.n_edges))
        )

    base = latency_total(fe)
    best_improvement = 0.0
    for q in range(network.n_paths):
        if aggregate[q] < delta:
            continue
        for p in range(network.n_paths):
            if p == q:
                continue
            trial = fe + delta * (inc[p] - inc[q])
            best_improvement = max(best_improvement, base - latency_total(trial))
    return best_improvement


def optimal_flow(network: Network, eps_rel: float = EPS_NASH_REL) -> EquilibriumResult:
    """Total-latency-minimizing flow.

    Minimizing ``sum f_e l_e(f_e)`` is the homogeneous equilibrium problem for
    the marginal-cost functions ``l_e + f l'_e``, so the potential machinery
    applies directly.  The result carries a transfer certificate: no 1e-6 mass
    transfer between any path pair may reduce total latency by more than 1e-9.
    """
    mc_mech = Mechanism.marginal_cost()
    result = nash_flow_homogeneous(network, mc_mech, 1.0, eps_rel)
    improvement = transfer_certificate(network, result.flow.aggregate)
    diagnostics = dict(result.diagnostics)
    diagnostics["transfer_improvement"] = improvement
    diagnostics["transfer_certified"] = bool(improvement <= 1e-9)
    if improvement > 1e-9:
        raise SolverError(
            f"optimal flow failed its transfer certificate (improvement {improvement})"
        )
    return EquilibriumResult(
        flow=result.flow,
        nash_gap=result.nash_gap,
        total_latency=result.total_latency,
        solver=Solver.POTENTIAL_MIN,
        iterations=result.iterations,
        certified=result.certified,
        eps_nash=result.eps_nash,
        diagnostics=diagnostics,
    )


# --------------------------------------------------------------------------
# Heterogeneous parallel solver
# --------------------------------------------------------------------------

def _boundary_sensitivities(network: Network, flow: FlowProfile) -> dict:
    """Indifference levels between adjacent used paths, latency-ascending.

    For adjacent used paths i, i+1 with strictly descending marginal parts the
    boundary weight s solves ``lat_i + s*marg_i = lat_{i+1} + s*marg_{i+1}``;
    the solved residual is recorded as a self-check.
    """
    decomp = path_cost_decomposition(network, flow)
    used = np.flatnonzero(flow.aggregate > 1e-9 * (1.0 + flow.aggregate.sum()))
    order = used[np.argsort(decomp.latency[used], kind="stable")]
    levels = []
    residuals = []
    prev = 0.0
    for a, b in zip(order[:-1], order[1:]):
        dm = decomp.marginal[a] - decomp.marginal[b]
        if dm > 1e-12:
            s = (decomp.latency[b] - decomp.latency[a]) / dm
            resid = abs(
                (decomp.latency[a] + s * decomp.marginal[a])
                - (decomp.latency[b] + s * decomp.marginal[b])
            )
        else:
            s = prev
            resid = 0.0
        levels.append(float(s))
        residuals.append(float(resid))
        prev = s
    return {
        "path_order": [int(i) for i in order],
        "boundary_sensitivities": levels,
        "boundary_residuals": residuals,
    }


def check_parallel_ordering(
    network: Network, population: Population, flow: FlowProfile
) -> dict:
    """Worst violations of the two orderings heterogeneous parallel equilibria
    satisfy: for classes x, y with s_x < s_y on used paths i, j respectively,
    latency(i) <= latency(j) and marginal_cost(i) >= marginal_cost(j)."""
    decomp = path_cost_decomposition(network, flow)
    support = flow.path_flows > 1e-9 * (1.0 + flow.aggregate.sum())
    worst_lat = 0.0
    worst_mc = 0.0
    sens = population.sensitivities
    for cx in range(population.n_classes):
        for cy in range(population.n_classes):
            if not sens[cx] < sens[cy]:
                continue
            for i in np.flatnonzero(support[cx]):
                for j in np.flatnonzero(support[cy]):
                    worst_lat = max(worst_lat, decomp.latency[i] - decomp.latency[j])
                    worst_mc = max(
                        worst_mc, decomp.marginal_cost[j] - decomp.marginal_cost[i]
                    )
    return {"latency_ascending_violation": worst_lat, "marginal_cost_descending_violation": worst_mc}


def _nested_assignment(
    network: Network, aggregate: np.ndarray, masses: np.ndarray
) -> np.ndarray:
    """Canonical class composition for a given aggregate on a parallel network.

    Paths are ordered by marginal part descending (ties by index); classes,
    ascending in sensitivity, fill that order in contiguous blocks by
    cumulative mass.  Equilibria admit exactly this nesting: the composition
    is pinned by the aggregate, so the solver only iterates the aggregate.
    """
    m = len(masses)
    P = len(aggregate)
    mu = np.array(
        [aggregate[p] * network.path_latencies[p].slope(aggregate[p]) for p in range(P)]
    )
    order = sorted(range(P), key=lambda p: (-mu[p], p))
    X = np.zeros((m, P))
    c = 0
    remaining = float(masses[0]) if m else 0.0
    for p in order:
        cap = float(aggregate[p])
        while cap > 1e-15 and c < m:
            take = min(cap, remaining)
            X[c, p] += take
            cap -= take
            remaining -= take
            if remaining <= 1e-15:
                c += 1
                remaining = float(masses[c]) if c < m else 0.0
    # absorb float dust so class masses hold exactly
    for c in range(m):
        drift = float(masses[c] - X[c].sum())
        if drift != 0.0:
            X[c, int(np.argmax(X[c]))] += drift
    return np.maximum(X, 0.0)


def _solve_parallel_hetero(
    model: _CostModel, masses: np.ndarray, max_sweeps: int = 400
) -> tuple[np.ndarray, int, list[float]]:
    """Fixed point of exact per-class water-fill responses.

    Each sweep runs ascending-sensitivity class responses (immediate updates)
    and then re-nests the composition canonically for the updated aggregate;
    without the re-nest, nearly-equal sensitivities make the composition
    drift only harmonically."""
    m = len(masses)
    network = model.network
    P = network.n_paths
    PC = model.path_coeffs
    class_coeffs = [[tuple(PC[c, p]) for p in range(P)] for c in range(m)]
    X = np.zeros((m, P))
    for c in range(m):
        X[c], _ = _waterfill(class_coeffs[c], X.sum(axis=0), float(masses[c]))
    X = _nested_assignment(network, X.sum(axis=0), masses)

    total_mass = float(masses.sum())
    best_gap = math.inf
    best_X = X.copy()
    levels = [0.0] * m
    stall = 0
    sweeps = 0
    prev_gap = math.inf
    for sweep in range(1, max_sweeps + 1):
        sweeps = sweep
        X_before = X.copy()
        for c in range(m):
            others = X.sum(axis=0) - X[c]
            x_new, lam = _waterfill(class_coeffs[c], others, float(masses[c]))
            X[c] = x_new
            levels[c] = lam
        X = _nested_assignment(network, X.sum(axis=0), masses)
        max_delta = float(np.abs(X - X_before).max())
        gap, min_cost = model.internal_gap(X)
        if gap < best_gap:
            best_gap = gap
            best_X = X.copy()
        if gap <= 1e-12 * (1.0 + abs(min_cost)) or max_delta <= 1e-13 * (1.0 + total_mass):
            break
        stall = stall + 1 if gap > 0.9 * prev_gap else 0
        if stall >= 5:
            # break response cycles with one damped half-step
            X = 0.5 * (X + X_before)
            stall = 0
        prev_gap = gap
    return best_X, sweeps, levels


def nash_flow_parallel_heterogeneous(
    network: Network,
    mechanism: Mechanism,
    population: Population,
    eps_rel: float = EPS_NASH_REL,
) -> EquilibriumResult:
    """Heterogeneous Nash flow on a parallel network.

    Classes are kept sorted by sensitivity; at the fixed point the used paths
    order with latency ascending and marginal cost descending in class
    sensitivity, and per-boundary indifference levels are reported in the
    diagnostics together with the ordering check.
    """
    if not network.is_parallel:
        raise InputError(
            "network is not parallel; use nash_flow_general for general topologies"
        )
    if mechanism.variant is Variant.FIXED:
        raise InputError(
            "fixed tolls are not supported by the parallel solver; use nash_flow_general"
        )
    check_population_matches(network, population)
    model = _CostModel(network, mechanism, population)
    masses = np.array(population.masses)
    X, sweeps, levels = _solve_parallel_hetero(model, masses)
    diagnostics = _boundary_sensitivities(network, FlowProfile.build(network, X))
    diagnostics["class_cost_levels"] = [float(v) for v in levels]
    diagnostics["ordering"] = check_parallel_ordering(
        network, population, FlowProfile.build(network, X)
    )
    result = _make_result(
        network, mechanism, population, X, Solver.PARALLEL_ORDERED, sweeps, eps_rel,
        diagnostics,
    )
    if not result.certified:
        # rare fallback: hand the instance to the general solver, keep the better
        general = nash_flow_general(network, mechanism, population, eps_rel=eps_rel)
        if general.nash_gap < result.nash_gap:
            return general
    return result


# --------------------------------------------------------------------------
# General heterogeneous solver (damped best response, multi-restart)
# --------------------------------------------------------------------------

def _exact_class_sweep(model: _CostModel, X: np.ndarray, max_transfers: int = 64) -> None:
    """One Gauss-Seidel pass of exact per-class equalization.

    For each class in turn (others frozen), mass moves from its costliest used
    path onto its cheapest path, with the transfer size found by bisection on
    the cost difference, which is monotone in the transfer.  This removes the
    slow symmetric oscillation the damped steps leave behind.
    """
    m, P = X.shape
    network = model.network
    inc = network.incidence
    for c in range(m):
        for _ in range(max_transfers):
            pc = model.path_costs(X)[c]
            used = X[c] > SUPPORT_TOL
            if not used.any():
                break
            worst = int(np.flatnonzero(used)[np.argmax(pc[used])])
            best = int(np.argmin(pc))
            if best == worst or pc[worst] - pc[best] <= 1e-15 * (1.0 + abs(pc[best])):
                break
            gain = inc[best] - inc[worst]
            base_fe = X.sum(axis=0) @ inc
            edges_b = network.paths[best]
            edges_w = network.paths[worst]
            polys = model.edge_polys[c]

            def diff(delta: float) -> float:
                fe = base_fe + delta * gain
                cb = sum(polys[e](fe[e]) for e in edges_b)
                cw = sum(polys[e](fe[e]) for e in edges_w)
                return cb - cw

            hi = float(X[c, worst])
            if diff(hi) <= 0.0:
                delta = hi
            else:
                lo_d, hi_d = 0.0, hi
                for _ in range(80):
                    mid = 0.5 * (lo_d + hi_d)
                    if diff(mid) <= 0.0:
                        lo_d = mid
                    else:
                        hi_d = mid
                    if hi_d - lo_d <= 1e-16 * (1.0 + hi):
                        break
                delta = 0.5 * (lo_d + hi_d)
            X[c, best] += delta
            X[c, worst] = max(X[c, worst] - delta, 0.0)


def _gap_of(model: _CostModel, X: np.ndarray) -> float:
    pc = model.path_costs(X)
    mins = pc.min(axis=1)
    excess = np.where(X > SUPPORT_TOL, pc - mins[:, None], 0.0)
    return float(max(excess.max(), 0.0))


def _extrapolate_drift(
    model: _CostModel, X: np.ndarray, delta: np.ndarray, prev_delta: np.ndarray
) -> np.ndarray:
    """Jump along a persistent linear drift of the sweep iterates.

    Near-indifferent classes exchange mass between paths at a slowly decaying
    rate; consecutive sweep deltas are then nearly parallel with ratio close
    to one.  Extrapolating the geometric tail (capped so no entry crosses
    zero; deltas preserve class masses, so row sums survive) collapses that
    mode in one step.  The jump is kept only when it improves the gap."""
    n1 = float(np.linalg.norm(prev_delta))
    n2 = float(np.linalg.norm(delta))
    if n1 <= 0.0 or n2 <= 0.0:
        return X
    cosine = float(np.sum(delta * prev_delta)) / (n1 * n2)
    ratio = n2 / n1
    if cosine < 0.995 or not 0.5 < ratio < 1.0005:
        return X
    t = ratio / (1.0 - ratio) if ratio < 1.0 else 1e9
    negative = delta < -1e-300
    if negative.any():
        t = min(t, float((X[negative] / -delta[negative]).min()))
    if t <= 0.0:
        return X
    candidate = np.maximum(X + t * delta, 0.0)
    return candidate if _gap_of(model, candidate) < _gap_of(model, X) else X


def _best_response_run(
    model: _CostModel,
    init: np.ndarray,
    eps_rel: float,
    max_rounds: int,
    step0: float,
    sweep_every: int = 20,
    stagnation_rounds: int = 1500,
    stalled_sweep_limit: int = 8,
) -> tuple[np.ndarray, float, int]:
    X = init.copy()
    m, P = X.shape
    best_gap = math.inf
    best_X = X.copy()
    rounds = 0
    last_improvement = 0
    sweep_anchor: np.ndarray | None = None
    sweep_delta: np.ndarray | None = None
    gap_at_last_sweep = math.inf
    stalled_sweeps = 0
    averaging = False
    for k in range(max_rounds):
        rounds = k + 1
        pc = model.path_costs(X)
        mins = pc.min(axis=1)
        support = X > SUPPORT_TOL
        excess = np.where(support, pc - mins[:, None], 0.0)
        gap = float(max(excess.max(), 0.0))
        if gap < 0.99 * best_gap:
            last_improvement = k
        if gap < best_gap:
            best_gap = gap
            best_X = X.copy()
        eps_abs = eps_rel * (1.0 + float(mins.min()))
        if gap <= 0.5 * eps_abs:
            break
        if k - last_improvement > stagnation_rounds:
            break  # this restart has flatlined; the caller keeps the best flow
        if averaging or (k + 1) % sweep_every == 0:
            # damped steps alone decay symmetric two-cycles only harmonically;
            # an exact equalization pass collapses them.  When even those
            # passes stop making progress the classes are chasing each other:
            # switch permanently to averaged (half-step) passes every round,
            # without the damped steps in between, which converge where the
            # plain alternation cycles.
            if gap > 0.95 * gap_at_last_sweep:
                stalled_sweeps += 1
                if stalled_sweeps >= stalled_sweep_limit:
                    averaging = True
            else:
                stalled_sweeps = 0
            gap_at_last_sweep = gap
            X_swept = X.copy()
            _exact_class_sweep(model, X_swept)
            X = 0.5 * (X + X_swept) if averaging else X_swept
            if sweep_anchor is not None:
                new_delta = X - sweep_anchor
                if sweep_delta is not None:
                    X = _extrapolate_drift(model, X, new_delta, sweep_delta)
                sweep_delta = new_delta
            sweep_anchor = X.copy()
            continue
        eta = step0 / (1.0 + k / 1000.0)
        for c in range(m):
            tie = 1e-12 * (1.0 + abs(mins[c]))
            above = (pc[c] > mins[c] + tie) & (X[c] > 0.0)
            if not above.any():
                continue
            target = int(np.argmin(pc[c]))
            moved = eta * X[c][above]
            X[c][above] -= moved
            X[c][target] += float(moved.sum())
    return best_X, best_gap, rounds


def _restart_inits(
    masses: np.ndarray, n_paths: int, restarts: int, seed: int
) -> list[np.ndarray]:
    m = len(masses)
    inits: list[np.ndarray] = []
    for combo in itertools.product(range(n_paths), repeat=m):
        X = np.zeros((m, n_paths))
        for c, p in enumerate(combo):
            X[c, p] = masses[c]
        inits.append(X)
        if len(inits) >= max(restarts - 1, 1):
            break
    inits.append(np.outer(masses, np.full(n_paths, 1.0 / n_paths)))
    rng = np.random.default_rng(seed)
    while len(inits) < restarts:
        shares = rng.dirichlet(np.ones(n_paths), size=m)
        inits.append(shares * masses[:, None])
    return inits[:restarts]


def nash_flow_general(
    network: Network,
    mechanism: Mechanism,
    population: Population,
    eps_rel: float = EPS_NASH_REL,
    restarts: int = 16,
    seed: int = 0,
    max_rounds: int = MAX_BR_ROUNDS,
    step0: float = 0.2,
) -> EquilibriumResult:
    """Damped best-response on per-class path flows, multi-restart.

    Each round every class shifts ``eta_k = step0 / (1 + k/1000)`` of the mass
    on its above-minimum-cost paths onto its current minimum-cost path (ties
    broken by lowest path index).  Heterogeneous general networks may carry
    several equilibria with different total latencies, so the worst (largest
    total latency) certified equilibrium across restarts is reported and all
    restart outcomes are kept in the diagnostics; with no certified restart
    the smallest-gap flow is returned uncertified.
    """
    check_population_matches(network, population)
    model = _CostModel(network, mechanism, population)
    masses = np.array(population.masses)
    from .core import total_latency

    candidates = []
    total_rounds = 0
    for init in _restart_inits(masses, network.n_paths, restarts, seed):
        X, _, rounds = _best_response_run(model, init, eps_rel, max_rounds, step0)
        total_rounds += rounds
        flow = FlowProfile.build(network, X)
        gap, eps_abs, ok = certify(network, mechanism, population, flow, eps_rel)
        candidates.append(
            {
                "flow": X,
                "gap": gap,
                "certified": ok,
                "latency": total_latency(network, flow),
                "rounds": rounds,
            }
        )

    certified = [c for c in candidates if c["certified"]]
    if certified:
        # deterministic merge: worst latency first, then lexicographic flow
        certified.sort(key=lambda c: (-c["latency"], tuple(np.round(c["flow"].ravel(), 12))))
        chosen = certified[0]
    else:
        chosen = min(candidates, key=lambda c: c["gap"])
    diagnostics = {
        "restarts": [
            {
                "latency": c["latency"],
                "gap": c["gap"],
                "certified": c["certified"],
                "rounds": c["rounds"],
            }
            for c in candidates
        ]
    }
    return _make_result(
        network, mechanism, population, chosen["flow"],
        Solver.BEST_RESPONSE, total_rounds, eps_rel, diagnostics,
    )


# --------------------------------------------------------------------------
# Dispatch
# --------------------------------------------------------------------------

def nash_flow(
    network: Network,
    mechanism: Mechanism,
    population: Population,
    eps_rel: float = EPS_NASH_REL,
    restarts: int = 16,
    seed: int = 0,
) -> EquilibriumResult:
    """Nash flow via the most specific applicable solver.

    Populations whose classes all share one effective cost function (a single
    class, zero tolls, or any coefficient mechanism with k2 = 0) reduce to the
    homogeneous potential problem; heterogeneous parallel instances use the
    ordered water-fill solver; everything else goes through multi-restart
    best response.
    """
    check_population_matches(network, population)
    if mechanism.variant is not Variant.FIXED:
        betas = class_betas(mechanism, population.sensitivities)
        if len(set(betas)) == 1:
            model = _CostModel(network, mechanism, population)
            agg, iters = _solve_homogeneous_aggregate(
                network, model.edge_polys[0], network.demand, 0.05 * eps_rel
            )
            X = FlowProfile.from_aggregate(network, population.masses, agg).path_flows
            return _make_result(
                network, mechanism, population, X, Solver.POTENTIAL_MIN, iters, eps_rel
            )
        if network.is_parallel:
            return nash_flow_parallel_heterogeneous(network, mechanism, population, eps_rel)
    elif population.is_homogeneous:
        model = _CostModel(network, mechanism, population)
        agg, iters = _solve_homogeneous_aggregate(
            network, model.edge_polys[0], network.demand, 0.05 * eps_rel
        )
        return _make_result(
            network, mechanism, population, agg.reshape(1, -1),
            Solver.POTENTIAL_MIN, iters, eps_rel,
        )
    return nash_flow_general(
        network, mechanism, population, eps_rel=eps_rel, restarts=restarts, seed=seed
    )


# --------------------------------------------------------------------------
# Grid oracle
# --------------------------------------------------------------------------

def _compositions(n: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``n``."""
    if parts == 1:
        return np.array([[n]])
    rows = []
    for first in range(n + 1):
        rest = _compositions(n - first, parts - 1)
        rows.append(np.hstack([np.full((rest.shape[0], 1), first), rest]))
    return np.vstack(rows)


def oracle_nash_flows(
    network: Network,
    mechanism: Mechanism,
    population: Population,
    grid_resolution: float,
    eps_rel: float = EPS_NASH_REL,
    max_points: int = 2_000_000,
    max_results: int = 20_000,
) -> list[EquilibriumResult]:
    """Exhaustive per-class path-flow grids; returns all near-equilibrium points.

    A grid point qualifies when its gap is at most ``2 * L * resolution`` where
    ``L`` bounds the cost slope over the feasible range, so every true
    equilibrium has a qualifying neighbor.  Instances are limited to at most
    4 paths and 3 classes.
    """
    if network.n_paths > 4:
        raise InputError(f"oracle handles at most 4 paths, got {network.n_paths}")
    if population.n_classes > 3:
        raise InputError(f"oracle handles at most 3 classes, got {population.n_classes}")
    if not grid_resolution > 0.0:
        raise InputError("grid resolution must be positive")
    check_population_matches(network, population)

    model = _CostModel(network, mechanism, population)
    P = network.n_paths
    m = population.n_classes
    # size check before materializing anything: per class C(n+P-1, P-1) points
    total = 1
    steps = []
    for mass in population.masses:
        n = max(1, round(mass / grid_resolution))
        steps.append(n)
        total *= math.comb(n + P - 1, P - 1)
    if total > max_points:
        raise InputError(
            f"grid has {total} points, above the {max_points} oracle limit; "
            "coarsen the resolution"
        )
    grids = [
        _compositions(n, P) * (mass / n)
        for n, mass in zip(steps, population.masses)
    ]
    sizes = [g.shape[0] for g in grids]

    # slope bound: steepest per-class path cost derivative over [0, r]
    r = network.demand
    lip = 0.0
    for c in range(m):
        for edge_ids in network.paths:
            lip = max(lip, sum(model.edge_polys[c][e].slope(r) for e in edge_ids))
    threshold = 2.0 * lip * grid_resolution

    inc = np.asarray(network.incidence)
    C = model.edge_coeffs  # (m, E, K)
    keep_flows = []
    keep_gaps = []
    chunk = 65536
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        flows = np.empty((idx.size, m, P))
        rem = idx.copy()
        for c in range(m - 1, -1, -1):
            rem, sel = np.divmod(rem, sizes[c])
            flows[:, c, :] = grids[c][sel]
        agg = flows.sum(axis=1)
        fe = agg @ inc
        acc = np.broadcast_to(C[None, :, :, -1], (idx.size,) + C.shape[:2]).copy()
        for k in range(C.shape[2] - 2, -1, -1):
            acc = acc * fe[:, None, :] + C[None, :, :, k]
        pc = acc @ inc.T  # (B, m, P)
        mins = pc.min(axis=2)
        support = flows > SUPPORT_TOL
        excess = np.where(support, pc - mins[:, :, None], 0.0)
        gaps = np.maximum(excess.max(axis=(1, 2)), 0.0)
        sel = gaps <= threshold
        keep_flows.append(flows[sel])
        keep_gaps.append(gaps[sel])

    flows = np.vstack(keep_flows) if keep_flows else np.empty((0, m, P))
    gaps = np.concatenate(keep_gaps) if keep_gaps else np.empty(0)
    order = np.argsort(gaps, kind="stable")[:max_results]

    from .core import total_latency

    results = []
    for i in order:
        flow = FlowProfile.build(network, flows[i])
        gap = float(gaps[i])
        eps_abs = eps_rel * (1.0 + _min_class_cost(network, mechanism, population, flow))
        results.append(
            EquilibriumResult(
                flow=flow,
                nash_gap=gap,
                total_latency=total_latency(network, flow),
                solver=Solver.ORACLE,
                iterations=total,
                certified=gap <= eps_abs,
                eps_nash=eps_abs,
                diagnostics={"threshold": threshold, "grid_resolution": grid_resolution},
            )
        )
    return results
