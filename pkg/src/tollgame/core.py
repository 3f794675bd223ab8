"""Core domain types for single-commodity nonatomic routing games.

A routing problem is a directed network with one source, one sink, a positive
traffic demand, and a polynomial latency function on every edge.  Traffic is
split across the enumerated set of simple source-sink paths; user populations
are finite lists of (mass, toll-sensitivity) classes.  Everything here is an
immutable value object; solvers and metrics live in sibling modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

INF = math.inf

# Default comparison tolerance, scaled by (1 + magnitude).
ABS_TOL = 1e-9
# Path flows below this count as unused when computing equilibrium gaps.
SUPPORT_TOL = 1e-12
# Guard against accidental combinatorial blowups; every built-in network is tiny.
MAX_PATHS = 256


class InputError(ValueError):
    """Malformed or out-of-contract input (bad file, unknown path id, ...)."""


class DomainError(ValueError):
    """Arguments outside a formula's mathematical domain."""


class SolverError(RuntimeError):
    """A numerical routine failed to converge or to validate its result."""


class UncertifiedError(RuntimeError):
    """An operation refused to proceed on an uncertified equilibrium."""


def close(a: float, b: float, tol: float = ABS_TOL) -> bool:
    """Compare within ``tol`` scaled by (1 + max magnitude)."""
    return abs(a - b) <= tol * (1.0 + max(abs(a), abs(b)))


def inv_or_zero(x: float) -> float:
    """1/x with the +inf sentinel mapped to 0 (used for sensitivity bounds)."""
    return 0.0 if math.isinf(x) else 1.0 / x


@dataclass(frozen=True)
class PolyLatency:
    """Polynomial latency ``l(f) = a_0 + a_1 f + ... + a_d f^d``.

    Coefficients are required to be nonnegative, which makes the function
    nondecreasing, convex, and continuously differentiable on [0, inf).
    Trailing zero coefficients are stripped so the stored degree is canonical.
    """

    coeffs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.coeffs:
            raise InputError("latency polynomial needs at least one coefficient")
        cs = tuple(float(c) for c in self.coeffs)
        for k, c in enumerate(cs):
            if not math.isfinite(c):
                raise InputError(f"latency coefficient a_{k} must be finite")
            if c < 0.0:
                raise InputError(f"latency coefficient a_{k} = {c} must be >= 0")
        while len(cs) > 1 and cs[-1] == 0.0:
            cs = cs[:-1]
        object.__setattr__(self, "coeffs", cs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_constant(self) -> bool:
        return self.degree == 0

    def __call__(self, f):
        """Evaluate at a float or ndarray of flows (Horner)."""
        acc = self.coeffs[-1]
        if isinstance(f, np.ndarray):
            acc = np.full_like(f, acc, dtype=float)
        for c in reversed(self.coeffs[:-1]):
            acc = acc * f + c
        return acc

    def slope(self, f):
        """Derivative l'(f)."""
        if self.is_constant:
            return 0.0 * f if isinstance(f, np.ndarray) else 0.0
        dcs = [k * c for k, c in enumerate(self.coeffs)][1:]
        acc = dcs[-1]
        if isinstance(f, np.ndarray):
            acc = np.full_like(f, acc, dtype=float)
        for c in reversed(dcs[:-1]):
            acc = acc * f + c
        return acc

    def marginal(self, f):
        """Externality term f * l'(f)."""
        return f * self.slope(f)

    def with_beta(self, beta: float) -> "PolyLatency":
        """Effective cost l(f) + beta * f * l'(f); monomial a_k f^k maps to (1+beta k) a_k f^k."""
        if beta < 0.0:
            raise DomainError(f"effective sensitivity weight must be >= 0, got {beta}")
        return PolyLatency(tuple((1.0 + beta * k) * c for k, c in enumerate(self.coeffs)))

    def plus_const(self, c: float) -> "PolyLatency":
        if c < 0.0:
            raise InputError(f"constant cost offset must be >= 0, got {c}")
        return PolyLatency((self.coeffs[0] + c,) + self.coeffs[1:])

    def add(self, other: "PolyLatency") -> "PolyLatency":
        n = max(len(self.coeffs), len(other.coeffs))
        a = list(self.coeffs) + [0.0] * (n - len(self.coeffs))
        b = list(other.coeffs) + [0.0] * (n - len(other.coeffs))
        return PolyLatency(tuple(x + y for x, y in zip(a, b)))


# --- toll schedules -------------------------------------------------------

@dataclass(frozen=True)
class GmcRule:
    """Toll = latency_weight * l(f) + marginal_weight * f * l'(f)."""

    latency_weight: float
    marginal_weight: float


@dataclass(frozen=True)
class PolyRule:
    """Toll given by an explicit polynomial in the edge flow (may be negative)."""

    coeffs: tuple[float, ...]


@dataclass(frozen=True)
class ConstRule:
    """Flow-independent toll."""

    value: float


TollRule = Union[GmcRule, PolyRule, ConstRule]


@dataclass(frozen=True)
class TollSchedule:
    """Per-edge toll functions, bound to the latencies they were derived from."""

    rules: tuple[TollRule, ...]
    latencies: tuple[PolyLatency, ...]

    def __post_init__(self) -> None:
        if len(self.rules) != len(self.latencies):
            raise InputError("one toll rule per edge is required")

    def tau(self, edge_id: int, f):
        """Evaluate the toll on edge ``edge_id`` at flow ``f``."""
        if not 0 <= edge_id < len(self.rules):
            raise InputError(f"unknown edge id {edge_id}")
        rule = self.rules[edge_id]
        if isinstance(rule, ConstRule):
            return rule.value + 0.0 * f if isinstance(f, np.ndarray) else rule.value
        if isinstance(rule, PolyRule):
            acc = rule.coeffs[-1]
            if isinstance(f, np.ndarray):
                acc = np.full_like(f, acc, dtype=float)
            for c in reversed(rule.coeffs[:-1]):
                acc = acc * f + c
            return acc
        lat = self.latencies[edge_id]
        return rule.latency_weight * lat(f) + rule.marginal_weight * lat.marginal(f)


# --- network --------------------------------------------------------------

@dataclass(frozen=True)
class Edge:
    tail: str
    head: str
    latency: PolyLatency


@dataclass(frozen=True)
class Network:
    """Directed network with all simple source-sink paths enumerated.

    ``paths`` holds edge-id tuples in deterministic (depth-first, edge-index
    lexicographic) order.  ``is_parallel`` is true when all paths are pairwise
    edge-disjoint.
    """

    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    source: str
    sink: str
    demand: float
    paths: tuple[tuple[int, ...], ...]
    is_parallel: bool

    @classmethod
    def build(
        cls,
        vertices: Sequence[str],
        edges: Sequence[Edge | tuple],
        source: str,
        sink: str,
        demand: float,
    ) -> "Network":
        verts = tuple(str(v) for v in vertices)
        if len(set(verts)) != len(verts):
            raise InputError("duplicate vertex ids")
        built_edges = []
        for i, e in enumerate(edges):
            if not isinstance(e, Edge):
                tail, head, lat = e
                if not isinstance(lat, PolyLatency):
                    lat = PolyLatency(tuple(lat))
                e = Edge(str(tail), str(head), lat)
            if e.tail not in verts:
                raise InputError(f"edge {i}: unknown tail vertex {e.tail!r}")
            if e.head not in verts:
                raise InputError(f"edge {i}: unknown head vertex {e.head!r}")
            built_edges.append(e)
        if source not in verts:
            raise InputError(f"unknown source vertex {source!r}")
        if sink not in verts:
            raise InputError(f"unknown sink vertex {sink!r}")
        if source == sink:
            raise InputError("source and sink must differ")
        if not (demand > 0.0) or not math.isfinite(demand):
            raise InputError(f"demand must be a positive finite real, got {demand}")

        paths = _enumerate_paths(verts, built_edges, source, sink)
        if not paths:
            raise InputError("network has no source-sink path")
        if len(paths) > MAX_PATHS:
            raise InputError(f"network has {len(paths)} paths; limit is {MAX_PATHS}")

        parallel = True
        for i in range(len(paths)):
            si = set(paths[i])
            for j in range(i + 1, len(paths)):
                if si & set(paths[j]):
                    parallel = False
                    break
            if not parallel:
                break

        return cls(
            vertices=verts,
            edges=tuple(built_edges),
            source=str(source),
            sink=str(sink),
            demand=float(demand),
            paths=tuple(tuple(p) for p in paths),
            is_parallel=parallel,
        )

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @cached_property
    def incidence(self) -> np.ndarray:
        """(n_paths, n_edges) 0/1 matrix; row p marks the edges of path p."""
        inc = np.zeros((self.n_paths, self.n_edges))
        for p, edge_ids in enumerate(self.paths):
            inc[p, list(edge_ids)] = 1.0
        inc.setflags(write=False)
        return inc

    @cached_property
    def path_latencies(self) -> tuple[PolyLatency, ...]:
        """Per-path latency polynomial; only meaningful on parallel networks,
        where every edge of a path carries exactly the path flow."""
        out = []
        for edge_ids in self.paths:
            poly = PolyLatency((0.0,))
            for e in edge_ids:
                poly = poly.add(self.edges[e].latency)
            out.append(poly)
        return tuple(out)

    def check_path_id(self, path_id: int) -> int:
        if not isinstance(path_id, (int, np.integer)) or not 0 <= path_id < self.n_paths:
            raise InputError(f"unknown path id {path_id!r}")
        return int(path_id)


def _enumerate_paths(
    vertices: tuple[str, ...], edges: list[Edge], source: str, sink: str
) -> list[tuple[int, ...]]:
    """All simple source-sink paths as edge-id tuples, multigraph-aware."""
    out_edges: dict[str, list[int]] = {v: [] for v in vertices}
    for i, e in enumerate(edges):
        if e.tail != e.head:  # self-loops can never sit on a simple path
            out_edges[e.tail].append(i)

    paths: list[tuple[int, ...]] = []
    stack: list[int] = []
    visited = {source}

    def dfs(v: str) -> None:
        if v == sink:
            paths.append(tuple(stack))
            return
        for eid in out_edges[v]:
            head = edges[eid].head
            if head in visited:
                continue
            visited.add(head)
            stack.append(eid)
            dfs(head)
            stack.pop()
            visited.remove(head)

    dfs(source)
    return paths


# --- population -----------------------------------------------------------

@dataclass(frozen=True)
class SensitivityClass:
    mass: float
    sensitivity: float  # may be math.inf (the unbounded-sensitivity sentinel)


@dataclass(frozen=True)
class Population:
    """Finite list of sensitivity classes, sorted ascending, plus bounds [S_L, S_U]."""

    classes: tuple[SensitivityClass, ...]
    bounds: tuple[float, float]

    @classmethod
    def build(
        cls,
        classes: Iterable[tuple[float, float] | SensitivityClass],
        bounds: tuple[float, float] | None = None,
        allow_zero_sensitivity: bool = False,
    ) -> "Population":
        """Normalize, sort and validate a class list.

        Zero-mass classes are dropped and classes with identical sensitivity
        are merged.  A positive-mass class at sensitivity exactly 0 is
        rejected unless ``allow_zero_sensitivity`` is set (used only for
        untolled-baseline style populations).
        """
        norm: list[SensitivityClass] = []
        for c in classes:
            if not isinstance(c, SensitivityClass):
                c = SensitivityClass(float(c[0]), float(c[1]))
            if c.mass < 0.0 or not math.isfinite(c.mass):
                raise InputError(f"class mass must be a finite nonnegative real, got {c.mass}")
            if c.sensitivity < 0.0 or math.isnan(c.sensitivity):
                raise InputError(f"sensitivity must be >= 0 or inf, got {c.sensitivity}")
            if c.mass == 0.0:
                continue
            if c.sensitivity == 0.0 and not allow_zero_sensitivity:
                raise InputError(
                    "a positive-mass class at sensitivity exactly 0 is only allowed "
                    "for explicit untolled baselines (allow_zero_sensitivity=True)"
                )
            norm.append(c)
        if not norm:
            raise InputError("population needs at least one positive-mass class")

        norm.sort(key=lambda c: c.sensitivity)
        merged: list[SensitivityClass] = []
        for c in norm:
            if merged and merged[-1].sensitivity == c.sensitivity:
                merged[-1] = SensitivityClass(merged[-1].mass + c.mass, c.sensitivity)
            else:
                merged.append(c)

        if bounds is None:
            bounds = (merged[0].sensitivity, merged[-1].sensitivity)
        lo, hi = float(bounds[0]), float(bounds[1])
        if lo < 0.0 or math.isnan(lo) or math.isnan(hi) or hi < lo:
            raise InputError(f"invalid sensitivity bounds {bounds}")
        for c in merged:
            if not (lo <= c.sensitivity <= hi):
                raise InputError(
                    f"class sensitivity {c.sensitivity} outside bounds [{lo}, {hi}]"
                )
        return cls(classes=tuple(merged), bounds=(lo, hi))

    @classmethod
    def homogeneous(
        cls, mass: float, sensitivity: float, bounds: tuple[float, float] | None = None
    ) -> "Population":
        return cls.build([(mass, sensitivity)], bounds,
                         allow_zero_sensitivity=(sensitivity == 0.0))

    @classmethod
    def untolled_baseline(cls, mass: float) -> "Population":
        """The all-insensitive population s0: one class of the full mass at 0."""
        return cls.build([(mass, 0.0)], bounds=(0.0, 0.0), allow_zero_sensitivity=True)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def total_mass(self) -> float:
        return float(sum(c.mass for c in self.classes))

    @property
    def is_homogeneous(self) -> bool:
        return len(self.classes) == 1

    @property
    def masses(self) -> tuple[float, ...]:
        return tuple(c.mass for c in self.classes)

    @property
    def sensitivities(self) -> tuple[float, ...]:
        return tuple(c.sensitivity for c in self.classes)


def check_population_matches(network: Network, population: Population) -> None:
    """Total class mass must equal the network demand."""
    if not close(population.total_mass, network.demand):
        raise InputError(
            f"population mass {population.total_mass} != network demand {network.demand}"
        )


# --- flows ----------------------------------------------------------------

@dataclass(frozen=True)
class FlowProfile:
    """Per-class path flows plus derived edge flows.

    ``path_flows`` has shape (n_classes, n_paths); ``edge_flows`` is the
    aggregate per-edge total f_e = sum over paths through e.
    """

    path_flows: np.ndarray
    edge_flows: np.ndarray

    @classmethod
    def build(cls, network: Network, path_flows) -> "FlowProfile":
        pf = np.asarray(path_flows, dtype=float)
        if pf.ndim == 1:
            pf = pf.reshape(1, -1)
        if pf.ndim != 2 or pf.shape[1] != network.n_paths:
            raise InputError(
                f"path-flow matrix must have {network.n_paths} columns, got shape {pf.shape}"
            )
        if np.any(pf < -1e-12) or not np.all(np.isfinite(pf)):
            raise InputError("path flows must be finite and nonnegative")
        pf = np.maximum(pf, 0.0)
        ef = pf.sum(axis=0) @ network.incidence
        pf.setflags(write=False)
        ef.setflags(write=False)
        return cls(path_flows=pf, edge_flows=ef)

    @classmethod
    def from_aggregate(
        cls, network: Network, masses: Sequence[float], aggregate
    ) -> "FlowProfile":
        """Split an aggregate path flow across classes proportionally to mass."""
        agg = np.asarray(aggregate, dtype=float)
        total = float(sum(masses))
        shares = np.array([m / total for m in masses])
        return cls.build(network, np.outer(shares, agg))

    @property
    def n_classes(self) -> int:
        return int(self.path_flows.shape[0])

    @property
    def aggregate(self) -> np.ndarray:
        return self.path_flows.sum(axis=0)

    @property
    def class_masses(self) -> np.ndarray:
        return self.path_flows.sum(axis=1)


def check_flow_feasible(
    network: Network, population: Population, flow: FlowProfile, tol: float = 1e-7
) -> None:
    if flow.path_flows.shape[0] != population.n_classes:
        raise InputError(
            f"flow has {flow.path_flows.shape[0]} class rows, population has "
            f"{population.n_classes} classes"
        )
    for c, mass in enumerate(population.masses):
        got = float(flow.path_flows[c].sum())
        if not close(got, mass, tol):
            raise InputError(f"class {c} flow mass {got} != class mass {mass}")


# --- elementary evaluations -------------------------------------------------

def path_latency(network: Network, flow: FlowProfile, path_id: int) -> float:
    """Latency along one path: sum of edge latencies at the current edge flows."""
    p = network.check_path_id(path_id)
    return float(
        sum(network.edges[e].latency(flow.edge_flows[e]) for e in network.paths[p])
    )


def total_latency(network: Network, flow: FlowProfile) -> float:
    """Aggregate delay sum_e f_e * l_e(f_e).

    The path-form sum_p f_p * l_p(f) is computed as well and the two are
    required to agree to 1e-9 relative as an internal consistency check.
    """
    fe = flow.edge_flows
    edge_form = float(
        sum(fe[e] * network.edges[e].latency(fe[e]) for e in range(network.n_edges))
    )
    agg = flow.aggregate
    path_form = float(
        sum(agg[p] * path_latency(network, flow, p) for p in range(network.n_paths))
    )
    if not close(edge_form, path_form, 1e-9):
        raise SolverError(
            f"total latency self-check failed: edge form {edge_form} vs path form {path_form}"
        )
    return edge_form


def user_cost(
    network: Network,
    tolls: TollSchedule,
    sensitivity: float,
    flow: FlowProfile,
    path_id: int,
) -> float:
    """Experienced cost on a path: latency plus sensitivity-weighted toll."""
    if math.isinf(sensitivity):
        raise InputError(
            "user_cost requires a finite sensitivity; the +inf sentinel is only "
            "valid as a population bound"
        )
    if sensitivity < 0.0:
        raise InputError(f"sensitivity must be >= 0, got {sensitivity}")
    p = network.check_path_id(path_id)
    total = 0.0
    for e in network.paths[p]:
        fe = flow.edge_flows[e]
        total += network.edges[e].latency(fe) + sensitivity * tolls.tau(e, fe)
    return float(total)
