"""Built-in networks, populations and randomized corpora.

Each builder returns a ``Scenario``: a network/population/mechanism triple
plus the expected quantities reproduced by the acceptance suite.  Expected
values carry a provenance label: PAPER for published values, TRIVIAL for
values forced by symmetry or degeneracy, DERIVED for values produced by an
independent oracle (grid search, finite differences, closed-form algebra).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Edge, InputError, Network, PolyLatency, Population
from .mechanisms import Mechanism, effective_sensitivity_beta

CORPUS_S_LOWER = 0.05
CORPUS_S_UPPER = 2.0


@dataclass(frozen=True)
class Expected:
    value: object
    provenance: str  # "PAPER" | "TRIVIAL" | "DERIVED"
    note: str = ""

    def __post_init__(self) -> None:
        if self.provenance not in ("PAPER", "TRIVIAL", "DERIVED"):
            raise InputError(f"unknown provenance label {self.provenance!r}")


@dataclass(frozen=True)
class Scenario:
    id: str
    network: Network
    population: Population
    mechanism: Mechanism
    expected: dict[str, Expected] = field(default_factory=dict)


# --------------------------------------------------------------------------
# The Braess-with-bypass topology shared by two builders
# --------------------------------------------------------------------------

def _braess_bypass(
    entry_a: PolyLatency,
    crossover: PolyLatency,
    exit_b: PolyLatency,
    exit_a: PolyLatency,
    entry_b: PolyLatency,
    bypass: PolyLatency,
    demand: float,
) -> Network:
    """Braess diamond in parallel with a direct bypass edge.

    Edges are ordered so the enumerated paths come out as: the zig-zag path
    (entry_a, crossover, exit_b), the upper path (entry_a, exit_a), the lower
    path (entry_b, exit_b), and the bypass.
    """
    return Network.build(
        vertices=["s", "a", "b", "t"],
        edges=[
            Edge("s", "a", entry_a),
            Edge("a", "b", crossover),
            Edge("b", "t", exit_b),
            Edge("a", "t", exit_a),
            Edge("s", "b", entry_b),
            Edge("s", "t", bypass),
        ],
        source="s",
        sink="t",
        demand=demand,
    )


def build_example1(variant: str = "hetero") -> Scenario:
    """Braess network with linear congestible edges plus a constant bypass of 3.

    ``hetero`` pairs one unit of toll-blind traffic (sensitivity exactly 0,
    kept deliberately; any small positive value behaves the same on the
    adjusted construction below) with one unit at sensitivity 1.  ``homog``
    is a single unit-sensitivity population of the same total mass.
    The mechanism is the classical marginal-cost toll.
    """
    network = _braess_bypass(
        entry_a=PolyLatency((0.0, 1.0)),
        crossover=PolyLatency((0.0,)),
        exit_b=PolyLatency((0.0, 1.0)),
        exit_a=PolyLatency((1.0,)),
        entry_b=PolyLatency((1.0,)),
        bypass=PolyLatency((3.0,)),
        demand=2.0,
    )
    if variant == "hetero":
        population = Population.build(
            [(1.0, 0.0), (1.0, 1.0)], bounds=(0.0, 1.0), allow_zero_sensitivity=True
        )
        expected = {
            "untolled_nash_latency": Expected(4.0, "PAPER"),
            "tolled_nash_latency": Expected(5.0, "PAPER"),
            "optimal_latency": Expected(4.0, "PAPER"),
            "pi_instance": Expected(1.25, "PAPER"),
            "poa_instance": Expected(1.25, "PAPER"),
            "tolled_flow": Expected((1.0, 0.0, 0.0, 1.0), "PAPER"),
            "untolled_flow": Expected((0.0, 1.0, 1.0, 0.0), "PAPER"),
        }
        return Scenario(
            id="example1-hetero",
            network=network,
            population=population,
            mechanism=Mechanism.marginal_cost(),
            expected=expected,
        )
    if variant == "homog":
        population = Population.homogeneous(2.0, 1.0, bounds=(0.0, 1.0))
        expected = {
            "tolled_nash_latency": Expected(4.0, "PAPER"),
            "untolled_nash_latency": Expected(4.0, "PAPER"),
            "tolled_flow": Expected((0.0, 1.0, 1.0, 0.0), "PAPER"),
        }
        return Scenario(
            id="example1-homog",
            network=network,
            population=population,
            mechanism=Mechanism.marginal_cost(),
            expected=expected,
        )
    raise InputError(f"unknown variant {variant!r}; expected 'hetero' or 'homog'")


def build_theorem1_construction(kappa1: float, kappa2: float, s_upper: float) -> Scenario:
    """The two-class construction on which any flow-varying coefficient toll
    backfires.

    With gamma2 the effective weight of the most sensitive class, the diamond
    constants are lifted to 1 + gamma2/8 and the bypass to 2 + gamma2; the
    low-sensitivity class is pinned so its effective weight is gamma2/8.
    The tolled Nash flow sends each class to its own side (total latency
    4 + gamma2) while the untolled Nash is strictly better (4 + gamma2/2).
    """
    if not kappa2 > 0.0:
        raise InputError(f"construction requires kappa2 > 0, got {kappa2}")
    gamma2 = effective_sensitivity_beta(s_upper, kappa1, kappa2)
    if gamma2 <= 0.0:
        raise InputError(f"effective weight gamma2 = {gamma2} must be positive")
    s1 = gamma2 / (8.0 * kappa2 - gamma2 * kappa1)
    network = _braess_bypass(
        entry_a=PolyLatency((0.0, 1.0)),
        crossover=PolyLatency((0.0,)),
        exit_b=PolyLatency((0.0, 1.0)),
        exit_a=PolyLatency((1.0 + gamma2 / 8.0,)),
        entry_b=PolyLatency((1.0 + gamma2 / 8.0,)),
        bypass=PolyLatency((2.0 + gamma2,)),
        demand=2.0,
    )
    population = Population.build([(1.0, s1), (1.0, s_upper)], bounds=(0.0, s_upper))
    expected = {
        "gamma2": Expected(gamma2, "DERIVED", "effective weight of the top class"),
        "s1": Expected(s1, "DERIVED", "solves weight(s1) = gamma2/8"),
        "tolled_nash_latency": Expected(4.0 + gamma2, "PAPER"),
        "untolled_nash_latency": Expected(4.0 + gamma2 / 2.0, "PAPER"),
        "tolled_flow": Expected((1.0, 0.0, 0.0, 1.0), "PAPER"),
        "untolled_flow": Expected(
            (gamma2 / 4.0, 1.0 - gamma2 / 8.0, 1.0 - gamma2 / 8.0, 0.0), "PAPER"
        ),
        "pi_instance": Expected((4.0 + gamma2) / (4.0 + gamma2 / 2.0), "PAPER"),
    }
    return Scenario(
        id=_thm1_id(kappa1, kappa2),
        network=network,
        population=population,
        mechanism=Mechanism.generalized(kappa1, kappa2),
        expected=expected,
    )


def _thm1_id(kappa1: float, kappa2: float) -> str:
    def fmt(x: float) -> str:
        return format(x, "g").replace(".", "")

    return f"thm1-k{fmt(kappa1)}-{fmt(kappa2)}"


# --------------------------------------------------------------------------
# Two-link gadgets
# --------------------------------------------------------------------------

def build_pigou(
    alpha: float, degree: int = 1, demand: float = 1.0, constant: float = 1.0
) -> Scenario:
    """Two parallel links: ``alpha * f^degree`` against a constant."""
    if alpha < 0.0 or degree < 0:
        raise InputError("alpha must be >= 0 and degree >= 0")
    coeffs = [0.0] * degree + [alpha]
    network = Network.build(
        vertices=["s", "t"],
        edges=[
            Edge("s", "t", PolyLatency(tuple(coeffs))),
            Edge("s", "t", PolyLatency((constant,))),
        ],
        source="s",
        sink="t",
        demand=demand,
    )
    population = Population.homogeneous(demand, 1.0)
    return Scenario(
        id=f"pigou-d{degree}",
        network=network,
        population=population,
        mechanism=Mechanism.zero(),
        expected={},
    )


def pigou_witness_alpha(d: int, beta: float) -> float:
    """Scale at which the monomial-vs-constant pair attains the overweighted
    worst case: (beta*(1+d))^d / (1+d*beta)^(d+1)."""
    return (beta * (1.0 + d)) ** d / (1.0 + d * beta) ** (d + 1)


def build_figure3(kind: str, **params) -> Scenario:
    """Small gadget networks on which every nontrivial toll family is pinned down.

    kind 'a': a two-edge series path against a single edge whose latency is
    the series sum; Nash and optimal flows coincide at an even split.
    kind 'b': two parallel monomials alpha*f^d and lam*alpha*f^d; Nash and
    optimal flows coincide at the closed-form split.
    kind 'c': monomial alpha*f^d against a constant 1 (defaults to the
    overtolled worst-case scale for a given beta > 1).
    kind 'd': an admissible base latency against the monomial matched to its
    value and marginal at a reference flow; (f1, 1) is Nash and optimal.
    """
    if kind == "a":
        ell1 = params.get("ell1", PolyLatency((0.0, 0.5)))
        ell2 = params.get("ell2", PolyLatency((0.0, 0.5)))
        demand = float(params.get("demand", 2.0))
        ell3 = ell1.add(ell2)
        network = Network.build(
            vertices=["s", "m", "t"],
            edges=[Edge("s", "m", ell1), Edge("m", "t", ell2), Edge("s", "t", ell3)],
            source="s",
            sink="t",
            demand=demand,
        )
        expected = {
            "nash_flow": Expected((demand / 2.0, demand / 2.0), "PAPER"),
            "optimal_flow": Expected((demand / 2.0, demand / 2.0), "PAPER"),
        }
        return Scenario(
            id="fig3a",
            network=network,
            population=Population.homogeneous(demand, 1.0),
            mechanism=Mechanism.zero(),
            expected=expected,
        )

    if kind == "b":
        alpha = float(params.get("alpha", 1.0))
        lam = float(params.get("lam", 2.0))
        d = int(params.get("d", 1))
        if alpha <= 0.0 or lam <= 0.0 or d < 1:
            raise InputError("kind 'b' needs alpha > 0, lam > 0, d >= 1")
        default_demand = alpha ** (1.0 / d) + (lam * alpha) ** (1.0 / d)
        demand = float(params.get("demand", default_demand))
        mono1 = PolyLatency(tuple([0.0] * d + [alpha]))
        mono2 = PolyLatency(tuple([0.0] * d + [lam * alpha]))
        network = Network.build(
            vertices=["s", "t"],
            edges=[Edge("s", "t", mono1), Edge("s", "t", mono2)],
            source="s",
            sink="t",
            demand=demand,
        )
        share = (lam * alpha) ** (1.0 / d) / (alpha ** (1.0 / d) + (lam * alpha) ** (1.0 / d))
        expected = {
            "nash_flow": Expected((share * demand, (1.0 - share) * demand), "PAPER"),
            "optimal_flow": Expected((share * demand, (1.0 - share) * demand), "PAPER"),
        }
        return Scenario(
            id=f"fig3b-a{alpha:g}-l{lam:g}-d{d}",
            network=network,
            population=Population.homogeneous(demand, 1.0),
            mechanism=Mechanism.zero(),
            expected=expected,
        )

    if kind == "c":
        d = int(params.get("d", 1))
        beta = params.get("beta")
        alpha = params.get("alpha")
        demand = float(params.get("demand", 1.0))
        if alpha is None:
            if beta is None:
                raise InputError("kind 'c' needs alpha or beta")
            alpha = pigou_witness_alpha(d, float(beta))
        scenario = build_pigou(float(alpha), degree=d, demand=demand)
        expected = {}
        if beta is not None and float(beta) > 1.0:
            b = float(beta)
            expected["tolled_poa"] = Expected(
                math.exp(-d * math.log(b) + (d + 1) * math.log((1.0 + d * b) / (1.0 + d))),
                "DERIVED",
                "overweighted worst case attained at this scale",
            )
            expected["untolled_flow"] = Expected(
                (demand, 0.0), "PAPER", "optimal and untolled Nash coincide here"
            )
        mech = Mechanism.generalized(0.0, float(beta)) if beta is not None else Mechanism.zero()
        return Scenario(
            id=f"fig3c-d{d}" + (f"-b{float(beta):g}" if beta is not None else ""),
            network=scenario.network,
            population=scenario.population,
            mechanism=mech,
            expected=expected,
        )

    if kind == "d":
        base = params.get("base", "linear")
        f1 = float(params.get("f1", 1.0))
        scale = float(params.get("scale", 1.0))
        if f1 <= 0.0 or scale <= 0.0:
            raise InputError("kind 'd' needs f1 > 0 and scale > 0")
        if base == "linear":
            ell1 = PolyLatency((0.0, scale))
        elif base == "affine":
            ell1 = PolyLatency((scale, scale))
        elif base == "cubic":
            ell1 = PolyLatency((0.0, 0.0, 0.0, scale))
        elif isinstance(base, PolyLatency):
            ell1 = base
        else:
            raise InputError(f"unknown base latency {base!r}")
        intercept = ell1.coeffs[0]
        varying = PolyLatency((0.0,) + ell1.coeffs[1:])
        value = varying(f1)
        marginal = f1 * varying.slope(f1)
        if value <= 0.0:
            raise InputError("base latency must be flow-varying at the reference flow")
        d_match = marginal / value
        if abs(d_match - round(d_match)) > 1e-12 or d_match < 1.0:
            raise InputError(
                f"matched exponent {d_match} is not an integer >= 1; pick a monomial "
                "or affine base"
            )
        d_match = int(round(d_match))
        ell2 = PolyLatency(tuple([intercept] + [0.0] * (d_match - 1) + [value]))
        demand = f1 + 1.0
        network = Network.build(
            vertices=["s", "t"],
            edges=[Edge("s", "t", ell1), Edge("s", "t", ell2)],
            source="s",
            sink="t",
            demand=demand,
        )
        expected = {
            "nash_flow": Expected((f1, 1.0), "PAPER"),
            "optimal_flow": Expected((f1, 1.0), "PAPER"),
        }
        return Scenario(
            id=f"fig3d-{base if isinstance(base, str) else 'custom'}",
            network=network,
            population=Population.homogeneous(demand, 1.0),
            mechanism=Mechanism.zero(),
            expected=expected,
        )

    raise InputError(f"unknown gadget kind {kind!r}; expected one of a, b, c, d")


# --------------------------------------------------------------------------
# Population shift
# --------------------------------------------------------------------------

def shift_population(population: Population, alpha: float) -> Population:
    """Convert a mass ``alpha`` of the most sensitive users into least
    sensitive users, taking mass from the top classes downward."""
    total = population.total_mass
    if alpha < 0.0 or alpha > total * (1.0 + 1e-12):
        raise InputError(f"shift mass {alpha} outside [0, {total}]")
    classes = [list(c) for c in zip(population.masses, population.sensitivities)]
    remaining = min(alpha, total)
    moved = 0.0
    for c in reversed(range(len(classes))):
        if remaining <= 0.0:
            break
        take = min(remaining, classes[c][0])
        classes[c][0] -= take
        remaining -= take
        moved += take
    classes[0][0] += moved
    lowest = population.sensitivities[0]
    return Population.build(
        [(m, s) for m, s in classes],
        bounds=population.bounds,
        allow_zero_sensitivity=(lowest == 0.0),
    )


# --------------------------------------------------------------------------
# Randomized corpora
# --------------------------------------------------------------------------

def random_corpus(
    seed: int,
    count: int,
    max_links: int = 5,
    max_degree: int = 3,
    max_classes: int = 3,
    kind: str = "parallel",
) -> list[Scenario]:
    """Deterministic-by-seed instance corpus for property suites.

    Parallel instances have 2..max_links single-edge paths with polynomial
    latencies (coefficients in [0, 2], degree <= max_degree, at least one
    flow-varying link so ties between constant links cannot dominate);
    general instances randomize the Braess-with-bypass template.  Demands lie
    in [0.5, 3]; populations have up to max_classes classes with sensitivities
    in [0.05, 2].  Mechanisms are attached by the consuming test.
    """
    if kind not in ("parallel", "general"):
        raise InputError(f"unknown corpus kind {kind!r}")
    rng = np.random.default_rng(seed)
    scenarios = []
    for i in range(count):
        demand = float(rng.uniform(0.5, 3.0))
        if kind == "parallel":
            n_links = int(rng.integers(2, max_links + 1))
            latencies = []
            for _ in range(n_links):
                degree = int(rng.integers(0, max_degree + 1))
                coeffs = rng.uniform(0.0, 2.0, size=degree + 1)
                latencies.append(PolyLatency(tuple(coeffs)))
            if all(l.is_constant for l in latencies):
                coeffs = rng.uniform(0.1, 2.0, size=2)
                latencies[0] = PolyLatency(tuple(coeffs))
            edges = [Edge("s", "t", lat) for lat in latencies]
            network = Network.build(["s", "t"], edges, "s", "t", demand)
        else:
            def poly() -> PolyLatency:
                degree = int(rng.integers(0, max_degree + 1))
                return PolyLatency(tuple(rng.uniform(0.0, 2.0, size=degree + 1)))

            network = _braess_bypass(
                entry_a=poly(), crossover=poly(), exit_b=poly(),
                exit_a=poly(), entry_b=poly(), bypass=poly(), demand=demand,
            )
        n_classes = int(rng.integers(1, max_classes + 1))
        sens = np.sort(rng.uniform(CORPUS_S_LOWER, CORPUS_S_UPPER, size=n_classes))
        shares = rng.dirichlet(np.ones(n_classes))
        shares = np.maximum(shares, 1e-3)
        shares = shares / shares.sum()
        population = Population.build(
            [(float(sh * demand), float(s)) for sh, s in zip(shares, sens)],
            bounds=(CORPUS_S_LOWER, CORPUS_S_UPPER),
        )
        scenarios.append(
            Scenario(
                id=f"corpus-{kind}-{seed}-{i:03d}",
                network=network,
                population=population,
                mechanism=Mechanism.zero(),
                expected={},
            )
        )
    return scenarios


def build_series_of_parallel(
    front: list[PolyLatency] | None = None,
    back: list[PolyLatency] | None = None,
    demand: float = 1.0,
) -> Scenario:
    """Two parallel blocks chained in series (the composition the parallel
    results empirically extend to; paths here are not edge-disjoint)."""
    front = front or [PolyLatency((0.0, 1.0)), PolyLatency((1.0,))]
    back = back or [PolyLatency((0.0, 2.0)), PolyLatency((0.5,))]
    edges = [Edge("s", "m", lat) for lat in front] + [Edge("m", "t", lat) for lat in back]
    network = Network.build(["s", "m", "t"], edges, "s", "t", demand)
    return Scenario(
        id="series-of-parallel",
        network=network,
        population=Population.homogeneous(demand, 1.0),
        mechanism=Mechanism.zero(),
        expected={},
    )


# --------------------------------------------------------------------------
# Registry
# --------------------------------------------------------------------------

_BUILDERS = {
    "example1-hetero": lambda: build_example1("hetero"),
    "example1-homog": lambda: build_example1("homog"),
    "thm1-k0-1": lambda: build_theorem1_construction(0.0, 1.0, 1.0),
    "thm1-k0-05": lambda: build_theorem1_construction(0.0, 0.5, 1.0),
    "thm1-k0-025": lambda: build_theorem1_construction(0.0, 0.25, 1.0),
    "pigou-d1": lambda: build_pigou(1.0, 1),
    "fig3a": lambda: build_figure3("a"),
    "fig3b-linear": lambda: build_figure3("b", alpha=1.0, lam=2.0, d=1),
    "fig3c-d1-b2": lambda: build_figure3("c", d=1, beta=2.0),
    "fig3d-linear": lambda: build_figure3("d", base="linear"),
    "fig3d-affine": lambda: build_figure3("d", base="affine"),
    "fig3d-cubic": lambda: build_figure3("d", base="cubic"),
    "series-of-parallel": lambda: build_series_of_parallel(),
}


def list_scenario_ids() -> list[str]:
    return sorted(_BUILDERS)


def get_scenario(scenario_id: str) -> Scenario:
    try:
        builder = _BUILDERS[scenario_id]
    except KeyError:
        raise InputError(
            f"unknown scenario id {scenario_id!r}; known ids: {', '.join(sorted(_BUILDERS))}"
        ) from None
    return builder()
