"""Congestion-game engine: Nash and optimal flows under network-agnostic tolls."""

from .core import (
    DomainError,
    Edge,
    FlowProfile,
    InputError,
    Network,
    PolyLatency,
    Population,
    SensitivityClass,
    SolverError,
    TollSchedule,
    UncertifiedError,
    path_latency,
    total_latency,
    user_cost,
)
from .equilibrium import (
    EquilibriumResult,
    PathCostDecomposition,
    Solver,
    nash_flow,
    nash_flow_general,
    nash_flow_homogeneous,
    nash_flow_parallel_heterogeneous,
    nash_gap,
    optimal_flow,
    oracle_nash_flows,
    path_cost_decomposition,
)
from .mechanisms import (
    Mechanism,
    Variant,
    derive_tolls,
    effective_sensitivity_beta,
    gmc_feasible,
    normalized_cost,
)
from .metrics import (
    RatioReport,
    optimal_nonperverse_coefficients,
    pi_homogeneous_closed_form,
    pi_instance,
    poa_closed_form_nonperverse,
    poa_homogeneous_closed_form,
    poa_instance,
    tradeoff_poa_minimizer,
)
from .scenarios import (
    Scenario,
    build_example1,
    build_figure3,
    build_pigou,
    build_theorem1_construction,
    get_scenario,
    list_scenario_ids,
    random_corpus,
    shift_population,
)

__version__ = "0.1.0"
