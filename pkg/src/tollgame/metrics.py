"""Total-latency ratios and their closed forms.

Two ratios are evaluated per instance: Nash-vs-optimal (price of anarchy) and
tolled-Nash-vs-untolled-Nash (perversity index).  The worst-case suprema over
whole problem classes are covered by closed forms where those exist; the
empirical sweeps over documented instance families used to cross-check them
are lower bounds on the true suprema and are labeled as such.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DomainError,
    InputError,
    Network,
    Population,
    SolverError,
    UncertifiedError,
    inv_or_zero,
)
from .equilibrium import (
    EPS_NASH_REL,
    EquilibriumResult,
    nash_flow,
    nash_flow_homogeneous,
    optimal_flow,
)
from .mechanisms import Mechanism, effective_sensitivity_beta, gmc_feasible

MAX_DEGREE = 64

# Every instance-ratio evaluation is appended here so the test suite can audit
# the PI <= PoA invariant globally.  Bounded to keep long-lived processes slim.
_EVALUATION_LOG: list[dict] = []
_EVALUATION_LOG_LIMIT = 50_000


def evaluation_log() -> list[dict]:
    return list(_EVALUATION_LOG)


def clear_evaluation_log() -> None:
    _EVALUATION_LOG.clear()


def _record(kind: str, key: str | None, ratio: float) -> None:
    if len(_EVALUATION_LOG) < _EVALUATION_LOG_LIMIT:
        _EVALUATION_LOG.append({"kind": kind, "key": key, "ratio": ratio})


@dataclass(frozen=True)
class RatioReport:
    numerator_latency: float
    denominator_latency: float
    ratio: float
    witness: dict = field(default_factory=dict)


def _require_certified(result: EquilibriumResult, what: str, force: bool) -> None:
    if not result.certified and not force:
        raise UncertifiedError(
            f"{what} is uncertified (gap {result.nash_gap:.3e} > {result.eps_nash:.3e}); "
            "pass force=True to use it anyway"
        )


def poa_instance(
    network: Network,
    mechanism: Mechanism,
    population: Population,
    scenario_id: str | None = None,
    force: bool = False,
    eps_rel: float = EPS_NASH_REL,
    restarts: int = 16,
    seed: int = 0,
) -> RatioReport:
    """Tolled Nash total latency over optimal total latency for one instance."""
    nash = nash_flow(network, mechanism, population, eps_rel=eps_rel, restarts=restarts, seed=seed)
    _require_certified(nash, "Nash flow", force)
    opt = optimal_flow(network, eps_rel=eps_rel)
    if opt.total_latency <= 0.0:
        raise DomainError("optimal total latency is zero; ratio undefined")
    ratio = nash.total_latency / opt.total_latency
    _record("poa", scenario_id, ratio)
    return RatioReport(
        numerator_latency=nash.total_latency,
        denominator_latency=opt.total_latency,
        ratio=ratio,
        witness={
            "scenario": scenario_id,
            "numerator_flow": nash.flow.path_flows.tolist(),
            "denominator_flow": opt.flow.path_flows.tolist(),
            "numerator_certified": nash.certified,
            "solver": nash.solver.value,
        },
    )


def pi_instance(
    network: Network,
    mechanism: Mechanism,
    population: Population,
    scenario_id: str | None = None,
    force: bool = False,
    eps_rel: float = EPS_NASH_REL,
    restarts: int = 16,
    seed: int = 0,
) -> RatioReport:
    """Tolled Nash total latency over untolled Nash total latency."""
    nash = nash_flow(network, mechanism, population, eps_rel=eps_rel, restarts=restarts, seed=seed)
    _require_certified(nash, "Nash flow", force)
    untolled = nash_flow(
        network, Mechanism.zero(), population, eps_rel=eps_rel, restarts=restarts, seed=seed
    )
    _require_certified(untolled, "untolled Nash flow", force)
    if untolled.total_latency <= 0.0:
        raise DomainError("untolled total latency is zero; ratio undefined")
    ratio = nash.total_latency / untolled.total_latency
    _record("pi", scenario_id, ratio)
    return RatioReport(
        numerator_latency=nash.total_latency,
        denominator_latency=untolled.total_latency,
        ratio=ratio,
        witness={
            "scenario": scenario_id,
            "numerator_flow": nash.flow.path_flows.tolist(),
            "denominator_flow": untolled.flow.path_flows.tolist(),
            "numerator_certified": nash.certified,
            "solver": nash.solver.value,
        },
    )


# --------------------------------------------------------------------------
# Closed forms
# --------------------------------------------------------------------------

def _check_degree(d: int) -> int:
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise DomainError(f"degree must be an integer >= 1, got {d}")
    if d > MAX_DEGREE:
        raise DomainError(f"degree capped at {MAX_DEGREE}, got {d}")
    return int(d)


def _poa_underweighted(d: int, beta: float) -> float:
    """Worst-case ratio when users weight their externality by beta <= 1."""
    # evaluated in log space: ((1+d*beta)/(1+d)) ** ((d+1)/d)
    term = d * math.exp((d + 1) / d * math.log((1.0 + d * beta) / (1.0 + d)))
    return 1.0 / (1.0 + d * beta - term)


def _poa_overweighted(d: int, beta: float) -> float:
    """Worst-case ratio when users overweight their externality (beta > 1)."""
    return math.exp(-d * math.log(beta) + (d + 1) * math.log((1.0 + d * beta) / (1.0 + d)))


def poa_closed_form_nonperverse(
    d: int, s_lower: float, s_upper: float, kappa1: float, kappa2: float
) -> float:
    """Worst-case price of anarchy of valid generalized marginal-cost tolls on
    parallel networks with polynomial latencies of degree at most ``d``.

    The binding population is homogeneous at the lower sensitivity bound, so
    the value depends on beta evaluated at ``s_lower``; it must lie in [0, 1].
    """
    d = _check_degree(d)
    if not gmc_feasible(kappa1, kappa2, s_upper):
        raise DomainError(
            f"coefficients ({kappa1}, {kappa2}) outside the feasible region for "
            f"S_U = {s_upper}"
        )
    beta = effective_sensitivity_beta(s_lower, kappa1, kappa2)
    if not 0.0 <= beta <= 1.0 + 1e-12:
        raise DomainError(f"beta = {beta} outside [0, 1]")
    return _poa_underweighted(d, min(beta, 1.0))


def poa_homogeneous_closed_form(d: int, sensitivity: float, kappa1: float, kappa2: float) -> float:
    """Worst-case price of anarchy for one homogeneous sensitivity under
    coefficient tolls; piecewise in beta with a continuous seam at beta = 1."""
    d = _check_degree(d)
    beta = effective_sensitivity_beta(sensitivity, kappa1, kappa2)
    if beta < 0.0:
        raise DomainError(f"beta = {beta} must be >= 0")
    if beta <= 1.0:
        return _poa_underweighted(d, beta)
    return _poa_overweighted(d, beta)


def pi_homogeneous_closed_form(d: int, s_upper: float, kappa1: float, kappa2: float) -> float:
    """Homogeneous perversity index when the most sensitive users are
    overtolled: equals the price of anarchy of the sensitivity-S_U population,
    and is strictly greater than 1 in its premise region
    ``kappa2 > 0, kappa1 in (-1/S_U, kappa2 - 1/S_U)``."""
    d = _check_degree(d)
    inv_su = inv_or_zero(s_upper)
    if not kappa2 > 0.0:
        raise DomainError(f"kappa2 must be > 0, got {kappa2}")
    if not (-inv_su < kappa1 < kappa2 - inv_su):
        raise DomainError(
            f"kappa1 = {kappa1} outside ({-inv_su}, {kappa2 - inv_su}) for S_U = {s_upper}"
        )
    return poa_homogeneous_closed_form(d, s_upper, kappa1, kappa2)


def optimal_nonperverse_coefficients(
    d: int, s_lower: float, s_upper: float, kmax: float
) -> tuple[float, float]:
    """Coefficients minimizing the parallel-network price of anarchy among
    valid generalized marginal-cost tolls capped at ``kmax``: saturate the
    cap with k2 and the validity bound with k1."""
    _check_degree(d)
    if not kmax > 0.0:
        raise InputError(f"kmax must be positive, got {kmax}")
    return (kmax - inv_or_zero(s_upper), kmax)


def tradeoff_poa_minimizer(
    d: int, s_lower: float, s_upper: float, kmax: float
) -> tuple[float, float, float]:
    """Coefficients minimizing the homogeneous price of anarchy on general
    networks, and the optimal value.

    With k2 pinned at the cap, the low-sensitivity branch of the homogeneous
    price of anarchy is strictly increasing in k1 while the high-sensitivity
    branch is strictly decreasing, so the minimizer is their crossing; at the
    crossing the price of anarchy equals the perversity index and both exceed
    one whenever the sensitivity interval is nondegenerate.
    """
    d = _check_degree(d)
    if not (0.0 <= s_lower < s_upper) or math.isinf(s_upper):
        raise InputError(
            f"need 0 <= s_lower < s_upper < inf, got [{s_lower}, {s_upper}]"
        )
    if not kmax > 0.0:
        raise InputError(f"kmax must be positive, got {kmax}")
    k2 = kmax
    lo = -1.0 / s_upper
    hi = k2 - 1.0 / s_upper

    def gap_fn(k1: float) -> float:
        return poa_homogeneous_closed_form(d, s_lower, k1, k2) - poa_homogeneous_closed_form(
            d, s_upper, k1, k2
        )

    span = hi - lo
    a = lo + 1e-12 * (1.0 + abs(lo)) + 1e-15
    b = hi - 1e-12 * (1.0 + abs(hi)) - 1e-15
    ga, gb = gap_fn(a), gap_fn(b)
    # widen the probe toward the singular left end if needed
    shrink = 0
    while ga > 0.0 and shrink < 40:
        a = lo + (a - lo) * 0.25
        ga = gap_fn(a)
        shrink += 1
    if not (ga < 0.0 < gb):
        raise SolverError(
            f"no sign change for the coefficient crossing: g({a}) = {ga}, g({b}) = {gb}"
        )
    for _ in range(200):
        mid = 0.5 * (a + b)
        gm = gap_fn(mid)
        if gm < 0.0:
            a = mid
        else:
            b = mid
        if b - a <= 1e-15 * (1.0 + abs(b)) or abs(gm) <= 1e-14:
            break
    k1 = 0.5 * (a + b)
    value = 0.5 * (
        poa_homogeneous_closed_form(d, s_lower, k1, k2)
        + poa_homogeneous_closed_form(d, s_upper, k1, k2)
    )
    return (k1, k2, value)


# --------------------------------------------------------------------------
# Empirical sweeps (lower bounds on the suprema, used as oracles in tests)
# --------------------------------------------------------------------------

def optimal_poa_sweep(
    degrees, ratios, kmax: float = 1.0, s_upper: float = 1.0
) -> list[dict]:
    """Optimal-coefficient price-of-anarchy rows over a sensitivity-ratio grid.

    One row per (degree, S_L/S_U) pair: the lower bound is ``ratio * s_upper``
    and the coefficients saturate the cap and validity bound.  At ratio 1 the
    value is exactly 1; as the ratio approaches 0 it climbs to the untolled
    worst case for that degree.  ``s_upper`` must be finite, since the ratio
    parameterization is meaningless at an infinite upper bound.
    """
    ratios = [float(r) for r in ratios]
    degrees = [int(d) for d in degrees]
    if not ratios or not degrees:
        raise InputError("sweep needs at least one degree and one ratio")
    if any(r < 0.0 or r > 1.0 for r in ratios):
        raise InputError("ratio grid must lie within [0, 1]")
    if math.isinf(s_upper) or not s_upper > 0.0:
        raise InputError("sweep needs a finite positive s_upper")
    if not kmax > 0.0:
        raise InputError(f"kmax must be positive, got {kmax}")
    rows = []
    for d in sorted(set(degrees)):
        for rho in sorted(set(ratios)):
            s_lower = rho * s_upper
            k1, k2 = optimal_nonperverse_coefficients(d, s_lower, s_upper, kmax)
            poa = poa_closed_form_nonperverse(d, s_lower, s_upper, k1, k2)
            rows.append(
                {"d": d, "sl_over_su": rho, "kappa1": k1, "kappa2": k2, "poa": poa}
            )
    return rows


def sweep_csv(rows: list[dict]) -> str:
    """Deterministic CSV rendering of sweep rows (12 significant digits)."""

    def fmt(x: float) -> str:
        return format(float(x), ".12g")

    lines = ["d,sl_over_su,kappa1,kappa2,poa"]
    for r in rows:
        lines.append(
            f"{int(r['d'])},{fmt(r['sl_over_su'])},{fmt(r['kappa1'])},"
            f"{fmt(r['kappa2'])},{fmt(r['poa'])}"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EmpiricalWorstCase:
    value: float
    alpha: float
    label: str = "empirical lower bound"


def pigou_center_alpha(d: int, beta: float) -> float:
    """Scale at which the two-link monomial-vs-constant family attains its
    worst ratio: 1/(1+d*beta) when beta <= 1, else the overtolled witness."""
    if beta <= 1.0:
        return 1.0 / (1.0 + d * beta)
    from .scenarios import pigou_witness_alpha

    return pigou_witness_alpha(d, beta)


def pigou_family_worst_poa(
    d: int,
    beta: float,
    n_alpha: int = 2000,
    alphas=None,
    eps_rel: float = EPS_NASH_REL,
) -> EmpiricalWorstCase:
    """Certified-equilibrium sweep of the two-link family ``alpha * f^d`` vs
    constant 1 at unit demand, for a homogeneous population with effective
    weight ``beta``; returns the worst Nash/optimal ratio over the grid."""
    from .scenarios import build_pigou

    d = _check_degree(d)
    if alphas is None:
        center = pigou_center_alpha(d, beta)
        alphas = np.linspace(0.25 * center, 2.0 * center, n_alpha)
    mech = Mechanism.generalized(0.0, beta)  # sensitivity 1 then carries beta exactly
    worst = EmpiricalWorstCase(value=-math.inf, alpha=math.nan)
    for alpha in alphas:
        scenario = build_pigou(alpha=float(alpha), degree=d)
        nash = nash_flow_homogeneous(scenario.network, mech, 1.0, eps_rel)
        opt = optimal_flow(scenario.network, eps_rel)
        if not (nash.certified and opt.certified):
            raise UncertifiedError(f"sweep point alpha={alpha} failed certification")
        ratio = nash.total_latency / opt.total_latency
        if ratio > worst.value:
            worst = EmpiricalWorstCase(value=float(ratio), alpha=float(alpha))
    return worst
