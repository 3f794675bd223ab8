"""Network-agnostic taxation mechanisms.

A mechanism maps an edge's latency function to a toll function using only
that latency function.  The interesting family is the two-parameter one,
``tau(f) = k1 * l(f) + k2 * f * l'(f)``: k2 = 1, k1 = 0 is the classical
marginal-cost (Pigovian) toll.  Fixed per-edge tolls exist purely as a
network-dependent comparison baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .core import (
    ConstRule,
    DomainError,
    GmcRule,
    InputError,
    Network,
    PolyLatency,
    TollSchedule,
    inv_or_zero,
)


class Variant(str, Enum):
    ZERO = "zero"
    FIXED = "fixed"
    MARGINAL_COST = "mc"
    GENERALIZED = "gmc"


def gmc_feasible(kappa1: float, kappa2: float, s_upper: float) -> bool:
    """Coefficient region in which generalized marginal-cost tolls never
    worsen congestion on parallel networks: k1 > -1/S_U, 0 <= k2 <= k1 + 1/S_U.

    At an unbounded upper sensitivity the first condition degenerates to
    k1 >= 0 (the cost rescaling 1 + k1*s must stay positive for every finite
    sensitivity, which zero k1 satisfies).
    """
    inv_su = inv_or_zero(s_upper)
    k1_ok = kappa1 > -inv_su if inv_su > 0.0 else kappa1 >= 0.0
    return k1_ok and 0.0 <= kappa2 <= kappa1 + inv_su


@dataclass(frozen=True)
class Mechanism:
    """A taxation mechanism specification.

    ``checked_bounds`` records the population bounds the coefficients were
    validated against, when the checked constructor was used.
    """

    variant: Variant
    kappa1: float = 0.0
    kappa2: float = 0.0
    fixed: tuple[float, ...] | None = None
    kmax: float | None = None
    checked_bounds: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kmax is not None and not self.kmax > 0.0:
            raise InputError(f"kmax must be positive, got {self.kmax}")
        if self.variant is Variant.FIXED:
            if self.fixed is None:
                raise InputError("fixed mechanism needs per-edge constants")
            for i, q in enumerate(self.fixed):
                if q < 0.0 or not math.isfinite(q):
                    raise InputError(f"fixed toll q_{i} = {q} must be >= 0 and finite")
        if self.variant is Variant.GENERALIZED and self.kmax is not None:
            if self.kappa1 > self.kmax or self.kappa2 > self.kmax:
                raise InputError(
                    f"coefficients ({self.kappa1}, {self.kappa2}) exceed cap {self.kmax}"
                )

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls) -> "Mechanism":
        return cls(Variant.ZERO)

    @classmethod
    def marginal_cost(cls) -> "Mechanism":
        return cls(Variant.MARGINAL_COST, kappa1=0.0, kappa2=1.0)

    @classmethod
    def generalized(cls, kappa1: float, kappa2: float, kmax: float | None = None) -> "Mechanism":
        return cls(Variant.GENERALIZED, kappa1=float(kappa1), kappa2=float(kappa2), kmax=kmax)

    @classmethod
    def generalized_checked(
        cls,
        kappa1: float,
        kappa2: float,
        bounds: tuple[float, float],
        kmax: float | None = None,
    ) -> "Mechanism":
        """Construct generalized tolls, validating against population bounds."""
        if not gmc_feasible(kappa1, kappa2, bounds[1]):
            inv_su = inv_or_zero(bounds[1])
            raise DomainError(
                f"coefficients ({kappa1}, {kappa2}) outside the feasible region "
                f"k1 > {-inv_su}, 0 <= k2 <= k1 + {inv_su}"
            )
        return cls(
            Variant.GENERALIZED,
            kappa1=float(kappa1),
            kappa2=float(kappa2),
            kmax=kmax,
            checked_bounds=(float(bounds[0]), float(bounds[1])),
        )

    @classmethod
    def fixed_tolls(cls, per_edge: tuple[float, ...] | list[float]) -> "Mechanism":
        return cls(Variant.FIXED, fixed=tuple(float(q) for q in per_edge))

    # -- derived views ------------------------------------------------------

    @property
    def kappas(self) -> tuple[float, float]:
        """(k1, k2) view; zero tolls are (0, 0) and marginal-cost tolls (0, 1)."""
        if self.variant is Variant.ZERO:
            return (0.0, 0.0)
        if self.variant is Variant.MARGINAL_COST:
            return (0.0, 1.0)
        if self.variant is Variant.GENERALIZED:
            return (self.kappa1, self.kappa2)
        raise InputError("fixed tolls have no coefficient representation")

    @property
    def is_flow_varying(self) -> bool:
        return self.variant in (Variant.MARGINAL_COST, Variant.GENERALIZED)


def effective_sensitivity_beta(sensitivity: float, kappa1: float, kappa2: float) -> float:
    """Induced weight on the marginal term: beta = k2*s / (1 + k1*s).

    For the +inf sensitivity sentinel the analytic limit k2/k1 is returned,
    which requires k1 > 0.  Any (s, k1) with 1 + k1*s <= 0 flips the sign of
    the rescaled cost function and is outside the model.
    """
    if sensitivity < 0.0 or math.isnan(sensitivity):
        raise DomainError(f"sensitivity must be >= 0, got {sensitivity}")
    if math.isinf(sensitivity):
        if kappa1 <= 0.0:
            raise DomainError(
                "beta at unbounded sensitivity needs kappa1 > 0 for a finite limit"
            )
        return kappa2 / kappa1
    denom = 1.0 + kappa1 * sensitivity
    if denom <= 0.0:
        raise DomainError(
            f"1 + kappa1*s = {denom} <= 0 at s = {sensitivity}: cost sign flips"
        )
    return kappa2 * sensitivity / denom


def derive_tolls(mechanism: Mechanism, network: Network) -> TollSchedule:
    """Produce the per-edge toll schedule.

    The mapping uses only each edge's own latency function, so two edges with
    identical latencies always receive pointwise-identical tolls, regardless
    of where they sit or in which network.
    """
    latencies = tuple(e.latency for e in network.edges)
    if mechanism.variant is Variant.FIXED:
        if len(mechanism.fixed or ()) != network.n_edges:
            raise InputError(
                f"fixed mechanism carries {len(mechanism.fixed or ())} constants, "
                f"network has {network.n_edges} edges"
            )
        rules = tuple(ConstRule(q) for q in mechanism.fixed)
        return TollSchedule(rules=rules, latencies=latencies)
    k1, k2 = mechanism.kappas
    rules = tuple(GmcRule(k1, k2) for _ in latencies)
    return TollSchedule(rules=rules, latencies=latencies)


def normalized_cost(
    latency: PolyLatency,
    sensitivity: float,
    mechanism: Mechanism,
    fixed_toll: float | None = None,
) -> PolyLatency:
    """Per-edge cost function used by all equilibrium computation.

    For coefficient mechanisms the sensitivity-weighted cost rescales (by the
    positive factor 1 + k1*s, which cannot change any user's preferences) to
    ``l(f) + beta * f * l'(f)`` with beta = k2*s/(1+k1*s).  Fixed tolls give
    the unrescaled ``l(f) + s*q``.
    """
    if mechanism.variant is Variant.FIXED:
        if math.isinf(sensitivity):
            raise DomainError("fixed tolls require finite sensitivities")
        if fixed_toll is None:
            raise InputError("fixed mechanism needs the edge's toll constant")
        return latency.plus_const(sensitivity * fixed_toll)
    k1, k2 = mechanism.kappas
    beta = effective_sensitivity_beta(sensitivity, k1, k2)
    return latency.with_beta(beta)


def class_betas(mechanism: Mechanism, sensitivities) -> list[float]:
    """Effective marginal weights per class for a coefficient mechanism."""
    k1, k2 = mechanism.kappas
    return [effective_sensitivity_beta(s, k1, k2) for s in sensitivities]
