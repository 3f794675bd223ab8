"""JSON (de)serialization for networks, populations, mechanisms and results.

Wire format (documented field names, stable):

network::

    {"vertices": ["s", "t"],
     "edges": [{"tail": "s", "head": "t", "coeffs": [a0, a1, ...]}, ...],
     "source": "s", "sink": "t", "demand": 1.0}

population::

    {"bounds": [SL, SU or "inf"],
     "classes": [{"mass": 1.0, "sensitivity": 0.5 or "inf"}, ...]}

mechanism::

    {"variant": "zero" | "mc" | "gmc" | "fixed",
     "kappa1"?: float, "kappa2"?: float, "fixed"?: [q_e, ...], "kmax"?: float}

Infinities travel as the string "inf"; paths are enumerated on load, never
serialized.
"""

from __future__ import annotations

import json
import math
from typing import Any

from .core import Edge, FlowProfile, InputError, Network, PolyLatency, Population
from .equilibrium import EquilibriumResult
from .mechanisms import Mechanism, Variant
from .metrics import RatioReport
from .scenarios import Scenario


def _num(value: Any, fieldname: str, allow_inf: bool = False) -> float:
    if isinstance(value, str):
        if allow_inf and value.lower() in ("inf", "+inf", "infinity"):
            return math.inf
        raise InputError(f"{fieldname}: expected a number, got {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InputError(f"{fieldname}: expected a number, got {value!r}")
    return float(value)


def _encode_num(x: float) -> Any:
    return "inf" if math.isinf(x) else x


def network_to_dict(network: Network) -> dict:
    return {
        "vertices": list(network.vertices),
        "edges": [
            {"tail": e.tail, "head": e.head, "coeffs": list(e.latency.coeffs)}
            for e in network.edges
        ],
        "source": network.source,
        "sink": network.sink,
        "demand": network.demand,
    }


def network_from_dict(data: dict) -> Network:
    if not isinstance(data, dict):
        raise InputError("network: expected an object")
    for key in ("vertices", "edges", "source", "sink", "demand"):
        if key not in data:
            raise InputError(f"network.{key}: missing")
    edges = []
    for i, e in enumerate(data["edges"]):
        if not isinstance(e, dict):
            raise InputError(f"network.edges[{i}]: expected an object")
        for key in ("tail", "head", "coeffs"):
            if key not in e:
                raise InputError(f"network.edges[{i}].{key}: missing")
        if not isinstance(e["coeffs"], (list, tuple)) or not e["coeffs"]:
            raise InputError(f"network.edges[{i}].coeffs: expected a nonempty list")
        coeffs = tuple(
            _num(c, f"network.edges[{i}].coeffs[{k}]") for k, c in enumerate(e["coeffs"])
        )
        try:
            latency = PolyLatency(coeffs)
        except InputError as exc:
            raise InputError(f"network.edges[{i}].coeffs: {exc}") from None
        edges.append(Edge(str(e["tail"]), str(e["head"]), latency))
    return Network.build(
        vertices=[str(v) for v in data["vertices"]],
        edges=edges,
        source=str(data["source"]),
        sink=str(data["sink"]),
        demand=_num(data["demand"], "network.demand"),
    )


def population_to_dict(population: Population) -> dict:
    return {
        "bounds": [_encode_num(population.bounds[0]), _encode_num(population.bounds[1])],
        "classes": [
            {"mass": c.mass, "sensitivity": _encode_num(c.sensitivity)}
            for c in population.classes
        ],
    }


def population_from_dict(data: dict) -> Population:
    if not isinstance(data, dict):
        raise InputError("population: expected an object")
    for key in ("bounds", "classes"):
        if key not in data:
            raise InputError(f"population.{key}: missing")
    bounds = data["bounds"]
    if not isinstance(bounds, (list, tuple)) or len(bounds) != 2:
        raise InputError("population.bounds: expected [SL, SU]")
    lo = _num(bounds[0], "population.bounds[0]", allow_inf=True)
    hi = _num(bounds[1], "population.bounds[1]", allow_inf=True)
    classes = []
    for i, c in enumerate(data["classes"]):
        if not isinstance(c, dict) or "mass" not in c or "sensitivity" not in c:
            raise InputError(f"population.classes[{i}]: expected {{mass, sensitivity}}")
        classes.append(
            (
                _num(c["mass"], f"population.classes[{i}].mass"),
                _num(c["sensitivity"], f"population.classes[{i}].sensitivity", allow_inf=True),
            )
        )
    try:
        # files are explicit user intent, so the exposition-style zero class is allowed
        return Population.build(classes, bounds=(lo, hi), allow_zero_sensitivity=True)
    except InputError as exc:
        raise InputError(f"population: {exc}") from None


def mechanism_to_dict(mechanism: Mechanism) -> dict:
    out: dict[str, Any] = {"variant": mechanism.variant.value}
    if mechanism.variant is Variant.GENERALIZED:
        out["kappa1"] = mechanism.kappa1
        out["kappa2"] = mechanism.kappa2
    if mechanism.variant is Variant.FIXED:
        out["fixed"] = list(mechanism.fixed or ())
    if mechanism.kmax is not None:
        out["kmax"] = mechanism.kmax
    return out


def mechanism_from_dict(data: dict) -> Mechanism:
    if not isinstance(data, dict) or "variant" not in data:
        raise InputError("mechanism.variant: missing")
    variant = str(data["variant"]).lower()
    kmax = _num(data["kmax"], "mechanism.kmax") if data.get("kmax") is not None else None
    if variant == "zero":
        return Mechanism.zero()
    if variant == "mc":
        return Mechanism.marginal_cost()
    if variant == "gmc":
        if "kappa1" not in data or "kappa2" not in data:
            raise InputError("mechanism.kappa1/kappa2: missing for variant 'gmc'")
        return Mechanism.generalized(
            _num(data["kappa1"], "mechanism.kappa1"),
            _num(data["kappa2"], "mechanism.kappa2"),
            kmax=kmax,
        )
    if variant == "fixed":
        if "fixed" not in data or not isinstance(data["fixed"], (list, tuple)):
            raise InputError("mechanism.fixed: expected a per-edge list for variant 'fixed'")
        return Mechanism.fixed_tolls(
            [_num(q, f"mechanism.fixed[{i}]") for i, q in enumerate(data["fixed"])]
        )
    raise InputError(f"mechanism.variant: unknown value {variant!r}")


def flow_to_dict(flow: FlowProfile) -> dict:
    return {
        "path_flows": flow.path_flows.tolist(),
        "edge_flows": flow.edge_flows.tolist(),
    }


def result_to_dict(result: EquilibriumResult) -> dict:
    return {
        "certified": result.certified,
        "solver": result.solver.value,
        "iterations": result.iterations,
        "nash_gap": result.nash_gap,
        "eps_nash": result.eps_nash,
        "total_latency": result.total_latency,
        "flow": flow_to_dict(result.flow),
        "diagnostics": _jsonable(result.diagnostics),
    }


def ratio_report_to_dict(report: RatioReport) -> dict:
    return {
        "numerator_latency": report.numerator_latency,
        "denominator_latency": report.denominator_latency,
        "ratio": report.ratio,
        "witness": _jsonable(report.witness),
    }


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "id": scenario.id,
        "network": network_to_dict(scenario.network),
        "population": population_to_dict(scenario.population),
        "mechanism": mechanism_to_dict(scenario.mechanism),
        "expected": {
            name: {"value": _jsonable(e.value), "provenance": e.provenance, "note": e.note}
            for name, e in scenario.expected.items()
        },
    }


def _jsonable(obj: Any) -> Any:
    import numpy as np

    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj


def load_json_file(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{what}: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what}: invalid JSON in {path}: {exc}") from None
