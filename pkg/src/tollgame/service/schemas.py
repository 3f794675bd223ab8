"""Pydantic request/response models for the HTTP service.

These mirror the documented JSON wire format; infinities travel as the
string "inf" in both directions.
"""

from __future__ import annotations

import math
from typing import Any, Literal

from pydantic import BaseModel, Field, field_serializer, field_validator


def _coerce_inf(value: Any) -> Any:
    if isinstance(value, str):
        if value.lower() in ("inf", "+inf", "infinity"):
            return math.inf
        raise ValueError(f"expected a number or 'inf', got {value!r}")
    return value


class EdgeModel(BaseModel):
    tail: str
    head: str
    coeffs: list[float] = Field(min_length=1)


class NetworkModel(BaseModel):
    vertices: list[str]
    edges: list[EdgeModel]
    source: str
    sink: str
    demand: float


class ClassModel(BaseModel):
    mass: float
    sensitivity: float

    @field_validator("sensitivity", mode="before")
    @classmethod
    def _sens_inf(cls, v: Any) -> Any:
        return _coerce_inf(v)

    @field_serializer("sensitivity")
    def _ser_sens(self, v: float, _info) -> Any:
        return "inf" if math.isinf(v) else v


class PopulationModel(BaseModel):
    bounds: list[float] = Field(min_length=2, max_length=2)
    classes: list[ClassModel]

    @field_validator("bounds", mode="before")
    @classmethod
    def _bounds_inf(cls, v: Any) -> Any:
        if isinstance(v, (list, tuple)):
            return [_coerce_inf(x) for x in v]
        return v

    @field_serializer("bounds")
    def _ser_bounds(self, v: list[float], _info) -> list[Any]:
        return ["inf" if math.isinf(x) else x for x in v]


class MechanismModel(BaseModel):
    variant: Literal["zero", "mc", "gmc", "fixed"]
    kappa1: float | None = None
    kappa2: float | None = None
    fixed: list[float] | None = None
    kmax: float | None = None


class SolveOptions(BaseModel):
    eps: float = Field(default=1e-7, gt=0.0)
    restarts: int = Field(default=16, ge=1, le=256)
    seed: int = 0
    force: bool = False


class SolveRequest(BaseModel):
    network: NetworkModel
    population: PopulationModel
    mechanism: MechanismModel = MechanismModel(variant="zero")
    options: SolveOptions = SolveOptions()


class FlowModel(BaseModel):
    path_flows: list[list[float]]
    edge_flows: list[float]


class SolveResponse(BaseModel):
    certified: bool
    solver: str
    iterations: int
    nash_gap: float
    eps_nash: float
    total_latency: float
    flow: FlowModel
    paths: list[list[int]]
    class_sensitivities: list[float]
    class_path_costs: list[list[float]]
    diagnostics: dict = {}

    @field_serializer("class_sensitivities")
    def _ser_sens(self, v: list[float], _info) -> list[Any]:
        return ["inf" if math.isinf(x) else x for x in v]


class EvaluateRequest(BaseModel):
    scenario_id: str | None = None
    network: NetworkModel | None = None
    population: PopulationModel | None = None
    mechanism: MechanismModel | None = None
    options: SolveOptions = SolveOptions()


class RatioModel(BaseModel):
    numerator_latency: float
    denominator_latency: float
    ratio: float
    witness: dict


class EvaluateResponse(BaseModel):
    scenario_id: str | None
    poa: RatioModel
    pi: RatioModel


class SweepRequest(BaseModel):
    degrees: list[int] = Field(min_length=1)
    ratios: list[float] = Field(min_length=1)
    kmax: float = Field(default=1.0, gt=0.0)
    s_upper: float = Field(default=1.0, gt=0.0)


class SweepResponse(BaseModel):
    rows: list[dict]
    csv: str


class VerifyRequest(BaseModel):
    network: NetworkModel
    population: PopulationModel
    mechanism: MechanismModel = MechanismModel(variant="zero")
    path_flows: list[list[float]]
    eps: float = Field(default=1e-7, gt=0.0)


class VerifyResponse(BaseModel):
    nash_gap: float
    eps_nash: float
    certified: bool
    total_latency: float
