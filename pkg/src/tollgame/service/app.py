"""FastAPI service wrapping the engine.

Endpoints map one-to-one onto the engine operations: solve an instance,
evaluate the two instance ratios, render an optimal-coefficient sweep, verify
a flow independently, and browse the built-in scenarios.  Domain errors map
to 400, refusals over uncertified equilibria to 409, and numerical failures
to 500, which the CLI translates into its exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..core import (
    DomainError,
    FlowProfile,
    InputError,
    SolverError,
    UncertifiedError,
)
from ..equilibrium import certify, class_path_costs, nash_flow
from ..io import (
    mechanism_from_dict,
    network_from_dict,
    population_from_dict,
    ratio_report_to_dict,
    result_to_dict,
    scenario_to_dict,
)
from ..metrics import optimal_poa_sweep, pi_instance, poa_instance, sweep_csv
from ..scenarios import get_scenario, list_scenario_ids
from .schemas import (
    EvaluateRequest,
    EvaluateResponse,
    SolveRequest,
    SolveResponse,
    SweepRequest,
    SweepResponse,
    VerifyRequest,
    VerifyResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(
        title="tollgame",
        description="Nash and optimal flows under network-agnostic tolls",
        version="0.1.0",
    )

    @app.exception_handler(InputError)
    async def _input_error(request: Request, exc: InputError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(DomainError)
    async def _domain_error(request: Request, exc: DomainError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(UncertifiedError)
    async def _uncertified(request: Request, exc: UncertifiedError) -> JSONResponse:
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(SolverError)
    async def _solver_error(request: Request, exc: SolverError) -> JSONResponse:
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/scenarios")
    def scenarios() -> dict:
        return {"scenarios": list_scenario_ids()}

    @app.get("/scenarios/{scenario_id}")
    def scenario(scenario_id: str) -> dict:
        return scenario_to_dict(get_scenario(scenario_id))

    @app.post("/solve", response_model=SolveResponse)
    def solve(req: SolveRequest) -> SolveResponse:
        network = network_from_dict(req.network.model_dump())
        population = population_from_dict(req.population.model_dump())
        mechanism = mechanism_from_dict(req.mechanism.model_dump(exclude_none=True))
        result = nash_flow(
            network,
            mechanism,
            population,
            eps_rel=req.options.eps,
            restarts=req.options.restarts,
            seed=req.options.seed,
        )
        costs = class_path_costs(network, mechanism, population, result.flow)
        payload = result_to_dict(result)
        return SolveResponse(
            **payload,
            paths=[list(p) for p in network.paths],
            class_sensitivities=list(population.sensitivities),
            class_path_costs=costs.tolist(),
        )

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        if req.scenario_id is not None:
            sc = get_scenario(req.scenario_id)
            network, population = sc.network, sc.population
            mechanism = (
                mechanism_from_dict(req.mechanism.model_dump(exclude_none=True))
                if req.mechanism is not None
                else sc.mechanism
            )
            sid = sc.id
        else:
            if req.network is None or req.population is None:
                raise InputError("evaluate needs either scenario_id or network+population")
            network = network_from_dict(req.network.model_dump())
            population = population_from_dict(req.population.model_dump())
            mechanism = mechanism_from_dict(
                req.mechanism.model_dump(exclude_none=True)
                if req.mechanism is not None
                else {"variant": "zero"}
            )
            sid = None
        opts = req.options
        poa = poa_instance(
            network, mechanism, population, scenario_id=sid,
            force=opts.force, eps_rel=opts.eps, restarts=opts.restarts, seed=opts.seed,
        )
        pi = pi_instance(
            network, mechanism, population, scenario_id=sid,
            force=opts.force, eps_rel=opts.eps, restarts=opts.restarts, seed=opts.seed,
        )
        return EvaluateResponse(
            scenario_id=sid,
            poa=ratio_report_to_dict(poa),
            pi=ratio_report_to_dict(pi),
        )

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest) -> SweepResponse:
        rows = optimal_poa_sweep(req.degrees, req.ratios, req.kmax, req.s_upper)
        return SweepResponse(rows=rows, csv=sweep_csv(rows))

    @app.post("/verify", response_model=VerifyResponse)
    def verify(req: VerifyRequest) -> VerifyResponse:
        from ..core import check_flow_feasible, total_latency

        network = network_from_dict(req.network.model_dump())
        population = population_from_dict(req.population.model_dump())
        mechanism = mechanism_from_dict(req.mechanism.model_dump(exclude_none=True))
        flow = FlowProfile.build(network, req.path_flows)
        check_flow_feasible(network, population, flow)
        gap, eps_abs, ok = certify(network, mechanism, population, flow, req.eps)
        return VerifyResponse(
            nash_gap=gap,
            eps_nash=eps_abs,
            certified=ok,
            total_latency=total_latency(network, flow),
        )

    return app


app = create_app()
