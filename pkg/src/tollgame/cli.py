"""Command-line front end (a thin client over the HTTP service).

Exit codes: 0 success / certified result, 1 input error, 2 uncertified
result, 3 numerical failure.
"""

from __future__ import annotations

import json
import math
import sys

import click

from .client import ServiceClient

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_UNCERTIFIED = 2
EXIT_NUMERICAL = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _check_response(resp) -> dict:
    """Map service errors onto exit codes; return the JSON body on success."""
    if resp.status_code in (200, 201):
        return resp.json()
    try:
        body = resp.json()
    except Exception:
        body = {"detail": resp.text}
    detail = body.get("detail", body)
    if resp.status_code == 422:
        # pydantic validation: name the offending field(s)
        if isinstance(detail, list):
            msgs = []
            for err in detail:
                loc = ".".join(str(x) for x in err.get("loc", []) if x != "body")
                msgs.append(f"invalid field '{loc}': {err.get('msg', 'invalid value')}")
            _fail(EXIT_INPUT, "; ".join(msgs))
        _fail(EXIT_INPUT, str(detail))
    if resp.status_code in (400, 404):
        _fail(EXIT_INPUT, str(detail))
    if resp.status_code == 409:
        _fail(EXIT_UNCERTIFIED, str(detail))
    _fail(EXIT_NUMERICAL, str(detail))
    raise AssertionError("unreachable")


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        _fail(EXIT_INPUT, f"{what}: file not found: {path}")
    except json.JSONDecodeError as exc:
        _fail(EXIT_INPUT, f"{what}: invalid JSON in {path}: {exc}")


def _parse_number(text: str, name: str) -> float:
    if text.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        _fail(EXIT_INPUT, f"{name}: expected a number or 'inf', got {text!r}")


def _mechanism_payload(mechanism, kappa1, kappa2, kmax, fixed) -> dict:
    payload: dict = {"variant": mechanism}
    if mechanism == "gmc":
        if kappa1 is None or kappa2 is None:
            _fail(EXIT_INPUT, "--mechanism gmc needs --kappa1 and --kappa2")
        payload["kappa1"] = kappa1
        payload["kappa2"] = kappa2
    if mechanism == "fixed":
        if not fixed:
            _fail(EXIT_INPUT, "--mechanism fixed needs --fixed q1,q2,...")
        try:
            payload["fixed"] = [float(q) for q in fixed.split(",") if q.strip() != ""]
        except ValueError:
            _fail(EXIT_INPUT, f"--fixed: expected comma-separated numbers, got {fixed!r}")
    if kmax is not None:
        payload["kmax"] = kmax
    return payload


def _mechanism_options(fn):
    fn = click.option("--mechanism", type=click.Choice(["zero", "mc", "gmc", "fixed"]),
                      default="zero", show_default=True, help="Taxation mechanism.")(fn)
    fn = click.option("--kappa1", type=float, default=None, help="Latency-proportional coefficient.")(fn)
    fn = click.option("--kappa2", type=float, default=None, help="Marginal-term coefficient.")(fn)
    fn = click.option("--kmax", type=float, default=None, help="Coefficient cap.")(fn)
    fn = click.option("--fixed", type=str, default=None, help="Per-edge constants q1,q2,...")(fn)
    return fn


def _print_solve_report(body: dict) -> None:
    click.echo(f"solver:        {body['solver']}")
    click.echo(f"certified:     {body['certified']}")
    click.echo(f"total latency: {body['total_latency']:.9g}")
    click.echo(f"nash gap:      {body['nash_gap']:.3e}  (threshold {body['eps_nash']:.3e})")
    click.echo(f"iterations:    {body['iterations']}")
    paths = body["paths"]
    click.echo("flows (rows = sensitivity classes, columns = paths):")
    header = "  class\\path  " + "  ".join(f"p{p}" + str(tuple(e)) for p, e in enumerate(paths))
    click.echo(header)
    for c, row in enumerate(body["flow"]["path_flows"]):
        sens = body["class_sensitivities"][c]
        cells = "  ".join(f"{v:.6g}" for v in row)
        click.echo(f"  s={sens:<9}  {cells}")
    click.echo("per-class path costs:")
    for c, row in enumerate(body["class_path_costs"]):
        cells = "  ".join(f"{v:.6g}" for v in row)
        click.echo(f"  s={body['class_sensitivities'][c]:<9}  {cells}")
    click.echo(f"edge flows: {['%.6g' % v for v in body['flow']['edge_flows']]}")


@click.group()
def main() -> None:
    """Congestion-game engine: equilibria, tolls, and worst-case metrics."""


@main.command()
@click.argument("network_file", type=str)
@click.argument("population_file", type=str)
@_mechanism_options
@click.option("--eps", type=float, default=1e-7, show_default=True,
              help="Relative equilibrium-gap certification threshold.")
@click.option("--restarts", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--force", is_flag=True, help="Accept uncertified results (still exits 2).")
@click.option("--json", "as_json", is_flag=True, help="Print the raw JSON response.")
@click.option("--output", type=str, default=None, help="Also write the JSON response to a file.")
@click.option("--url", type=str, default=None, help="Remote service URL (default: in-process).")
def solve(network_file, population_file, mechanism, kappa1, kappa2, kmax, fixed,
          eps, restarts, seed, force, as_json, output, url) -> None:
    """Solve one instance: certified flow, per-class path costs, total latency."""
    payload = {
        "network": _load_json(network_file, "network"),
        "population": _load_json(population_file, "population"),
        "mechanism": _mechanism_payload(mechanism, kappa1, kappa2, kmax, fixed),
        "options": {"eps": eps, "restarts": restarts, "seed": seed, "force": force},
    }
    with ServiceClient(url) as client:
        body = _check_response(client.post("/solve", json=payload))
    if output:
        try:
            with open(output, "w", encoding="utf-8") as fh:
                json.dump(body, fh, indent=2)
        except OSError as exc:
            _fail(EXIT_INPUT, f"cannot write {output}: {exc}")
    if as_json:
        click.echo(json.dumps(body, indent=2))
    else:
        _print_solve_report(body)
    sys.exit(EXIT_OK if body["certified"] else EXIT_UNCERTIFIED)


@main.command()
@click.argument("scenario_id", type=str, required=False)
@click.option("--network", "network_file", type=str, default=None)
@click.option("--population", "population_file", type=str, default=None)
@_mechanism_options
@click.option("--use-scenario-mechanism", is_flag=True,
              help="With a scenario id, keep the scenario's own mechanism.")
@click.option("--eps", type=float, default=1e-7, show_default=True)
@click.option("--restarts", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--force", is_flag=True, help="Evaluate uncertified equilibria anyway.")
@click.option("--json", "as_json", is_flag=True)
@click.option("--url", type=str, default=None)
def evaluate(scenario_id, network_file, population_file, mechanism, kappa1, kappa2,
             kmax, fixed, use_scenario_mechanism, eps, restarts, seed, force,
             as_json, url) -> None:
    """Evaluate the Nash/optimal and tolled/untolled latency ratios."""
    payload: dict = {
        "options": {"eps": eps, "restarts": restarts, "seed": seed, "force": force}
    }
    if scenario_id:
        payload["scenario_id"] = scenario_id
        if not use_scenario_mechanism:
            payload["mechanism"] = _mechanism_payload(mechanism, kappa1, kappa2, kmax, fixed)
    else:
        if not network_file or not population_file:
            _fail(EXIT_INPUT, "evaluate needs a scenario id or --network and --population")
        payload["network"] = _load_json(network_file, "network")
        payload["population"] = _load_json(population_file, "population")
        payload["mechanism"] = _mechanism_payload(mechanism, kappa1, kappa2, kmax, fixed)
    with ServiceClient(url) as client:
        body = _check_response(client.post("/evaluate", json=payload))
    if as_json:
        click.echo(json.dumps(body, indent=2))
    else:
        poa, pi = body["poa"], body["pi"]
        click.echo(f"scenario:  {body['scenario_id'] or '(ad hoc)'}")
        click.echo(
            f"poa:       {poa['ratio']:.9g}  "
            f"({poa['numerator_latency']:.9g} / {poa['denominator_latency']:.9g})"
        )
        click.echo(
            f"pi:        {pi['ratio']:.9g}  "
            f"({pi['numerator_latency']:.9g} / {pi['denominator_latency']:.9g})"
        )
    sys.exit(EXIT_OK)


@main.command()
@click.option("--degrees", type=str, default="1", show_default=True,
              help="Comma-separated polynomial degree bounds.")
@click.option("--ratios", type=str, default="0:1:41", show_default=True,
              help="Sensitivity-ratio grid: comma list or start:stop:count.")
@click.option("--kmax", type=float, default=1.0, show_default=True)
@click.option("--su", type=str, default="1", show_default=True,
              help="Upper sensitivity bound (finite).")
@click.option("--output", type=str, default="-", show_default=True,
              help="CSV output path ('-' for stdout).")
@click.option("--url", type=str, default=None)
def sweep(degrees, ratios, kmax, su, output, url) -> None:
    """Render optimal-coefficient price-of-anarchy curves as CSV."""
    try:
        degree_list = [int(d) for d in degrees.split(",") if d.strip() != ""]
    except ValueError:
        _fail(EXIT_INPUT, f"--degrees: expected comma-separated integers, got {degrees!r}")
    if ":" in ratios:
        parts = ratios.split(":")
        if len(parts) != 3:
            _fail(EXIT_INPUT, f"--ratios: expected start:stop:count, got {ratios!r}")
        start, stop = _parse_number(parts[0], "--ratios"), _parse_number(parts[1], "--ratios")
        try:
            count = int(parts[2])
        except ValueError:
            _fail(EXIT_INPUT, f"--ratios: count must be an integer, got {parts[2]!r}")
        if count < 1:
            _fail(EXIT_INPUT, "--ratios: count must be >= 1")
        step = (stop - start) / (count - 1) if count > 1 else 0.0
        ratio_list = [start + i * step for i in range(count)]
    else:
        ratio_list = [_parse_number(r, "--ratios") for r in ratios.split(",") if r.strip()]
    s_upper = _parse_number(su, "--su")
    payload = {"degrees": degree_list, "ratios": ratio_list, "kmax": kmax, "s_upper": s_upper}
    with ServiceClient(url) as client:
        body = _check_response(client.post("/sweep", json=payload))
    if output == "-":
        click.echo(body["csv"], nl=False)
    else:
        try:
            with open(output, "w", encoding="utf-8", newline="") as fh:
                fh.write(body["csv"])
        except OSError as exc:
            _fail(EXIT_INPUT, f"cannot write {output}: {exc}")
        click.echo(f"wrote {len(body['rows'])} rows to {output}")
    sys.exit(EXIT_OK)


@main.command()
@click.option("--json", "as_json", is_flag=True)
@click.option("--url", type=str, default=None)
def scenarios(as_json, url) -> None:
    """List the built-in scenario ids."""
    with ServiceClient(url) as client:
        body = _check_response(client.get("/scenarios"))
    if as_json:
        click.echo(json.dumps(body, indent=2))
    else:
        for sid in body["scenarios"]:
            click.echo(sid)
    sys.exit(EXIT_OK)


@main.command("scenario-export")
@click.argument("scenario_id", type=str)
@click.option("--output", type=str, default="-", show_default=True)
@click.option("--url", type=str, default=None)
def scenario_export(scenario_id, output, url) -> None:
    """Export a built-in scenario (network, population, mechanism, expected values)."""
    with ServiceClient(url) as client:
        body = _check_response(client.get(f"/scenarios/{scenario_id}"))
    text = json.dumps(body, indent=2)
    if output == "-":
        click.echo(text)
    else:
        try:
            with open(output, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        except OSError as exc:
            _fail(EXIT_INPUT, f"cannot write {output}: {exc}")
    sys.exit(EXIT_OK)


@main.command()
@click.argument("report_file", type=str)
@click.option("--network", "network_file", type=str, required=True)
@click.option("--population", "population_file", type=str, required=True)
@_mechanism_options
@click.option("--eps", type=float, default=1e-7, show_default=True)
@click.option("--url", type=str, default=None)
def verify(report_file, network_file, population_file, mechanism, kappa1, kappa2,
           kmax, fixed, eps, url) -> None:
    """Recompute the equilibrium gap of a previously solved flow."""
    report = _load_json(report_file, "report")
    path_flows = report.get("flow", {}).get("path_flows")
    if path_flows is None:
        _fail(EXIT_INPUT, "report: missing flow.path_flows")
    payload = {
        "network": _load_json(network_file, "network"),
        "population": _load_json(population_file, "population"),
        "mechanism": _mechanism_payload(mechanism, kappa1, kappa2, kmax, fixed),
        "path_flows": path_flows,
        "eps": eps,
    }
    with ServiceClient(url) as client:
        body = _check_response(client.post("/verify", json=payload))
    click.echo(
        f"nash gap {body['nash_gap']:.3e} (threshold {body['eps_nash']:.3e}) "
        f"certified={body['certified']} total latency {body['total_latency']:.9g}"
    )
    sys.exit(EXIT_OK if body["certified"] else EXIT_UNCERTIFIED)


@main.command()
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port) -> None:
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("tollgame.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
