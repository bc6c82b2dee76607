"""Command-line front end.

Every subcommand is a thin client of the HTTP service: by default the
requests run in-process over an ASGI transport (no socket), and with
``--server URL`` the same payloads go to a remote instance. Exit codes:
0 success, 2 configuration error, 3 numerical failure, 4 infeasible
control step.
"""

from __future__ import annotations

import asyncio
import json
import sys
from pathlib import Path
from typing import Optional

import click
import httpx

from .estimators import VARIANTS
from .config import CONTROL_MODES, ConfigError, builtin_config_path
from .version import __version__

try:
    import tomllib
except ModuleNotFoundError:                       # pragma: no cover
    import tomli as tomllib

_EXIT_BY_KIND = {"config": 2, "numerical": 3, "infeasible": 4}
_EXIT_BY_STATUS = {400: 2, 422: 3, 409: 4}

IT_CHOICES = ("0.2", "0.5", "1.0")


def _request(server: Optional[str], path: str, payload: dict) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    # no server given: serve the request in-process over an ASGI transport
    from .service import create_app

    async def go() -> httpx.Response:
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(transport=transport, timeout=None,
                                     base_url="http://voltgrid.local") as client:
            return await client.post(path, json=payload)

    return asyncio.run(go())


def _post(server: Optional[str], path: str, payload: dict) -> dict:
    """POST and return the JSON body; map error responses to exit codes."""
    try:
        resp = _request(server, path, payload)
    except httpx.HTTPError as exc:
        click.echo(f"error [transport]: {exc}", err=True)
        sys.exit(3)
    if resp.status_code == 200:
        return resp.json()
    try:
        body = resp.json()
    except json.JSONDecodeError:
        body = {"kind": "numerical", "message": resp.text}
    kind = body.get("kind", "numerical")
    message = body.get("message") or body.get("detail") or resp.text
    click.echo(f"error [{kind}]: {message}", err=True)
    sys.exit(_EXIT_BY_KIND.get(kind, _EXIT_BY_STATUS.get(resp.status_code, 3)))


def _read_config(spec: Optional[str]) -> Optional[dict]:
    """Parse --config: a TOML file path or a bundled scenario name."""
    if spec is None:
        return None
    path = Path(spec)
    if not path.is_file():
        try:
            path = builtin_config_path(spec)
        except ConfigError:
            click.echo(f"error [config]: {spec!r} is neither a file nor a "
                       "bundled scenario name", err=True)
            sys.exit(2)
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        click.echo(f"error [config]: {path}: {exc}", err=True)
        sys.exit(2)


def scenario_options(fn):
    """Shared flags; each maps onto one scenario config key."""
    opts = [
        click.option("--config", "config_path", metavar="PATH|NAME",
                     default=None,
                     help="Scenario TOML file, or the name of a bundled "
                          "scenario (benchmark, control, smoke)."),
        click.option("--seed", type=int, default=None,
                     help="Override run.seed."),
        click.option("--out", type=click.Path(file_okay=False), default=None,
                     help="Output directory for artifacts."),
        click.option("--it-class", type=click.Choice(IT_CHOICES), default=None,
                     help="Instrument transformer accuracy class."),
        click.option("--estimator", type=click.Choice(VARIANTS), default=None,
                     help="Sensitivity estimator variant."),
        click.option("--mode", type=click.Choice(CONTROL_MODES), default=None,
                     help="Control mode."),
        click.option("--omega", type=float, default=None,
                     help="Uncertainty budget per voltage constraint."),
        click.option("--server", default=None, metavar="URL",
                     help="Send requests to a running service instead of "
                          "executing in-process."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _payload(config_path, seed, out, it_class, estimator, mode, omega) -> dict:
    payload = {
        "config": _read_config(config_path),
        "seed": seed,
        "out_dir": out,
        "it_class": it_class,
        "estimator": estimator,
        "mode": mode,
        "omega": omega,
    }
    return {k: v for k, v in payload.items() if v is not None}


def _print_run_summary(body: dict) -> None:
    report = body["report"]
    scen = report.get("scenario", {})
    click.echo(f"mode={scen.get('mode')} estimator={scen.get('variant')} "
               f"it_class={scen.get('it_class')} seed={scen.get('seed')}")
    est = report.get("estimation", {})
    mean = est.get("_mean")
    if mean:
        click.echo(f"estimation: rmse_vector={mean['rmse_vector']:.4g} "
                   f"picp_kp_self={mean['picp_kp_self']:.3f} "
                   f"pinaw_kp_self={mean['pinaw_kp_self']:.4g}")
    ctl = report.get("control")
    if ctl:
        click.echo(f"voltage: max={ctl['max_v_overall']:.5f} "
                   f"min={ctl['min_v_overall']:.5f} "
                   f"overvoltage_steps={ctl['overvoltage_steps_total']}")
        click.echo(f"energy_kwh: available={ctl['available_kwh']:.2f} "
                   f"produced={ctl['produced_kwh']:.2f} "
                   f"curtailed={ctl['curtailed_kwh']:.2f}")
    if body.get("out_dir"):
        click.echo(f"artifacts: {body['out_dir']}")


@click.group()
@click.version_option(version=__version__, prog_name="voltgrid")
def main() -> None:
    """Measurement-based voltage sensitivity estimation and PV dispatch."""


@main.command("gen-data")
@scenario_options
def gen_data(config_path, seed, out, it_class, estimator, mode, omega, server):
    """Synthesize a noisy measurement data set (no estimation, no control)."""
    payload = _payload(config_path, seed, out, it_class, estimator, mode, omega)
    body = _post(server, "/scenario/dataset", payload)
    click.echo(f"wrote {', '.join(body['files'])} to {body['out_dir']}")


@main.command("estimate")
@scenario_options
@click.option("--variants", default=None,
              help="Comma-separated variant subset (default: all).")
def estimate(config_path, seed, out, it_class, estimator, mode, omega, server,
             variants):
    """Open-loop estimator comparison on one measurement stream."""
    payload = _payload(config_path, seed, out, it_class, estimator, mode, omega)
    if variants:
        payload["variants"] = [v.strip() for v in variants.split(",")]
    body = _post(server, "/scenario/estimate", payload)
    bench = body["benchmark"]
    click.echo("variant   rmse_vector  picp_kp_self  median_half")
    for name, row in bench["variants"].items():
        click.echo(f"{name:<9s} {row['rmse_vector_mean']:>11.4g}  "
                   f"{row['picp_kp_self_mean']:>12.3f}  "
                   f"{row['median_half_kp_self']:>11.4g}")
    if body.get("out_dir"):
        click.echo(f"artifacts: {body['out_dir']}")


@main.command("control")
@scenario_options
def control(config_path, seed, out, it_class, estimator, mode, omega, server):
    """Closed-loop run; requires a control mode other than 'off'."""
    payload = _payload(config_path, seed, out, it_class, estimator, mode, omega)
    payload["require_control"] = True
    body = _post(server, "/scenario/run", payload)
    _print_run_summary(body)


@main.command("run")
@scenario_options
def run(config_path, seed, out, it_class, estimator, mode, omega, server):
    """Full pipeline: synthesis, estimation, control (as configured), metrics."""
    payload = _payload(config_path, seed, out, it_class, estimator, mode, omega)
    body = _post(server, "/scenario/run", payload)
    _print_run_summary(body)


@main.command("report")
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Write comparison.json/csv here.")
@click.option("--server", default=None, metavar="URL")
def report(run_dirs, out, server):
    """Align the reports of several finished runs."""
    payload = {"run_dirs": list(run_dirs)}
    if out:
        payload["out_dir"] = out
    body = _post(server, "/report/compare", payload)
    for row in body["comparison"]["runs"]:
        cells = [f"{k}={row[k]}" for k in
                 ("variant", "mode", "it_class", "seed") if row.get(k) is not None]
        if row.get("max_v") is not None:
            cells.append(f"max_v={row['max_v']:.5f}")
        if row.get("curtailed_kwh") is not None:
            cells.append(f"curtailed_kwh={row['curtailed_kwh']:.2f}")
        click.echo(f"{row['dir']}: " + " ".join(cells))
    for delta in body["comparison"].get("deltas_vs_first", []):
        click.echo(f"{delta['dir']} vs {delta['vs']}: "
                   f"max_v_delta={delta['max_v_delta']:+.5f}")
    if body.get("out_dir"):
        click.echo(f"artifacts: {body['out_dir']}")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn
    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
