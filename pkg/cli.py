# cli.py
import logging
import sys
from typing import List, Optional

import click
from pydantic import ValidationError

from catalog import NF_LOG_LEVEL, PORT, init_catalog, list_examples, get_problem, resolve_problem
from errors import EXIT_GATE_FAILED, EXIT_OK, EXIT_USAGE, NormalFormError, exit_code_for
from models import FlowConfig
from pipelines import (
    probe_csv,
    run_normalize,
    run_probe,
    run_trajectory,
    run_validate,
    sidecar_path,
    trajectory_csv,
    validate_csv,
    write_json,
    write_text,
)
from problems import dump_problem

logger = logging.getLogger(__name__)


def _parse_floats(ctx, param, value: Optional[str]) -> Optional[List[float]]:
    if value is None:
        return None
    parts = [part.strip() for part in value.split(",") if part.strip()]
    if not parts:
        raise click.BadParameter("list must not be empty", ctx=ctx, param=param)
    try:
        return [float(part) for part in parts]
    except ValueError:
        raise click.BadParameter(f"'{value}' is not a comma-separated list of numbers", ctx=ctx, param=param)


def _parse_eps(ctx, param, value: Optional[str]) -> Optional[List[float]]:
    eps = _parse_floats(ctx, param, value)
    if eps is not None and any(x <= 0 for x in eps):
        raise click.BadParameter("eps values must be positive", ctx=ctx, param=param)
    return eps


def _fail(exc: BaseException) -> int:
    click.echo(f"❌ {type(exc).__name__}: {exc}", err=True)
    return exit_code_for(exc)


experiment_options = [
    click.option("--eps", "eps_list", callback=_parse_eps, help="Comma-separated eps values"),
    click.option("--seed", type=int, default=None, help="Sampling seed (NF_DEFAULT_SEED)"),
    click.option("--dt", type=click.FloatRange(min=0, min_open=True), default=None, help="Fixed step, or the largest step for dop853"),
    click.option("--horizon-factor", type=click.FloatRange(min=0, min_open=True), default=None, help="T = factor / eps"),
    click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV report path"),
]


def with_experiment_options(command):
    for option in reversed(experiment_options):
        command = option(command)
    return command


@click.group()
@click.option("--log-level", default=NF_LOG_LEVEL, show_default=True)
def cli(log_level: str):
    """Normal forms for one fast phase with small amplitudes"""
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.INFO))


@cli.command()
@click.argument("problem")
@click.option("--order", "-m", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Result JSON path")
def normalize(problem: str, order: int, out: Optional[str]) -> int:
    """Normalize PROBLEM (a problem file or an example name) to the given order"""
    try:
        _, document = run_normalize(resolve_problem(problem), order)
    except NormalFormError as e:
        return _fail(e)
    if out:
        write_json(out, document)
    else:
        click.echo(document.model_dump_json(indent=2))
    return EXIT_OK


@cli.command()
@click.argument("problem")
@click.option("--order", "-m", type=int, default=1, show_default=True)
@with_experiment_options
def validate(problem, order, eps_list, seed, dt, horizon_factor, out) -> int:
    """Drift scaling, canonicity and roundtrip gates at one order"""
    try:
        report = run_validate(resolve_problem(problem), order, eps_list, seed, dt, horizon_factor)
    except NormalFormError as e:
        return _fail(e)
    if out:
        write_text(out, validate_csv(report))
        write_json(sidecar_path(out), report)
    else:
        click.echo(validate_csv(report), nl=False)
    for gate in report.gates:
        mark = "✅" if gate.passed else "❌"
        click.echo(f"{mark} {gate.name}: {gate.detail}", err=True)
    return EXIT_OK if report.passed else EXIT_GATE_FAILED


@cli.command()
@click.argument("problem")
@click.option("--order", "-m", "m_max", type=int, default=4, show_default=True, help="Largest order tried")
@with_experiment_options
def probe(problem, m_max, eps_list, seed, dt, horizon_factor, out) -> int:
    """Best order per eps and the super-polynomial diagnostic"""
    try:
        report = run_probe(resolve_problem(problem), m_max, eps_list, seed, dt, horizon_factor)
    except NormalFormError as e:
        return _fail(e)
    if out:
        write_text(out, probe_csv(report))
        write_json(sidecar_path(out), report)
    else:
        click.echo(probe_csv(report), nl=False)
    for warning in report.warnings:
        click.echo(f"⚠️ {warning}", err=True)
    click.echo(
        f"📋 best_m monotone: {report.best_m_monotone}, super-polynomial: {report.super_polynomial}, "
        f"log-drift vs 1/eps slope: {report.fit_slope_inverse_eps}",
        err=True,
    )
    return EXIT_OK


@cli.command()
@click.argument("problem")
@click.option("--order", "-m", type=click.IntRange(min=0), default=1, show_default=True, help="0 measures J in the original variables")
@click.option("--eps", type=click.FloatRange(min=0), required=True)
@click.option("--x0", required=True, callback=_parse_floats, help="Comma-separated initial state q,p,y1..,y2..")
@click.option("--t-final", type=click.FloatRange(min=0, min_open=True), default=10.0, show_default=True)
@click.option("--method", type=click.Choice(["implicit-midpoint", "rk4-fixed", "dop853"]), default="implicit-midpoint", show_default=True)
@click.option("--dt", type=click.FloatRange(min=0, min_open=True), default=1e-2, show_default=True)
@click.option("--samples", type=click.IntRange(min=2), default=2000, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV trajectory path")
def trajectory(problem, order, eps, x0, t_final, method, dt, samples, out) -> int:
    """Sampled flow of PROBLEM with energy and the transformed action J"""
    try:
        cfg = FlowConfig(method=method, dt=dt, t_final=t_final, max_samples=samples)
        report = run_trajectory(resolve_problem(problem), order, eps, x0, cfg)
    except (NormalFormError, ValidationError) as e:
        return _fail(e)
    if out:
        write_text(out, trajectory_csv(report))
        write_json(sidecar_path(out), report)
    else:
        click.echo(trajectory_csv(report), nl=False)
    click.echo(f"📋 drift {report.drift:.3e}, energy error {report.energy_error:.3e}", err=True)
    return EXIT_OK


@cli.group()
def examples():
    """Built-in and configured problems"""


@examples.command("list")
def examples_list() -> int:
    init_catalog()
    for summary in list_examples():
        click.echo(f"{summary.name}\t{summary.label}")
    return EXIT_OK


@examples.command("show")
@click.argument("name")
def examples_show(name: str) -> int:
    init_catalog()
    try:
        click.echo(dump_problem(get_problem(name)))
    except NormalFormError as e:
        return _fail(e)
    return EXIT_OK


@cli.command()
@click.option("--host", default="0.0.0.0", show_default=True)
@click.option("--port", type=int, default=PORT, show_default=True)
def serve(host: str, port: int) -> int:
    """Run the HTTP API"""
    import uvicorn

    uvicorn.run("main:app", host=host, port=port, reload=False)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    try:
        code = cli.main(args=argv, prog_name="nf", standalone_mode=False)
    except click.UsageError as e:
        click.echo(f"❌ {e.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        click.echo(f"❌ {e.format_message()}", err=True)
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    return code if isinstance(code, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
