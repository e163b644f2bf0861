"""
Command-line interface for fedbuff-validator.
"""

import functools
import logging
import os
import sys
from typing import Any, Callable, Optional, Tuple

import click

from fedbuff_validator import __version__
from fedbuff_validator.config import load_experiment_config, resolve_output_dir
from fedbuff_validator.exceptions import BoundViolated, FedBuffValidatorException, TraceDivergence
from fedbuff_validator.harness import (
    LOGS_DIR,
    RATE_SLOPE_THRESHOLD,
    fit_rate_dir,
    run_experiment,
    trace_diff,
    verify_bound,
)
from fedbuff_validator.logger import setup_logger
from fedbuff_validator.printer import print_bound_report, print_rate_fit, print_run_summary, print_trace_diff

logger = logging.getLogger(__name__)

ABORT_EXIT_CODE = 2


def env_var_option(*param_decls: Any, **kwargs: Any) -> Callable[[Any], Any]:
    """Option that falls back to an environment variable, named in its help text."""
    env_var = kwargs.pop("env_var", None)
    if env_var:
        kwargs["envvar"] = env_var
        kwargs["help"] = f"{kwargs.get('help', '')} [env: {env_var}]"
    return click.option(*param_decls, **kwargs)


def verbose_option(f: Any) -> Any:
    return env_var_option(
        "--verbose", "-v",
        help="Enable verbose logging",
        is_flag=True,
        env_var="FEDBUFF_VERBOSE",
    )(f)


def exit_on_error(f: Callable[..., None]) -> Callable[..., None]:
    """Report package exceptions and exit with their code."""

    @functools.wraps(f)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            f(*args, **kwargs)
        except FedBuffValidatorException as e:
            click.echo(click.style(f"Error: {e}", fg="red"), err=True)
            sys.exit(e.exit_code)

    return wrapper


def _log_level(verbose: bool) -> int:
    return logging.DEBUG if verbose else logging.INFO


@click.group()
@click.version_option(__version__)
def cli() -> None:
    """FedBuff Validator - simulate buffered asynchronous federated learning and check its convergence bound.

      - run: run every (seed, horizon) cell of an experiment file
      - verify-bound: compare an experiment's multi-seed average with the bound
      - trace-diff: compare two JSONL event logs
      - fit-rate: fit the decay slope across an experiment's horizons
    """
    pass


@cli.command()
@click.option(
    "--config", "-c", "config_path",
    help="Path to YAML experiment file",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
)
@click.option(
    "--override", "-o", "overrides",
    help="Override a config value, e.g. hyper.K=2 (repeatable)",
    multiple=True,
)
@env_var_option(
    "--jobs", "-j",
    help="Number of cells run in parallel",
    type=click.IntRange(min=1),
    default=1,
    show_default=True,
    env_var="FEDBUFF_JOBS",
)
@env_var_option(
    "--out",
    help="Output root directory",
    type=click.Path(file_okay=False),
    env_var="FEDBUFF_OUTPUT_DIR",
)
@verbose_option
@exit_on_error
def run(config_path: str, overrides: Tuple[str, ...], jobs: int, out: Optional[str], verbose: bool) -> None:
    """Run an experiment and write its artifacts."""
    setup_logger(level=_log_level(verbose))
    config = load_experiment_config(config_path, overrides)
    out_root = resolve_output_dir(out, config)
    exp_dir = os.path.join(out_root, config.name)
    setup_logger(level=_log_level(verbose), log_dir=os.path.join(exp_dir, LOGS_DIR))

    manifest = run_experiment(config, out_root, jobs)
    print_run_summary(config.name, manifest["cells"], manifest["elapsed_seconds"])
    click.echo(f"Artifacts written to {exp_dir}")

    if any(cell["status"] != "ok" for cell in manifest["cells"]):
        sys.exit(ABORT_EXIT_CODE)


@cli.command("verify-bound")
@click.argument("experiment_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--horizon", "-T", "horizon_T", type=int, help="Horizon to check (default: the largest)")
@click.option("--tolerance", type=float, default=1e-12, show_default=True, help="Absolute comparison slack")
@verbose_option
@exit_on_error
def verify_bound_command(experiment_dir: str, horizon_T: Optional[int], tolerance: float, verbose: bool) -> None:
    """Check an experiment's time-averaged gradient norm against the bound."""
    setup_logger(level=_log_level(verbose))
    report = verify_bound(experiment_dir, horizon_T, tolerance)
    print_bound_report(report)
    if not report.satisfied:
        raise BoundViolated(
            "Bound violated",
            f"{report.empirical_lhs:.6g} + {report.stderr_multiplier:g} x {report.standard_error:.3g} "
            f"exceeds {report.bound_value:.6g}",
        )


@cli.command("trace-diff")
@click.argument("log_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("log_b", type=click.Path(exists=True, dir_okay=False))
@verbose_option
@exit_on_error
def trace_diff_command(log_a: str, log_b: str, verbose: bool) -> None:
    """Compare two JSONL event logs line by line."""
    setup_logger(level=_log_level(verbose))
    result = trace_diff(log_a, log_b)
    print_trace_diff(result, log_a, log_b)
    if not result.equal:
        raise TraceDivergence("Event logs differ", f"first divergence at line {result.first_divergence}")


@cli.command("fit-rate")
@click.argument("experiment_dir", type=click.Path(exists=True, file_okay=False))
@click.option(
    "--threshold",
    type=float,
    default=RATE_SLOPE_THRESHOLD,
    show_default=True,
    help="Largest acceptable log-log slope",
)
@verbose_option
@exit_on_error
def fit_rate_command(experiment_dir: str, threshold: float, verbose: bool) -> None:
    """Fit the decay of the time-averaged gradient norm across horizons."""
    setup_logger(level=_log_level(verbose))
    fit = fit_rate_dir(experiment_dir)
    print_rate_fit(fit, threshold)
    if fit.slope > threshold:
        raise BoundViolated("Rate too slow", f"fitted slope {fit.slope:.4f} exceeds {threshold}")


def main() -> None:
    """Main entry point."""
    try:
        cli()
    except KeyboardInterrupt:
        click.echo("\nOperation cancelled by user.")
        sys.exit(1)
    except FedBuffValidatorException as e:
        click.echo(click.style(f"Error: {e}", fg="red"), err=True)
        sys.exit(e.exit_code)
    except Exception as e:
        click.echo(click.style(f"Unexpected error: {e}", fg="red"), err=True)
        sys.exit(ABORT_EXIT_CODE)


if __name__ == "__main__":
    main()
