import logging
import sys
from pathlib import Path

import click
from rich.console import Console
from rich.logging import RichHandler
from tabulate import tabulate

from src.exceptions import ConfigError
from src.runner import load_config
from src.runner import run as run_experiment
from src.settings import DEFAULT_THREADS, LOG_LEVEL, VERSION

logger = logging.getLogger(__name__)

EXIT_FAILED = 1
EXIT_CONFIG = 2


def configure_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else getattr(logging, LOG_LEVEL, logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def _report_config_error(error: ConfigError):
    click.echo(f"Invalid configuration{f' {error.path}' if error.path else ''}:", err=True)
    for problem in error.errors:
        click.echo(f"  - {problem}", err=True)


@click.group()
@click.version_option(VERSION, prog_name="qexodus")
def cli():
    """Markov processes conditioned not to hit moving boundaries."""


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False), help="Output directory")
@click.option("--threads", default=DEFAULT_THREADS, show_default=True, type=click.IntRange(min=1))
@click.option("--verbose", is_flag=True, help="Log per-step detail")
def run(config_path: str, out_dir: str, threads: int, verbose: bool):
    """Run an experiment and write its report."""
    configure_logging(verbose)
    try:
        config = load_config(config_path)
    except ConfigError as e:
        _report_config_error(e)
        sys.exit(EXIT_CONFIG)

    report = run_experiment(config, out_dir=out_dir, threads=threads, base_dir=Path(config_path).parent)
    table = [
        [name, "pass" if section.passed else "FAIL", section.error or ""]
        for name, section in report.sections.items()
    ]
    click.echo(tabulate(table, headers=["section", "status", "error"], tablefmt="simple"))
    click.echo(f"{'PASSED' if report.passed else 'FAILED'} (config {report.config_hash[:12]})")
    sys.exit(0 if report.passed else EXIT_FAILED)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
def validate(config_path: str):
    """Validate an experiment config without running it."""
    configure_logging()
    try:
        config = load_config(config_path)
    except ConfigError as e:
        _report_config_error(e)
        sys.exit(EXIT_CONFIG)
    click.echo(f"OK: {config.kind} experiment {config.name!r}")


if __name__ == "__main__":
    cli()
