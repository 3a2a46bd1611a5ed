import sys
from pathlib import Path
from typing import Optional, Sequence, Tuple

import click
from rxn.utilities.logging import setup_console_logger

from pricelab.config import ConfigError, load_config
from pricelab.market import MarketConfigurationError, SolverError, compute_benchmarks


def _format(values: Sequence[float]) -> str:
    return ", ".join(f"{v:.6f}" for v in values)


@click.command()
@click.argument(
    "config_path",
    required=False,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.argument("overrides", nargs=-1)
@click.option("--log-level", default="WARNING", show_default=True)
def main(config_path: Optional[Path], overrides: Tuple[str, ...], log_level: str) -> None:
    """Print the Nash and monopoly benchmarks and the price box of a market."""
    setup_console_logger(level=log_level.upper())

    try:
        params = load_config(config_path, overrides).market
    except ConfigError as e:
        click.echo(f"Configuration error: {e}", err=True)
        sys.exit(1)

    try:
        benchmarks = compute_benchmarks(params)
    except SolverError as e:
        click.echo(f"Solver failure: {e}", err=True)
        sys.exit(2)
    except MarketConfigurationError as e:
        click.echo(f"Invalid market: {e}", err=True)
        sys.exit(1)

    click.echo(f"p_N   = {_format(benchmarks.p_nash)}")
    click.echo(f"p_M   = {_format(benchmarks.p_mono)}")
    click.echo(f"pi_N  = {_format(benchmarks.pi_nash)}")
    click.echo(f"pi_M  = {_format(benchmarks.pi_mono)}")
    click.echo(f"p_low = {benchmarks.p_low:.6f}")
    click.echo(f"p_high = {benchmarks.p_high:.6f}")


if __name__ == "__main__":
    main()
