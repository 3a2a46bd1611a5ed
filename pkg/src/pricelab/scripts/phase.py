import logging
import sys
from pathlib import Path
from typing import List, Optional

import click
from joblib import Parallel, delayed
from rxn.utilities.logging import setup_console_logger

from pricelab.checkpoint import MissingCheckpointError, load_checkpoint
from pricelab.evalkit import phase_portrait
from pricelab.evalkit.phase_portrait import (
    DEFAULT_GRID,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
)
from pricelab.orchestrator import checkpoint_strategies, make_rng
from pricelab.reports import write_json
from pricelab.runs import read_manifest, seed_directory

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

STARTS_SEED = 0


def portrait_path(out_dir: Path, seed: int, step: int) -> Path:
    return seed_directory(out_dir, seed) / f"portrait_{step}.json"


def seed_portrait(
    run_dir: Path,
    seed: int,
    step: Optional[int],
    out_dir: Path,
    grid: int,
    max_iters: int,
    tol: float,
    starts: Optional[int],
    config_hash: str,
) -> Path:
    """Portrait of one seed; sampled starts are shared by all seeds."""
    checkpoint = load_checkpoint(seed_directory(run_dir, seed), step, expected_hash=config_hash)
    params = checkpoint.config.market
    sampled = None
    if starts is not None:
        sampled = make_rng(STARTS_SEED, 0).uniform(
            checkpoint.benchmarks.p_low, checkpoint.benchmarks.p_high, size=(starts, params.n)
        )
    portrait = phase_portrait(
        checkpoint_strategies(checkpoint),
        checkpoint.benchmarks.bounds,
        grid_resolution=grid,
        max_iterations=max_iters,
        tolerance=tol,
        memory=params.k,
        starts=sampled,
        benchmarks=checkpoint.benchmarks,
    )
    path = portrait_path(out_dir, seed, checkpoint.step)
    write_json({"seed": seed, "checkpoint": checkpoint.step, **portrait.to_dict()}, path)
    logger.info(
        f"Seed {seed}: {len(portrait.fixed_points)} fixed point(s), "
        f"{sum(c is not None for c in portrait.cycles)} cyclic trajectories"
    )
    return path


@click.command()
@click.argument(
    "run_dir", type=click.Path(exists=True, file_okay=False, path_type=Path)
)
@click.option("--checkpoint", "step", type=int, help="Checkpoint step; the latest by default")
@click.option("--grid", type=int, default=DEFAULT_GRID, show_default=True, help="Points per axis")
@click.option("--max-iters", type=int, default=DEFAULT_MAX_ITERATIONS, show_default=True)
@click.option("--tol", type=float, default=DEFAULT_TOLERANCE, show_default=True)
@click.option(
    "--starts",
    type=int,
    help="Number of random starting points instead of the grid (required beyond two firms)",
)
@click.option("--jobs", type=int, default=1, show_default=True, envvar="PRICELAB_JOBS")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    help="Output directory; <run_dir>/phase by default",
)
@click.option("--log-level", default="INFO", show_default=True)
def main(
    run_dir: Path,
    step: Optional[int],
    grid: int,
    max_iters: int,
    tol: float,
    starts: Optional[int],
    jobs: int,
    out_dir: Optional[Path],
    log_level: str,
) -> None:
    """Phase portraits of the mean-policy map, one file per seed."""
    setup_console_logger(level=log_level.upper())

    manifest = read_manifest(run_dir)
    n = manifest.run_config.market.n
    if n != 2 and starts is None:
        click.echo(
            f"Grid portraits are only supported for two firms (this run has {n}); "
            f"use --starts to sample starting points",
            err=True,
        )
        sys.exit(1)

    seeds = [seed for seed in manifest.seeds if seed not in manifest.failed_seeds]
    out_dir = run_dir / "phase" if out_dir is None else out_dir
    try:
        paths: List[Path] = Parallel(n_jobs=jobs)(
            delayed(seed_portrait)(
                run_dir, seed, step, out_dir, grid, max_iters, tol, starts, manifest.config_hash
            )
            for seed in seeds
        )
    except MissingCheckpointError as e:
        click.echo(str(e), err=True)
        sys.exit(1)
    logger.info(f"Wrote {len(paths)} portrait(s) to \"{out_dir}\"")


if __name__ == "__main__":
    main()
