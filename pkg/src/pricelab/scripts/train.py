import logging
import sys
from pathlib import Path
from typing import Optional, Tuple

import click
from joblib import Parallel, delayed
from rxn.utilities.logging import setup_console_logger

from pricelab.config import ConfigError, load_config
from pricelab.runs import (
    RunManifest,
    parse_seeds,
    read_manifest,
    train_seed,
    write_manifest,
)

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_FAILURE = 2
EXIT_PARTIAL_FAILURE = 3


@click.command()
@click.argument(
    "config_path",
    required=False,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.argument("overrides", nargs=-1)
@click.option("--seeds", default="0", show_default=True, help='Seeds, e.g. "0..4" or "0,3,7"')
@click.option(
    "--out",
    "run_dir",
    required=True,
    type=click.Path(file_okay=False, path_type=Path),
    help="Run directory",
)
@click.option("--steps", type=int, help="Number of periods; shortcut for steps=<value>")
@click.option(
    "--jobs",
    type=int,
    default=1,
    show_default=True,
    envvar="PRICELAB_JOBS",
    help="Number of sessions run in parallel",
)
@click.option(
    "--resume",
    is_flag=True,
    help="Continue the sessions of the run directory from their last checkpoint",
)
@click.option("--log-level", default="INFO", show_default=True)
def main(
    config_path: Optional[Path],
    overrides: Tuple[str, ...],
    seeds: str,
    run_dir: Path,
    steps: Optional[int],
    jobs: int,
    resume: bool,
    log_level: str,
) -> None:
    """Train pricing agents, one session per seed.

    OVERRIDES are key=value assignments applied after the configuration file.
    """
    setup_console_logger(level=log_level.upper())

    try:
        if resume:
            manifest = read_manifest(run_dir)
            config = manifest.run_config
            seed_list = manifest.seeds
        else:
            extra = list(overrides) + ([f"steps={steps}"] if steps is not None else [])
            config = load_config(config_path, extra)
            seed_list = parse_seeds(seeds)
    except (ConfigError, ValueError) as e:
        click.echo(f"Configuration error: {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)

    run_dir.mkdir(parents=True, exist_ok=True)
    logger.info(
        f"Training {len(seed_list)} session(s) in {run_dir} "
        f"(configuration {config.config_hash[:12]})"
    )
    config_text = config.to_text()
    manifest = RunManifest(config=config_text, config_hash=config.config_hash, seeds=seed_list)
    if not resume:
        # rewritten below; an interrupted run can be resumed from this one
        write_manifest(manifest, run_dir)
    outcomes = Parallel(n_jobs=jobs)(
        delayed(train_seed)(config_text, seed, run_dir, resume) for seed in seed_list
    )

    for outcome in outcomes:
        manifest.artifacts.extend(outcome.artifacts)
        manifest.timings[outcome.seed] = {
            "seconds": outcome.seconds,
            "seconds_per_step": outcome.seconds / max(outcome.steps, 1),
        }
        if not outcome.succeeded:
            manifest.failed_seeds[outcome.seed] = outcome.error or "unknown error"
    manifest.artifacts = sorted(set(manifest.artifacts))
    write_manifest(manifest, run_dir)

    if manifest.failed_seeds:
        failed = sorted(manifest.failed_seeds)
        logger.error(f"Failed seeds: {failed}")
        sys.exit(
            EXIT_RUNTIME_FAILURE if len(failed) == len(seed_list) else EXIT_PARTIAL_FAILURE
        )


if __name__ == "__main__":
    main()
