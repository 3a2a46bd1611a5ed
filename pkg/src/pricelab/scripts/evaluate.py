import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import click
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from rxn.utilities.logging import setup_console_logger

from pricelab.checkpoint import CheckpointFormatError, MissingCheckpointError, available_steps
from pricelab.evalkit import (
    DeviationPrice,
    DeviationProtocol,
    equilibrium_gain_correlation,
    gain_table,
    impulse_response_stats,
    summarize_profit_gains,
    uniform_pricing_gain,
)
from pricelab.market import compute_benchmarks
from pricelab.netcore import DivergenceError
from pricelab.orchestrator import Verdict, make_rng
from pricelab.reports import write_csv, write_json
from pricelab.runs import (
    SeedEvaluation,
    common_steps,
    evaluate_seed,
    read_manifest,
    seed_directory,
    training_curve,
)

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

GAINS_FILE = "gains.csv"
IMPULSE_FILE = "impulse.csv"
SUMMARY_FILE = "summary.json"
CURVES_FILE = "curves.csv"
BOOTSTRAP_SEED = 0
REFERENCE_DRAWS = 100_000
DEVIATION_CHOICES = ", ".join(d.value for d in DeviationPrice if d is not DeviationPrice.VALUE)


def parse_deviation_price(text: str) -> Tuple[DeviationPrice, Optional[float]]:
    """A named deviation price ("best-response", "monopoly", ...) or a number."""
    try:
        deviation = DeviationPrice(text)
    except ValueError:
        pass
    else:
        if deviation is not DeviationPrice.VALUE:
            return deviation, None
    try:
        return DeviationPrice.VALUE, float(text)
    except ValueError:
        raise click.BadParameter(f'"{text}" is neither a price nor one of {DEVIATION_CHOICES}')


def gains_frame(evaluations: List[SeedEvaluation]) -> pd.DataFrame:
    rows = [
        {
            "session": evaluation.seed,
            "agent": result.deviator,
            "checkpoint": evaluation.step,
            "gain": result.discounted_gain,
            "relative_gain": result.relative_gain,
            "differential_gain": result.differential_gain,
            "profitable": result.profitable,
            "verdict": evaluation.verdict.value,
        }
        for evaluation in evaluations
        for result in evaluation.results
    ]
    return pd.DataFrame(
        rows,
        columns=[
            "session",
            "agent",
            "checkpoint",
            "gain",
            "relative_gain",
            "differential_gain",
            "profitable",
            "verdict",
        ],
    )


def impulse_frame(evaluations: List[SeedEvaluation], nash_only: bool) -> pd.DataFrame:
    frames = []
    for step in sorted({e.step for e in evaluations}):
        results = [
            result
            for e in evaluations
            if e.step == step and (not nash_only or e.verdict is Verdict.NASH_CONVERGENT)
            for result in e.results
        ]
        stats = impulse_response_stats(results)
        stats.insert(0, "checkpoint", step)
        frames.append(stats)
    return pd.concat(frames, ignore_index=True)


def summary(
    evaluations: List[SeedEvaluation], table: pd.DataFrame, reference_gain: float
) -> Dict[str, Any]:
    per_checkpoint: Dict[str, Any] = {}
    by_step: Dict[int, List[SeedEvaluation]] = defaultdict(list)
    for evaluation in evaluations:
        by_step[evaluation.step].append(evaluation)
    for step, group in sorted(by_step.items()):
        convergent = [e.verdict is Verdict.NASH_CONVERGENT for e in group]
        gains = [e.profit_gain for e in group]
        correlation: Optional[float] = None
        if len(group) >= 3:
            correlation = equilibrium_gain_correlation(convergent, gains)
        per_checkpoint[str(step)] = {
            "sessions": len(group),
            "profit_gain": summarize_profit_gains(gains),
            "verdict_shares": {
                verdict.value: float(np.mean([e.verdict is verdict for e in group]))
                for verdict in Verdict
            },
            "convergence_gain_correlation": correlation,
        }
    return {
        "checkpoints": per_checkpoint,
        "gain_table": table.to_dict(orient="records"),
        "uniform_pricing_gain": reference_gain,
    }


@click.command()
@click.argument(
    "run_dir", type=click.Path(exists=True, file_okay=False, path_type=Path)
)
@click.option(
    "--checkpoint",
    "steps",
    type=int,
    multiple=True,
    help="Checkpoint step to evaluate (repeatable); all common steps by default",
)
@click.option(
    "--deviation-price",
    default=DeviationPrice.BEST_RESPONSE.value,
    show_default=True,
    help=f"Deviation price: a number or one of {DEVIATION_CHOICES}",
)
@click.option(
    "--filter",
    "session_filter",
    type=click.Choice(["all", "nash"]),
    default="nash",
    show_default=True,
    help="Sessions entering the impulse responses",
)
@click.option("--delta", type=float, default=0.95, show_default=True)
@click.option("--horizon", type=int, default=10, show_default=True)
@click.option("--settle", type=int, default=50, show_default=True)
@click.option(
    "--curve-every",
    type=click.IntRange(min=1),
    default=1_000,
    show_default=True,
    help="Step interval of the training curve",
)
@click.option("--jobs", type=int, default=1, show_default=True, envvar="PRICELAB_JOBS")
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    help="Report directory; <run_dir>/evaluation by default",
)
@click.option("--log-level", default="INFO", show_default=True)
def main(
    run_dir: Path,
    steps: Tuple[int, ...],
    deviation_price: str,
    session_filter: str,
    delta: float,
    horizon: int,
    settle: int,
    curve_every: int,
    jobs: int,
    out_dir: Optional[Path],
    log_level: str,
) -> None:
    """Deviation experiments on the checkpoints of a training run."""
    setup_console_logger(level=log_level.upper())

    deviation, value = parse_deviation_price(deviation_price)
    try:
        protocol = DeviationProtocol(
            delta=delta, horizon=horizon, settle=settle, deviation=deviation, value=value
        )
    except ValueError as e:
        raise click.BadParameter(str(e))

    manifest = read_manifest(run_dir)
    seeds = [seed for seed in manifest.seeds if seed not in manifest.failed_seeds]
    if not seeds:
        click.echo("No successful session in the run directory", err=True)
        sys.exit(1)
    step_list = sorted(set(steps)) if steps else common_steps(run_dir, seeds)
    if not step_list:
        click.echo("No checkpoint is common to all sessions", err=True)
        sys.exit(1)
    for seed in seeds:
        available = available_steps(seed_directory(run_dir, seed))
        for step in step_list:
            if step not in available:
                click.echo(f"Seed {seed}: {MissingCheckpointError(step, available)}", err=True)
                sys.exit(1)

    logger.info(f"Evaluating {len(seeds)} session(s) at step(s) {step_list}")
    try:
        evaluations: List[SeedEvaluation] = Parallel(n_jobs=jobs)(
            delayed(evaluate_seed)(run_dir, seed, step, protocol, manifest.config_hash)
            for step in step_list
            for seed in seeds
        )
    except (CheckpointFormatError, DivergenceError, ValueError) as e:
        click.echo(f"Evaluation failed: {e}", err=True)
        sys.exit(2)

    out_dir = run_dir / "evaluation" if out_dir is None else out_dir
    gains = gains_frame(evaluations)
    gains_by_checkpoint = {
        step: gains.loc[gains["checkpoint"] == step, "gain"].tolist() for step in step_list
    }
    table = gain_table(gains_by_checkpoint, make_rng(BOOTSTRAP_SEED, 0))
    config = manifest.run_config
    reference_gain = uniform_pricing_gain(
        config.market,
        compute_benchmarks(config.market),
        REFERENCE_DRAWS,
        make_rng(BOOTSTRAP_SEED, 1),
    )
    curve = training_curve(run_dir, seeds, config.session.metrics_window, curve_every)
    write_csv(gains, out_dir / GAINS_FILE)
    write_csv(impulse_frame(evaluations, session_filter == "nash"), out_dir / IMPULSE_FILE)
    write_csv(curve, out_dir / CURVES_FILE)
    write_json(summary(evaluations, table, reference_gain), out_dir / SUMMARY_FILE)
    logger.info(f'Reports written to "{out_dir}"')


if __name__ == "__main__":
    main()
