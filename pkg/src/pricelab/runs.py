"""
Run directories: one sub-directory per seed with the session log, the
diagnostics and the checkpoints, plus a manifest at the top level.
"""

import logging
import re
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import attr
import numpy as np
import pandas as pd

from . import __version__
from .checkpoint import Checkpoint, available_steps, load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_text
from .evalkit.deviation import DeviationProtocol, DeviationResult
from .market import SolverError, SquashingError
from .netcore import DivergenceError
from .orchestrator import (
    SessionAbortedError,
    SessionConfig,
    SessionLog,
    Verdict,
    checkpoint_verdict,
    moving_average,
    resume_session,
    run_session,
    seed_band,
    session_profit_gain,
)
from .reports import read_csv, read_json, write_csv, write_json

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

MANIFEST_FILE = "manifest.json"
LOG_FILE = "log.csv"
DIAGNOSTICS_FILE = "diagnostics.json"
SEED_PATTERN = re.compile(r"^seed_(\d+)$")
CURVE_COLUMNS = ["step", "mean", "lower", "upper"]
# seed_band needs at least this many seeds
MIN_BAND_SEEDS = 4


def parse_seeds(text: str) -> List[int]:
    """
    Seeds from "3", "0..4" (inclusive range) or comma-separated combinations
    of both, e.g. "0..2,7".
    """
    seeds: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            first, last = (int(x) for x in part.split("..", 1))
            if last < first:
                raise ValueError(f"empty seed range: {part}")
            seeds.extend(range(first, last + 1))
        else:
            seeds.append(int(part))
    if not seeds or len(set(seeds)) != len(seeds):
        raise ValueError(f'seeds must be non-empty and unique: "{text}"')
    return seeds


def seed_directory(run_dir: Path, seed: int) -> Path:
    return run_dir / f"seed_{seed:03d}"


def run_seeds(run_dir: Path) -> List[int]:
    seeds = []
    for path in run_dir.iterdir() if run_dir.is_dir() else []:
        match = SEED_PATTERN.match(path.name)
        if match is not None and path.is_dir():
            seeds.append(int(match.group(1)))
    return sorted(seeds)


@attr.s(auto_attribs=True)
class SeedOutcome:
    seed: int
    succeeded: bool
    seconds: float
    steps: int
    artifacts: List[str] = attr.Factory(list)
    error: Optional[str] = None


@attr.s(auto_attribs=True)
class RunManifest:
    """
    Record of a training run.

    Attributes:
        config: canonical configuration text.
        config_hash: hash of the configuration, also stored in checkpoints.
        seeds: all requested seeds.
        failed_seeds: error message per failed seed.
        artifacts: paths of the emitted files, relative to the run directory.
        version: version of the package that produced the run.
        timings: wall-clock seconds and seconds per step, per seed.
    """

    config: str
    config_hash: str
    seeds: List[int]
    failed_seeds: Dict[int, str] = attr.Factory(dict)
    artifacts: List[str] = attr.Factory(list)
    version: str = __version__
    timings: Dict[int, Dict[str, float]] = attr.Factory(dict)

    def to_dict(self) -> Dict[str, Any]:
        content = attr.asdict(self)
        content["failed_seeds"] = {str(k): v for k, v in self.failed_seeds.items()}
        content["timings"] = {str(k): v for k, v in self.timings.items()}
        return content

    @classmethod
    def from_dict(cls, content: Dict[str, Any]) -> "RunManifest":
        return cls(
            config=content["config"],
            config_hash=content["config_hash"],
            seeds=list(content["seeds"]),
            failed_seeds={int(k): v for k, v in content["failed_seeds"].items()},
            artifacts=list(content["artifacts"]),
            version=content["version"],
            timings={int(k): v for k, v in content["timings"].items()},
        )

    @property
    def run_config(self) -> RunConfig:
        return config_from_text(self.config)


def write_manifest(manifest: RunManifest, run_dir: Path) -> None:
    write_json(manifest.to_dict(), run_dir / MANIFEST_FILE)


def read_manifest(run_dir: Path) -> RunManifest:
    return RunManifest.from_dict(read_json(run_dir / MANIFEST_FILE))


def _relative(path: Path, run_dir: Path) -> str:
    return path.relative_to(run_dir).as_posix()


def _write_log(log: SessionLog, directory: Path) -> List[Path]:
    log_path = directory / LOG_FILE
    diagnostics_path = directory / DIAGNOSTICS_FILE
    write_csv(log.to_frame(), log_path)
    write_json({"seed": log.seed, "diagnostics": log.diagnostics}, diagnostics_path)
    return [log_path, diagnostics_path]


def read_session_log(directory: Path, checkpoint: Checkpoint, until: Optional[int] = None) -> SessionLog:
    """
    Session log stored in a seed directory, cut to the periods before
    `until` (all periods if None).
    """
    frame = read_csv(directory / LOG_FILE)
    if until is not None:
        frame = frame[frame["step"] < until]
    n = checkpoint.config.market.n
    diagnostics = read_json(directory / DIAGNOSTICS_FILE)["diagnostics"]
    return SessionLog(
        seed=checkpoint.seed,
        benchmarks=checkpoint.benchmarks,
        first_step=int(frame["step"].iloc[0]) if len(frame) else 0,
        prices=frame[[f"price_{i}" for i in range(n)]].to_numpy(dtype=np.float64),
        profits=frame[[f"profit_{i}" for i in range(n)]].to_numpy(dtype=np.float64),
        diagnostics=[d for d in diagnostics if until is None or d["step"] < until],
        metrics_window=checkpoint.config.session.metrics_window,
    )


def train_seed(config_text: str, seed: int, run_dir: Path, resume: bool = False) -> SeedOutcome:
    """
    Runs (or, with resume, continues) the session of one seed and writes its
    files. Aborted sessions are reported in the outcome, not raised.
    """
    config = config_from_text(config_text)
    directory = seed_directory(run_dir, seed)
    directory.mkdir(parents=True, exist_ok=True)
    artifacts: List[Path] = []
    previous: Optional[SessionLog] = None

    def full_log(log: SessionLog) -> SessionLog:
        return log if previous is None else previous.extend(log)

    def store(checkpoint: Checkpoint, log: SessionLog) -> None:
        artifacts.append(save_checkpoint(checkpoint, directory))
        # the log next to each checkpoint allows resuming after a crash
        _write_log(full_log(log), directory)

    start = time.perf_counter()
    first_step = 0
    try:
        steps = available_steps(directory) if resume else []
        if steps and not (directory / LOG_FILE).exists():
            logger.warning(f"Seed {seed}: checkpoints without a session log, starting over")
            steps = []
        if steps:
            checkpoint = load_checkpoint(directory, steps[-1], expected_hash=config.config_hash)
            first_step = checkpoint.step
            logger.info(f"Seed {seed}: resuming from step {first_step}")
            previous = read_session_log(directory, checkpoint, until=first_step)
            log, _ = resume_session(checkpoint, on_checkpoint=store)
        else:
            log, _ = run_session(SessionConfig(config, seed), on_checkpoint=store)
        log = full_log(log)
    except (SessionAbortedError, SolverError, DivergenceError, SquashingError) as e:
        logger.error(f"Seed {seed} failed: {e}")
        return SeedOutcome(
            seed=seed,
            succeeded=False,
            seconds=time.perf_counter() - start,
            steps=getattr(e, "step", first_step),
            artifacts=[_relative(p, run_dir) for p in artifacts],
            error=str(e),
        )

    artifacts.extend(_write_log(log, directory))
    return SeedOutcome(
        seed=seed,
        succeeded=True,
        seconds=time.perf_counter() - start,
        steps=config.session.steps - first_step,
        artifacts=[_relative(p, run_dir) for p in artifacts],
    )


@attr.s(auto_attribs=True)
class SeedEvaluation:
    """Deviation results of one seed and checkpoint."""

    seed: int
    step: int
    verdict: Verdict
    results: List[DeviationResult]
    profit_gain: float


def evaluate_seed(
    run_dir: Path, seed: int, step: int, protocol: DeviationProtocol, config_hash: Optional[str] = None
) -> SeedEvaluation:
    """Deviation experiments for every agent of one checkpoint."""
    directory = seed_directory(run_dir, seed)
    checkpoint = load_checkpoint(directory, step, expected_hash=config_hash)
    verdict, results = checkpoint_verdict(checkpoint, protocol)
    log = read_session_log(directory, checkpoint, until=step)
    return SeedEvaluation(
        seed=seed,
        step=step,
        verdict=verdict,
        results=results,
        profit_gain=session_profit_gain(log),
    )


def common_steps(run_dir: Path, seeds: Sequence[int]) -> List[int]:
    """Checkpoint steps available for every seed."""
    per_seed = [set(available_steps(seed_directory(run_dir, seed))) for seed in seeds]
    if not per_seed:
        return []
    return sorted(set.intersection(*per_seed))


def training_curve(
    run_dir: Path, seeds: Sequence[int], window: int, every: int = 1
) -> pd.DataFrame:
    """
    Moving-average profit gain across seeds: the mean and the empirical 95%
    band over the seeds, at every `every`-th step and at the last step.

    Steps beyond the shortest session log are dropped. With fewer than
    MIN_BAND_SEEDS seeds, the band is NaN.
    """
    if every < 1:
        raise ValueError(f"every must be at least 1 (actual: {every})")
    frames = [read_csv(seed_directory(run_dir, seed) / LOG_FILE) for seed in seeds]
    if not frames:
        return pd.DataFrame(columns=CURVE_COLUMNS)
    length = min(len(frame) for frame in frames)
    values = np.stack(
        [moving_average(frame["profit_gain"].to_numpy()[:length], window) for frame in frames]
    )
    steps = frames[0]["step"].to_numpy()[:length]
    kept = ((steps + 1) % every == 0) | (np.arange(length) == length - 1)
    values = values[:, kept]

    if len(frames) >= MIN_BAND_SEEDS:
        lower, upper = seed_band(values)
    else:
        logger.warning(
            f"Seed band needs {MIN_BAND_SEEDS} sessions (actual: {len(frames)}); left empty"
        )
        lower = upper = np.full(values.shape[1], np.nan)
    return pd.DataFrame(
        {"step": steps[kept], "mean": values.mean(axis=0), "lower": lower, "upper": upper},
        columns=CURVE_COLUMNS,
    )
