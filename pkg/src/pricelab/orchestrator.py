"""
Training sessions: warmup, simultaneous play, one learn step per agent and
period, metrics and checkpoints.
"""

import enum
import logging
from collections import deque
from typing import Any, Callable, Deque, Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np
import pandas as pd

from .agent import RAW_ACTION_LIMIT, SoftActorCritic
from .checkpoint import Checkpoint
from .config import RunConfig
from .evalkit.deviation import DeviationProtocol, DeviationResult, deviation_experiment
from .market import (
    Benchmarks,
    MarketConfigurationError,
    MarketEnvironment,
    MarketParams,
    SquashingError,
    compute_benchmarks,
    profit_gain,
    scale_actions,
)
from .netcore import DivergenceError
from .replay import Experience, ReplayBuffer
from .strategies import LearnedStrategy, Strategy

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

RECENT_PRICES = 50
ENVIRONMENT_STREAM = 0


class SessionAbortedError(RuntimeError):
    """Exception raised when an agent aborts; carries the offending step."""

    def __init__(self, seed: int, step: int, cause: Exception):
        self.seed = seed
        self.step = step
        self.cause = cause
        super().__init__(f"Session with seed {seed} aborted at step {step}: {cause}")


class Verdict(enum.Enum):
    NASH_CONVERGENT = "nash_convergent"
    NON_CONVERGENT = "non_convergent"


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one (seed, stream) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


@attr.s(auto_attribs=True, frozen=True)
class SessionConfig:
    config: RunConfig
    seed: int

    @property
    def market(self) -> MarketParams:
        return self.config.market

    @property
    def total_steps(self) -> int:
        return self.config.session.steps


@attr.s(auto_attribs=True)
class SessionLog:
    """
    Per-step record of a session.

    Attributes:
        seed: session seed.
        benchmarks: benchmarks the profit gains are relative to.
        first_step: index of the first logged period.
        prices: joint prices, one row per period.
        profits: per-firm profits, one row per period.
        diagnostics: agent diagnostics, one record per agent and cadence step.
        metrics_window: window of the profit-gain moving average.
    """

    seed: int
    benchmarks: Benchmarks
    first_step: int
    prices: np.ndarray
    profits: np.ndarray
    diagnostics: List[Dict[str, Any]]
    metrics_window: int

    def __len__(self) -> int:
        return int(self.prices.shape[0])

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.first_step, self.first_step + len(self))

    @property
    def profit_gains(self) -> np.ndarray:
        return profit_gain(self.profits.mean(axis=1), self.benchmarks)

    @property
    def moving_average_gains(self) -> np.ndarray:
        return moving_average(self.profit_gains, self.metrics_window)

    def extend(self, following: "SessionLog") -> "SessionLog":
        """Concatenation with the log of a resumed session."""
        if following.first_step != self.first_step + len(self):
            raise ValueError(
                f"logs are not contiguous: {self.first_step + len(self)} "
                f"!= {following.first_step}"
            )
        return SessionLog(
            seed=self.seed,
            benchmarks=self.benchmarks,
            first_step=self.first_step,
            prices=np.concatenate([self.prices, following.prices]),
            profits=np.concatenate([self.profits, following.profits]),
            diagnostics=self.diagnostics + following.diagnostics,
            metrics_window=self.metrics_window,
        )

    def to_frame(self) -> pd.DataFrame:
        n = self.prices.shape[1]
        columns: Dict[str, Any] = {"step": self.steps}
        for i in range(n):
            columns[f"price_{i}"] = self.prices[:, i]
        for i in range(n):
            columns[f"profit_{i}"] = self.profits[:, i]
        columns["profit_gain"] = self.profit_gains
        columns["profit_gain_ma"] = self.moving_average_gains
        return pd.DataFrame(columns)


def moving_average(series: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean; the first window - 1 entries average the available prefix."""
    if window < 1:
        raise ValueError(f"window must be at least 1 (actual: {window})")
    averaged: np.ndarray = (
        pd.Series(np.asarray(series, dtype=np.float64))
        .rolling(window, min_periods=1)
        .mean()
        .to_numpy()
    )
    return averaged


def seed_band(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Empirical 95% band across seeds (rows) at every step (columns).

    The bounds interpolate the order statistics at the 1-based ranks
    0.025 * count and 0.975 * count; for 100 seeds, the mean of the 2nd and
    3rd, and of the 97th and 98th values.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    count = values.shape[0]
    if count < 4:
        raise ValueError(f"seed_band needs at least 4 seeds (actual: {count})")
    ordered = np.sort(values, axis=0)

    def at_rank(rank: float) -> np.ndarray:
        rank = min(max(rank, 1.0), float(count))
        lower = int(np.floor(rank))
        upper = min(lower + 1, count)
        weight = rank - lower
        interpolated: np.ndarray = (1.0 - weight) * ordered[lower - 1] + weight * ordered[upper - 1]
        return interpolated

    return at_rank(0.025 * count), at_rank(0.975 * count)


def session_profit_gain(log: SessionLog, window: Optional[int] = None) -> float:
    """Mean profit gain over the final window of a session."""
    window = log.metrics_window if window is None else window
    return float(np.mean(log.profit_gains[-window:]))


# receives each checkpoint with the log of the periods played so far
CheckpointCallback = Callable[[Checkpoint, "SessionLog"], None]


class Session:
    """
    State of one running session: market, agents, replay buffers and random
    streams. Each agent only ever sees joint prices and its own profit.
    """

    def __init__(self, session_config: SessionConfig, benchmarks: Optional[Benchmarks] = None):
        self.config = session_config.config
        self.seed = session_config.seed
        market = self.config.market
        if market.n < 2:
            raise MarketConfigurationError(f"sessions need at least two firms (actual: {market.n})")
        self.benchmarks = benchmarks if benchmarks is not None else compute_benchmarks(market)
        self.env = MarketEnvironment(market, self.benchmarks)
        self.env_rng = make_rng(self.seed, ENVIRONMENT_STREAM)

        hyper = self.config.hyper
        state_size = market.n * market.k
        self.agents = [
            SoftActorCritic(state_size, hyper, make_rng(self.seed, i + 1))
            for i in range(market.n)
        ]
        self.buffers = [ReplayBuffer(hyper.buffer_size, state_size) for _ in range(market.n)]
        self.recent_prices: Deque[np.ndarray] = deque(maxlen=RECENT_PRICES)
        self.step = 0

        # the initial state is uniform over the box
        self.env.reset(scale_actions(self._uniform_raw_actions(), self.benchmarks.bounds))

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "Session":
        session = cls(SessionConfig(checkpoint.config, checkpoint.seed), checkpoint.benchmarks)
        streams = [session.env_rng] + [agent.rng for agent in session.agents]
        for rng, state in zip(streams, checkpoint.rng_states):
            rng.bit_generator.state = state
        for agent, agent_state in zip(session.agents, checkpoint.agents):
            agent.state = attr.evolve(agent_state)
        session.env.memory.clear()
        session.env.memory.extend(np.array(prices) for prices in checkpoint.memory)
        session.recent_prices.extend(np.array(prices) for prices in checkpoint.recent_prices)
        session.step = checkpoint.step
        if checkpoint.replay is not None:
            session.buffers = [buffer.copy() for buffer in checkpoint.replay]
        elif checkpoint.step >= checkpoint.config.hyper.batch_size:
            logger.warning(
                f"Checkpoint at step {checkpoint.step} holds no replay buffers; "
                f"learning pauses until {checkpoint.config.hyper.batch_size} new "
                f"experiences are collected"
            )
        return session

    def _uniform_raw_actions(self) -> np.ndarray:
        raw: np.ndarray = self.env_rng.uniform(-1.0, 1.0, size=self.config.market.n)
        clipped: np.ndarray = np.clip(raw, -RAW_ACTION_LIMIT, RAW_ACTION_LIMIT)
        return clipped

    def checkpoint(self) -> Checkpoint:
        """Snapshot of the session; later steps do not modify it."""
        return Checkpoint(
            step=self.step,
            seed=self.seed,
            config=self.config,
            benchmarks=self.benchmarks,
            agents=[attr.evolve(agent.state) for agent in self.agents],
            rng_states=[self.env_rng.bit_generator.state]
            + [agent.rng.bit_generator.state for agent in self.agents],
            memory=[prices.copy() for prices in self.env.state],
            recent_prices=np.array(self.recent_prices),
            replay=[buffer.copy() for buffer in self.buffers]
            if self.config.session.persist_replay
            else None,
        )

    def play_period(self) -> Tuple[np.ndarray, np.ndarray, List[Any]]:
        """
        One period: actions, market step, experience storage and, after the
        warmup, one learn step per agent.

        Returns:
            Tuple: (joint prices, profits, learn diagnostics per agent).
        """
        batch_size = self.config.hyper.batch_size
        warmup = self.step < batch_size
        observation = self.env.observation()
        if warmup:
            raw_actions = self._uniform_raw_actions()
        else:
            raw_actions = np.array([agent.sample_action(observation)[0] for agent in self.agents])

        prices = scale_actions(raw_actions, self.benchmarks.bounds)
        profits = self.env.step(prices)
        next_observation = self.env.observation()
        for buffer, raw_action, reward in zip(self.buffers, raw_actions, profits):
            buffer.push(
                Experience(
                    state=observation,
                    action=float(raw_action),
                    reward=float(reward),
                    next_state=next_observation,
                )
            )

        diagnostics = []
        if not warmup:
            diagnostics = [
                agent.learn_step(buffer) for agent, buffer in zip(self.agents, self.buffers)
            ]
        self.recent_prices.append(prices)
        self.step += 1
        return prices, profits, diagnostics

    def run(self, until: int, on_checkpoint: CheckpointCallback) -> SessionLog:
        """
        Plays periods until `until` periods are completed.

        Raises:
            SessionAbortedError: if an agent diverges.
        """
        settings = self.config.session
        first_step = self.step
        periods = max(until - first_step, 0)
        n = self.config.market.n
        prices_log = np.zeros((periods, n))
        profits_log = np.zeros((periods, n))
        diagnostics_log: List[Dict[str, Any]] = []

        if first_step < self.config.hyper.batch_size:
            logger.info(
                f"Seed {self.seed}: warmup with random prices for "
                f"{self.config.hyper.batch_size - first_step} steps"
            )
        for row in range(periods):
            step = self.step
            try:
                prices, profits, diagnostics = self.play_period()
            except (DivergenceError, SquashingError) as e:
                raise SessionAbortedError(self.seed, step, e) from e
            prices_log[row] = prices
            profits_log[row] = profits

            if diagnostics and (step + 1) % settings.diagnostics_every == 0:
                for agent_index, record in enumerate(diagnostics):
                    diagnostics_log.append(
                        {"step": step, "agent": agent_index, **attr.asdict(record)}
                    )
                window = profits_log[max(row - settings.metrics_window + 1, 0) : row + 1]
                mean_gain = float(np.mean(profit_gain(window.mean(axis=1), self.benchmarks)))
                logger.info(
                    f"Seed {self.seed}, step {step + 1}: profit gain {mean_gain:.3f}, "
                    f"temperatures {[round(d.temperature, 4) for d in diagnostics]}"
                )

            if self.step in settings.checkpoint_steps:
                on_checkpoint(
                    self.checkpoint(),
                    self._log(first_step, prices_log[: row + 1], profits_log[: row + 1], diagnostics_log),
                )

        return self._log(first_step, prices_log, profits_log, diagnostics_log)

    def _log(
        self,
        first_step: int,
        prices: np.ndarray,
        profits: np.ndarray,
        diagnostics: List[Dict[str, Any]],
    ) -> SessionLog:
        return SessionLog(
            seed=self.seed,
            benchmarks=self.benchmarks,
            first_step=first_step,
            prices=prices.copy(),
            profits=profits.copy(),
            diagnostics=list(diagnostics),
            metrics_window=self.config.session.metrics_window,
        )


def _collector(checkpoints: List[Checkpoint]) -> CheckpointCallback:
    def collect(checkpoint: Checkpoint, log: SessionLog) -> None:
        checkpoints.append(checkpoint)

    return collect


def run_session(
    session_config: SessionConfig, on_checkpoint: Optional[CheckpointCallback] = None
) -> Tuple[SessionLog, List[Checkpoint]]:
    """
    Runs a session from scratch: the first batch_size periods with uniformly
    random prices, then policy play with one learn step per agent and period.

    Args:
        session_config: run configuration and seed.
        on_checkpoint: receives every checkpoint; if None, the checkpoints
            are collected and returned.

    Returns:
        Tuple: (session log, collected checkpoints).
    """
    checkpoints: List[Checkpoint] = []
    session = Session(session_config)
    log = session.run(
        session_config.total_steps,
        on_checkpoint if on_checkpoint is not None else _collector(checkpoints),
    )
    return log, checkpoints


def resume_session(
    checkpoint: Checkpoint,
    until: Optional[int] = None,
    on_checkpoint: Optional[CheckpointCallback] = None,
) -> Tuple[SessionLog, List[Checkpoint]]:
    """
    Continues a session from a checkpoint; the log starts at the checkpoint
    step. Without stored replay buffers, learning pauses until the buffers
    hold a batch again.
    """
    checkpoints: List[Checkpoint] = []
    session = Session.from_checkpoint(checkpoint)
    log = session.run(
        checkpoint.config.session.steps if until is None else until,
        on_checkpoint if on_checkpoint is not None else _collector(checkpoints),
    )
    return log, checkpoints


def checkpoint_strategies(checkpoint: Checkpoint) -> List[Strategy]:
    """Mean-action strategies of the agents of a checkpoint, learning frozen."""
    return [
        LearnedStrategy(
            agent.actor, checkpoint.benchmarks.bounds, checkpoint.config.hyper.log_std_bounds
        )
        for agent in checkpoint.agents
    ]


def convergence_verdict(
    params: MarketParams,
    benchmarks: Benchmarks,
    strategies: Sequence[Strategy],
    initial_prices: Sequence[float],
    protocol: DeviationProtocol = DeviationProtocol(),
) -> Tuple[Verdict, List[DeviationResult]]:
    """
    Nash-convergent if and only if no agent gains from the one-period
    deviation, each agent taking the deviator role once.
    """
    results = [
        deviation_experiment(params, benchmarks, strategies, i, initial_prices, protocol)
        for i in range(params.n)
    ]
    verdict = (
        Verdict.NON_CONVERGENT
        if any(result.profitable for result in results)
        else Verdict.NASH_CONVERGENT
    )
    return verdict, results


def checkpoint_verdict(
    checkpoint: Checkpoint, protocol: DeviationProtocol = DeviationProtocol()
) -> Tuple[Verdict, List[DeviationResult]]:
    return convergence_verdict(
        checkpoint.config.market,
        checkpoint.benchmarks,
        checkpoint_strategies(checkpoint),
        checkpoint.settle_prices,
        protocol,
    )

