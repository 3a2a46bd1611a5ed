"""
Deviation experiments: with learning frozen, one firm is forced to deviate
for one period and its discounted profits are compared with the rollout in
which nobody deviates.
"""

import enum
import logging
from typing import List, Optional, Sequence, Tuple

import attr
import numpy as np

from ..market import Benchmarks, MarketParams, env_step, static_best_response
from ..strategies import Strategy, joint_prices

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

# gains up to this value count as unprofitable (solver round-off)
PROFITABILITY_TOLERANCE = 1e-9


class DeviationPrice(enum.Enum):
    BEST_RESPONSE = "best-response"
    MONOPOLY = "monopoly"
    COST = "cost"
    NASH = "nash"
    VALUE = "value"


@attr.s(auto_attribs=True, frozen=True)
class DeviationProtocol:
    """
    Attributes:
        delta: evaluation-only discount factor.
        horizon: number of compared periods, deviation period included.
        settle: number of mean-play periods before the deviation.
        deviation: how the deviation price is chosen.
        value: explicit deviation price, for DeviationPrice.VALUE.
    """

    delta: float = 0.95
    horizon: int = 10
    settle: int = 50
    deviation: DeviationPrice = DeviationPrice.BEST_RESPONSE
    value: Optional[float] = None

    def __attrs_post_init__(self) -> None:
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1] (actual: {self.delta})")
        if self.horizon < 1 or self.settle < 0:
            raise ValueError("horizon must be positive and settle non-negative")
        if (self.deviation is DeviationPrice.VALUE) != (self.value is not None):
            raise ValueError("an explicit value goes with DeviationPrice.VALUE only")


@attr.s(auto_attribs=True, frozen=True)
class DeviationResult:
    """
    Outcome of one deviation experiment.

    Price paths hold the pre-deviation prices in their first row, followed
    by the prices of the periods 0 to horizon; both paths share the
    first row. Profit paths cover the periods 0 to horizon - 1.
    """

    deviator: int
    settle_path: np.ndarray
    deviation_path: np.ndarray
    baseline_path: np.ndarray
    deviation_profits: np.ndarray
    baseline_profits: np.ndarray
    discounted_gain: float
    relative_gain: float
    differential_gain: float
    profitable: bool

    @property
    def pre_deviation_prices(self) -> np.ndarray:
        return self.deviation_path[0]


def deviation_price(
    params: MarketParams,
    benchmarks: Benchmarks,
    last_prices: np.ndarray,
    deviator: int,
    protocol: DeviationProtocol,
) -> float:
    if protocol.deviation is DeviationPrice.BEST_RESPONSE:
        return static_best_response(
            params, np.delete(last_prices, deviator), deviator, benchmarks.bounds
        )
    if protocol.deviation is DeviationPrice.MONOPOLY:
        return benchmarks.p_mono[deviator]
    if protocol.deviation is DeviationPrice.COST:
        return params.c[deviator]
    if protocol.deviation is DeviationPrice.NASH:
        return benchmarks.p_nash[deviator]
    assert protocol.value is not None
    return protocol.value


def _rollout(
    params: MarketParams,
    strategies: Sequence[Strategy],
    state: List[np.ndarray],
    periods: int,
    deviator: Optional[int] = None,
    first_price: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray, List[np.ndarray]]:
    """
    Prices and profits of `periods` periods, optionally forcing the first
    price of one firm; also returns the final state.
    """
    prices_path = []
    profits_path = []
    for t in range(periods):
        prices = joint_prices(strategies, state)
        if t == 0 and deviator is not None and first_price is not None:
            prices[deviator] = first_price
        if not np.all(np.isfinite(prices)):
            raise ValueError("non-finite policy output; the checkpoint is corrupt")
        state, profits = env_step(params, state, prices)
        prices_path.append(prices)
        profits_path.append(profits)
    shape = (periods, params.n)
    return np.array(prices_path).reshape(shape), np.array(profits_path).reshape(shape), state


def discounted_gain(
    deviation_profits: Sequence[float], baseline_profits: Sequence[float], delta: float
) -> float:
    """Sum over t of delta^t (pi_dev_t - pi_base_t)."""
    difference = np.asarray(deviation_profits) - np.asarray(baseline_profits)
    return float(np.sum(delta ** np.arange(len(difference)) * difference))


def deviation_experiment(
    params: MarketParams,
    benchmarks: Benchmarks,
    strategies: Sequence[Strategy],
    deviator: int,
    initial_prices: Sequence[float],
    protocol: DeviationProtocol = DeviationProtocol(),
) -> DeviationResult:
    """
    Settles the deterministic strategies, forces a one-period deviation and
    compares the deviator's discounted profits with the undisturbed rollout.

    Args:
        params: market parameters.
        benchmarks: benchmarks, for the price box and alternative deviations.
        strategies: one mean-action strategy per firm.
        deviator: index of the deviating firm.
        initial_prices: joint prices filling the initial memory, typically
            the mean of the last realized training prices.
        protocol: discount, horizon, settle length and deviation price.
    """
    if len(strategies) != params.n:
        raise ValueError(f"expected {params.n} strategies (actual: {len(strategies)})")
    if not 0 <= deviator < params.n:
        raise ValueError(f"deviator index {deviator} out of range")

    state = [np.asarray(initial_prices, dtype=np.float64).copy() for _ in range(params.k)]
    settle_path, _, state = _rollout(params, strategies, state, protocol.settle)
    pre_deviation = state[-1].copy()

    price = deviation_price(params, benchmarks, pre_deviation, deviator, protocol)
    deviation_prices, deviation_profits, _ = _rollout(
        params, strategies, list(state), protocol.horizon + 1, deviator, price
    )
    baseline_prices, baseline_profits, _ = _rollout(
        params, strategies, list(state), protocol.horizon + 1
    )

    # the price paths run one period past the compared profits
    deviation_profits = deviation_profits[: protocol.horizon]
    baseline_profits = baseline_profits[: protocol.horizon]
    own_deviation = deviation_profits[:, deviator]
    own_baseline = baseline_profits[:, deviator]
    gain = discounted_gain(own_deviation, own_baseline, protocol.delta)
    weights = protocol.delta ** np.arange(protocol.horizon)
    relative = float(np.sum(weights * own_deviation) / np.sum(weights * own_baseline) - 1.0)
    differential = float(np.mean(own_deviation / own_baseline - 1.0))
    if not np.isfinite(gain):
        raise ValueError("non-finite deviation gain")

    logger.debug(f"Deviation of firm {deviator} to {price:.6f}: gain {gain:.3e}")
    return DeviationResult(
        deviator=deviator,
        settle_path=settle_path,
        deviation_path=np.vstack([pre_deviation, deviation_prices]),
        baseline_path=np.vstack([pre_deviation, baseline_prices]),
        deviation_profits=deviation_profits,
        baseline_profits=baseline_profits,
        discounted_gain=gain,
        relative_gain=relative,
        differential_gain=differential,
        profitable=gain > PROFITABILITY_TOLERANCE,
    )
