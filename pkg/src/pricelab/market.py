"""
Repeated Bertrand market with logit demand and constant marginal costs.

All functions are pure and operate on numpy vectors of length n (one entry
per firm). Prices are in currency units, demand is expressed as market
shares.
"""

import logging
from collections import deque
from typing import Any, Deque, Iterable, List, Optional, Sequence, Tuple

import attr
import numpy as np
from scipy.optimize import brentq, minimize_scalar

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

PriceBounds = Tuple[float, float]

# resolution and maximum size of the coarse grid used to bracket maximizers
GRID_STEP = 1e-3
GRID_MAX_POINTS = 2001
PRICE_TOLERANCE = 1e-12
NASH_TOLERANCE = 1e-10
MONOPOLY_GRADIENT_TOLERANCE = 1e-8
NASH_DAMPING = 0.5
NASH_MAX_ITERATIONS = 10_000


class MarketConfigurationError(ValueError):
    """Exception raised for invalid market parameters or search intervals."""


class SolverError(RuntimeError):
    """Exception raised when a benchmark solver does not converge."""

    def __init__(self, solver: str, residual: float, iterations: int):
        self.solver = solver
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"{solver} did not converge after {iterations} iterations "
            f"(residual: {residual:.3e})"
        )


class SquashingError(ValueError):
    """Exception raised when a raw action lies outside of (-1, 1)."""

    def __init__(self, raw_action: float):
        self.raw_action = raw_action
        super().__init__(
            f"Raw action {raw_action!r} outside of (-1, 1); the policy squashing is broken."
        )


def _as_vector(values: Iterable[float]) -> np.ndarray:
    return np.array(list(values), dtype=np.float64)


@attr.s(auto_attribs=True, frozen=True)
class MarketParams:
    """
    Economic primitives of the logit-Bertrand game.

    Attributes:
        n: number of firms.
        a0: quality index of the outside good.
        a: quality indices of the n products.
        mu: horizontal differentiation.
        c: marginal costs of the n firms.
        xi: margin of the admissible price box around [p_N, p_M].
        k: memory length, in periods.
    """

    n: int = 2
    a0: float = 0.0
    a: Tuple[float, ...] = (2.0, 2.0)
    mu: float = 0.25
    c: Tuple[float, ...] = (1.0, 1.0)
    xi: float = 0.1
    k: int = 1

    def __attrs_post_init__(self) -> None:
        # n == 1 is tolerated for the monopoly oracle; sessions require n >= 2
        if self.n < 1:
            raise MarketConfigurationError(f"n must be positive (actual: {self.n})")
        if len(self.a) != self.n or len(self.c) != self.n:
            raise MarketConfigurationError(
                f"quality indices and costs must have length n={self.n} "
                f"(actual: {len(self.a)}, {len(self.c)})"
            )
        if not self.mu > 0:
            raise MarketConfigurationError(f"mu must be positive (actual: {self.mu})")
        if self.xi < 0:
            raise MarketConfigurationError(f"xi must be non-negative (actual: {self.xi})")
        if self.k < 1:
            raise MarketConfigurationError(f"k must be at least 1 (actual: {self.k})")

    @classmethod
    def symmetric(
        cls,
        n: int = 2,
        a0: float = 0.0,
        a: float = 2.0,
        mu: float = 0.25,
        c: float = 1.0,
        xi: float = 0.1,
        k: int = 1,
    ) -> "MarketParams":
        return cls(n=n, a0=a0, a=(a,) * n, mu=mu, c=(c,) * n, xi=xi, k=k)

    @property
    def qualities(self) -> np.ndarray:
        return _as_vector(self.a)

    @property
    def costs(self) -> np.ndarray:
        return _as_vector(self.c)


@attr.s(auto_attribs=True, frozen=True)
class Benchmarks:
    """
    Static benchmarks of a market: Bertrand-Nash and joint-profit-maximizing
    prices and profits, and the admissible price box derived from them.
    """

    p_nash: Tuple[float, ...]
    p_mono: Tuple[float, ...]
    pi_nash: Tuple[float, ...]
    pi_mono: Tuple[float, ...]
    p_low: float
    p_high: float

    @property
    def bounds(self) -> PriceBounds:
        return self.p_low, self.p_high

    @property
    def mean_pi_nash(self) -> float:
        return float(np.mean(self.pi_nash))

    @property
    def mean_pi_mono(self) -> float:
        return float(np.mean(self.pi_mono))


def demand(params: MarketParams, prices: Sequence[float]) -> np.ndarray:
    """
    Logit market shares of the n products.

    Accepts a single price vector or a matrix with one price vector per row.
    The exponents are shifted by their maximum (outside good included), so
    that no finite price vector can overflow.
    """
    p = np.asarray(prices, dtype=np.float64)
    inside = (params.qualities - p) / params.mu
    outside = np.full(inside.shape[:-1] + (1,), params.a0 / params.mu)
    exponents = np.concatenate([inside, outside], axis=-1)
    weights = np.exp(exponents - exponents.max(axis=-1, keepdims=True))
    shares: np.ndarray = weights[..., :-1] / weights.sum(axis=-1, keepdims=True)
    return shares


def profit(params: MarketParams, prices: Sequence[float]) -> np.ndarray:
    """Per-firm profits (p_i - c_i) * q_i, row-wise for price matrices."""
    p = np.asarray(prices, dtype=np.float64)
    profits: np.ndarray = (p - params.costs) * demand(params, p)
    return profits


def marginal_profit(params: MarketParams, prices: Sequence[float], i: int) -> float:
    """Derivative of the profit of firm i with respect to its own price."""
    p = np.asarray(prices, dtype=np.float64)
    q = demand(params, p)[i]
    return float(q * (1.0 - (p[i] - params.c[i]) * (1.0 - q) / params.mu))


def joint_profit_gradient(params: MarketParams, prices: Sequence[float]) -> np.ndarray:
    """Gradient of the sum of all profits with respect to the price vector."""
    p = np.asarray(prices, dtype=np.float64)
    q = demand(params, p)
    total = float(((p - params.costs) * q).sum())
    gradient: np.ndarray = q * (1.0 - (p - params.costs - total) / params.mu)
    return gradient


def _with_price(prices: np.ndarray, i: int, price: float) -> np.ndarray:
    updated = prices.copy()
    updated[i] = price
    return updated


def _full_price_vector(
    params: MarketParams, rival_prices: Sequence[float], i: int
) -> np.ndarray:
    rivals = np.asarray(rival_prices, dtype=np.float64)
    if rivals.shape != (params.n - 1,):
        raise MarketConfigurationError(
            f"expected {params.n - 1} rival prices (actual: {rivals.shape})"
        )
    return np.insert(rivals, i, np.nan)


def static_best_response(
    params: MarketParams,
    rival_prices: Sequence[float],
    i: int,
    interval: PriceBounds,
) -> float:
    """
    One-period profit-maximizing price of firm i against fixed rival prices.

    A coarse grid brackets the maximizer, golden-section search refines it,
    and the result is polished by root finding on the marginal profit, which
    is strictly decreasing through zero for logit demand.

    Args:
        params: market parameters.
        rival_prices: prices of the n-1 other firms, in firm order.
        i: index of the responding firm.
        interval: (low, high) range to search in.

    Raises:
        MarketConfigurationError: for a degenerate interval or wrong shapes.
    """
    low, high = float(interval[0]), float(interval[1])
    if not low < high:
        raise MarketConfigurationError(f"degenerate search interval [{low}, {high}]")
    prices = _full_price_vector(params, rival_prices, i)
    if not np.all(np.isfinite(np.delete(prices, i))):
        raise MarketConfigurationError(f"rival prices must be finite: {rival_prices}")

    def own_profit(price: float) -> float:
        return float(profit(params, _with_price(prices, i, price))[i])

    def slope(price: float) -> float:
        return marginal_profit(params, _with_price(prices, i, price), i)

    n_points = min(max(3, int(np.ceil((high - low) / GRID_STEP)) + 1), GRID_MAX_POINTS)
    grid = np.linspace(low, high, n_points)
    candidates = np.tile(prices, (n_points, 1))
    candidates[:, i] = grid
    values = profit(params, candidates)[:, i]
    best = int(np.argmax(values))
    bracket_low = grid[max(best - 1, 0)]
    bracket_high = grid[min(best + 1, n_points - 1)]

    if 0 < best < n_points - 1:
        result = minimize_scalar(
            lambda x: -own_profit(x),
            bracket=(bracket_low, grid[best], bracket_high),
            method="golden",
        )
        candidate = float(np.clip(result.x, bracket_low, bracket_high))
    else:
        candidate = float(grid[best])

    # golden-section stalls around sqrt(eps); the sign change of the marginal
    # profit pins the maximizer down to machine precision
    slope_low, slope_high = slope(bracket_low), slope(bracket_high)
    if slope_low > 0 > slope_high:
        candidate = float(
            brentq(slope, bracket_low, bracket_high, xtol=PRICE_TOLERANCE)
        )
    elif slope(low) <= 0:
        candidate = low
    elif slope(high) >= 0:
        candidate = high
    return candidate


def _open_interval_for(params: MarketParams, i: int) -> PriceBounds:
    """Search interval for unconstrained best responses of firm i."""
    c_i = params.c[i]
    width = max(params.a) - min(params.c) + abs(params.a0) + 50.0 * params.mu
    return c_i, c_i + max(width, 1.0)


def nash_prices(
    params: MarketParams, initial: Optional[Sequence[float]] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Bertrand-Nash prices and profits by damped best-response iteration.

    Raises:
        SolverError: if the iteration does not reach the residual tolerance.
    """
    p = (
        params.costs + params.mu
        if initial is None
        else np.asarray(initial, dtype=np.float64).copy()
    )
    residual = np.inf
    for iteration in range(1, NASH_MAX_ITERATIONS + 1):
        responses = np.array(
            [
                static_best_response(
                    params, np.delete(p, i), i, _open_interval_for(params, i)
                )
                for i in range(params.n)
            ]
        )
        residual = float(np.max(np.abs(responses - p)))
        if residual <= NASH_TOLERANCE:
            logger.debug(f"Best-response iteration converged after {iteration} steps")
            p = responses
            return p, profit(params, p)
        p = NASH_DAMPING * responses + (1.0 - NASH_DAMPING) * p
    raise SolverError("nash_prices", residual, NASH_MAX_ITERATIONS)


def monopoly_prices(params: MarketParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Joint-profit-maximizing prices and the corresponding per-firm profits.

    The first-order conditions of the joint profit imply that all firms
    charge the same markup m over their cost, with m (1 - Q(m)) = mu where
    Q(m) is the total inside share. The left-hand side is increasing in m.

    Raises:
        SolverError: if no markup bracket can be found or the joint profit
            gradient does not vanish at the solution.
    """

    def condition(markup: float) -> float:
        shares = demand(params, params.costs + markup)
        return float(markup * (1.0 - shares.sum()) - params.mu)

    upper = params.mu
    for _ in range(200):
        if condition(upper) > 0:
            break
        upper *= 2.0
    else:
        raise SolverError("monopoly_prices", condition(upper), 200)

    markup = float(brentq(condition, 0.0, upper, xtol=PRICE_TOLERANCE))
    p = params.costs + markup
    residual = float(np.max(np.abs(joint_profit_gradient(params, p))))
    if residual > MONOPOLY_GRADIENT_TOLERANCE:
        raise SolverError("monopoly_prices", residual, 1)
    return p, profit(params, p)


def price_bounds(params: MarketParams, p_nash: float, p_mono: float) -> PriceBounds:
    """Admissible price box [p_N - xi (p_M - p_N), p_M + xi (p_M - p_N)]."""
    if not p_nash < p_mono:
        raise MarketConfigurationError(
            f"Nash price {p_nash} must be below the monopoly price {p_mono}"
        )
    gap = p_mono - p_nash
    return p_nash - params.xi * gap, p_mono + params.xi * gap


def compute_benchmarks(params: MarketParams) -> Benchmarks:
    """Runs both solvers and derives the admissible price box."""
    p_nash, pi_nash = nash_prices(params)
    p_mono, pi_mono = monopoly_prices(params)
    # for asymmetric markets the box spans the most extreme benchmarks
    p_low, p_high = price_bounds(params, float(np.min(p_nash)), float(np.max(p_mono)))
    if not p_low < p_high:
        raise MarketConfigurationError(f"empty price box [{p_low}, {p_high}]")
    benchmarks = Benchmarks(
        p_nash=tuple(float(x) for x in p_nash),
        p_mono=tuple(float(x) for x in p_mono),
        pi_nash=tuple(float(x) for x in pi_nash),
        pi_mono=tuple(float(x) for x in pi_mono),
        p_low=p_low,
        p_high=p_high,
    )
    logger.debug(f"Benchmarks: {benchmarks}")
    return benchmarks


def profit_gain(pi_bar: Any, benchmarks: Benchmarks) -> Any:
    """
    Normalized profit gain (pi_bar - pi_N) / (pi_M - pi_N), using the
    firm-averaged benchmark profits; accepts scalars and arrays.

    Raises:
        MarketConfigurationError: for degenerate benchmarks with pi_M == pi_N.
    """
    pi_nash, pi_mono = benchmarks.mean_pi_nash, benchmarks.mean_pi_mono
    if pi_mono == pi_nash:
        raise MarketConfigurationError(
            "degenerate benchmarks: monopoly and Nash profits coincide"
        )
    return (np.asarray(pi_bar, dtype=np.float64) - pi_nash) / (pi_mono - pi_nash)


def scale_action(raw_action: float, bounds: PriceBounds) -> float:
    """Maps a raw action in (-1, 1) affinely onto the price box."""
    if not -1.0 < raw_action < 1.0:
        raise SquashingError(raw_action)
    p_low, p_high = bounds
    return (raw_action + 1.0) / 2.0 * (p_high - p_low) + p_low


def scale_actions(raw_actions: np.ndarray, bounds: PriceBounds) -> np.ndarray:
    """Vectorized scale_action."""
    raw = np.asarray(raw_actions, dtype=np.float64)
    if raw.size and not np.all(np.abs(raw) < 1.0):
        raise SquashingError(float(raw[np.argmax(np.abs(raw))]))
    p_low, p_high = bounds
    prices: np.ndarray = (raw + 1.0) / 2.0 * (p_high - p_low) + p_low
    return prices


def unscale_action(prices: Any, bounds: PriceBounds) -> Any:
    """
    Inverse of scale_action for a price or an array of prices; prices on the
    box edges map to -1 and 1.
    """
    p_low, p_high = bounds
    return 2.0 * (np.asarray(prices, dtype=np.float64) - p_low) / (p_high - p_low) - 1.0


def env_step(
    params: MarketParams, state: Sequence[np.ndarray], actions: Sequence[float]
) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    One period of the repeated game.

    Args:
        params: market parameters.
        state: the last k joint price vectors, oldest first.
        actions: the joint prices played this period.

    Returns:
        Tuple: (next state, per-firm profits).
    """
    prices = np.asarray(actions, dtype=np.float64)
    next_state = [np.asarray(s, dtype=np.float64) for s in state][1:] + [prices]
    return next_state[-params.k :], profit(params, prices)


class MarketEnvironment:
    """
    Stateful wrapper around env_step keeping the k-deep price memory.
    """

    def __init__(self, params: MarketParams, benchmarks: Benchmarks):
        self.params = params
        self.benchmarks = benchmarks
        self.memory: Deque[np.ndarray] = deque(maxlen=params.k)

    def reset(self, prices: Sequence[float]) -> None:
        """Fills the memory with the same joint price vector k times."""
        initial = np.asarray(prices, dtype=np.float64)
        self.memory.clear()
        for _ in range(self.params.k):
            self.memory.append(initial.copy())

    @property
    def state(self) -> List[np.ndarray]:
        return list(self.memory)

    @property
    def last_prices(self) -> np.ndarray:
        return self.memory[-1]

    def observation(self) -> np.ndarray:
        """Flattened k * n state in raw-action coordinates."""
        observation: np.ndarray = unscale_action(
            np.concatenate(self.state), self.benchmarks.bounds
        )
        return observation

    def step(self, prices: Sequence[float]) -> np.ndarray:
        next_state, profits = env_step(self.params, self.state, prices)
        self.memory.clear()
        self.memory.extend(next_state)
        return profits
