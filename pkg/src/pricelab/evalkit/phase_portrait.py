"""
Phase portraits of the deterministic joint mean-policy map, with fixed-point
and cycle detection.
"""

import logging
from typing import Any, Dict, List, Optional, Sequence

import attr
import numpy as np

from ..market import Benchmarks, PriceBounds
from ..strategies import Strategy, joint_prices

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

DEFAULT_GRID = 30
DEFAULT_MAX_ITERATIONS = 200
DEFAULT_TOLERANCE = 1e-4
MAX_CYCLE_PERIOD = 8
NEAR_NASH_THRESHOLD = 0.1


@attr.s(auto_attribs=True, frozen=True)
class FixedPoint:
    """
    Attributes:
        prices: cluster center.
        basin_share: share of trajectories ending at this point.
        classification: "near_nash" or "supra_competitive".
    """

    prices: np.ndarray
    basin_share: float
    classification: str


@attr.s(auto_attribs=True)
class PhasePortrait:
    """
    Trajectories of the joint mean-policy map.

    Attributes:
        starts: initial joint prices, one row per trajectory.
        trajectories: iterates, start included, one array per start.
        magnitudes: Euclidean length of every step, one array per start.
        tolerance: step length under which a trajectory counts as converged.
        grid_axis: price grid of two-firm portraits, None for sampled starts.
        fixed_points: clusters of converged endpoints.
        cycles: detected cycle period per trajectory, None if there is none.
    """

    starts: np.ndarray
    trajectories: List[np.ndarray]
    magnitudes: List[np.ndarray]
    tolerance: float
    grid_axis: Optional[np.ndarray] = None
    fixed_points: List[FixedPoint] = attr.Factory(list)
    cycles: List[Optional[int]] = attr.Factory(list)

    @property
    def converged(self) -> List[bool]:
        return [bool(m.size and m[-1] < self.tolerance) for m in self.magnitudes]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "grid_axis": None if self.grid_axis is None else self.grid_axis.tolist(),
            "tolerance": self.tolerance,
            "trajectories": [
                {
                    "start": start.tolist(),
                    "prices": trajectory.tolist(),
                    "magnitudes": magnitudes.tolist(),
                    "converged": converged,
                    "cycle_period": cycle,
                }
                for start, trajectory, magnitudes, converged, cycle in zip(
                    self.starts, self.trajectories, self.magnitudes, self.converged, self.cycles
                )
            ],
            "fixed_points": [
                {
                    "prices": point.prices.tolist(),
                    "basin_share": point.basin_share,
                    "classification": point.classification,
                }
                for point in self.fixed_points
            ],
        }


def price_grid(bounds: PriceBounds, resolution: int) -> np.ndarray:
    return np.linspace(bounds[0], bounds[1], resolution)


def iterate_map(
    strategies: Sequence[Strategy],
    start: np.ndarray,
    memory: int,
    max_iterations: int,
    tolerance: float,
) -> np.ndarray:
    """Iterates of the joint mean-policy map from a constant memory."""
    state = [np.asarray(start, dtype=np.float64).copy() for _ in range(memory)]
    iterates = [state[-1]]
    for _ in range(max_iterations):
        prices = joint_prices(strategies, state)
        iterates.append(prices)
        state = state[1:] + [prices]
        if np.linalg.norm(prices - iterates[-2]) < tolerance:
            break
    return np.array(iterates)


def phase_portrait(
    strategies: Sequence[Strategy],
    bounds: PriceBounds,
    grid_resolution: int = DEFAULT_GRID,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    tolerance: float = DEFAULT_TOLERANCE,
    memory: int = 1,
    starts: Optional[np.ndarray] = None,
    benchmarks: Optional[Benchmarks] = None,
) -> PhasePortrait:
    """
    Trajectories of the joint mean-policy map from every point of a
    grid_resolution x grid_resolution grid over the price box, or from the
    given starts (required beyond two firms).

    Args:
        strategies: one deterministic strategy per firm.
        bounds: price box.
        grid_resolution: points per axis for two-firm grids.
        max_iterations: maximal number of map iterations per start.
        tolerance: a trajectory stops once a step is shorter than this.
        memory: number of remembered periods of the strategies.
        starts: initial joint prices, one per row, overriding the grid.
        benchmarks: if given, fixed points are detected and classified.
    """
    grid_axis = None
    if starts is None:
        if len(strategies) != 2:
            raise ValueError(
                f"grid portraits need exactly two firms (actual: {len(strategies)}); "
                f"pass explicit starts instead"
            )
        grid_axis = price_grid(bounds, grid_resolution)
        first, second = np.meshgrid(grid_axis, grid_axis, indexing="ij")
        starts = np.column_stack([first.ravel(), second.ravel()])

    trajectories = [
        iterate_map(strategies, start, memory, max_iterations, tolerance) for start in starts
    ]
    magnitudes = [np.linalg.norm(np.diff(t, axis=0), axis=1) for t in trajectories]
    portrait = PhasePortrait(
        starts=np.asarray(starts, dtype=np.float64),
        trajectories=trajectories,
        magnitudes=magnitudes,
        tolerance=tolerance,
        grid_axis=grid_axis,
    )
    portrait.cycles = [
        None if converged else detect_cycles(trajectory, tol=tolerance)
        for trajectory, converged in zip(trajectories, portrait.converged)
    ]
    if benchmarks is not None:
        portrait.fixed_points = find_fixed_points(portrait, benchmarks, tolerance)
    logger.debug(
        f"Phase portrait: {sum(portrait.converged)} of {len(trajectories)} trajectories converged"
    )
    return portrait


def classify_fixed_point(prices: np.ndarray, benchmarks: Benchmarks) -> str:
    """Near-Nash when the mean price lies at most 10% of the Nash-monopoly gap above p_N."""
    p_nash = float(np.mean(benchmarks.p_nash))
    p_mono = float(np.mean(benchmarks.p_mono))
    normalized = (float(np.mean(prices)) - p_nash) / (p_mono - p_nash)
    return "near_nash" if normalized <= NEAR_NASH_THRESHOLD else "supra_competitive"


def find_fixed_points(
    portrait: PhasePortrait, benchmarks: Benchmarks, tol_fp: float = DEFAULT_TOLERANCE
) -> List[FixedPoint]:
    """
    Clusters the endpoints of trajectories whose last step is shorter than
    tol_fp; endpoints within 2 tol_fp of a cluster center join the cluster.
    """
    members: List[List[np.ndarray]] = []
    centers: List[np.ndarray] = []
    for trajectory, magnitudes in zip(portrait.trajectories, portrait.magnitudes):
        if not magnitudes.size or magnitudes[-1] >= tol_fp:
            continue
        endpoint = trajectory[-1]
        for index, center in enumerate(centers):
            if np.linalg.norm(endpoint - center) <= 2 * tol_fp:
                members[index].append(endpoint)
                centers[index] = np.mean(members[index], axis=0)
                break
        else:
            members.append([endpoint])
            centers.append(endpoint.copy())

    total = len(portrait.trajectories)
    return [
        FixedPoint(
            prices=center,
            basin_share=len(cluster) / total,
            classification=classify_fixed_point(center, benchmarks),
        )
        for center, cluster in zip(centers, members)
    ]


def detect_cycles(
    trajectory: np.ndarray, max_period: int = MAX_CYCLE_PERIOD, tol: float = DEFAULT_TOLERANCE
) -> Optional[int]:
    """
    Smallest period p in 2..max_period with |x_{t+p} - x_t| < tol over the
    trailing 2 max_period iterates; None for fixed points, short
    trajectories and aperiodic tails.
    """
    trajectory = np.asarray(trajectory, dtype=np.float64)
    if trajectory.ndim == 1:
        trajectory = trajectory[:, np.newaxis]
    window = 2 * max_period
    if len(trajectory) <= window:
        return None
    tail = trajectory[-window:]
    if np.linalg.norm(tail[-1] - tail[-2]) < tol:
        return None
    for period in range(2, max_period + 1):
        distances = np.linalg.norm(tail[period:] - tail[:-period], axis=1)
        if np.all(distances < tol):
            return period
    return None
