"""
Aggregate statistics over sessions: deviation-gain tables with bootstrap
confidence intervals, profit-gain summaries and correlations.
"""

import logging
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import pearsonr

from ..agent import RAW_ACTION_LIMIT
from ..market import Benchmarks, MarketParams, profit, profit_gain, scale_actions
from .deviation import PROFITABILITY_TOLERANCE

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

BOOTSTRAP_RESAMPLES = 5_000
GAIN_TABLE_COLUMNS = [
    "checkpoint",
    "count",
    "p25",
    "p50",
    "p75",
    "mean",
    "unprofitable_share",
    "ci_lower",
    "ci_upper",
]


def unprofitable_share(gains: Sequence[float]) -> float:
    return float(np.mean(np.asarray(gains) <= PROFITABILITY_TOLERANCE))


def bootstrap_share_interval(
    gains: Sequence[float],
    rng: np.random.Generator,
    resamples: int = BOOTSTRAP_RESAMPLES,
) -> Tuple[float, float]:
    """2.5th and 97.5th percentiles of the resampled unprofitable share."""
    unprofitable = np.asarray(gains) <= PROFITABILITY_TOLERANCE
    indices = rng.integers(0, len(unprofitable), size=(resamples, len(unprofitable)))
    shares = unprofitable[indices].mean(axis=1)
    lower, upper = np.percentile(shares, [2.5, 97.5])
    return float(lower), float(upper)


def gain_table(
    gains_by_checkpoint: Mapping[int, Sequence[float]],
    rng: np.random.Generator,
    resamples: int = BOOTSTRAP_RESAMPLES,
) -> pd.DataFrame:
    """
    One row per checkpoint over the pooled agent-level deviation gains:
    quartiles, mean, unprofitable share and its bootstrap 95% interval.
    """
    rows: List[Dict[str, Any]] = []
    for checkpoint in sorted(gains_by_checkpoint):
        gains = np.asarray(gains_by_checkpoint[checkpoint], dtype=np.float64)
        if len(gains) < 2:
            raise ValueError(
                f"at least two gains per checkpoint are needed (step {checkpoint}: {len(gains)})"
            )
        p25, p50, p75 = np.percentile(gains, [25, 50, 75])
        ci_lower, ci_upper = bootstrap_share_interval(gains, rng, resamples)
        rows.append(
            {
                "checkpoint": checkpoint,
                "count": len(gains),
                "p25": float(p25),
                "p50": float(p50),
                "p75": float(p75),
                "mean": float(gains.mean()),
                "unprofitable_share": unprofitable_share(gains),
                "ci_lower": ci_lower,
                "ci_upper": ci_upper,
            }
        )
    return pd.DataFrame(rows, columns=GAIN_TABLE_COLUMNS)


def equilibrium_gain_correlation(
    nash_convergent: Sequence[bool], profit_gains: Sequence[float]
) -> Optional[float]:
    """
    Pearson correlation between the Nash-convergence indicator and the
    session profit gains.

    Returns:
        The coefficient, or None when either variable has zero variance.
    """
    indicator = np.asarray(nash_convergent, dtype=np.float64)
    gains = np.asarray(profit_gains, dtype=np.float64)
    if len(indicator) != len(gains):
        raise ValueError("one verdict per profit gain is needed")
    if len(indicator) < 3:
        raise ValueError(f"at least three sessions are needed (actual: {len(indicator)})")
    if np.ptp(indicator) == 0 or np.ptp(gains) == 0:
        logger.warning("Correlation undefined: zero variance in verdicts or profit gains")
        return None
    coefficient, _ = pearsonr(indicator, gains)
    return float(coefficient)


def summarize_profit_gains(profit_gains: Sequence[float]) -> Dict[str, float]:
    """Distribution of session-level profit gains."""
    gains = np.asarray(profit_gains, dtype=np.float64)
    if not gains.size:
        return {"count": 0}
    p25, p50, p75 = np.percentile(gains, [25, 50, 75])
    return {
        "count": int(gains.size),
        "mean": float(gains.mean()),
        "p25": float(p25),
        "p50": float(p50),
        "p75": float(p75),
        "share_above_half": float(np.mean(gains > 0.5)),
    }


def uniform_pricing_gain(
    params: MarketParams,
    benchmarks: Benchmarks,
    draws: int,
    rng: np.random.Generator,
) -> float:
    """Expected profit gain of uniformly random pricing over the price box."""
    raw = np.clip(rng.uniform(-1.0, 1.0, size=(draws, params.n)), -RAW_ACTION_LIMIT, RAW_ACTION_LIMIT)
    prices = scale_actions(raw, benchmarks.bounds)
    return float(np.mean(profit_gain(profit(params, prices).mean(axis=1), benchmarks)))
