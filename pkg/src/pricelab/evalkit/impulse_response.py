"""
Distributions of the price reactions to a one-period deviation.
"""

from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from .deviation import DeviationResult

PERCENTILES = (5, 25, 50, 75, 95)
COLUMNS = ["role", "step"] + [f"p{q}" for q in PERCENTILES] + ["mean", "mean_price", "count"]


def _role_paths(result: DeviationResult) -> Dict[str, np.ndarray]:
    """
    Price deltas relative to the pre-deviation prices, rows indexed by
    relative step -1, 0, ..., horizon; compliant firms are averaged.
    """
    path = result.deviation_path
    deltas = path - path[0]
    compliant = [i for i in range(path.shape[1]) if i != result.deviator]
    return {
        "deviator": np.column_stack([deltas[:, result.deviator], path[:, result.deviator]]),
        "compliant": np.column_stack(
            [deltas[:, compliant].mean(axis=1), path[:, compliant].mean(axis=1)]
        ),
    }


def impulse_response_stats(results: Sequence[DeviationResult]) -> pd.DataFrame:
    """
    Per relative step, percentiles and mean of the price change of the
    deviator and of the (averaged) compliant firms.

    Returns:
        One row per role and relative step; an empty frame with the same
        columns if there are no results.
    """
    if not results:
        return pd.DataFrame(columns=COLUMNS)
    rows_per_path = results[0].deviation_path.shape[0]
    if any(r.deviation_path.shape[0] != rows_per_path for r in results):
        raise ValueError("all deviation results must share the horizon")

    rows: List[Dict[str, Any]] = []
    paths = [_role_paths(result) for result in results]
    for role in ("deviator", "compliant"):
        stacked = np.stack([p[role] for p in paths])
        for row, step in enumerate(range(-1, rows_per_path - 1)):
            deltas = stacked[:, row, 0]
            percentiles = np.percentile(deltas, PERCENTILES)
            record: Dict[str, Any] = {"role": role, "step": step}
            record.update({f"p{q}": float(v) for q, v in zip(PERCENTILES, percentiles)})
            record["mean"] = float(deltas.mean())
            record["mean_price"] = float(stacked[:, row, 1].mean())
            record["count"] = len(deltas)
            rows.append(record)
    return pd.DataFrame(rows, columns=COLUMNS)
