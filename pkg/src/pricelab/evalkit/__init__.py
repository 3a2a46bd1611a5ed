from .deviation import (
    DeviationPrice,
    DeviationProtocol,
    DeviationResult,
    deviation_experiment,
    discounted_gain,
)
from .impulse_response import impulse_response_stats
from .phase_portrait import (
    FixedPoint,
    PhasePortrait,
    detect_cycles,
    find_fixed_points,
    phase_portrait,
)
from .statistics import (
    equilibrium_gain_correlation,
    gain_table,
    summarize_profit_gains,
    uniform_pricing_gain,
)

__all__ = [
    "DeviationPrice",
    "DeviationProtocol",
    "DeviationResult",
    "FixedPoint",
    "PhasePortrait",
    "deviation_experiment",
    "detect_cycles",
    "discounted_gain",
    "equilibrium_gain_correlation",
    "find_fixed_points",
    "gain_table",
    "impulse_response_stats",
    "phase_portrait",
    "summarize_profit_gains",
    "uniform_pricing_gain",
]
