from typing import Sequence

import numpy as np

from ..agent import LogStdBounds, mean_action
from ..market import PriceBounds, scale_action, unscale_action
from ..netcore import DivergenceError, MlpParams
from .strategy import Strategy


class LearnedStrategy(Strategy):
    """
    Mean action of a trained actor, mapped onto the price box.

    Learning is frozen: the actor parameters are never modified.
    """

    def __init__(
        self, actor: MlpParams, bounds: PriceBounds, log_std_bounds: LogStdBounds
    ):
        self.actor = actor
        self.bounds = bounds
        self.log_std_bounds = log_std_bounds

    def act(self, state: Sequence[np.ndarray]) -> float:
        observation = unscale_action(np.concatenate(list(state)), self.bounds)
        raw_action = mean_action(self.actor, observation, self.log_std_bounds)
        if not np.isfinite(raw_action):
            raise DivergenceError("non-finite mean action; the checkpoint is corrupt")
        return scale_action(raw_action, self.bounds)
