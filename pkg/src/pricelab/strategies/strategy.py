from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np


class Strategy(ABC):
    """
    Base class for deterministic pricing rules of one firm.

    The evaluation protocols only ever query mean actions, so a strategy is
    a map from the market state (the last k joint price vectors, oldest
    first, in currency units) to the firm's next price.
    """

    @abstractmethod
    def act(self, state: Sequence[np.ndarray]) -> float:
        """
        Price to play in the next period.

        Args:
            state: the last k joint price vectors, oldest first.
        """


def joint_prices(strategies: Sequence[Strategy], state: Sequence[np.ndarray]) -> np.ndarray:
    """Joint prices of all firms playing their strategies in the given state."""
    return np.array([strategy.act(state) for strategy in strategies], dtype=np.float64)
