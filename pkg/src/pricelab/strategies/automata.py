"""
Handcrafted pricing rules with known equilibrium behavior, used as oracles
for the evaluation protocols.
"""

from typing import Callable, Sequence

import numpy as np

from .strategy import Strategy


class ConstantStrategy(Strategy):
    """Always plays the same price, whatever the rivals did."""

    def __init__(self, price: float):
        self.price = float(price)

    def act(self, state: Sequence[np.ndarray]) -> float:
        return self.price


class GrimTriggerStrategy(Strategy):
    """
    Plays the collusive price as long as every firm's last price lies within
    `radius` of it, and the punishment price otherwise.

    With a memory of one period, a deviation is punished forever: the
    punishment prices are themselves outside of the radius.
    """

    def __init__(self, collusive_price: float, punishment_price: float, radius: float = 1e-6):
        if radius < 0:
            raise ValueError(f"radius must be non-negative (actual: {radius})")
        if abs(collusive_price - punishment_price) <= radius:
            raise ValueError("the punishment price must lie outside of the radius")
        self.collusive_price = float(collusive_price)
        self.punishment_price = float(punishment_price)
        self.radius = float(radius)

    def act(self, state: Sequence[np.ndarray]) -> float:
        last = np.asarray(state[-1], dtype=np.float64)
        if np.all(np.abs(last - self.collusive_price) <= self.radius):
            return self.collusive_price
        return self.punishment_price


class MapStrategy(Strategy):
    """Wraps an arbitrary function of the last joint price vector."""

    def __init__(self, function: Callable[[np.ndarray], float]):
        self.function = function

    def act(self, state: Sequence[np.ndarray]) -> float:
        return float(self.function(np.asarray(state[-1], dtype=np.float64)))
