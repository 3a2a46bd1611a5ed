from .automata import ConstantStrategy, GrimTriggerStrategy, MapStrategy
from .learned import LearnedStrategy
from .strategy import Strategy, joint_prices

__all__ = [
    "ConstantStrategy",
    "GrimTriggerStrategy",
    "LearnedStrategy",
    "MapStrategy",
    "Strategy",
    "joint_prices",
]
