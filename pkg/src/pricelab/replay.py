import logging
from typing import List, Sequence

import attr
import numpy as np

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


class WarmingUpError(RuntimeError):
    """Exception raised when sampling more experiences than are stored."""

    def __init__(self, stored: int, requested: int):
        self.stored = stored
        self.requested = requested
        super().__init__(
            f"Replay buffer holds {stored} experiences, {requested} requested; keep warming up."
        )


@attr.s(auto_attribs=True, frozen=True)
class Experience:
    """
    One transition of a single agent.

    States are flattened k * n joint prices in raw-action coordinates, the
    action is the agent's own raw action and the reward its own profit.
    """

    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray

    def __attrs_post_init__(self) -> None:
        if not -1.0 < self.action < 1.0:
            raise ValueError(f"action must lie in (-1, 1) (actual: {self.action})")
        if not (
            np.isfinite(self.reward)
            and np.all(np.isfinite(self.state))
            and np.all(np.isfinite(self.next_state))
        ):
            raise ValueError("experience contains non-finite values")


@attr.s(auto_attribs=True, frozen=True)
class ExperienceBatch:
    """Column-wise view of sampled experiences."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __len__(self) -> int:
        return int(self.rewards.shape[0])

    @classmethod
    def from_experiences(cls, experiences: Sequence[Experience]) -> "ExperienceBatch":
        return cls(
            states=np.stack([e.state for e in experiences]),
            actions=np.array([e.action for e in experiences]),
            rewards=np.array([e.reward for e in experiences]),
            next_states=np.stack([e.next_state for e in experiences]),
        )


class ReplayBuffer:
    """
    Fixed-capacity first-in-first-out store of experiences.

    Storage is a preallocated ring of arrays; the write cursor points to the
    slot overwritten by the next push.
    """

    def __init__(self, capacity: int, state_size: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive (actual: {capacity})")
        self.capacity = capacity
        self.state_size = state_size
        self.states = np.zeros((capacity, state_size))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_size))
        self.cursor = 0
        self.length = 0

    def __len__(self) -> int:
        return self.length

    def push(self, experience: Experience) -> None:
        self.states[self.cursor] = experience.state
        self.actions[self.cursor] = experience.action
        self.rewards[self.cursor] = experience.reward
        self.next_states[self.cursor] = experience.next_state
        self.cursor = (self.cursor + 1) % self.capacity
        self.length = min(self.length + 1, self.capacity)

    def _slots_oldest_first(self) -> np.ndarray:
        start = self.cursor if self.length == self.capacity else 0
        return (start + np.arange(self.length)) % self.capacity

    def contents(self) -> List[Experience]:
        """Stored experiences, oldest first."""
        return [self._experience_at(int(slot)) for slot in self._slots_oldest_first()]

    def _experience_at(self, slot: int) -> Experience:
        return Experience(
            state=self.states[slot].copy(),
            action=float(self.actions[slot]),
            reward=float(self.rewards[slot]),
            next_state=self.next_states[slot].copy(),
        )

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.length < batch_size:
            raise WarmingUpError(self.length, batch_size)
        indices: np.ndarray = rng.integers(0, self.length, size=batch_size)
        return indices

    def sample_uniform(
        self, batch_size: int, rng: np.random.Generator
    ) -> ExperienceBatch:
        """
        Draws batch_size experiences uniformly, with replacement.

        Raises:
            WarmingUpError: if fewer than batch_size experiences are stored.
        """
        slots = self.sample_indices(batch_size, rng)
        return ExperienceBatch(
            states=self.states[slots].copy(),
            actions=self.actions[slots].copy(),
            rewards=self.rewards[slots].copy(),
            next_states=self.next_states[slots].copy(),
        )

    def copy(self) -> "ReplayBuffer":
        """Independent copy, slot layout and cursor included."""
        duplicate = ReplayBuffer(self.capacity, self.state_size)
        duplicate.restore(self.stored_batch(), cursor=self.cursor)
        return duplicate

    def stored_batch(self) -> ExperienceBatch:
        """Occupied slots in slot order (not chronological once wrapped)."""
        return ExperienceBatch(
            states=self.states[: self.length].copy(),
            actions=self.actions[: self.length].copy(),
            rewards=self.rewards[: self.length].copy(),
            next_states=self.next_states[: self.length].copy(),
        )

    def restore(self, stored: ExperienceBatch, cursor: int) -> None:
        """
        Inverse of stored_batch: refills the occupied slots and the cursor, so
        that later sampling draws exactly the same experiences.
        """
        length = len(stored)
        if length > self.capacity or not 0 <= cursor < self.capacity:
            raise ValueError(
                f"cannot restore {length} experiences with cursor {cursor} "
                f"into a buffer of capacity {self.capacity}"
            )
        self.states[:length] = stored.states
        self.actions[:length] = stored.actions
        self.rewards[:length] = stored.rewards
        self.next_states[:length] = stored.next_states
        self.length = length
        self.cursor = cursor
