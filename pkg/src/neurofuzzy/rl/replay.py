"""Experience replay with FIFO eviction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer sampled uniformly with replacement."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise InputError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.head = 0  # next slot to write; also the oldest entry once full
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        if not (np.isfinite(t.state).all() and np.isfinite(t.next_state).all() and np.isfinite(t.reward)):
            raise InputError("transition contains non-finite values")
        i = self.head
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.terminals[i] = t.terminal
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered(self) -> list[Transition]:
        """Stored transitions from oldest to newest."""
        start = self.head if self.size == self.capacity else 0
        idx = [(start + k) % self.capacity for k in range(self.size)]
        return [Transition(self.states[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                           self.next_states[i].copy(), bool(self.terminals[i])) for i in idx]

    def sample(self, rng: np.random.Generator, batch_size: int):
        """Return ``(states, actions, rewards, next_states, terminals)`` arrays."""
        if self.size == 0:
            raise InputError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])
