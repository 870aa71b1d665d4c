"""Shared domain types: transitions, episode storage, state normalization, RNG.

States and actions are plain float64 numpy vectors. A policy instance owns a
frozen :class:`StateNormalizer`; all distance computations happen in
normalized coordinates while prototypes are stored in raw coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigError(Exception):
    """Bad experiment configuration (CLI exit code 2)."""


class NumericalError(Exception):
    """Non-finite quantity encountered during a run (CLI exit code 3)."""


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic RNG stream; the single source of randomness for a run."""
    return np.random.default_rng(seed)


def as_state(x) -> np.ndarray:
    s = np.asarray(x, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError(f"state must be a 1-d vector, got shape {s.shape}")
    return s


@dataclass(frozen=True)
class Transition:
    """One environment step under the behavior policy."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool
    behavior_logp: float


class Episode:
    """One episode stored as dense arrays (states, actions, rewards, logps).

    ``terminal`` marks a true environment termination at the last step;
    horizon truncation leaves it False so the value bootstrap applies.
    ``final_state`` is the state reached after the last transition.
    """

    def __init__(self, states, actions, rewards, behavior_logp, final_state,
                 terminal: bool):
        self.states = np.asarray(states, dtype=np.float64)
        self.actions = np.asarray(actions, dtype=np.float64)
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.behavior_logp = np.asarray(behavior_logp, dtype=np.float64)
        self.final_state = np.asarray(final_state, dtype=np.float64)
        self.terminal = bool(terminal)
        n = len(self.rewards)
        if not (len(self.states) == len(self.actions) == len(self.behavior_logp) == n >= 1):
            raise ValueError("episode arrays must share a positive length")
        if not np.isfinite(self.behavior_logp).all():
            raise ValueError("behavior log-densities must be finite")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def next_states(self) -> np.ndarray:
        return np.vstack([self.states[1:], self.final_state[None, :]])

    def transitions(self):
        last = len(self) - 1
        for t in range(len(self)):
            yield Transition(
                state=self.states[t],
                action=self.actions[t],
                reward=float(self.rewards[t]),
                next_state=self.next_states[t],
                terminal=self.terminal and t == last,
                behavior_logp=float(self.behavior_logp[t]),
            )

    @classmethod
    def from_transitions(cls, transitions) -> "Episode":
        transitions = list(transitions)
        return cls(
            states=[tr.state for tr in transitions],
            actions=[tr.action for tr in transitions],
            rewards=[tr.reward for tr in transitions],
            behavior_logp=[tr.behavior_logp for tr in transitions],
            final_state=transitions[-1].next_state,
            terminal=transitions[-1].terminal,
        )


@dataclass
class TrajectoryDataset:
    """Episodes collected under one behavior policy, plus their advantages.

    ``advantages`` / ``value_targets`` are per-episode arrays filled by the
    advantage estimator; policy updates refuse to run before they exist.
    """

    episodes: list = field(default_factory=list)
    advantages: list | None = None
    value_targets: list | None = None

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def total_steps(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def all_states(self) -> np.ndarray:
        return np.concatenate([ep.states for ep in self.episodes], axis=0)

    def all_actions(self) -> np.ndarray:
        return np.concatenate([ep.actions for ep in self.episodes], axis=0)

    def all_behavior_logp(self) -> np.ndarray:
        return np.concatenate([ep.behavior_logp for ep in self.episodes])

    def all_advantages(self) -> np.ndarray:
        if self.advantages is None:
            raise ValueError("advantages have not been computed for this dataset")
        return np.concatenate(self.advantages)

    def all_value_targets(self) -> np.ndarray:
        if self.value_targets is None:
            raise ValueError("value targets have not been computed for this dataset")
        return np.concatenate(self.value_targets)


class StateNormalizer:
    """Per-dimension affine normalization, frozen after construction.

    The std is floored at 1e-6. Arrays are marked read-only, so the mapping
    is a pure function of its inputs for the lifetime of the object.
    """

    STD_FLOOR = 1e-6

    def __init__(self, mean, std):
        mean = np.asarray(mean, dtype=np.float64).copy()
        std = np.maximum(np.asarray(std, dtype=np.float64), self.STD_FLOOR)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-d vectors of equal length")
        mean.setflags(write=False)
        std.setflags(write=False)
        self.mean = mean
        self.std = std

    @classmethod
    def unit(cls, dim: int) -> "StateNormalizer":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, states) -> "StateNormalizer":
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 2 or len(states) == 0:
            raise ValueError("need a non-empty (n, dim) array of states")
        return cls(states.mean(axis=0), states.std(axis=0))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        return normalize(s, self)

    def __eq__(self, other):
        return (isinstance(other, StateNormalizer)
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.std, other.std))


def normalize(s: np.ndarray, norm: StateNormalizer) -> np.ndarray:
    """(s - mean) / std, elementwise; accepts a single vector or an (n, dim) batch."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != norm.dim:
        raise ValueError(f"dimension mismatch: state has {s.shape[-1]}, normalizer has {norm.dim}")
    return (s - norm.mean) / norm.std


def parameter_count(policy) -> int:
    """Learnable scalar count: centers + action rows + weights + diagonal covariance."""
    k = policy.n_clusters
    return k * (policy.state_dim + policy.action_dim + 1) + policy.action_dim
