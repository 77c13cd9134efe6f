"""Shared environment types: specs, action spaces, and batched state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DiscreteSpace:
    n: int

    def contains(self, action):
        return 0 <= int(action) < self.n


@dataclass(frozen=True)
class ContinuousSpace:
    dim: int
    low: float
    high: float

    def contains(self, action):
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        return a.size == self.dim and np.all(a >= self.low) and np.all(a <= self.high)


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment.

    ``reference_return`` is the mean return of the env's known near-optimal
    scripted controller, measured over 100 seeds; it anchors normalized
    fitness. ``gamma`` is carried for completeness; episode fitness is the
    undiscounted return.
    """

    env_id: str
    obs_dim: int
    action_space: DiscreteSpace | ContinuousSpace
    horizon: int
    reference_return: float
    gamma: float = 1.0

    @property
    def discrete(self):
        return isinstance(self.action_space, DiscreteSpace)

    @property
    def action_dim(self):
        return self.action_space.n if self.discrete else self.action_space.dim

    @property
    def policy_out_dim(self):
        # Continuous heads emit a mean and a log-std per action dimension.
        return self.action_space.n if self.discrete else 2 * self.action_space.dim


@dataclass
class EnvState:
    """Batched simulator state: every array carries a leading batch axis.

    The single-environment API is the batch=1 special case. ``data`` holds
    env-specific arrays (state vectors or grid planes) plus the reset seeds
    (the only randomness; transitions are deterministic given the state).
    """

    env_id: str
    data: dict
    step: np.ndarray  # (B,) int32, counts steps taken
    done: np.ndarray  # (B,) bool

    @property
    def batch(self):
        return self.step.shape[0]


def make_rngs(seeds):
    return [np.random.default_rng(s) for s in seeds]


def freeze_done_rows(old, new, active):
    """Rows that were already terminal keep their previous values."""
    mask = active
    while mask.ndim < new.ndim:
        mask = mask[..., None]
    return np.where(mask, new, old)
