"""Outer-loop evolution strategies over a flat parameter vector.

Two strategies:

- ``openes``: antithetic Gaussian perturbations, centered-rank fitness
  shaping, Adam ascent on the mean, scalar step size with optional decay.
- ``snes``: separable natural ES with a per-coordinate step size, softmax
  utilities with a temperature knob, and dimension-tied learning rates.

Both strategies maximize. ask/tell are sequential state transitions; the
only mutable member carried across them is the RNG stream inside EsState.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import AdamState, adam_delta, init_adam

STRATEGIES = ("openes", "snes")


@dataclass
class EsConfig:
    """Search hyperparameters. Field names follow the usual ES conventions."""

    popsize: int
    sigma_init: float
    lrate_init: float = 0.05
    sigma_decay: float = 1.0
    sigma_limit: float = 0.0
    lrate_decay: float = 1.0
    strategy: str = "openes"
    temperature: float = 20.0
    n_generations: int = 100

    def validate(self):
        if self.popsize < 2 or self.popsize % 2 != 0:
            raise ConfigError(f"popsize must be even and >= 2, got {self.popsize}")
        if not self.sigma_init > 0:
            raise ConfigError(f"sigma_init must be positive, got {self.sigma_init}")
        if not self.lrate_init > 0:
            raise ConfigError(f"lrate_init must be positive, got {self.lrate_init}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.n_generations < 0:
            raise ConfigError(f"n_generations must be >= 0, got {self.n_generations}")
        return self


@dataclass
class EsState:
    """Search state: mean vector, step size(s), optimizer moments, generation."""

    mean: np.ndarray
    sigma: np.ndarray  # shape () for openes, (d,) for snes
    adam: AdamState | None
    lrate: float
    generation: int
    rng: np.random.Generator


@dataclass
class PerturbationBatch:
    """Candidate vectors and the noise that produced them (antithetic pairs)."""

    candidates: np.ndarray  # (P, d)
    noise: np.ndarray  # (P, d), noise[2j+1] == -noise[2j]


def init_state(x0, config: EsConfig, seed=0) -> EsState:
    config.validate()
    mean = np.asarray(x0, dtype=np.float32).copy()
    if mean.ndim != 1:
        raise ShapeError(f"initial mean must be 1-D, got shape {mean.shape}")
    if config.strategy == "snes":
        sigma = np.full(mean.shape, config.sigma_init, dtype=np.float32)
        adam = None
    else:
        sigma = np.float32(config.sigma_init)
        adam = init_adam(mean.size, config.lrate_init)
    return EsState(
        mean=mean,
        sigma=sigma,
        adam=adam,
        lrate=config.lrate_init,
        generation=0,
        rng=np.random.default_rng(seed),
    )


def ask(state: EsState, config: EsConfig) -> PerturbationBatch:
    """Sample a population of antithetically paired candidates around the mean."""
    p = config.popsize
    d = state.mean.size
    half = state.rng.standard_normal((p // 2, d), dtype=np.float32)
    noise = np.empty((p, d), dtype=np.float32)
    noise[0::2] = half
    noise[1::2] = -half
    candidates = state.mean[None, :] + state.sigma * noise
    return PerturbationBatch(candidates=candidates, noise=noise)


def _centered_ranks(values):
    """Average-rank transform to [-0.5, 0.5]; exact ties share one rank.

    Tie-averaging (rather than index order) makes constant fitness map to a
    constant shaped vector, which in turn makes the antithetic gradient
    estimate cancel exactly.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks / (n - 1) - 0.5


def shape_fitness(raw, strategy="openes", temperature=20.0):
    """Rank-based fitness shaping. NaN entries are assigned the worst rank.

    openes: centered ranks in [-0.5, 0.5]. snes: zero-sum softmax utilities
    at the given temperature. Both are invariant to strictly monotone
    transforms of the raw fitness and preserve ordering.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1:
        raise ShapeError(f"fitness must be 1-D, got shape {raw.shape}")
    raw = np.where(np.isnan(raw), -np.inf, raw)
    centered = _centered_ranks(raw)
    if strategy == "snes":
        logits = temperature * centered
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        return (weights - 1.0 / raw.size).astype(np.float32)
    return centered.astype(np.float32)


def gradient_estimate(batch: PerturbationBatch, shaped, sigma):
    """The score-function estimator (1 / (P sigma)) * sum_i f_i xi_i."""
    shaped = np.asarray(shaped, dtype=np.float32)
    p = batch.noise.shape[0]
    return (batch.noise.T @ shaped) / (p * sigma)


def tell(state: EsState, batch: PerturbationBatch, shaped_fitness, config: EsConfig) -> EsState:
    """Consume shaped fitness for one population and return the next state."""
    shaped = np.asarray(shaped_fitness, dtype=np.float32)
    if shaped.shape != (batch.candidates.shape[0],):
        raise ShapeError(
            f"shaped fitness has shape {shaped.shape}, expected ({batch.candidates.shape[0]},)"
        )
    if batch.candidates.shape[1] != state.mean.size:
        raise ShapeError("perturbation batch does not match state dimension")

    if config.strategy == "snes":
        return _tell_snes(state, batch, shaped, config)
    return _tell_openes(state, batch, shaped, config)


def _tell_openes(state, batch, shaped, config):
    grad = gradient_estimate(batch, shaped, state.sigma)
    m, v, delta = adam_delta(
        state.adam.m,
        state.adam.v,
        state.adam.step,
        -grad,  # ascent
        state.lrate,
        state.adam.beta1,
        state.adam.beta2,
        state.adam.eps,
    )
    adam = AdamState(
        m=m,
        v=v,
        step=state.adam.step + 1,
        lr=state.lrate,
        beta1=state.adam.beta1,
        beta2=state.adam.beta2,
        eps=state.adam.eps,
    )
    sigma = np.float32(max(float(state.sigma) * config.sigma_decay, config.sigma_limit))
    return EsState(
        mean=state.mean - delta,
        sigma=sigma,
        adam=adam,
        lrate=state.lrate * config.lrate_decay,
        generation=state.generation + 1,
        rng=state.rng,
    )


def _tell_snes(state, batch, shaped, config):
    d = state.mean.size
    z = batch.noise
    mean = state.mean + state.sigma * (shaped @ z)
    eta_sigma = (3.0 + np.log(d)) / (5.0 * np.sqrt(d))
    sigma = state.sigma * np.exp(0.5 * eta_sigma * (shaped @ (z * z - 1.0)))
    sigma = np.maximum(sigma * config.sigma_decay, config.sigma_limit).astype(np.float32)
    return EsState(
        mean=mean.astype(np.float32),
        sigma=sigma,
        adam=None,
        lrate=state.lrate,
        generation=state.generation + 1,
        rng=state.rng,
    )
