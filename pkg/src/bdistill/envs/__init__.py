"""Native desk-scale control environments and policy rollouts.

Registered env ids: ``cartpole``, ``acrobot``, ``pendulum``,
``gridbreakout``. All trajectories are deterministic functions of
(spec, seed, policy, greedy flag); randomness enters only through per-row
seed streams, so a vectorized rollout of B policies is exactly B
independent sequential rollouts.
"""

from __future__ import annotations

import numpy as np

from .. import nn
from ..errors import EpisodeDoneError, InputError
from . import acrobot, cartpole, gridbreakout, pendulum
from .base import ContinuousSpace, DiscreteSpace, EnvSpec, EnvState

_BACKENDS = {
    "cartpole": cartpole,
    "acrobot": acrobot,
    "pendulum": pendulum,
    "gridbreakout": gridbreakout,
}

ENV_IDS = tuple(_BACKENDS)


def get_spec(env_id: str) -> EnvSpec:
    try:
        return _BACKENDS[env_id].SPEC
    except KeyError:
        raise InputError(f"unknown env id {env_id!r}; known: {ENV_IDS}") from None


def scripted_policy(env_id: str):
    """The env's known near-optimal controller, mapping obs batches to actions."""
    return _BACKENDS[get_spec(env_id).env_id].scripted_action


# --- single-environment API ---------------------------------------------------

def reset(spec: EnvSpec, seed):
    """Deterministic reset for (spec, seed); returns (state, obs)."""
    backend = _BACKENDS[get_spec(spec.env_id).env_id]
    state, obs = backend.reset_batch([seed])
    return state, obs[0]


def step(state: EnvState, action):
    """Advance a single-environment state by one transition."""
    spec = get_spec(state.env_id)
    if bool(state.done[0]):
        raise EpisodeDoneError(f"{state.env_id} episode is terminal; reset() first")
    if spec.discrete:
        if not spec.action_space.contains(action):
            raise InputError(
                f"action {action!r} outside discrete({spec.action_space.n})"
            )
        actions = np.array([int(action)], dtype=np.int64)
    else:
        if not spec.action_space.contains(action):
            raise InputError(
                f"action {action!r} outside [{spec.action_space.low}, {spec.action_space.high}]^{spec.action_space.dim}"
            )
        actions = np.asarray(action, dtype=np.float32).reshape(1, -1)
    backend = _BACKENDS[state.env_id]
    new_state, obs, reward, done = backend.step_batch(state, actions)
    return new_state, obs[0], float(reward[0]), bool(done[0])


# --- policy rollouts ------------------------------------------------------------

def _normalize_obs(obs, normalizer):
    if normalizer is None:
        return obs
    return (obs - normalizer.mean) / normalizer.std


def _embed_obs(x, obs_block, obs_dim):
    if obs_block is None:
        return x
    offset, total = obs_block
    padded = np.zeros((x.shape[0], total), dtype=np.float32)
    padded[:, offset : offset + obs_dim] = x
    return padded


def _softmax_sample(logits, u):
    z = logits - logits.max(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        p = np.exp(z)
        p = p / p.sum(axis=-1, keepdims=True)
        cum = np.cumsum(p, axis=-1)
        return np.argmax(cum >= u[:, None], axis=-1)


def _draw_action_noise(spec, act_seeds, horizon, greedy):
    if greedy:
        return None
    if spec.discrete:
        return np.stack(
            [np.random.default_rng(s).random(horizon) for s in act_seeds]
        )
    a = spec.action_space.dim
    return np.stack(
        [np.random.default_rng(s).standard_normal((horizon, a)) for s in act_seeds]
    )


def _select_actions(spec, out, noise_t, greedy, action_block, explore_eps=0.0):
    if spec.discrete:
        start, count = action_block if action_block else (0, spec.action_space.n)
        logits = out[:, start : start + count]
        if greedy:
            return np.argmax(logits, axis=-1)
        if explore_eps > 0.0:
            # Epsilon-mixed sampling: keeps returns distinguishable even when
            # behaviour cloning saturates every candidate to the same argmax.
            z = logits - logits.max(axis=-1, keepdims=True)
            with np.errstate(invalid="ignore"):
                p = np.exp(z)
                p = p / p.sum(axis=-1, keepdims=True)
            p = (1.0 - explore_eps) * p + explore_eps / count
            cum = np.cumsum(p, axis=-1)
            return np.argmax(cum >= noise_t[:, None], axis=-1)
        return _softmax_sample(logits, noise_t)
    a_total = out.shape[1] // 2
    start, count = action_block if action_block else (0, spec.action_space.dim)
    mu = out[:, start : start + count]
    if greedy:
        act = mu
    else:
        log_std = out[:, a_total + start : a_total + start + count]
        with np.errstate(over="ignore", invalid="ignore"):
            act = mu + np.exp(log_std) * noise_t.astype(np.float32)
    return np.clip(act, spec.action_space.low, spec.action_space.high)


def rollout_batch(
    spec: EnvSpec,
    weights,
    biases,
    activation,
    seeds,
    greedy=False,
    normalizer=None,
    obs_block=None,
    action_block=None,
    action_seeds=None,
    explore_eps=0.0,
):
    """Roll out B policies for one episode each; policies may be a stacked
    (B, ...) parameter set or a single shared network.

    Returns (returns, lengths), both (B,). Per-row randomness (environment
    reset and action sampling) comes from SeedSequence(seed_i), so results
    are independent of batch composition. ``action_seeds`` optionally
    decouples the action-sampling streams from the environment streams
    (the engine keys them per candidate so identically behaved candidates
    under common environment seeds still receive distinct exploration).
    """
    backend = _BACKENDS[get_spec(spec.env_id).env_id]
    seeds = [int(s) for s in seeds]
    env_seeds, act_seeds = [], []
    for s in seeds:
        env_child, act_child = np.random.SeedSequence(s).spawn(2)
        env_seeds.append(env_child)
        act_seeds.append(act_child)
    if action_seeds is not None:
        act_seeds = [np.random.SeedSequence(int(s)) for s in action_seeds]

    state, obs = backend.reset_batch(env_seeds)
    b = state.batch
    noise = _draw_action_noise(spec, act_seeds, spec.horizon, greedy)
    returns = np.zeros(b, dtype=np.float64)

    for t in range(spec.horizon):
        if state.done.all():
            break
        x = _normalize_obs(obs, normalizer).astype(np.float32)
        x = _embed_obs(x, obs_block, spec.obs_dim)
        out = nn.forward_arrays(weights, biases, x[:, None, :], activation)[:, 0, :]
        noise_t = None if greedy else noise[:, t]
        actions = _select_actions(spec, out, noise_t, greedy, action_block, explore_eps)
        state, obs, reward, _ = backend.step_batch(state, actions)
        returns += reward.astype(np.float64)

    return returns, state.step.astype(np.int64)


def rollout(spec: EnvSpec, params: nn.PolicyParams, seed, greedy=False, normalizer=None):
    """Single-policy episode; returns (undiscounted return, episode length)."""
    returns, lengths = rollout_batch(
        spec, params.weights, params.biases, params.activation, [seed],
        greedy=greedy, normalizer=normalizer,
    )
    return float(returns[0]), int(lengths[0])


def scripted_rollout_batch(spec: EnvSpec, seeds):
    """Episodes driven by the env's scripted reference controller."""
    backend = _BACKENDS[get_spec(spec.env_id).env_id]
    policy = backend.scripted_action
    env_seeds = [np.random.SeedSequence(int(s)).spawn(2)[0] for s in seeds]
    state, obs = backend.reset_batch(env_seeds)
    returns = np.zeros(state.batch, dtype=np.float64)
    for _ in range(spec.horizon):
        if state.done.all():
            break
        state, obs, reward, _ = backend.step_batch(state, policy(obs))
        returns += reward.astype(np.float64)
    return returns, state.step.astype(np.int64)


def sample_observations(spec: EnvSpec, n_episodes, seed):
    """Observations visited by a uniform-random policy; used to fit the
    frozen observation normalizer at run start."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_seeds = root.spawn(n_episodes)
    act_rng = np.random.default_rng(root.spawn(1)[0])
    backend = _BACKENDS[get_spec(spec.env_id).env_id]
    state, obs = backend.reset_batch(env_seeds)
    collected = [obs.copy()]
    for _ in range(spec.horizon):
        if state.done.all():
            break
        active = ~state.done
        if spec.discrete:
            actions = act_rng.integers(0, spec.action_space.n, size=n_episodes)
        else:
            actions = act_rng.uniform(
                spec.action_space.low,
                spec.action_space.high,
                size=(n_episodes, spec.action_space.dim),
            ).astype(np.float32)
        state, obs, _, _ = backend.step_batch(state, actions)
        if active.any():
            collected.append(obs[active].copy())
    return np.concatenate(collected, axis=0)
