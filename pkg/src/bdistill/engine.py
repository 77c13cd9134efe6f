"""The distillation engine: evolve a synthetic dataset whose behaviour-cloning
consumption trains high-return policies.

One generation: perturb the dataset vector (es), train one policy per
candidate by full-batch BC (tensor stack), roll the trained policies out for
fitness, shape, update the dataset mean. Variant F keeps a single fixed
policy init for the whole run; variant R resamples k inits every generation.

Candidate evaluation is vectorized: the population trains and rolls out in
lockstep as stacked tensors, with common random numbers across candidates
within a generation. Candidates never share state; permuting them permutes
fitness identically.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset as ds_mod
from . import envs, es, nn
from .dataset import ObservationNormalizer, SyntheticDataset
from .errors import ConfigError, InputError

VARIANTS = ("F", "R")


@dataclass
class InnerConfig:
    """Behaviour-cloning inner loop settings (full-batch Adam steps)."""

    lr: float = 0.005
    update_epochs: int = 400
    max_grad_norm: float = 0.5
    greedy_act: bool = False
    anneal_lr: bool = False
    explore_eps: float = 0.05  # discrete fitness rollouts mix in uniform actions

    def validate(self):
        if self.update_epochs < 1:
            raise ConfigError(f"update_epochs must be >= 1, got {self.update_epochs}")
        if not self.lr > 0:
            raise ConfigError(f"inner lr must be positive, got {self.lr}")
        return self


@dataclass
class DistillConfig:
    variant: str = "F"
    k: int = 2  # policy inits per generation (variant R)
    inner: InnerConfig = field(default_factory=InnerConfig)
    es: es.EsConfig = field(default_factory=lambda: es.EsConfig(popsize=64, sigma_init=0.03))
    dataset_size: int = 4
    init_mode: str = "random"
    width: int = 64
    activation: str = "tanh"
    rollouts_per_candidate: int = 1
    num_eval_envs: int = 16
    normalize_obs: bool = True
    norm_episodes: int = 8
    resample_inits: bool = True  # diagnostic hook: False freezes variant R's inits

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be F or R, got {self.variant!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.rollouts_per_candidate < 1:
            raise ConfigError("rollouts_per_candidate must be >= 1")
        if self.num_eval_envs < 1:
            raise ConfigError("num_eval_envs must be >= 1")
        if self.width < 1:
            raise ConfigError(f"width must be >= 1, got {self.width}")
        if self.activation not in nn.ACTIVATIONS:
            raise ConfigError(f"activation must be one of {nn.ACTIVATIONS}")
        self.inner.validate()
        self.es.validate()
        return self


@dataclass
class FitnessReport:
    """Per-generation population statistics (diverged candidates carry NaN)."""

    generation: int
    per_candidate: np.ndarray
    mean: float
    max: float
    min: float
    wall_ms: float

    @classmethod
    def from_fitness(cls, generation, fitness, wall_ms):
        safe = np.nan_to_num(fitness, nan=0.0)
        return cls(
            generation=generation,
            per_candidate=fitness,
            mean=float(safe.mean()),
            max=float(safe.max()),
            min=float(safe.min()),
            wall_ms=float(wall_ms),
        )


@dataclass
class RunArtifacts:
    dataset: SyntheticDataset
    policy: nn.PolicyParams
    reports: list
    final_eval_return: float


# --- batched behaviour cloning -------------------------------------------------

def train_policies_batched(states, actions, discrete, template: nn.PolicyParams, init_flat, inner: InnerConfig):
    """Train a stack of policies in lockstep by full-batch BC.

    states: (B, N, obs_dim) or (N, obs_dim) shared; actions: (N,) labels
    shared across the stack, or (B, N, A) continuous targets. init_flat:
    (B, D) flat parameter stack (copied, not mutated). Returns
    (flat (B, D), diverged (B,) bool).
    """
    flat = np.atleast_2d(init_flat.astype(np.float32).copy())
    ws, bs = nn.flat_views(flat, template)
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)
    g = np.empty_like(flat)
    buf = np.empty_like(flat)
    beta1, beta2, eps = np.float32(0.9), np.float32(0.999), np.float32(1e-8)
    epochs = inner.update_epochs
    max_norm = np.float32(inner.max_grad_norm)
    loss = None
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(epochs):
            lr_t = inner.lr * (1.0 - t / epochs) if inner.anneal_lr else inner.lr
            if discrete:
                loss, d_ws, d_bs = nn.bc_grads_discrete(ws, bs, template.activation, states, actions)
            else:
                loss, d_ws, d_bs = nn.bc_grads_continuous(ws, bs, template.activation, states, actions)
            _pack_grads(d_ws, d_bs, g)
            # Per-candidate global-norm clip, then Adam, all in place.
            norm = np.sqrt(np.einsum("bi,bi->b", g, g))
            scale = np.where(norm > max_norm, max_norm / np.maximum(norm, 1e-30), 1.0)
            g *= scale[:, None].astype(np.float32)
            np.multiply(g, 1.0 - beta1, out=buf)
            m *= beta1
            m += buf
            np.square(g, out=g)
            g *= 1.0 - beta2
            v *= beta2
            v += g
            c1 = np.float32(1.0 / (1.0 - float(beta1) ** (t + 1)))
            c2 = np.float32(1.0 / (1.0 - float(beta2) ** (t + 1)))
            np.multiply(v, c2, out=buf)
            np.sqrt(buf, out=buf)
            buf += eps
            np.divide(m, buf, out=buf)
            buf *= np.float32(lr_t) * c1
            flat -= buf
    diverged = ~np.isfinite(flat).all(axis=-1)
    if loss is not None:
        diverged |= ~np.isfinite(np.atleast_1d(loss))
    return flat, diverged


def _pack_grads(d_ws, d_bs, out):
    offset = 0
    for w, b in zip(d_ws, d_bs):
        size = w.shape[-2] * w.shape[-1]
        out[:, offset : offset + size] = w.reshape(w.shape[0], -1)
        offset += size
        out[:, offset : offset + b.shape[-1]] = b
        offset += b.shape[-1]


def inner_train(ds: SyntheticDataset, init: nn.PolicyParams, inner: InnerConfig) -> nn.PolicyParams:
    """Train one policy on one dataset (the public single-candidate path)."""
    if ds.obs_dim != init.obs_dim or ds.policy_out_dim != init.out_dim:
        raise InputError(
            f"dataset dims ({ds.obs_dim} -> {ds.policy_out_dim}) do not match "
            f"policy dims ({init.obs_dim} -> {init.out_dim})"
        )
    states = ds.states[None]
    actions = ds.actions if ds.discrete else ds.actions[None]
    flat, _ = train_policies_batched(
        states, actions, ds.discrete, init, nn.flatten_params(init)[None], inner
    )
    return nn.params_from_flat(flat[0], init)


def evaluate_policy(spec, params: nn.PolicyParams, seeds, greedy=False, normalizer=None,
                    obs_block=None, action_block=None, explore_eps=0.0):
    """Mean return of one policy over the given rollout seeds."""
    returns, _ = envs.rollout_batch(
        spec, params.weights, params.biases, params.activation, list(seeds),
        greedy=greedy, normalizer=normalizer, obs_block=obs_block, action_block=action_block,
        explore_eps=explore_eps,
    )
    return float(returns.mean())


def candidate_action_seed(rollout_seed, states, actions=None):
    """Per-candidate exploration stream key: hashes the candidate's evolvable
    content together with the shared rollout seed. Environment randomness
    stays common across candidates; action sampling does not, so exact
    behavioural ties (common early in training, where every policy fails
    identically) still produce distinguishable returns instead of freezing
    the rank-based update."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(rollout_seed).to_bytes(8, "little", signed=False))
    h.update(np.ascontiguousarray(states, dtype=np.float32).tobytes())
    if actions is not None:
        h.update(np.ascontiguousarray(actions, dtype=np.float32).tobytes())
    return int.from_bytes(h.digest(), "little")


def evaluate_candidate(ds: SyntheticDataset, inits, spec, inner: InnerConfig, rollout_seeds):
    """Train from each init, roll out, and average: the candidate's fitness.

    Divergence in any inner loop propagates as NaN (the shaping stage maps
    NaN to the worst rank).
    """
    per_init = []
    for init in inits:
        trained = inner_train(ds, init, inner)
        if not all(np.isfinite(w).all() for w in trained.weights):
            return float("nan")
        returns = []
        for s in rollout_seeds:
            ret, _ = envs.rollout_batch(
                spec, trained.weights, trained.biases, trained.activation, [int(s)],
                greedy=inner.greedy_act, normalizer=ds.normalizer,
                action_seeds=None if inner.greedy_act else [
                    candidate_action_seed(s, ds.states, None if ds.discrete else ds.actions)
                ],
                explore_eps=inner.explore_eps,
            )
            returns.append(float(ret[0]))
        per_init.append(float(np.mean(returns)))
    return float(np.mean(per_init))


def _evaluate_population(spec, template_ds, cand_states, cand_actions, init_flats,
                         policy_template, inner, rollout_seeds, normalizer):
    """Vectorized candidate fitness: (P,) mean return across inits and rollouts."""
    p = cand_states.shape[0]
    totals = np.zeros(p, dtype=np.float64)
    any_diverged = np.zeros(p, dtype=bool)
    n_terms = 0
    for init_flat in init_flats:
        tiled = np.repeat(init_flat[None, :], p, axis=0)
        flat, diverged = train_policies_batched(
            cand_states, cand_actions, template_ds.discrete, policy_template, tiled, inner
        )
        any_diverged |= diverged
        ws, bs = nn.flat_views(flat, policy_template)
        for seed in rollout_seeds:
            if inner.greedy_act:
                action_seeds = None
            else:
                action_seeds = [
                    candidate_action_seed(
                        seed,
                        cand_states[i],
                        None if template_ds.discrete else cand_actions[i],
                    )
                    for i in range(p)
                ]
            returns, _ = envs.rollout_batch(
                spec, ws, bs, policy_template.activation, [int(seed)] * p,
                greedy=inner.greedy_act, normalizer=normalizer,
                action_seeds=action_seeds, explore_eps=inner.explore_eps,
            )
            totals += returns
            n_terms += 1
    fitness = totals / max(n_terms, 1)
    fitness[any_diverged] = np.nan
    return fitness.astype(np.float64)


# --- the outer loop ---------------------------------------------------------------

def _fit_normalizer(spec, config, seed):
    if not config.normalize_obs:
        return ObservationNormalizer.identity(spec.obs_dim)
    obs = envs.sample_observations(spec, n_episodes=config.norm_episodes, seed=seed)
    return ObservationNormalizer.fit(obs)


def _candidate_arrays(batch, template: SyntheticDataset):
    """View the perturbation batch as per-candidate dataset arrays."""
    p = batch.candidates.shape[0]
    n, d = template.states.shape
    states = batch.candidates[:, : n * d].reshape(p, n, d)
    if template.discrete:
        actions = template.actions
    else:
        actions = batch.candidates[:, n * d :].reshape(p, n, template.n_actions)
    return states, actions


def run(spec, config: DistillConfig, seed=0, generation_callback=None) -> RunArtifacts:
    """Distill a dataset for ``spec``: the full outer loop, Algorithm-style.

    Deterministic given (spec, config, seed) at a fixed thread count: every
    random draw descends from one seed tree, and reductions happen in fixed
    order.
    """
    config.validate()
    root = np.random.SeedSequence(seed)
    norm_seed, ds_seed, es_seed, policy_seed, eval_seed, final_seed = root.spawn(6)

    normalizer = _fit_normalizer(spec, config, norm_seed)
    template_ds = ds_mod.init_dataset(
        spec, config.dataset_size, config.init_mode, seed=ds_seed, normalizer=normalizer
    )
    policy_template = nn.init_policy(
        spec.obs_dim, config.width, spec.policy_out_dim, config.activation, seed=0
    )

    policy_rng = np.random.default_rng(policy_seed)
    eval_rng = np.random.default_rng(eval_seed)

    def fresh_init_flat():
        init_seed = int(policy_rng.integers(0, 2**31 - 1))
        params = nn.init_policy(
            spec.obs_dim, config.width, spec.policy_out_dim, config.activation, seed=init_seed
        )
        return nn.flatten_params(params)

    if config.variant == "F":
        fixed_inits = [fresh_init_flat()]
    elif not config.resample_inits:
        fixed_inits = [fresh_init_flat() for _ in range(config.k)]
    else:
        fixed_inits = None

    state = es.init_state(ds_mod.to_vector(template_ds), config.es, seed=es_seed)
    reports = []
    for gen in range(config.es.n_generations):
        t0 = time.perf_counter()
        batch = es.ask(state, config.es)
        cand_states, cand_actions = _candidate_arrays(batch, template_ds)
        inits = fixed_inits if fixed_inits is not None else [
            fresh_init_flat() for _ in range(config.k)
        ]
        rollout_seeds = eval_rng.integers(0, 2**31 - 1, size=config.rollouts_per_candidate)
        fitness = _evaluate_population(
            spec, template_ds, cand_states, cand_actions, inits,
            policy_template, config.inner, rollout_seeds, normalizer,
        )
        shaped = es.shape_fitness(fitness, config.es.strategy, config.es.temperature)
        state = es.tell(state, batch, shaped, config.es)
        report = FitnessReport.from_fitness(gen, fitness, (time.perf_counter() - t0) * 1e3)
        reports.append(report)
        if generation_callback is not None:
            generation_callback(report)

    final_ds = ds_mod.from_vector(state.mean, template_ds)
    final_ds.meta.update(
        {
            "variant": config.variant,
            "k": int(config.k),
            "width": int(config.width),
            "activation": config.activation,
            "inner_lr": float(config.inner.lr),
            "update_epochs": int(config.inner.update_epochs),
            "generations": int(config.es.n_generations),
            "seed": int(seed),
            "final_pop_mean": reports[-1].mean if reports else None,
        }
    )

    final_init_flat = fixed_inits[0] if fixed_inits is not None else fresh_init_flat()
    final_policy = inner_train(
        final_ds,
        nn.params_from_flat(final_init_flat, policy_template),
        config.inner,
    )
    eval_seeds = np.random.default_rng(final_seed).integers(
        0, 2**31 - 1, size=config.num_eval_envs
    )
    final_return = evaluate_policy(
        spec, final_policy, eval_seeds, greedy=config.inner.greedy_act,
        normalizer=normalizer, explore_eps=config.inner.explore_eps,
    )
    final_ds.meta["final_eval_return"] = final_return
    return RunArtifacts(final_ds, final_policy, reports, final_return)


def budget_sweep(spec, config: DistillConfig, sizes, seed=0):
    """One full run per dataset size with shared seeds; returns summary rows."""
    rows = []
    for size in sizes:
        cfg = replace(config, dataset_size=int(size))
        artifacts = run(spec, cfg, seed=seed)
        rows.append(
            {
                "n_rows": int(size),
                "final_eval_return": artifacts.final_eval_return,
                "final_pop_mean": artifacts.reports[-1].mean if artifacts.reports else 0.0,
            }
        )
    return rows


# --- direct neuroevolution baseline ------------------------------------------------

def run_neuroevolution(spec, es_config: es.EsConfig, seed=0, width=64, activation="tanh",
                       rollouts_per_candidate=1, greedy_act=False, normalize_obs=True,
                       norm_episodes=8, explore_eps=0.05, generation_callback=None):
    """Evolve policy weights directly with the same outer loop: the baseline
    that dataset distillation is measured against at equal budget."""
    es_config.validate()
    root = np.random.SeedSequence(seed)
    norm_seed, es_seed, policy_seed, eval_seed = root.spawn(4)

    if normalize_obs:
        obs = envs.sample_observations(spec, n_episodes=norm_episodes, seed=norm_seed)
        normalizer = ObservationNormalizer.fit(obs)
    else:
        normalizer = ObservationNormalizer.identity(spec.obs_dim)

    init_seed = int(np.random.default_rng(policy_seed).integers(0, 2**31 - 1))
    template = nn.init_policy(spec.obs_dim, width, spec.policy_out_dim, activation, seed=init_seed)
    state = es.init_state(nn.flatten_params(template), es_config, seed=es_seed)
    eval_rng = np.random.default_rng(eval_seed)

    reports = []
    for gen in range(es_config.n_generations):
        t0 = time.perf_counter()
        batch = es.ask(state, es_config)
        ws, bs = nn.flat_views(batch.candidates, template)
        totals = np.zeros(es_config.popsize, dtype=np.float64)
        rollout_seeds = eval_rng.integers(0, 2**31 - 1, size=rollouts_per_candidate)
        for s in rollout_seeds:
            if greedy_act:
                action_seeds = None
            else:
                action_seeds = [
                    candidate_action_seed(s, batch.candidates[i])
                    for i in range(es_config.popsize)
                ]
            returns, _ = envs.rollout_batch(
                spec, ws, bs, activation, [int(s)] * es_config.popsize,
                greedy=greedy_act, normalizer=normalizer,
                action_seeds=action_seeds, explore_eps=explore_eps,
            )
            totals += returns
        fitness = totals / rollouts_per_candidate
        shaped = es.shape_fitness(fitness, es_config.strategy, es_config.temperature)
        state = es.tell(state, batch, shaped, es_config)
        report = FitnessReport.from_fitness(gen, fitness, (time.perf_counter() - t0) * 1e3)
        reports.append(report)
        if generation_callback is not None:
            generation_callback(report)

    final_policy = nn.params_from_flat(state.mean, template)
    return reports, final_policy, normalizer
