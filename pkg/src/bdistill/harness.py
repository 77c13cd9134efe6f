"""Post-hoc studies on saved datasets: retraining sweeps across architectures
and hyperparameters, and the zero-shot multi-task evaluation protocol."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dataset as ds_mod
from . import engine, envs, nn
from .dataset import ObservationNormalizer, SyntheticDataset
from .errors import InputError


def train_policy_on_dataset(ds: SyntheticDataset, width, activation, lr, epochs,
                            max_grad_norm=0.5, anneal_lr=False, init_seed=0):
    """Fresh init, behaviour-clone on the dataset, return the trained policy."""
    init = nn.init_policy(ds.obs_dim, width, ds.policy_out_dim, activation, seed=init_seed)
    inner = engine.InnerConfig(
        lr=lr, update_epochs=epochs, max_grad_norm=max_grad_norm, anneal_lr=anneal_lr
    )
    return engine.inner_train(ds, init, inner)


def top_half_median(returns):
    """Median of the best half (the retraining study's summary statistic)."""
    ordered = sorted(float(r) for r in returns)[::-1]
    top = ordered[: (len(ordered) + 1) // 2]
    return float(np.median(top))


def retrain_sweep(ds: SyntheticDataset, widths, trials_per_width=20, seed=0,
                  epochs_range=(100, 500), lr_decades=3.0, eval_episodes=8,
                  greedy=False, workers=1):
    """Zero-shot retraining study: for each width, train ``trials_per_width``
    fresh policies with learning rates sampled log-uniform over
    ``lr_decades`` decades (centered on the dataset's own training lr) and
    epoch counts uniform over ``epochs_range``; roll each out and record the
    mean return.

    Returns rows sorted by (width, trial) regardless of worker scheduling.
    """
    spec = envs.get_spec(ds.task_id)
    if spec.obs_dim != ds.obs_dim:
        raise InputError(
            f"dataset obs_dim {ds.obs_dim} does not match env {ds.task_id!r}"
        )
    lr_center = float(ds.meta.get("inner_lr", 0.005))
    activation = ds.meta.get("activation", "tanh")
    eval_seeds = np.random.default_rng(np.random.SeedSequence((seed, 0xE7A1))).integers(
        0, 2**31 - 1, size=eval_episodes
    )

    jobs = []
    for width in widths:
        for trial in range(trials_per_width):
            rng = np.random.default_rng(np.random.SeedSequence((seed, int(width), trial)))
            lr = lr_center * 10.0 ** rng.uniform(-lr_decades / 2.0, lr_decades / 2.0)
            epochs = int(rng.integers(epochs_range[0], epochs_range[1] + 1))
            init_seed = int(rng.integers(0, 2**31 - 1))
            jobs.append((int(width), trial, lr, epochs, init_seed))

    def run_job(job):
        width, trial, lr, epochs, init_seed = job
        policy = train_policy_on_dataset(
            ds, width, activation, lr, epochs, init_seed=init_seed
        )
        mean_return = engine.evaluate_policy(
            spec, policy, eval_seeds, greedy=greedy, normalizer=ds.normalizer
        )
        return {
            "width": width,
            "trial": trial,
            "lr": lr,
            "epochs": epochs,
            "mean_return": mean_return,
        }

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_job, jobs))
    else:
        rows = [run_job(j) for j in jobs]
    rows.sort(key=lambda r: (r["width"], r["trial"]))
    return rows


def summarize_sweep(rows):
    """Per-width top-50% medians from retrain_sweep rows."""
    widths = sorted({r["width"] for r in rows})
    return [
        {
            "width": w,
            "top_half_median": top_half_median(
                [r["mean_return"] for r in rows if r["width"] == w]
            ),
        }
        for w in widths
    ]


# --- multi-task -------------------------------------------------------------------


def _block_normalizer(merged: SyntheticDataset, block):
    lo = block["obs_offset"]
    hi = lo + block["obs_dim"]
    return ObservationNormalizer(merged.normalizer.mean[lo:hi], merged.normalizer.std[lo:hi])


def evaluate_multitask(merged: SyntheticDataset, n_seeds=10, eval_episodes=8,
                       width=64, activation="tanh", lr=0.005, epochs=200,
                       greedy=False, seed=0):
    """The merged-dataset transfer protocol.

    Trains policies (``n_seeds`` fresh inits each) on three datasets in the
    merged geometry: task 1's rows only, task 2's rows only, and their
    union. Every policy is evaluated on both environments by embedding the
    env's normalized observation into its block and masking the action head
    to the env's label range. Normalized fitness divides by the matching
    single-task condition ("correct dataset"), which is therefore 1.0 by
    construction.

    Returns (rows, baselines): one row per (condition, env).
    """
    blocks = merged.meta.get("blocks")
    if not blocks or len(blocks) != 2:
        raise InputError("multitask evaluation needs a two-task merged dataset")
    specs = [envs.get_spec(b["task_id"]) for b in blocks]
    sub1, _ = ds_mod.block_slice(merged, 0)
    sub2, _ = ds_mod.block_slice(merged, 1)
    conditions = [(blocks[0]["task_id"], sub1), (blocks[1]["task_id"], sub2), ("merged", merged)]

    root = np.random.SeedSequence(seed)
    init_rng = np.random.default_rng(root.spawn(1)[0])
    env_eval_seeds = [
        np.random.default_rng(child).integers(0, 2**31 - 1, size=eval_episodes)
        for child in root.spawn(3)[1:]
    ]

    raw = {}
    for cond_name, cond_ds in conditions:
        per_env = np.zeros((n_seeds, 2))
        for s in range(n_seeds):
            init_seed = int(init_rng.integers(0, 2**31 - 1))
            policy = train_policy_on_dataset(
                cond_ds, width, activation, lr, epochs, init_seed=init_seed
            )
            for j, (spec_j, block) in enumerate(zip(specs, blocks)):
                per_env[s, j] = engine.evaluate_policy(
                    spec_j,
                    policy,
                    env_eval_seeds[j],
                    greedy=greedy,
                    normalizer=_block_normalizer(merged, block),
                    obs_block=(block["obs_offset"], merged.obs_dim),
                    action_block=(block["action_offset"], block["n_actions"]),
                )
        raw[cond_name] = per_env.mean(axis=0)

    baselines = {
        blocks[0]["task_id"]: max(raw[blocks[0]["task_id"]][0], 1e-9),
        blocks[1]["task_id"]: max(raw[blocks[1]["task_id"]][1], 1e-9),
    }
    rows = []
    for cond_name, _ in conditions:
        for j, block in enumerate(blocks):
            env_id = block["task_id"]
            rows.append(
                {
                    "condition": cond_name,
                    "env": env_id,
                    "mean_return": float(raw[cond_name][j]),
                    "normalized_fitness": float(raw[cond_name][j] / baselines[env_id]),
                }
            )
    return rows, baselines
