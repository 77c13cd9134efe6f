"""Flat key-value run configuration.

Config files use one ``KEY value`` pair per line ('#' starts a comment,
'=' is accepted as a separator). Keys copy the hyperparameter-table names
(LR, UPDATE_EPOCHS, popsize, sigma_init, ...) so published settings paste
directly. Every field is validated before a run starts and the effective
config is echoed verbatim into the output directory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from . import engine, envs, es
from .errors import BdistillError, ConfigError

_TRUE = {"true", "1", "yes"}
_FALSE = {"false", "0", "no"}


def _parse_bool(raw, key):
    lowered = str(raw).strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


@dataclass
class RunConfig:
    """Everything a distillation run needs, in table-key form."""

    env: str = "cartpole"
    variant: str = "F"
    k: int = 2
    seed: int = 0
    init_mode: str = "sampled"
    # inner loop
    lr: float = 0.005
    update_epochs: int = 64
    max_grad_norm: float = 0.5
    activation: str = "tanh"
    width: int = 64
    anneal_lr: bool = False
    greedy_act: bool = False
    normalize_obs: bool = True
    num_eval_envs: int = 16
    # outer loop
    popsize: int = 64
    dataset_size: int = 16
    rollouts_per_candidate: int = 1
    n_generations: int = 80
    sigma_init: float = 0.3
    sigma_decay: float = 1.0
    sigma_limit: float = 0.0
    lrate_init: float = 0.2
    lrate_decay: float = 1.0
    strategy: str = "openes"
    temperature: float = 20.0


# File key -> (attribute, parser). Inner-loop keys are upper-case, outer-loop
# keys lower-case, matching the table layout they are copied from.
CONFIG_KEYS = {
    "ENV": ("env", str),
    "VARIANT": ("variant", str),
    "K": ("k", int),
    "SEED": ("seed", int),
    "INIT_MODE": ("init_mode", str),
    "LR": ("lr", float),
    "UPDATE_EPOCHS": ("update_epochs", int),
    "MAX_GRAD_NORM": ("max_grad_norm", float),
    "ACTIVATION": ("activation", str),
    "WIDTH": ("width", int),
    "ANNEAL_LR": ("anneal_lr", "bool"),
    "GREEDY_ACT": ("greedy_act", "bool"),
    "NORMALIZE_OBS": ("normalize_obs", "bool"),
    "NUM_EVAL_ENVS": ("num_eval_envs", int),
    "popsize": ("popsize", int),
    "dataset_size": ("dataset_size", int),
    "rollouts_per_candidate": ("rollouts_per_candidate", int),
    "n_generations": ("n_generations", int),
    "sigma_init": ("sigma_init", float),
    "sigma_decay": ("sigma_decay", float),
    "sigma_limit": ("sigma_limit", float),
    "lrate_init": ("lrate_init", float),
    "lrate_decay": ("lrate_decay", float),
    "strategy": ("strategy", str),
    "temperature": ("temperature", float),
}

# Desk-scale defaults per environment, calibrated so the stock command
# converges comfortably inside its budget.
ENV_DEFAULTS = {
    "cartpole": dict(dataset_size=4, popsize=256, n_generations=150),
    "acrobot": dict(dataset_size=16, popsize=64, n_generations=80),
    "pendulum": dict(dataset_size=16, popsize=64, n_generations=80),
    "gridbreakout": dict(
        dataset_size=16,
        popsize=64,
        n_generations=60,
        lr=0.03,
        activation="relu",
        anneal_lr=True,
        normalize_obs=False,
        rollouts_per_candidate=2,
        strategy="snes",
        sigma_init=0.5,
        sigma_limit=0.01,
    ),
}


def default_run_config(env_id) -> RunConfig:
    try:
        spec = envs.get_spec(env_id)
    except BdistillError as exc:
        raise ConfigError(f"ENV: {exc}") from None
    return replace(RunConfig(), env=spec.env_id, **ENV_DEFAULTS.get(spec.env_id, {}))


def parse_kv_file(path):
    """Read a flat KEY value file into an ordered dict of raw strings."""
    pairs = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            tokens = body.replace("=", " ").split()
            if len(tokens) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 'KEY value', got {line.strip()!r}")
            pairs[tokens[0]] = tokens[1]
    return pairs


def apply_overrides(cfg: RunConfig, raw_pairs) -> RunConfig:
    updates = {}
    for key, raw in raw_pairs.items():
        if raw is None:
            continue
        if key not in CONFIG_KEYS:
            known = ", ".join(sorted(CONFIG_KEYS))
            raise ConfigError(f"unknown config key {key!r}; known keys: {known}")
        attr, parser = CONFIG_KEYS[key]
        try:
            updates[attr] = _parse_bool(raw, key) if parser == "bool" else parser(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(parser, '__name__', parser)}") from None
    return replace(cfg, **updates)


def validate_run_config(cfg: RunConfig) -> RunConfig:
    envs.get_spec(cfg.env)
    if cfg.variant == "R" and cfg.k < 2:
        raise ConfigError("K: variant R needs k >= 2 policy initializations")
    to_distill_config(cfg).validate()  # field-level checks live on the engine configs
    return cfg


def to_distill_config(cfg: RunConfig) -> engine.DistillConfig:
    return engine.DistillConfig(
        variant=cfg.variant,
        k=cfg.k,
        inner=engine.InnerConfig(
            lr=cfg.lr,
            update_epochs=cfg.update_epochs,
            max_grad_norm=cfg.max_grad_norm,
            greedy_act=cfg.greedy_act,
            anneal_lr=cfg.anneal_lr,
        ),
        es=es.EsConfig(
            popsize=cfg.popsize,
            sigma_init=cfg.sigma_init,
            lrate_init=cfg.lrate_init,
            sigma_decay=cfg.sigma_decay,
            sigma_limit=cfg.sigma_limit,
            lrate_decay=cfg.lrate_decay,
            strategy=cfg.strategy,
            temperature=cfg.temperature,
            n_generations=cfg.n_generations,
        ),
        dataset_size=cfg.dataset_size,
        init_mode=cfg.init_mode,
        width=cfg.width,
        activation=cfg.activation,
        rollouts_per_candidate=cfg.rollouts_per_candidate,
        num_eval_envs=cfg.num_eval_envs,
        normalize_obs=cfg.normalize_obs,
    )


def render_config(cfg: RunConfig) -> str:
    """Echo the effective config in the same KEY value layout files use."""
    by_attr = {attr: key for key, (attr, _) in CONFIG_KEYS.items()}
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        lines.append(f"{by_attr[f.name]} {value}")
    return "\n".join(lines) + "\n"


def load_run_config(config_path=None, env=None, cli_overrides=None) -> RunConfig:
    """Layering: env defaults, then the config file, then CLI flags."""
    file_pairs = parse_kv_file(config_path) if config_path else {}
    env_id = None
    if env:
        env_id = env
    elif "ENV" in file_pairs:
        env_id = file_pairs["ENV"]
    if env_id is None:
        raise ConfigError("ENV: no environment selected (use --env or an ENV line)")
    cfg = default_run_config(env_id)
    cfg = apply_overrides(cfg, file_pairs)
    cfg = replace(cfg, env=env_id)
    if cli_overrides:
        cfg = apply_overrides(cfg, cli_overrides)
    return validate_run_config(cfg)
