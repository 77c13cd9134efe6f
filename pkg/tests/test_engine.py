import numpy as np
import pytest

from bdistill import dataset as ds_mod
from bdistill import engine, envs, es, nn
from bdistill.dataset import ObservationNormalizer, SyntheticDataset
from bdistill.errors import ConfigError, InputError


def small_config(**kw):
    base = dict(
        variant="F",
        inner=engine.InnerConfig(lr=0.005, update_epochs=32),
        es=es.EsConfig(popsize=8, sigma_init=0.3, lrate_init=0.2, n_generations=3),
        dataset_size=4,
        width=16,
        init_mode="random",
    )
    base.update(kw)
    return engine.DistillConfig(**base)


@pytest.fixture(scope="module")
def cartpole_run():
    """One moderately converged cartpole run shared by the slower checks."""
    spec = envs.get_spec("cartpole")
    cfg = engine.DistillConfig(
        variant="F",
        inner=engine.InnerConfig(lr=0.005, update_epochs=64),
        es=es.EsConfig(popsize=64, sigma_init=0.3, lrate_init=0.2, n_generations=60),
        dataset_size=4,
        width=64,
        init_mode="sampled",
    )
    return spec, cfg, engine.run(spec, cfg, seed=0)


# --- inner loop ------------------------------------------------------------------

def test_inner_train_solves_separable_two_row_dataset():
    states = np.array([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]], dtype=np.float32)
    ds = SyntheticDataset(
        "cartpole", states, np.array([1, 0]), "discrete", 2,
        ObservationNormalizer.identity(4),
    )
    init = nn.init_policy(4, 32, 2, "tanh", seed=0)
    trained = engine.inner_train(ds, init, engine.InnerConfig(lr=0.01, update_epochs=200))
    preds = nn.forward(trained, states).argmax(axis=1)
    np.testing.assert_array_equal(preds, ds.actions)


def test_inner_train_reduces_loss():
    ds = ds_mod.init_dataset(envs.get_spec("cartpole"), 4, "random", seed=2)
    init = nn.init_policy(4, 32, 2, "tanh", seed=3)
    before, _ = nn.bc_loss_discrete(init, ds.states, ds.actions)
    trained = engine.inner_train(ds, init, engine.InnerConfig(lr=0.005, update_epochs=100))
    after, _ = nn.bc_loss_discrete(trained, ds.states, ds.actions)
    assert after <= before


def test_inner_train_continuous_converges_to_targets():
    rng = np.random.default_rng(3)
    states = rng.normal(size=(4, 3)).astype(np.float32)
    targets = (0.5 * rng.normal(size=(4, 1))).astype(np.float32)
    ds = SyntheticDataset(
        "pendulum", states, targets, "continuous", 1, ObservationNormalizer.identity(3)
    )
    init = nn.init_policy(3, 64, 2, "tanh", seed=5)
    trained = engine.inner_train(ds, init, engine.InnerConfig(lr=0.005, update_epochs=400))
    out = nn.forward(trained, states)
    assert np.abs(out[:, :1] - targets).max() < 0.05


def test_inner_train_dim_mismatch_rejected():
    ds = ds_mod.init_dataset(envs.get_spec("cartpole"), 4, "random", seed=0)
    init = nn.init_policy(6, 16, 2, "tanh", seed=0)
    with pytest.raises(InputError):
        engine.inner_train(ds, init, engine.InnerConfig())


# --- candidate evaluation ----------------------------------------------------------

def test_handcrafted_push_toward_lean_dataset_beats_random_policy():
    spec = envs.get_spec("cartpole")
    states = np.array(
        [[0, 0, 0.05, 0.3], [0, 0, -0.05, -0.3], [0, 0, 0.02, 0.5], [0, 0, -0.02, -0.5]],
        dtype=np.float32,
    )
    ds = SyntheticDataset(
        "cartpole", states, np.array([1, 0, 1, 0]), "discrete", 2,
        ObservationNormalizer.identity(4),
    )
    init = nn.init_policy(4, 64, 2, "tanh", seed=1)
    fitness = engine.evaluate_candidate(
        ds, [init], spec, engine.InnerConfig(lr=0.005, update_epochs=400), list(range(8))
    )
    # Uniform-random play scores about 22 on this env.
    assert fitness > 2 * 22.0


def test_duplicate_inits_match_single_init_fitness_exactly():
    spec = envs.get_spec("cartpole")
    ds = ds_mod.init_dataset(spec, 4, "random", seed=4)
    init = nn.init_policy(4, 16, 2, "tanh", seed=9)
    inner = engine.InnerConfig(lr=0.005, update_epochs=32)
    single = engine.evaluate_candidate(ds, [init], spec, inner, [3, 5])
    double = engine.evaluate_candidate(ds, [init, init.copy()], spec, inner, [3, 5])
    assert double == single


def test_fitness_is_arithmetic_mean_over_rollouts():
    spec = envs.get_spec("cartpole")
    ds = ds_mod.init_dataset(spec, 4, "random", seed=4)
    init = nn.init_policy(4, 16, 2, "tanh", seed=9)
    inner = engine.InnerConfig(lr=0.005, update_epochs=32)
    r1 = engine.evaluate_candidate(ds, [init], spec, inner, [11])
    r2 = engine.evaluate_candidate(ds, [init], spec, inner, [12])
    both = engine.evaluate_candidate(ds, [init], spec, inner, [11, 12])
    assert both == pytest.approx((r1 + r2) / 2.0, rel=1e-12)


def test_diverged_candidate_reports_nan_and_gets_worst_rank():
    spec = envs.get_spec("cartpole")
    ds = ds_mod.init_dataset(spec, 4, "random", seed=4)
    ds.states[0, 0] = np.nan  # non-finite input makes the inner loss non-finite
    init = nn.init_policy(4, 16, 2, "tanh", seed=9)
    fitness = engine.evaluate_candidate(
        ds, [init], spec, engine.InnerConfig(lr=0.5, update_epochs=16), [0]
    )
    assert np.isnan(fitness)
    shaped = es.shape_fitness(np.array([10.0, fitness, 20.0]), "openes")
    assert shaped[1] == shaped.min()


def test_population_evaluation_is_candidate_isolated():
    spec = envs.get_spec("cartpole")
    template = ds_mod.init_dataset(spec, 4, "random", seed=1)
    policy_template = nn.init_policy(4, 16, 2, "tanh", seed=0)
    rng = np.random.default_rng(7)
    cand_states = rng.normal(size=(6, 4, 4)).astype(np.float32)
    init_flat = nn.flatten_params(nn.init_policy(4, 16, 2, "tanh", seed=2))
    inner = engine.InnerConfig(lr=0.005, update_epochs=32)
    norm = ObservationNormalizer.identity(4)
    fitness = engine._evaluate_population(
        spec, template, cand_states, template.actions, [init_flat],
        policy_template, inner, [5], norm,
    )
    perm = rng.permutation(6)
    permuted = engine._evaluate_population(
        spec, template, cand_states[perm], template.actions, [init_flat],
        policy_template, inner, [5], norm,
    )
    np.testing.assert_array_equal(permuted, fitness[perm])


# --- run ---------------------------------------------------------------------------

def test_zero_generations_returns_initial_dataset_and_trained_policy():
    spec = envs.get_spec("cartpole")
    cfg = small_config(es=es.EsConfig(popsize=8, sigma_init=0.3, n_generations=0))
    artifacts = engine.run(spec, cfg, seed=5)
    assert artifacts.reports == []
    # The returned dataset is the untouched generation-zero dataset.
    root = np.random.SeedSequence(5)
    _, ds_seed, _, _, _, _ = root.spawn(6)
    norm = engine._fit_normalizer(spec, cfg, root.spawn(6)[0])
    expected = ds_mod.init_dataset(spec, 4, "random", seed=ds_seed, normalizer=artifacts.dataset.normalizer)
    np.testing.assert_array_equal(artifacts.dataset.states, expected.states)
    assert artifacts.policy.obs_dim == 4


def test_run_is_deterministic():
    spec = envs.get_spec("cartpole")
    a = engine.run(spec, small_config(), seed=11)
    b = engine.run(spec, small_config(), seed=11)
    assert [r.mean for r in a.reports] == [r.mean for r in b.reports]
    np.testing.assert_array_equal(a.dataset.states, b.dataset.states)
    np.testing.assert_array_equal(
        nn.flatten_params(a.policy), nn.flatten_params(b.policy)
    )
    c = engine.run(spec, small_config(), seed=12)
    assert not np.array_equal(a.dataset.states, c.dataset.states)


def test_population_stats_are_ordered():
    spec = envs.get_spec("cartpole")
    artifacts = engine.run(spec, small_config(), seed=3)
    for report in artifacts.reports:
        assert report.max >= report.mean >= report.min


def test_frozen_single_init_resampling_degenerates_to_fixed_variant():
    spec = envs.get_spec("cartpole")
    f = engine.run(spec, small_config(variant="F"), seed=21)
    r = engine.run(
        spec, small_config(variant="R", k=1, resample_inits=False), seed=21
    )
    assert [x.mean for x in f.reports] == [x.mean for x in r.reports]
    np.testing.assert_array_equal(f.dataset.states, r.dataset.states)


def test_variant_config_validation():
    with pytest.raises(ConfigError):
        small_config(variant="X").validate()
    with pytest.raises(ConfigError):
        small_config(k=0).validate()
    with pytest.raises(ConfigError):
        small_config(inner=engine.InnerConfig(update_epochs=0)).validate()


def test_retraining_from_saved_dataset_reproduces_final_fitness(tmp_path, cartpole_run):
    spec, cfg, artifacts = cartpole_run
    path = tmp_path / "final.bdd"
    ds_mod.save(artifacts.dataset, path)
    loaded = ds_mod.load(path)
    policy = engine.inner_train(
        loaded,
        nn.init_policy(4, cfg.width, 2, cfg.activation, seed=777),
        cfg.inner,
    )
    retrained = engine.evaluate_policy(
        spec, policy, range(16), greedy=cfg.inner.greedy_act, normalizer=loaded.normalizer
    )
    assert retrained >= 0.9 * artifacts.final_eval_return


def test_converged_cartpole_run_reaches_high_return(cartpole_run):
    _, _, artifacts = cartpole_run
    assert max(r.mean for r in artifacts.reports) > 400.0
    assert artifacts.final_eval_return > 450.0


# --- budget sweep --------------------------------------------------------------------

def test_budget_sweep_rejects_sizes_below_class_count():
    spec = envs.get_spec("cartpole")
    with pytest.raises(InputError):
        engine.budget_sweep(spec, small_config(), sizes=[1], seed=0)


def test_budget_sweep_produces_nontrivial_returns():
    spec = envs.get_spec("cartpole")
    cfg = small_config(
        es=es.EsConfig(popsize=16, sigma_init=0.3, lrate_init=0.2, n_generations=10),
        init_mode="sampled",
    )
    rows = engine.budget_sweep(spec, cfg, sizes=[2, 4], seed=0)
    assert [r["n_rows"] for r in rows] == [2, 4]
    assert all(r["final_eval_return"] > 0.0 for r in rows)


# --- direct neuroevolution baseline ----------------------------------------------------

def test_neuroevolution_improves_over_generations():
    spec = envs.get_spec("cartpole")
    reports, policy, norm = engine.run_neuroevolution(
        spec,
        es.EsConfig(popsize=32, sigma_init=0.1, lrate_init=0.05, n_generations=30),
        seed=0,
        width=32,
    )
    assert reports[-1].mean > reports[0].mean
    ret = engine.evaluate_policy(spec, policy, range(8), normalizer=norm)
    assert ret > 50.0
