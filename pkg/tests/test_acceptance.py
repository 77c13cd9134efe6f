"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The heavy artifacts (full CLI distillation runs, the desk-scale
method-comparison matrix) are built once in session fixtures and shared.
Run with ``pytest tests/test_acceptance.py -v -s`` to watch the lines.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from bdistill import cli, dataset, engine, envs, es, harness, nn, supervised
from bdistill.dataset import ObservationNormalizer


def report(criterion, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def read_generation_means(out_dir):
    lines = (Path(out_dir) / "generations.csv").read_text().splitlines()[2:]
    return np.array([float(line.split(",")[1]) for line in lines])


# --- shared artifacts -----------------------------------------------------------

@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def cartpole_cli_runs(workdir):
    """Criterion 1's two stock CLI runs; their datasets feed criterion 4."""
    runs = {}
    for variant, extra in (("F", []), ("R", ["--k", "2"])):
        out = workdir / f"cartpole-{variant}"
        t0 = time.perf_counter()
        rc = cli.main(
            ["distill", "--env", "cartpole", "--n", "4", "--variant", variant,
             "--seed", "0", "--out", str(out)] + extra
        )
        runtime = time.perf_counter() - t0
        assert rc == 0
        runs[variant] = {
            "out": out,
            "runtime_s": runtime,
            "means": read_generation_means(out),
            "dataset": dataset.load(out / "dataset.bdd"),
        }
    return runs


DESK = {
    "cartpole": dict(n=4, popsize=64, generations=60, rollouts=1, width=64,
                     activation="tanh", inner_lr=0.005, epochs=64, anneal=False,
                     greedy=False, normalize=True, strategy="openes",
                     sigma=0.3, lrate=0.2, es_sigma=0.1, es_lrate=0.05),
    "pendulum": dict(n=16, popsize=64, generations=80, rollouts=1, width=64,
                     activation="tanh", inner_lr=0.005, epochs=64, anneal=False,
                     greedy=False, normalize=True, strategy="openes",
                     sigma=0.3, lrate=0.2, es_sigma=0.05, es_lrate=0.03),
    "acrobot": dict(n=16, popsize=64, generations=80, rollouts=1, width=64,
                    activation="tanh", inner_lr=0.005, epochs=64, anneal=False,
                    greedy=False, normalize=True, strategy="openes",
                    sigma=0.3, lrate=0.2, es_sigma=0.05, es_lrate=0.03),
    "gridbreakout": dict(n=8, popsize=128, generations=60, rollouts=4, width=32,
                         activation="relu", inner_lr=0.03, epochs=64, anneal=True,
                         greedy=True, normalize=False, strategy="snes",
                         sigma=0.5, lrate=0.05, es_sigma=0.05, es_lrate=0.03),
}

SEEDS = (0, 1, 2)


def desk_distill_config(env_id, variant, k=2):
    d = DESK[env_id]
    return engine.DistillConfig(
        variant=variant,
        k=k,
        inner=engine.InnerConfig(
            lr=d["inner_lr"], update_epochs=d["epochs"],
            anneal_lr=d["anneal"], greedy_act=d["greedy"],
        ),
        es=es.EsConfig(
            popsize=d["popsize"], sigma_init=d["sigma"], lrate_init=d["lrate"],
            n_generations=d["generations"], strategy=d["strategy"],
            temperature=20.0, sigma_limit=0.01 if d["strategy"] == "snes" else 0.0,
        ),
        dataset_size=d["n"],
        init_mode="sampled",
        width=d["width"],
        activation=d["activation"],
        rollouts_per_candidate=d["rollouts"],
        normalize_obs=d["normalize"],
    )


def desk_es_config(env_id):
    d = DESK[env_id]
    return es.EsConfig(
        popsize=d["popsize"], sigma_init=d["es_sigma"], lrate_init=d["es_lrate"],
        n_generations=d["generations"],
    )


@pytest.fixture(scope="session")
def desk_matrix():
    """Final-generation population means for variant F, variant R (cartpole and
    pendulum only), and the direct-ES baseline, three seeds each."""
    results = {}
    for env_id in envs.ENV_IDS:
        spec = envs.get_spec(env_id)
        d = DESK[env_id]
        entry = {"F": [], "R": [], "ES": [], "F_artifacts": {}}
        for seed in SEEDS:
            art = engine.run(spec, desk_distill_config(env_id, "F"), seed=seed)
            entry["F"].append(art.reports[-1].mean)
            entry["F_artifacts"][seed] = art
            reports, _, _ = engine.run_neuroevolution(
                spec, desk_es_config(env_id), seed=seed, width=d["width"],
                activation=d["activation"], rollouts_per_candidate=d["rollouts"],
                greedy_act=d["greedy"], normalize_obs=d["normalize"],
            )
            entry["ES"].append(reports[-1].mean)
            if env_id in ("cartpole", "pendulum"):
                art_r = engine.run(spec, desk_distill_config(env_id, "R"), seed=seed)
                entry["R"].append(art_r.reports[-1].mean)
        results[env_id] = entry
    return results


@pytest.fixture(scope="session")
def acrobot_r_dataset(workdir):
    """A variant-R acrobot dataset for the multi-task merge."""
    spec = envs.get_spec("acrobot")
    art = engine.run(spec, desk_distill_config("acrobot", "R"), seed=0)
    return art.dataset


# --- criteria -------------------------------------------------------------------

def test_criterion_1_cartpole_distillation(cartpole_cli_runs):
    f = cartpole_cli_runs["F"]
    r = cartpole_cli_runs["R"]
    best_f = float(f["means"].max())
    best_r = float(r["means"].max())
    ok = (
        len(f["means"]) <= 300
        and best_f >= 475.0
        and f["runtime_s"] <= 600.0
        and best_r >= 400.0
        and r["runtime_s"] <= 600.0
    )
    report(
        1, ok,
        f"variant F population mean peaks at {best_f:.1f}/500 in {len(f['means'])} "
        f"generations ({f['runtime_s']:.0f}s); variant R (k=2) reaches {best_r:.1f} "
        f"({r['runtime_s']:.0f}s); thresholds 475/400, runtime cap 600s",
    )


def test_criterion_2_distillation_matches_direct_es(desk_matrix):
    details = []
    ok = True
    for env_id, entry in desk_matrix.items():
        f_mean = float(np.mean(entry["F"]))
        es_mean = float(np.mean(entry["ES"]))
        ratio = f_mean / es_mean if es_mean > 0 else float("inf")
        ok &= f_mean >= 0.9 * es_mean
        details.append(f"{env_id}: F {f_mean:.2f} vs ES {es_mean:.2f} (ratio {ratio:.2f})")
    report(2, ok, "; ".join(details) + " [need F >= 0.9 x ES, 3-seed means]")


def test_criterion_3_variant_ordering(desk_matrix):
    details = []
    ok = True
    for env_id in ("cartpole", "pendulum"):
        entry = desk_matrix[env_id]
        wins = sum(1 for f, r in zip(entry["F"], entry["R"]) if f >= r)
        ok &= wins >= 2
        details.append(f"{env_id}: F >= R in {wins}/3 seeds")
    report(3, ok, "; ".join(details) + " [need >= 2 of 3 on both envs]")


def test_criterion_4_retraining_generalization(cartpole_cli_runs):
    widths = [32, 64, 128, 256, 512]
    evolved_width = 64
    medians = {}
    for variant in ("R", "F"):
        ds = cartpole_cli_runs[variant]["dataset"]
        rows = harness.retrain_sweep(
            ds, widths, trials_per_width=20, seed=0, eval_episodes=8
        )
        medians[variant] = {
            s["width"]: s["top_half_median"] for s in harness.summarize_sweep(rows)
        }
    evolved_return = float(cartpole_cli_runs["R"]["dataset"].meta["final_eval_return"])
    r_ok = all(medians["R"][w] >= 0.8 * evolved_return for w in widths)
    off_widths = [w for w in widths if w != evolved_width]
    r_wins = sum(1 for w in off_widths if medians["F"][w] <= medians["R"][w])
    ok = r_ok and r_wins >= 3
    detail = (
        f"variant-R top-50% medians {[round(medians['R'][w], 1) for w in widths]} vs "
        f"0.8 x evolved return {0.8 * evolved_return:.1f}; R beats F off-width in "
        f"{r_wins}/4 cases"
    )
    report(4, ok, detail)


def test_criterion_5_multitask_merge(cartpole_cli_runs, acrobot_r_dataset):
    cart = cartpole_cli_runs["R"]["dataset"]
    merged = dataset.merge(cart, acrobot_r_dataset)
    rows, baselines = harness.evaluate_multitask(
        merged, n_seeds=10, eval_episodes=8, width=64,
        lr=0.005, epochs=200, seed=0,
    )
    table = {(r["condition"], r["env"]): r["normalized_fitness"] for r in rows}
    merged_cart = table[("merged", "cartpole")]
    merged_acro = table[("merged", "acrobot")]
    wrong_cart = table[("acrobot", "cartpole")]
    wrong_acro = table[("cartpole", "acrobot")]
    ok = (
        merged_cart >= 0.5
        and merged_acro >= 0.5
        and merged_cart > wrong_cart
        and merged_acro > wrong_acro
    )
    report(
        5, ok,
        f"merged normalized fitness cartpole {merged_cart:.2f} / acrobot {merged_acro:.2f} "
        f"(need >= 0.5 both); wrong-dataset {wrong_cart:.2f} / {wrong_acro:.2f} "
        f"(merged must exceed both)",
    )


def test_criterion_6_supervised_distillation():
    train, test = supervised.make_blobs_task(seed=0)
    oracle = supervised.nearest_class_mean_accuracy(train, test)
    blob_cfg = supervised.SupervisedConfig(
        inner=engine.InnerConfig(lr=0.01, update_epochs=100),
        es=es.EsConfig(popsize=32, sigma_init=0.1, lrate_init=0.05, n_generations=40),
        n_per_class=1, width=32, eval_classifiers=20,
    )
    _, blob_report, _ = supervised.distill_classification(train, test, blob_cfg, seed=0)

    d_train, d_test = supervised.load_digits_task(seed=0)
    digit_cfg = supervised.SupervisedConfig(
        inner=engine.InnerConfig(lr=0.01, update_epochs=100),
        es=es.EsConfig(popsize=64, sigma_init=0.1, lrate_init=0.05, n_generations=120),
        n_per_class=1, width=64, eval_classifiers=20,
    )
    _, digit_report, _ = supervised.distill_classification(d_train, d_test, digit_cfg, seed=0)

    ok = blob_report.mean >= oracle - 0.02 and digit_report.mean >= 0.70
    report(
        6, ok,
        f"blobs {blob_report.mean:.3f} vs nearest-mean oracle {oracle:.3f} (tolerance 0.02); "
        f"digits 1-img/class {digit_report.mean:.3f} +- {digit_report.std:.3f} (need >= 0.70); "
        f"full-scale MNIST 90.1 +- 0.3 is an anchor, not a gate",
    )


def test_criterion_7_numerical_core_standalone():
    from test_nn import (
        finite_difference_grads,
        max_relative_error,
        random_fd_case,
    )

    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    # 100 finite-difference trials across both losses.
    for trial in range(100):
        if trial % 2 == 0:
            params, obs = random_fd_case(rng)
            labels = rng.integers(0, params.out_dim, size=obs.shape[0])
            _, grads = nn.bc_loss_discrete(params, obs, labels)
            fd = finite_difference_grads(lambda p: nn.bc_loss_discrete(p, obs, labels)[0], params)
        else:
            a_dim = int(rng.integers(1, 3))
            params, obs = random_fd_case(rng, a_dim=a_dim)
            targets = rng.normal(size=(obs.shape[0], a_dim))
            _, grads = nn.bc_loss_continuous(params, obs, targets)
            fd = finite_difference_grads(
                lambda p: nn.bc_loss_continuous(p, obs, targets)[0], params
            )
        assert max_relative_error(nn.flatten_params(grads), fd) <= 1e-4

    # Antithetic cancellation exactness.
    for strategy in ("openes", "snes"):
        cfg = es.EsConfig(popsize=32, sigma_init=0.5, strategy=strategy)
        state = es.init_state(rng.normal(size=64), cfg, seed=1)
        batch = es.ask(state, cfg)
        shaped = es.shape_fitness(np.full(32, 7.0), strategy)
        assert np.all(shaped == 0.0)
        new = es.tell(state, batch, shaped, cfg)
        assert np.array_equal(new.mean, state.mean)

    # Rank shaping invariance to monotone transforms.
    raw = rng.normal(size=64)
    for strategy in ("openes", "snes"):
        base = es.shape_fitness(raw, strategy)
        assert np.array_equal(es.shape_fitness(np.tanh(raw), strategy), base)
        assert np.array_equal(es.shape_fitness(5.0 * raw + 3.0, strategy), base)

    # Dataset round trip, bitwise.
    for env_id in ("cartpole", "pendulum"):
        ds = dataset.init_dataset(envs.get_spec(env_id), 8, "random", seed=3)
        back = dataset.from_vector(dataset.to_vector(ds), ds)
        assert np.array_equal(back.states, ds.states)
        assert np.array_equal(back.actions, ds.actions)

    # Merge geometry invariants.
    a = dataset.init_dataset(envs.get_spec("cartpole"), 4, "random", seed=0)
    b = dataset.init_dataset(envs.get_spec("acrobot"), 6, "random", seed=1)
    merged = dataset.merge(a, b)
    assert merged.n_rows == 10
    assert np.array_equal(merged.states[:4, :4], a.states)
    assert np.all(merged.states[:4, 4:] == 0.0)
    assert np.all(merged.states[4:, :4] == 0.0)
    assert np.array_equal(merged.actions[4:], b.actions + a.n_actions)

    elapsed = time.perf_counter() - t0
    report(7, elapsed <= 60.0, f"numerical core suite finished in {elapsed:.1f}s (cap 60s)")


def test_criterion_8_budget_sweep_trend():
    spec = envs.get_spec("cartpole")
    cfg = desk_distill_config("cartpole", "F")
    finals = {2: [], 16: []}
    pop_means = []
    for seed in SEEDS:
        rows = engine.budget_sweep(spec, cfg, sizes=[2, 16], seed=seed)
        for row in rows:
            finals[row["n_rows"]].append(row["final_eval_return"])
            pop_means.append(row["final_pop_mean"])
    small, large = float(np.mean(finals[2])), float(np.mean(finals[16]))
    ok = small <= large and all(p > 0.0 for p in pop_means)
    report(
        8, ok,
        f"N=2 mean final return {small:.1f} <= N=16 {large:.1f} over 3 seeds; "
        f"no run collapsed to zero (min population mean {min(pop_means):.2f})",
    )


def test_criterion_9_byte_identical_reruns(workdir, tiny_cfg_file):
    pairs = []
    for attempt in ("a", "b"):
        out = workdir / f"det-{attempt}"
        rc = cli.main(
            ["distill", "--config", str(tiny_cfg_file), "--env", "cartpole",
             "--n", "4", "--variant", "F", "--seed", "9", "--out", str(out)]
        )
        assert rc == 0
        pairs.append(out)
    identical = all(
        (pairs[0] / name).read_bytes() == (pairs[1] / name).read_bytes()
        for name in ("generations.csv", "dataset.bdd", "policy.bdp", "final_eval.csv")
    )

    ds_path = pairs[0] / "dataset.bdd"
    sweeps = []
    for attempt in ("a", "b"):
        out = workdir / f"det-retrain-{attempt}"
        rc = cli.main(
            ["retrain", "--dataset", str(ds_path), "--widths", "16,32",
             "--trials", "2", "--eval-episodes", "2", "--seed", "4", "--out", str(out)]
        )
        assert rc == 0
        sweeps.append(out)
    identical &= (
        (sweeps[0] / "retrain_results.csv").read_bytes()
        == (sweeps[1] / "retrain_results.csv").read_bytes()
    )
    report(9, identical, "distill and retrain reruns produce byte-identical CSVs and containers")


@pytest.fixture(scope="session")
def tiny_cfg_file(workdir):
    path = workdir / "tiny.cfg"
    path.write_text(
        "popsize 16\nn_generations 5\nUPDATE_EPOCHS 16\nWIDTH 16\nNUM_EVAL_ENVS 4\n"
    )
    return path
