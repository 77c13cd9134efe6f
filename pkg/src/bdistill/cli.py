"""Command-line harness: distill, retrain, merge, eval-multitask,
budget-sweep, classify-distill, dump.

Every command is deterministic given its config and seed; configs are
echoed verbatim into the output directory, CSV files carry a schema
version line, and timing is logged separately so result files are
byte-reproducible.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dataset as ds_mod
from . import engine, envs, es, harness, nn, supervised
from .errors import BdistillError, ConfigError


def _write_csv(path, schema, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {schema}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _out_dir(args, default_name):
    out = Path(args.out) if args.out else Path(default_name)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out_dir, cfg, source_path=None):
    (out_dir / "config.txt").write_text(config_mod.render_config(cfg))
    if source_path:
        shutil.copyfile(source_path, out_dir / "config_source.txt")


def _write_generation_logs(out_dir, reports):
    _write_csv(
        out_dir / "generations.csv",
        "generations-v1",
        ["generation", "mean_return", "max_return", "min_return"],
        [(r.generation, r.mean, r.max, r.min) for r in reports],
    )
    _write_csv(
        out_dir / "timing.csv",
        "timing-v1",
        ["generation", "wall_ms"],
        [(r.generation, r.wall_ms) for r in reports],
    )


# --- commands ---------------------------------------------------------------------

def cmd_distill(args):
    overrides = {
        "VARIANT": args.variant,
        "K": args.k,
        "SEED": args.seed,
        "dataset_size": args.n,
    }
    cfg = config_mod.load_run_config(args.config, env=args.env, cli_overrides=overrides)
    spec = envs.get_spec(cfg.env)
    out = _out_dir(args, f"runs/distill-{cfg.env}-{cfg.variant}-seed{cfg.seed}")
    _echo_config(out, cfg, args.config)

    def progress(report):
        if report.generation % 10 == 0 or report.generation == cfg.n_generations - 1:
            print(
                f"gen {report.generation:4d}  mean {report.mean:8.2f}  "
                f"max {report.max:8.2f}  min {report.min:8.2f}",
                flush=True,
            )

    artifacts = engine.run(
        spec, config_mod.to_distill_config(cfg), seed=cfg.seed, generation_callback=progress
    )
    ds_mod.save(artifacts.dataset, out / "dataset.bdd")
    nn.save_policy(artifacts.policy, out / "policy.bdp")
    _write_generation_logs(out, artifacts.reports)
    _write_csv(
        out / "final_eval.csv",
        "final-eval-v1",
        ["final_eval_return", "reference_return", "seed"],
        [(artifacts.final_eval_return, spec.reference_return, cfg.seed)],
    )
    print(f"final eval return {artifacts.final_eval_return:.2f} "
          f"(reference {spec.reference_return:.2f}); artifacts in {out}")
    return 0


def cmd_retrain(args):
    ds = ds_mod.load(args.dataset)
    widths = [int(w) for w in args.widths.split(",")]
    rows = harness.retrain_sweep(
        ds,
        widths,
        trials_per_width=args.trials,
        seed=args.seed,
        eval_episodes=args.eval_episodes,
        workers=args.workers,
    )
    out = _out_dir(args, "runs/retrain")
    _write_csv(
        out / "retrain_results.csv",
        "retrain-results-v1",
        ["width", "trial", "lr", "epochs", "mean_return"],
        [(r["width"], r["trial"], r["lr"], r["epochs"], r["mean_return"]) for r in rows],
    )
    summary = harness.summarize_sweep(rows)
    _write_csv(
        out / "retrain_summary.csv",
        "retrain-summary-v1",
        ["width", "top_half_median"],
        [(r["width"], r["top_half_median"]) for r in summary],
    )
    for r in summary:
        print(f"width {r['width']:4d}: top-50% median return {r['top_half_median']:.2f}")
    return 0


def cmd_merge(args):
    ds1 = ds_mod.load(args.datasets[0])
    ds2 = ds_mod.load(args.datasets[1])
    merged = ds_mod.merge(ds1, ds2)
    out_path = Path(args.out) if args.out else Path("merged.bdd")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    ds_mod.save(merged, out_path)
    print(
        f"merged {ds1.task_id} ({ds1.n_rows} rows) + {ds2.task_id} ({ds2.n_rows} rows) "
        f"-> {merged.n_rows} rows, obs_dim {merged.obs_dim}, at {out_path}"
    )
    return 0


def cmd_eval_multitask(args):
    merged = ds_mod.load(args.dataset)
    blocks = merged.meta.get("blocks")
    if not blocks:
        raise ConfigError("dataset: eval-multitask needs a merged dataset (no blocks found)")
    if args.envs:
        expected = [b["task_id"] for b in blocks]
        if args.envs != expected:
            raise ConfigError(f"envs: merged dataset covers {expected}, got {args.envs}")
    rows, baselines = harness.evaluate_multitask(
        merged,
        n_seeds=args.seeds,
        eval_episodes=args.eval_episodes,
        width=args.width,
        lr=args.lr,
        epochs=args.epochs,
        seed=args.seed,
    )
    out = _out_dir(args, "runs/multitask")
    _write_csv(
        out / "multitask.csv",
        "multitask-v1",
        ["condition", "env", "mean_return", "normalized_fitness"],
        [(r["condition"], r["env"], r["mean_return"], r["normalized_fitness"]) for r in rows],
    )
    for r in rows:
        print(
            f"{r['condition']:>12s} on {r['env']:<12s} return {r['mean_return']:8.2f} "
            f"normalized {r['normalized_fitness']:.3f}"
        )
    return 0


def cmd_budget_sweep(args):
    overrides = {"SEED": args.seed}
    cfg = config_mod.load_run_config(args.config, env=args.env, cli_overrides=overrides)
    spec = envs.get_spec(cfg.env)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = engine.budget_sweep(spec, config_mod.to_distill_config(cfg), sizes, seed=cfg.seed)
    out = _out_dir(args, f"runs/budget-{cfg.env}")
    _echo_config(out, cfg, args.config)
    _write_csv(
        out / "budget_sweep.csv",
        "budget-sweep-v1",
        ["n_rows", "final_eval_return", "final_pop_mean"],
        [(r["n_rows"], r["final_eval_return"], r["final_pop_mean"]) for r in rows],
    )
    for r in rows:
        print(f"N={r['n_rows']:4d}: final eval return {r['final_eval_return']:.2f}")
    return 0


def cmd_classify_distill(args):
    if args.task == "blobs":
        train, test = supervised.make_blobs_task(seed=args.data_seed)
        defaults = dict(n_generations=40, update_epochs=100)
    elif args.task == "digits":
        train, test = supervised.load_digits_task(seed=args.data_seed)
        defaults = dict(n_generations=120, update_epochs=100)
    elif args.train_csv and args.test_csv:
        train = supervised.load_csv(args.train_csv, split="train")
        test = supervised.load_csv(args.test_csv, n_classes=train.n_classes, split="test")
        defaults = dict(n_generations=80, update_epochs=100)
    else:
        raise ConfigError("task: pick --task blobs|digits or give --train-csv/--test-csv")

    cfg = supervised.SupervisedConfig(
        n_per_class=args.n_per_class,
        inner=engine.InnerConfig(lr=args.lr, update_epochs=defaults["update_epochs"]),
        es=es.EsConfig(
            popsize=args.popsize,
            sigma_init=args.sigma,
            lrate_init=args.lrate,
            n_generations=args.generations or defaults["n_generations"],
        ),
        width=args.width,
        init_mode=args.init_mode,
        eval_classifiers=args.eval_classifiers,
    )
    ds, report, reports = supervised.distill_classification(train, test, cfg, seed=args.seed)
    out = _out_dir(args, f"runs/classify-{args.task or 'csv'}")
    ds_mod.save(ds, out / "dataset.bdd")
    _write_csv(
        out / "accuracy.csv",
        "classify-accuracy-v1",
        ["mean_accuracy", "std_accuracy", "stderr", "n_classifiers"],
        [(report.mean, report.std, report.stderr, len(report.accuracies))],
    )
    _write_csv(
        out / "accuracies.csv",
        "classify-accuracies-v1",
        ["classifier", "test_accuracy"],
        list(enumerate(report.accuracies)),
    )
    _write_csv(
        out / "generations.csv",
        "classify-generations-v1",
        ["generation", "mean_fitness", "max_fitness", "min_fitness"],
        [(r.generation, r.mean, r.max, r.min) for r in reports],
    )
    print(f"test accuracy {report.mean:.3f} +- {report.std:.3f} over "
          f"{len(report.accuracies)} classifiers; artifacts in {out}")
    return 0


def cmd_dump(args):
    ds = ds_mod.load(args.dataset)
    text = ds_mod.render_text(ds)
    if args.out:
        out = _out_dir(args, "runs/dump")
        raw = ds.normalizer.invert(ds.states.astype(np.float64))
        header = [f"f{i}" for i in range(ds.obs_dim)]
        if ds.discrete:
            rows = [list(raw[i]) + [int(ds.actions[i])] for i in range(ds.n_rows)]
            header += ["action"]
        else:
            rows = [list(raw[i]) + list(ds.actions[i]) for i in range(ds.n_rows)]
            header += [f"a{j}" for j in range(ds.n_actions)]
        _write_csv(out / "dump.csv", "dump-v1", ["row"] + header,
                   [[i] + r for i, r in enumerate(rows)])
        if args.export_text:
            (out / "dump.txt").write_text(text)
    print(text, end="")
    return 0


# --- parser -----------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="bdistill",
        description="Evolve tiny synthetic state-action datasets that train expert policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distill", help="evolve a dataset for one environment")
    p.add_argument("--config", help="flat KEY value config file")
    p.add_argument("--env", help=f"one of {envs.ENV_IDS}")
    p.add_argument("--n", type=int, help="dataset rows (distillation budget)")
    p.add_argument("--variant", choices=["F", "R"], help="fixed or resampled policy inits")
    p.add_argument("--k", type=int, help="inits per generation (variant R)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("retrain", help="architecture/hyperparameter retraining sweep")
    p.add_argument("--dataset", required=True)
    p.add_argument("--widths", default="32,64,128,256,512")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--eval-episodes", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("merge", help="zero-padded union of two datasets")
    p.add_argument("datasets", nargs=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("eval-multitask", help="correct/wrong/merged transfer study")
    p.add_argument("--dataset", required=True, help="a merged .bdd file")
    p.add_argument("--envs", nargs="*", help="expected env ids (validated)")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--eval-episodes", type=int, default=8)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval_multitask)

    p = sub.add_parser("budget-sweep", help="distill at several dataset sizes")
    p.add_argument("--config")
    p.add_argument("--env")
    p.add_argument("--sizes", default="2,4,16,64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_budget_sweep)

    p = sub.add_parser("classify-distill", help="supervised dataset distillation")
    p.add_argument("--task", choices=["blobs", "digits"])
    p.add_argument("--train-csv")
    p.add_argument("--test-csv")
    p.add_argument("--n-per-class", type=int, default=1)
    p.add_argument("--generations", type=int)
    p.add_argument("--popsize", type=int, default=64)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--lrate", type=float, default=0.05)
    p.add_argument("--lr", type=float, default=0.01, help="inner classifier lr")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--init-mode", default="class_mean", choices=list(ds_mod.INIT_MODES))
    p.add_argument("--eval-classifiers", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_classify_distill)

    p = sub.add_parser("dump", help="human-readable dataset dump and CSV export")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.add_argument("--export-text", action="store_true")
    p.set_defaults(func=cmd_dump)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BdistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
