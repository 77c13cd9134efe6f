"""Supervised dataset distillation: the same outer loop, but fitness is the
negative cross-entropy of a classifier trained on the synthetic set and
scored on the real training set. Evaluation reports test accuracy over a
batch of freshly initialized classifiers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import engine, es, nn
from .dataset import ObservationNormalizer, SyntheticDataset, uniform_labels
from .errors import ConfigError, FormatError, InputError, ShapeError


@dataclass
class LabeledDataset:
    """Real classification data, one split per instance."""

    features: np.ndarray  # (M, d) float32
    labels: np.ndarray  # (M,) int64
    n_classes: int
    split: str = "train"

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def validate(self):
        if self.features.ndim != 2:
            raise ShapeError("features must be (rows, dims)")
        if self.labels.shape != (self.n_rows,):
            raise ShapeError("labels must be one per row")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise InputError(f"labels must lie in [0, {self.n_classes})")
        return self


@dataclass
class SupervisedConfig:
    variant: str = "R"
    k: int = 2
    inner: engine.InnerConfig = field(
        default_factory=lambda: engine.InnerConfig(lr=0.005, update_epochs=100)
    )
    es: es.EsConfig = field(
        default_factory=lambda: es.EsConfig(popsize=64, sigma_init=0.1, lrate_init=0.05)
    )
    n_per_class: int = 1
    init_mode: str = "class_mean"
    width: int = 64
    activation: str = "tanh"
    eval_classifiers: int = 20

    def validate(self):
        if self.variant not in engine.VARIANTS:
            raise ConfigError(f"variant must be F or R, got {self.variant!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be >= 1")
        if self.eval_classifiers < 1:
            raise ConfigError("eval_classifiers must be >= 1")
        self.inner.validate()
        self.es.validate()
        return self


@dataclass
class AccuracyReport:
    accuracies: np.ndarray
    mean: float
    std: float
    stderr: float

    @classmethod
    def from_accuracies(cls, acc):
        acc = np.asarray(acc, dtype=np.float64)
        std = float(acc.std(ddof=1)) if acc.size > 1 else 0.0
        return cls(acc, float(acc.mean()), std, std / np.sqrt(acc.size))


# --- toy tasks and loaders -----------------------------------------------------

def make_blobs_task(n_per_class=100, dim=2, separation=6.0, seed=0, test_fraction=0.5):
    """Two Gaussian blobs, split into train and test."""
    rng = np.random.default_rng(seed)
    half = separation / 2.0
    centers = np.zeros((2, dim))
    centers[0, 0] = -half
    centers[1, 0] = half
    feats = np.concatenate([rng.normal(c, 1.0, size=(n_per_class, dim)) for c in centers])
    labels = np.repeat(np.arange(2), n_per_class)
    order = rng.permutation(feats.shape[0])
    feats, labels = feats[order].astype(np.float32), labels[order].astype(np.int64)
    n_test = int(test_fraction * feats.shape[0])
    train = LabeledDataset(feats[n_test:], labels[n_test:], 2, "train")
    test = LabeledDataset(feats[:n_test], labels[:n_test], 2, "test")
    return train.validate(), test.validate()


def load_digits_task(test_fraction=0.3, seed=0):
    """The 8x8 grayscale digit set (bundled with scikit-learn), split."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    feats = digits.data.astype(np.float32)
    labels = digits.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(feats.shape[0])
    feats, labels = feats[order], labels[order]
    n_test = int(test_fraction * feats.shape[0])
    train = LabeledDataset(feats[n_test:], labels[n_test:], 10, "train")
    test = LabeledDataset(feats[:n_test], labels[:n_test], 10, "test")
    return train.validate(), test.validate()


def load_idx(images_path, labels_path, n_classes=10, split="train"):
    """IDX-format loader (the classic handwritten-digit file layout)."""

    def read_idx(path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < 4 or blob[0] != 0 or blob[1] != 0:
            raise FormatError(f"{path}: not an IDX file")
        dtype_code, ndim = blob[2], blob[3]
        if dtype_code != 0x08:
            raise FormatError(f"{path}: only unsigned-byte IDX supported")
        dims = [
            int.from_bytes(blob[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)
        ]
        data = np.frombuffer(blob, dtype=np.uint8, offset=4 + 4 * ndim)
        expected = int(np.prod(dims))
        if data.size != expected:
            raise FormatError(f"{path}: truncated IDX payload")
        return data.reshape(dims)

    images = read_idx(images_path)
    labels = read_idx(labels_path)
    feats = images.reshape(images.shape[0], -1).astype(np.float32)
    return LabeledDataset(feats, labels.astype(np.int64), n_classes, split).validate()


def load_csv(path, n_classes=None, split="train"):
    """CSV feature file: one row per example, label in the last column."""
    rows = []
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            if not record or record[0].startswith("#"):
                continue
            rows.append([float(x) for x in record])
    if not rows:
        raise FormatError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float32)
    feats, labels = data[:, :-1], data[:, -1].astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    return LabeledDataset(feats, labels, n_classes, split).validate()


def nearest_class_mean_accuracy(train: LabeledDataset, test: LabeledDataset):
    """Oracle baseline: classify by the closest per-class training mean."""
    means = np.stack(
        [train.features[train.labels == c].mean(axis=0) for c in range(train.n_classes)]
    )
    dists = ((test.features[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return float((dists.argmin(axis=1) == test.labels).mean())


# --- fitness and the distillation loop ----------------------------------------------

def _classifier_template(dim, width, n_classes, activation):
    return nn.init_policy(dim, width, n_classes, activation, seed=0)


def synthetic_from_features(task_id, train: LabeledDataset, n_per_class, mode,
                            normalizer, seed=0):
    """Generation-zero synthetic set in normalized feature space."""
    n_rows = n_per_class * train.n_classes
    labels = uniform_labels(n_rows, train.n_classes)
    rng = np.random.default_rng(seed)
    if mode == "class_mean":
        feats_n = normalizer.apply(train.features)
        states = np.stack(
            [feats_n[train.labels == c].mean(axis=0) for c in labels]
        ).astype(np.float32)
    elif mode == "sampled":
        idx = [
            rng.choice(np.flatnonzero(train.labels == c)) for c in labels
        ]
        states = normalizer.apply(train.features[idx]).astype(np.float32)
    else:
        states = rng.standard_normal((n_rows, train.dim)).astype(np.float32)
    return SyntheticDataset(
        task_id, states, labels, "discrete", train.n_classes, normalizer,
        {"init_mode": mode},
    ).validate()


def _train_loss_batched(flat_stack, template, train_feats_n, train_labels):
    ws, bs = nn.flat_views(flat_stack, template)
    logits = nn.forward_arrays(ws, bs, train_feats_n, template.activation)
    loss, _ = nn.softmax_cross_entropy(logits, train_labels)
    return loss


def supervised_fitness(ds: SyntheticDataset, inits, train: LabeledDataset,
                       inner: engine.InnerConfig):
    """Train classifiers on the synthetic set; fitness is the negative mean
    cross-entropy on the real training set, averaged over the inits."""
    if ds.obs_dim != train.dim:
        raise InputError(
            f"synthetic feature dim {ds.obs_dim} does not match data dim {train.dim}"
        )
    template = inits[0]
    feats_n = ds.normalizer.apply(train.features).astype(np.float32)
    losses = []
    for init in inits:
        trained = engine.inner_train(ds, init, inner)
        loss = _train_loss_batched(
            nn.flatten_params(trained)[None], template, feats_n, train.labels
        )
        losses.append(float(loss[0]))
    return -float(np.mean(losses))


def distill_classification(train: LabeledDataset, test: LabeledDataset, config: SupervisedConfig,
                           seed=0, generation_callback=None):
    """Evolve a tiny synthetic classification set; returns the final dataset
    and a test-accuracy report over freshly initialized classifiers."""
    config.validate()
    train.validate()
    test.validate()
    task_id = f"classify-{train.n_classes}"
    root = np.random.SeedSequence(seed)
    ds_seed, es_seed, policy_seed, eval_seed = root.spawn(4)

    normalizer = ObservationNormalizer.fit(train.features)
    template_ds = synthetic_from_features(
        task_id, train, config.n_per_class, config.init_mode, normalizer, seed=ds_seed
    )
    template = _classifier_template(train.dim, config.width, train.n_classes, config.activation)
    feats_n = normalizer.apply(train.features).astype(np.float32)
    policy_rng = np.random.default_rng(policy_seed)

    def fresh_init_flat():
        seed_i = int(policy_rng.integers(0, 2**31 - 1))
        return nn.flatten_params(
            nn.init_policy(train.dim, config.width, train.n_classes, config.activation, seed=seed_i)
        )

    fixed_inits = [fresh_init_flat()] if config.variant == "F" else None

    import time as _time

    state = es.init_state(template_ds.states.ravel(), config.es, seed=es_seed)
    n, d = template_ds.states.shape
    reports = []
    for gen in range(config.es.n_generations):
        t0 = _time.perf_counter()
        batch = es.ask(state, config.es)
        cand_states = batch.candidates.reshape(-1, n, d)
        inits = fixed_inits if fixed_inits is not None else [
            fresh_init_flat() for _ in range(config.k)
        ]
        p = cand_states.shape[0]
        totals = np.zeros(p, dtype=np.float64)
        diverged = np.zeros(p, dtype=bool)
        for init_flat in inits:
            tiled = np.repeat(init_flat[None, :], p, axis=0)
            flat, bad = engine.train_policies_batched(
                cand_states, template_ds.actions, True, template, tiled, config.inner
            )
            diverged |= bad
            totals += _train_loss_batched(flat, template, feats_n, train.labels)
        fitness = -(totals / len(inits))
        fitness[diverged] = np.nan
        shaped = es.shape_fitness(fitness, config.es.strategy, config.es.temperature)
        state = es.tell(state, batch, shaped, config.es)
        report = engine.FitnessReport.from_fitness(
            gen, fitness, (_time.perf_counter() - t0) * 1e3
        )
        reports.append(report)
        if generation_callback is not None:
            generation_callback(report)

    final_ds = SyntheticDataset(
        task_id,
        state.mean.reshape(n, d).copy(),
        template_ds.actions.copy(),
        "discrete",
        train.n_classes,
        normalizer,
        {
            "init_mode": config.init_mode,
            "variant": config.variant,
            "k": int(config.k),
            "width": int(config.width),
            "activation": config.activation,
            "inner_lr": float(config.inner.lr),
            "update_epochs": int(config.inner.update_epochs),
            "generations": int(config.es.n_generations),
            "seed": int(seed),
        },
    )
    report = evaluate_classification(
        final_ds, train, test, config, seed=eval_seed, reports=reports
    )
    return final_ds, report, reports


def evaluate_classification(ds: SyntheticDataset, train: LabeledDataset, test: LabeledDataset,
                            config: SupervisedConfig, seed=0, reports=None):
    """Train ``eval_classifiers`` fresh classifiers on the synthetic set and
    report their test accuracy (the classifiers train in one batched stack)."""
    m = config.eval_classifiers
    rng = np.random.default_rng(seed)
    template = _classifier_template(ds.obs_dim, config.width, ds.n_actions, config.activation)
    init_stack = np.stack(
        [
            nn.flatten_params(
                nn.init_policy(
                    ds.obs_dim, config.width, ds.n_actions, config.activation,
                    seed=int(rng.integers(0, 2**31 - 1)),
                )
            )
            for _ in range(m)
        ]
    )
    states = np.repeat(ds.states[None], m, axis=0)
    flat, _ = engine.train_policies_batched(
        states, ds.actions, True, template, init_stack, config.inner
    )
    ws, bs = nn.flat_views(flat, template)
    feats_n = ds.normalizer.apply(test.features).astype(np.float32)
    logits = nn.forward_arrays(ws, bs, feats_n, template.activation)
    accuracy = (logits.argmax(axis=-1) == test.labels).mean(axis=-1)
    return AccuracyReport.from_accuracies(accuracy)
