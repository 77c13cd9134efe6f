"""The synthetic state-action dataset: the evolved artifact itself.

A dataset is N rows of (state, action). States live in normalized
observation space and the fitted normalizer snapshot travels with the
dataset, so files are self-contained and retraining is reproducible.
Discrete action labels are assigned uniformly at init and never evolved;
continuous actions are part of the evolved parameter vector.

File format (``.bdd``): magic, version, canonical JSON header, then raw
little-endian blocks (float32 states, actions, normalizer). Serialization
is canonical so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import envs
from .errors import FormatError, InputError, ShapeError

MAGIC = b"BDDS"
VERSION = 1

INIT_MODES = ("random", "sampled", "class_mean")


@dataclass
class ObservationNormalizer:
    """Per-dimension affine transform fixing the dataset's coordinate frame."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim, dtype=np.float32), np.ones(dim, dtype=np.float32))

    @classmethod
    def fit(cls, observations, std_floor=1e-6):
        obs = np.asarray(observations, dtype=np.float64)
        mean = obs.mean(axis=0)
        std = np.maximum(obs.std(axis=0), std_floor)
        return cls(mean.astype(np.float32), std.astype(np.float32))

    def apply(self, obs):
        return (obs - self.mean) / self.std

    def invert(self, normalized):
        return normalized * self.std + self.mean

    def concat(self, other):
        return ObservationNormalizer(
            np.concatenate([self.mean, other.mean]),
            np.concatenate([self.std, other.std]),
        )


@dataclass
class SyntheticDataset:
    """N synthetic (state, action) rows plus provenance.

    ``actions`` is an int64 label vector for discrete tasks (fixed, not
    evolved) or a float32 (N, action_dim) matrix for continuous ones
    (evolved alongside the states).
    """

    task_id: str
    states: np.ndarray
    actions: np.ndarray
    action_kind: str  # "discrete" | "continuous"
    n_actions: int  # |A| for discrete; action columns for continuous
    normalizer: ObservationNormalizer
    meta: dict = field(default_factory=dict)

    @property
    def n_rows(self):
        return self.states.shape[0]

    @property
    def obs_dim(self):
        return self.states.shape[1]

    @property
    def discrete(self):
        return self.action_kind == "discrete"

    @property
    def policy_out_dim(self):
        return self.n_actions if self.discrete else 2 * self.n_actions

    def validate(self):
        if self.n_rows < 1:
            raise InputError("dataset needs at least one row")
        if not np.isfinite(self.states).all():
            raise InputError("dataset states must be finite")
        if self.discrete:
            if self.actions.shape != (self.n_rows,):
                raise ShapeError("discrete labels must be one per row")
            if self.actions.min() < 0 or self.actions.max() >= self.n_actions:
                raise InputError(f"labels must lie in [0, {self.n_actions})")
        elif self.actions.shape != (self.n_rows, self.n_actions):
            raise ShapeError(
                f"continuous actions have shape {self.actions.shape}, "
                f"expected ({self.n_rows}, {self.n_actions})"
            )
        return self

    def copy(self):
        return SyntheticDataset(
            self.task_id,
            self.states.copy(),
            self.actions.copy(),
            self.action_kind,
            self.n_actions,
            ObservationNormalizer(self.normalizer.mean.copy(), self.normalizer.std.copy()),
            json.loads(json.dumps(self.meta)),
        )


def uniform_labels(n_rows, n_classes):
    """Round-robin class assignment, stored class-grouped (canonical order)."""
    if n_rows < n_classes:
        raise InputError(
            f"{n_rows} rows cannot cover {n_classes} classes with uniform labels"
        )
    return np.sort(np.arange(n_rows) % n_classes).astype(np.int64)


def init_dataset(
    spec,
    n_rows,
    mode="random",
    seed=0,
    normalizer=None,
    features=None,
    labels=None,
):
    """Create the generation-zero dataset for an environment spec.

    ``random`` draws unit-normal states (the stored frame is normalized
    observation space); ``sampled`` pulls states visited by a random policy;
    ``class_mean`` requires an attached real dataset (features + labels) and
    is the supervised-mode warm start.
    """
    if mode not in INIT_MODES:
        raise InputError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")
    rng = np.random.default_rng(seed)
    discrete = spec.discrete
    normalizer = normalizer or ObservationNormalizer.identity(spec.obs_dim)

    if mode == "class_mean":
        if features is None or labels is None:
            raise InputError("class_mean init requires an attached real dataset")
        if not discrete:
            raise InputError("class_mean init only applies to discrete labels")
        n_classes = spec.action_space.n
        row_labels = uniform_labels(n_rows, n_classes)
        states = np.empty((n_rows, spec.obs_dim), dtype=np.float32)
        feats = np.asarray(features, dtype=np.float64)
        labs = np.asarray(labels)
        for i, cls in enumerate(row_labels):
            states[i] = feats[labs == cls].mean(axis=0).astype(np.float32)
        actions = row_labels
    else:
        if mode == "sampled":
            obs = envs.sample_observations(spec, n_episodes=4, seed=seed)
            idx = rng.choice(obs.shape[0], size=n_rows, replace=obs.shape[0] < n_rows)
            states = normalizer.apply(obs[idx]).astype(np.float32)
        else:
            states = rng.standard_normal((n_rows, spec.obs_dim)).astype(np.float32)
        if discrete:
            actions = uniform_labels(n_rows, spec.action_space.n)
        else:
            actions = (0.1 * rng.standard_normal((n_rows, spec.action_space.dim))).astype(
                np.float32
            )

    n_actions = spec.action_space.n if discrete else spec.action_space.dim
    ds = SyntheticDataset(
        task_id=spec.env_id,
        states=states,
        actions=actions,
        action_kind="discrete" if discrete else "continuous",
        n_actions=n_actions,
        normalizer=normalizer,
        meta={"init_mode": mode, "init_seed": seed if isinstance(seed, int) else None},
    )
    return ds.validate()


# --- flat vector view (the ES search space) -----------------------------------

def vector_size(ds: SyntheticDataset):
    size = ds.states.size
    if not ds.discrete:
        size += ds.actions.size
    return size


def to_vector(ds: SyntheticDataset) -> np.ndarray:
    """Flatten the evolvable slice: states always, actions only if continuous."""
    if ds.discrete:
        return ds.states.ravel().astype(np.float32)
    return np.concatenate(
        [ds.states.ravel(), ds.actions.ravel()]
    ).astype(np.float32)


def from_vector(flat, template: SyntheticDataset) -> SyntheticDataset:
    """Rebuild a dataset from a flat vector; labels and provenance come from
    the template (discrete labels are immutable under evolution)."""
    flat = np.asarray(flat, dtype=np.float32)
    expected = vector_size(template)
    if flat.shape != (expected,):
        raise ShapeError(f"vector has shape {flat.shape}, expected ({expected},)")
    n, d = template.states.shape
    states = flat[: n * d].reshape(n, d).copy()
    if template.discrete:
        actions = template.actions.copy()
    else:
        actions = flat[n * d :].reshape(n, template.n_actions).copy()
    return SyntheticDataset(
        template.task_id,
        states,
        actions,
        template.action_kind,
        template.n_actions,
        template.normalizer,
        dict(template.meta),
    )


# --- multi-task merge -----------------------------------------------------------

def merge(ds1: SyntheticDataset, ds2: SyntheticDataset) -> SyntheticDataset:
    """Zero-padded union: ds1 rows occupy the left observation/action block,
    ds2 rows the right block, zeros elsewhere. Discrete labels from ds2 are
    offset by ds1's class count (the label-space analogue of padding)."""
    if ds1.action_kind != ds2.action_kind:
        raise InputError("cannot merge datasets with mixed action-space kinds")
    if ds1.task_id == ds2.task_id:
        raise InputError("merge needs two distinct task ids")

    d1, d2 = ds1.obs_dim, ds2.obs_dim
    states = np.zeros((ds1.n_rows + ds2.n_rows, d1 + d2), dtype=np.float32)
    states[: ds1.n_rows, :d1] = ds1.states
    states[ds1.n_rows :, d1:] = ds2.states

    if ds1.discrete:
        actions = np.concatenate([ds1.actions, ds2.actions + ds1.n_actions]).astype(np.int64)
    else:
        a1, a2 = ds1.n_actions, ds2.n_actions
        actions = np.zeros((ds1.n_rows + ds2.n_rows, a1 + a2), dtype=np.float32)
        actions[: ds1.n_rows, :a1] = ds1.actions
        actions[ds1.n_rows :, a1:] = ds2.actions

    blocks = [
        {
            "task_id": ds1.task_id,
            "obs_offset": 0,
            "obs_dim": d1,
            "action_offset": 0,
            "n_actions": ds1.n_actions,
            "rows": [0, ds1.n_rows],
        },
        {
            "task_id": ds2.task_id,
            "obs_offset": d1,
            "obs_dim": d2,
            "action_offset": ds1.n_actions,
            "n_actions": ds2.n_actions,
            "rows": [ds1.n_rows, ds1.n_rows + ds2.n_rows],
        },
    ]
    return SyntheticDataset(
        task_id=f"{ds1.task_id}+{ds2.task_id}",
        states=states,
        actions=actions,
        action_kind=ds1.action_kind,
        n_actions=ds1.n_actions + ds2.n_actions,
        normalizer=ds1.normalizer.concat(ds2.normalizer),
        meta={"blocks": blocks},
    )


def block_slice(ds: SyntheticDataset, index):
    """One task's rows of a merged dataset, kept in merged geometry."""
    blocks = ds.meta.get("blocks")
    if not blocks:
        raise InputError("dataset has no merge blocks")
    block = blocks[index]
    lo, hi = block["rows"]
    sub = SyntheticDataset(
        task_id=block["task_id"],
        states=ds.states[lo:hi].copy(),
        actions=ds.actions[lo:hi].copy(),
        action_kind=ds.action_kind,
        n_actions=ds.n_actions,
        normalizer=ds.normalizer,
        meta={"blocks": [block], "parent": ds.task_id},
    )
    return sub, block


# --- .bdd container --------------------------------------------------------------

def _header_dict(ds: SyntheticDataset):
    return {
        "task_id": ds.task_id,
        "n_rows": int(ds.n_rows),
        "obs_dim": int(ds.obs_dim),
        "action_kind": ds.action_kind,
        "n_actions": int(ds.n_actions),
        "meta": ds.meta,
    }


def save(ds: SyntheticDataset, path):
    header = json.dumps(_header_dict(ds), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(header)))
        fh.write(header)
        fh.write(ds.states.astype("<f4").tobytes())
        if ds.discrete:
            fh.write(ds.actions.astype("<i4").tobytes())
        else:
            fh.write(ds.actions.astype("<f4").tobytes())
        fh.write(ds.normalizer.mean.astype("<f4").tobytes())
        fh.write(ds.normalizer.std.astype("<f4").tobytes())


def load(path) -> SyntheticDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a dataset container (bad magic)")
    version, header_len = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    offset = 10
    try:
        header = json.loads(blob[offset : offset + header_len])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    offset += header_len

    n, d = header["n_rows"], header["obs_dim"]
    kind = header["action_kind"]
    n_actions = header["n_actions"]

    def take(count, dtype):
        nonlocal offset
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated data block")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).copy()
        offset += nbytes
        return arr

    states = take(n * d, "<f4").reshape(n, d)
    if kind == "discrete":
        actions = take(n, "<i4").astype(np.int64)
    else:
        actions = take(n * n_actions, "<f4").reshape(n, n_actions)
    mean = take(d, "<f4")
    std = take(d, "<f4")
    if offset != len(blob):
        raise FormatError(f"{path}: trailing bytes after data blocks")

    return SyntheticDataset(
        task_id=header["task_id"],
        states=states.astype(np.float32),
        actions=actions,
        action_kind=kind,
        n_actions=n_actions,
        normalizer=ObservationNormalizer(mean.astype(np.float32), std.astype(np.float32)),
        meta=header.get("meta", {}),
    )


# --- human-readable dump -----------------------------------------------------------

def _row_home_block(ds, row):
    for block in ds.meta.get("blocks", []):
        lo, hi = block["rows"]
        if lo <= row < hi:
            return block
    return None


def render_text(ds: SyntheticDataset):
    """Fig-style table: de-normalized features and the action per row.

    In merged datasets, structurally zero-padded cells render as '.' so the
    block layout is visible.
    """
    lines = [
        f"task: {ds.task_id}  rows: {ds.n_rows}  obs_dim: {ds.obs_dim}  "
        f"actions: {ds.action_kind}({ds.n_actions})"
    ]
    raw = ds.normalizer.invert(ds.states.astype(np.float64))
    blocks = ds.meta.get("blocks")
    for i in range(ds.n_rows):
        home = _row_home_block(ds, i) if blocks else None
        cells = []
        for j in range(ds.obs_dim):
            if home is not None and not (
                home["obs_offset"] <= j < home["obs_offset"] + home["obs_dim"]
            ):
                cells.append(f"{'.':>9}")
            else:
                cells.append(f"{raw[i, j]:9.4f}")
        if ds.discrete:
            action_txt = str(int(ds.actions[i]))
        else:
            action_txt = "[" + " ".join(f"{a:.4f}" for a in ds.actions[i]) + "]"
        lines.append(f"{i:4d}  [{' '.join(cells)}]  -> {action_txt}")
    return "\n".join(lines) + "\n"
