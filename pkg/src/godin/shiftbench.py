"""Seeded Gaussian-cluster benchmark with semantic and non-semantic shift.

In-distribution classes are isotropic Gaussian clusters whose centres lie on
a sphere. Held-out classes come from the same family (semantic shift). The
non-semantic transform inflates the covariance, offsets the mean and
optionally rotates a random plane, applied either to the known classes or to
the held-out ones. Two pure-noise sets complete the list.

Everything is standardised with the train split's per-dimension mean and
standard deviation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

ID_TAGS = ("train", "val")
OOD_TAGS = ("ood-semantic", "ood-nonsemantic", "ood-both", "ood-uniform", "ood-gaussian")
TAGS = ID_TAGS + OOD_TAGS

# SeedSequence keys; fixed so ablation slices share streams
_STREAM = 11
_CENTERS_ID, _CENTERS_HELDOUT, _TRANSFORM, _SAMPLES, _NOISE = range(5)
_SPLIT_CODE = {"train": 0, "val": 1, "ood-semantic": 2, "ood-nonsemantic": 3, "ood-both": 4}


@dataclass(frozen=True)
class BenchConfig:
    input_dim: int = 16
    num_id_classes: int = 8
    num_heldout_classes: int = 4
    train_per_class: int = 200
    val_per_class: int = 50
    ood_size: int = 400
    center_radius: float = 4.0
    within_std: float = 1.0
    shift_offset: float = 0.5
    shift_cov_scale: float = 2.0
    shift_rotation: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_id_classes < 2:
            raise ValueError("at least 2 in-distribution classes are required")
        if self.num_heldout_classes < 1:
            raise ValueError("at least 1 held-out class is required")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.shift_rotation and self.input_dim < 2:
            raise ValueError("rotation needs input_dim >= 2")
        if min(self.train_per_class, self.val_per_class, self.ood_size) < 1:
            raise ValueError("split sizes must be >= 1")
        if self.center_radius <= 0 or self.within_std <= 0 or self.shift_cov_scale <= 0:
            raise ValueError("radius, within_std and shift_cov_scale must be positive")

    @property
    def total_classes(self) -> int:
        return self.num_id_classes + self.num_heldout_classes

    @property
    def id_classes(self) -> list[int]:
        return list(range(self.num_id_classes))

    @property
    def heldout_classes(self) -> list[int]:
        return list(range(self.num_id_classes, self.total_classes))


@dataclass
class LabeledSet:
    inputs: np.ndarray
    labels: np.ndarray | None
    tag: str
    classes: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.tag not in TAGS:
            raise ValueError(f"unknown tag {self.tag!r}")
        if (self.labels is not None) != (self.tag in ID_TAGS):
            raise ValueError("labels must be present exactly for train/val sets")

    def __len__(self) -> int:
        return len(self.inputs)


def _rng(config: BenchConfig, *key: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, _STREAM, *key])


def _sphere(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def class_centers(config: BenchConfig) -> tuple[np.ndarray, np.ndarray]:
    """Centres of the ID classes and of the held-out classes.

    Each group has its own stream, drawn row by row, so growing one group
    keeps the existing centres and leaves the other group untouched.
    """
    id_centers = _sphere(_rng(config, _CENTERS_ID), config.num_id_classes, config.input_dim,
                         config.center_radius)
    heldout = _sphere(_rng(config, _CENTERS_HELDOUT), config.num_heldout_classes,
                      config.input_dim, config.center_radius)
    return id_centers, heldout


@dataclass(frozen=True)
class ShiftTransform:
    offset: np.ndarray
    std_scale: float
    rotation: np.ndarray | None

    def sample(self, rng, center: np.ndarray, std: float, n: int) -> np.ndarray:
        x = center + self.offset + std * self.std_scale * rng.standard_normal((n, len(center)))
        if self.rotation is not None:
            x = x @ self.rotation.T
        return x


def shift_transform(config: BenchConfig) -> ShiftTransform:
    rng = _rng(config, _TRANSFORM)
    k = config.input_dim
    direction = rng.standard_normal(k)
    direction /= np.linalg.norm(direction)
    offset = config.shift_offset * config.center_radius * direction
    rotation = None
    if config.shift_rotation:
        basis, _ = np.linalg.qr(rng.standard_normal((k, 2)))
        u, v = basis[:, 0], basis[:, 1]
        c, s = np.cos(config.shift_rotation), np.sin(config.shift_rotation)
        rotation = (np.eye(k) + (c - 1) * (np.outer(u, u) + np.outer(v, v))
                    + s * (np.outer(v, u) - np.outer(u, v)))
    return ShiftTransform(offset, float(np.sqrt(config.shift_cov_scale)), rotation)


def _split_counts(total: int, n_groups: int) -> list[int]:
    base, extra = divmod(total, n_groups)
    return [base + (1 if i < extra else 0) for i in range(n_groups)]


def _clusters(config, split, centers, class_ids, counts, transform=None):
    # streams are keyed by (group, index within group) so that changing the
    # number of ID classes leaves held-out samples unchanged
    group = 0 if class_ids and class_ids[0] < config.num_id_classes else 1
    xs, cs = [], []
    for j, (center, cls, n) in enumerate(zip(centers, class_ids, counts)):
        rng = _rng(config, _SAMPLES, _SPLIT_CODE[split], group, j)
        if transform is None:
            x = center + config.within_std * rng.standard_normal((n, config.input_dim))
        else:
            x = transform.sample(rng, center, config.within_std, n)
        xs.append(x)
        cs.append(np.full(n, cls))
    return np.concatenate(xs), np.concatenate(cs)


def generate(config: BenchConfig) -> dict[str, LabeledSet]:
    config.validate()
    id_centers, heldout_centers = class_centers(config)
    transform = shift_transform(config)
    n_id, n_out = config.num_id_classes, config.num_heldout_classes
    ids, held = config.id_classes, config.heldout_classes

    raw = {
        "train": _clusters(config, "train", id_centers, ids, [config.train_per_class] * n_id),
        "val": _clusters(config, "val", id_centers, ids, [config.val_per_class] * n_id),
        "ood-semantic": _clusters(config, "ood-semantic", heldout_centers, held,
                                  _split_counts(config.ood_size, n_out)),
        "ood-nonsemantic": _clusters(config, "ood-nonsemantic", id_centers, ids,
                                     _split_counts(config.ood_size, n_id), transform),
        "ood-both": _clusters(config, "ood-both", heldout_centers, held,
                              _split_counts(config.ood_size, n_out), transform),
    }

    mean = raw["train"][0].mean(axis=0)
    std = raw["train"][0].std(axis=0)
    sets: dict[str, LabeledSet] = {}
    for tag, (x, cls) in raw.items():
        labels = cls.copy() if tag in ID_TAGS else None
        sets[tag] = LabeledSet((x - mean) / std, labels, tag, cls)

    train_x = sets["train"].inputs
    lo, hi = train_x.min(axis=0), train_x.max(axis=0)
    noise = _rng(config, _NOISE)
    uniform = noise.uniform(lo, hi, size=(config.ood_size, config.input_dim))
    gaussian = noise.standard_normal((config.ood_size, config.input_dim))
    sets["ood-uniform"] = LabeledSet(uniform, None, "ood-uniform")
    sets["ood-gaussian"] = LabeledSet(gaussian, None, "ood-gaussian")
    return sets


def ablation_slices(config: BenchConfig, axis: str, grid) -> list[BenchConfig]:
    """Copies of ``config`` that vary ``num_samples`` or ``num_classes`` only."""
    field_name = {"num_samples": "train_per_class", "num_classes": "num_id_classes"}.get(axis)
    if field_name is None:
        raise ValueError(f"unknown ablation axis {axis!r}")
    if len(grid) == 0:
        raise ValueError("grid must be nonempty")
    return [replace(config, **{field_name: int(v)}) for v in grid]


# --- CSV interchange -------------------------------------------------------


def write_csv(sets: dict[str, LabeledSet], path, header: str | None = None) -> Path:
    path = Path(path)
    k = next(iter(sets.values())).inputs.shape[1]
    with path.open("w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(k)] + ["label", "tag"])
        for tag, s in sets.items():
            for i, row in enumerate(s.inputs):
                label = "" if s.labels is None else int(s.labels[i])
                writer.writerow([repr(float(v)) for v in row] + [label, tag])
    return path


def read_csv(path) -> dict[str, LabeledSet]:
    rows: dict[str, tuple[list, list]] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        k = len(header) - 2
        for row in reader:
            xs, labels = rows.setdefault(row[-1], ([], []))
            xs.append([float(v) for v in row[:k]])
            labels.append(row[k])
    out = {}
    for tag, (xs, labels) in rows.items():
        lab = np.array([int(v) for v in labels]) if tag in ID_TAGS else None
        out[tag] = LabeledSet(np.array(xs, dtype=np.float64).reshape(-1, k), lab, tag,
                              None if lab is None else lab.copy())
    return out
