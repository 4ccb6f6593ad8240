"""Synthetic pretraining / downstream task pairs with a base-novel class split."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .model import Batch


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if inputs.ndim != 2 or inputs.shape[0] != labels.shape[0]:
            raise DomainError(f"inconsistent dataset shapes {inputs.shape} / {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DomainError("labels must lie in [0, num_classes)")
        if not np.all(np.isfinite(inputs)):
            raise DomainError("dataset inputs contain non-finite values")
        inputs.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", int(self.num_classes))

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[index], self.labels[index], self.num_classes)


class TrackedDataset:
    """Read-counting proxy around a :class:`Dataset`.

    Every access to ``inputs``, ``labels`` or ``subset`` bumps ``reads``; the
    harness uses it to prove a stage never touched a dataset.
    """

    def __init__(self, dataset: Dataset):
        self._dataset = dataset
        self.reads = 0

    @property
    def inputs(self):
        self.reads += 1
        return self._dataset.inputs

    @property
    def labels(self):
        self.reads += 1
        return self._dataset.labels

    @property
    def num_classes(self):
        return self._dataset.num_classes

    @property
    def dim(self):
        return self._dataset.dim

    def subset(self, index):
        self.reads += 1
        return self._dataset.subset(index)

    def __len__(self):
        return len(self._dataset)


@dataclass(frozen=True, eq=False)
class TaskPair:
    pretrain_set: Dataset
    downstream_train: Dataset
    eval_base: Dataset
    eval_novel: Dataset
    base_classes: tuple[int, ...]
    novel_classes: tuple[int, ...]
    means: np.ndarray = field(repr=False)
    shift: np.ndarray = field(repr=False)

    def __post_init__(self):
        base, novel = set(self.base_classes), set(self.novel_classes)
        C = self.pretrain_set.num_classes
        if base & novel or base | novel != set(range(C)) or not base or not novel:
            raise DomainError("base and novel classes must partition [0, C) into non-empty sets")
        dims = {d.dim for d in (self.pretrain_set, self.downstream_train, self.eval_base, self.eval_novel)}
        if len(dims) != 1:
            raise DomainError(f"datasets disagree on input_dim: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.pretrain_set.dim

    @property
    def num_classes(self) -> int:
        return self.pretrain_set.num_classes

    def __eq__(self, other):
        if not isinstance(other, TaskPair):
            return NotImplemented
        return (
            self.pretrain_set == other.pretrain_set
            and self.downstream_train == other.downstream_train
            and self.eval_base == other.eval_base
            and self.eval_novel == other.eval_novel
            and self.base_classes == other.base_classes
            and self.novel_classes == other.novel_classes
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.shift, other.shift)
        )


def _draw(rng, means, classes, per_class, sigma, offset):
    labels = np.repeat(np.asarray(classes, dtype=np.int64), per_class)
    noise = rng.standard_normal((labels.size, means.shape[1])) * sigma
    return means[labels] + offset + noise, labels


def generate_task_pair(
    seed: int,
    dim: int = 20,
    num_classes: int = 10,
    base_fraction: float = 0.5,
    n_shots: int = 16,
    shift_scale: float = 1.0,
    noise_sigma: float = 0.5,
    *,
    pretrain_per_class: int = 100,
    eval_per_class: int = 200,
    mean_scale: float = 3.0,
) -> TaskPair:
    """Gaussian class clusters shared by a pretraining and a downstream task.

    Class means are drawn from ``N(0, (mean_scale**2 / dim) I)``, so their
    expected norm is about ``mean_scale``; every example adds isotropic noise
    of std ``noise_sigma``. Downstream inputs (train and both eval splits) are
    translated by one random vector of norm exactly ``shift_scale``.
    """
    if dim < 1:
        raise DomainError(f"dim must be positive, got {dim}")
    if num_classes < 4:
        raise DomainError(f"num_classes must be >= 4, got {num_classes}")
    if not 0.0 < base_fraction < 1.0:
        raise DomainError(f"base_fraction must lie in (0, 1), got {base_fraction}")
    n_base = math.ceil(base_fraction * num_classes)
    if not 1 <= n_base < num_classes:
        raise DomainError(f"base_fraction={base_fraction} leaves an empty split")
    if n_shots < 1 or pretrain_per_class < 1 or eval_per_class < 1:
        raise DomainError("per-class sample counts must be positive")
    if not mean_scale > 0:
        raise DomainError(f"mean_scale must be > 0, got {mean_scale}")
    if shift_scale < 0:
        raise DomainError(f"shift_scale must be >= 0, got {shift_scale}")
    if not noise_sigma > 0:
        raise DomainError(f"noise_sigma must be > 0, got {noise_sigma}")

    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, dim)) * (mean_scale / math.sqrt(dim))
    direction = rng.standard_normal(dim)
    shift = direction / np.linalg.norm(direction) * shift_scale
    order = rng.permutation(num_classes)
    base = tuple(sorted(int(c) for c in order[:n_base]))
    novel = tuple(sorted(int(c) for c in order[n_base:]))

    zero = np.zeros(dim)
    x, y = _draw(rng, means, range(num_classes), pretrain_per_class, noise_sigma, zero)
    pretrain = Dataset(x, y, num_classes)
    x, y = _draw(rng, means, base, n_shots, noise_sigma, shift)
    downstream = Dataset(x, y, num_classes)
    x, y = _draw(rng, means, base, eval_per_class, noise_sigma, shift)
    eval_base = Dataset(x, y, num_classes)
    x, y = _draw(rng, means, novel, eval_per_class, noise_sigma, shift)
    eval_novel = Dataset(x, y, num_classes)
    return TaskPair(pretrain, downstream, eval_base, eval_novel, base, novel, means, shift)


class SamplerState:
    """Mutable sampling state: a seeded generator plus the current epoch order."""

    def __init__(self, seed):
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.order: np.ndarray | None = None
        self.cursor = 0
        self.epoch = 0


def sample_batch(dataset, batch_size: int, state: SamplerState) -> Batch:
    """Next minibatch without replacement; a new permutation starts each epoch.

    The final batch of an epoch may be short so one pass covers the dataset
    exactly once.
    """
    n = len(dataset)
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > n:
        raise DomainError(f"batch_size {batch_size} exceeds dataset size {n}")
    if state.order is None or state.cursor >= n:
        if state.order is not None:
            state.epoch += 1
        state.order = state.rng.permutation(n)
        state.cursor = 0
    idx = state.order[state.cursor : state.cursor + batch_size]
    state.cursor += idx.size
    return Batch(dataset.inputs[idx], dataset.labels[idx])


def batches_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
