"""Small fully connected classifiers with hand-derived gradients.

Weights for layer ``i`` are stored as ``layer{i}.weight`` with shape
``(fan_in, fan_out)`` followed by ``layer{i}.bias`` with shape ``(fan_out,)``;
logits are ``h @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import CompatibilityError, DomainError
from .params import Layout, ParamVector

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    num_classes: int = 2
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise DomainError(f"input_dim must be positive, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise DomainError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.num_classes < 2:
            raise DomainError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    def layout(self) -> Layout:
        out = []
        for i, (fan_in, fan_out) in enumerate(self.layer_dims):
            out.append((f"layer{i}.weight", (fan_in, fan_out)))
            out.append((f"layer{i}.bias", (fan_out,)))
        return tuple(out)

    @property
    def num_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims)

    @property
    def is_linear(self) -> bool:
        return not self.hidden_dims

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "num_classes": self.num_classes,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d.get("hidden_dims", ())),
            num_classes=int(d["num_classes"]),
            activation=str(d.get("activation", "tanh")),
        )


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if inputs.ndim != 2:
            raise DomainError(f"inputs must be a matrix, got shape {inputs.shape}")
        if inputs.shape[0] != labels.shape[0]:
            raise DomainError(f"{inputs.shape[0]} input rows but {labels.shape[0]} labels")
        if labels.shape[0] < 1:
            raise DomainError("a batch needs at least one example")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]


def check_spec(spec: ModelSpec, w: ParamVector) -> None:
    if w.layout != spec.layout():
        raise CompatibilityError(f"parameter layout does not match {spec}")


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Gaussian weights with std ``1/sqrt(fan_in)``; zero biases."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims):
        arrays[f"layer{i}.weight"] = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        arrays[f"layer{i}.bias"] = np.zeros(fan_out)
    return ParamVector.from_arrays(arrays)


def _unpack(spec: ModelSpec, w: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    check_spec(spec, w)
    arrays = w.arrays()
    return [(arrays[f"layer{i}.weight"], arrays[f"layer{i}.bias"]) for i in range(len(spec.layer_dims))]


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    # subgradient at 0 is taken as 0
    return (z > 0.0).astype(np.float64)


def logits(spec: ModelSpec, w: ParamVector, inputs: np.ndarray) -> np.ndarray:
    layers = _unpack(spec, w)
    h = np.asarray(inputs, dtype=np.float64)
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        h = z if i == len(layers) - 1 else _act(spec.activation, z)
    return h


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(z: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy of logits ``z`` (log-sum-exp stabilised)."""
    logp = _log_softmax(z)
    return float(-logp[np.arange(labels.shape[0]), labels].mean())


def _subset_index(spec: ModelSpec, class_subset) -> np.ndarray:
    classes = np.array(sorted(set(int(c) for c in class_subset)), dtype=np.int64)
    if classes.size == 0 or classes.min() < 0 or classes.max() >= spec.num_classes:
        raise DomainError(f"invalid class subset {classes.tolist()}")
    return classes


def loss_and_grad(
    spec: ModelSpec,
    w: ParamVector,
    batch: Batch,
    class_subset: Optional[Iterable[int]] = None,
) -> tuple[float, ParamVector]:
    """Mean cross-entropy over ``batch`` and its exact gradient w.r.t. ``w``.

    With ``class_subset`` the softmax runs over those classes' logits only
    (every label must be in the subset); the other output rows get zero
    gradient.
    """
    layers = _unpack(spec, w)
    n = len(batch)
    # forward, keeping pre- and post-activations
    acts = [batch.inputs]
    pre = []
    h = batch.inputs
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        pre.append(z)
        h = z if i == len(layers) - 1 else _act(spec.activation, z)
        acts.append(h)

    rows = np.arange(n)
    if class_subset is None:
        logp = _log_softmax(pre[-1])
        y = batch.labels
    else:
        classes = _subset_index(spec, class_subset)
        y = np.searchsorted(classes, batch.labels)
        if np.any(y >= classes.size) or np.any(classes[np.minimum(y, classes.size - 1)] != batch.labels):
            raise DomainError("batch contains labels outside the class subset")
        logp = _log_softmax(pre[-1][:, classes])
    loss = float(-logp[rows, y].mean())

    probs = np.exp(logp)
    probs[rows, y] -= 1.0
    probs /= n
    if class_subset is None:
        delta = probs
    else:
        delta = np.zeros_like(pre[-1])
        delta[:, classes] = probs

    grads: list[np.ndarray] = [None] * (2 * len(layers))
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W.T) * _act_grad(spec.activation, pre[i - 1], acts[i])
    flat = np.concatenate([g.reshape(-1) for g in grads])
    return loss, w.with_values(flat)


def loss(spec: ModelSpec, w: ParamVector, batch: Batch) -> float:
    return cross_entropy(logits(spec, w, batch.inputs), batch.labels)


def evaluate(
    spec: ModelSpec,
    w: ParamVector,
    dataset,
    class_subset: Optional[Iterable[int]] = None,
) -> tuple[float, float]:
    """Loss and accuracy of ``w`` on ``dataset``.

    With ``class_subset``, only examples whose label is in the subset are
    scored, and both the softmax and the argmax run over the subset's logits.
    """
    inputs = np.asarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if class_subset is None:
        z = logits(spec, w, inputs)
        y = labels
    else:
        classes = _subset_index(spec, class_subset)
        keep = np.isin(labels, classes)
        if not keep.any():
            raise DomainError("no examples left after restricting to class subset")
        inputs, labels = inputs[keep], labels[keep]
        z = logits(spec, w, inputs)[:, classes]
        y = np.searchsorted(classes, labels)
    if y.shape[0] == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    acc = float(np.mean(np.argmax(z, axis=1) == y))
    return cross_entropy(z, y), acc
