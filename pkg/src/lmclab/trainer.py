"""Plain minibatch SGD and the checkpoint record it produces."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import CompatibilityError, DomainError, TrainingDivergedError
from .model import Batch, ModelSpec, check_spec, loss_and_grad
from .params import ParamVector
from .tasks import SamplerState, batches_per_epoch, sample_batch

PROVENANCES = ("pretrained", "finetuned", "mergetuned", "merged")
SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    lr_schedule: str = "constant"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DomainError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise DomainError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_schedule not in SCHEDULES:
            raise DomainError(f"lr_schedule must be one of {SCHEDULES}, got {self.lr_schedule!r}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "lr_schedule": self.lr_schedule,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(
            learning_rate=float(d["learning_rate"]),
            epochs=int(d["epochs"]),
            batch_size=int(d["batch_size"]),
            seed=int(d["seed"]),
            lr_schedule=str(d["lr_schedule"]),
        )


@dataclass(frozen=True, eq=False)
class Checkpoint:
    spec: ModelSpec
    params: ParamVector
    provenance: str
    lineage: str = ""
    train_config: Optional[TrainConfig] = None
    seed: int = 0

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise DomainError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")
        if self.params.layout != self.spec.layout():
            raise CompatibilityError("checkpoint params do not match its model spec")

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.params == other.params
            and self.provenance == other.provenance
            and self.lineage == other.lineage
            and self.train_config == other.train_config
            and self.seed == other.seed
        )

    def with_params(self, params: ParamVector, **changes) -> "Checkpoint":
        return replace(self, params=params, **changes)


def learning_rate_at(config: TrainConfig, step: int, total_steps: int) -> float:
    """Learning rate for 0-based ``step``; cosine decays to 0 at the last step."""
    if config.lr_schedule == "constant" or total_steps <= 1:
        return config.learning_rate
    return 0.5 * config.learning_rate * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


ObjectiveFn = Callable[[ParamVector, Batch], tuple[float, ParamVector]]
StepHook = Callable[[int, int, float, ParamVector], None]
EpochHook = Callable[[int, ParamVector], None]


def sgd(
    objective: ObjectiveFn,
    init: ParamVector,
    dataset,
    config: TrainConfig,
    *,
    stage: str = "train",
    on_step: Optional[StepHook] = None,
    on_epoch_end: Optional[EpochHook] = None,
) -> ParamVector:
    """Run ``epochs * ceil(N / batch_size)`` SGD steps on ``objective``.

    ``on_step(epoch, step, loss, w_before)`` is called before each update and
    ``on_epoch_end(epoch, w)`` after the last update of each epoch.
    """
    state = SamplerState(config.seed)
    per_epoch = batches_per_epoch(len(dataset), config.batch_size)
    total = config.epochs * per_epoch
    w = init.values.copy()
    step = 0
    for epoch in range(config.epochs):
        for _ in range(per_epoch):
            batch = sample_batch(dataset, config.batch_size, state)
            current = init.with_values(w)
            loss_value, grad = objective(current, batch)
            if not math.isfinite(loss_value):
                raise TrainingDivergedError(step, loss_value, stage)
            if on_step is not None:
                on_step(epoch, step, loss_value, current)
            w = w - learning_rate_at(config, step, total) * grad.values
            if not np.all(np.isfinite(w)):
                raise TrainingDivergedError(step, loss_value, stage)
            step += 1
        if on_epoch_end is not None:
            on_epoch_end(epoch, init.with_values(w))
    return init.with_values(w)


def train(
    spec: ModelSpec,
    init: ParamVector,
    dataset,
    config: TrainConfig,
    *,
    provenance: str = "pretrained",
    lineage: str = "",
    on_step: Optional[StepHook] = None,
) -> Checkpoint:
    check_spec(spec, init)
    params = sgd(
        lambda w, b: loss_and_grad(spec, w, b),
        init,
        dataset,
        config,
        stage=provenance,
        on_step=on_step,
    )
    return Checkpoint(spec, params, provenance, lineage, config, config.seed)
