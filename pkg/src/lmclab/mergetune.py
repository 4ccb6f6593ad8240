"""Continued fine-tuning guided by linear mode connectivity.

Starting from a blend of the zero-shot weights ``w1`` and the fine-tuned
weights ``w2``, minimise

    L2(w) + lam * ||w - w1||^2 + beta * mean_{a in A} L2(w2 + a * (w - w2))

with ``A = {1/n, ..., (n-1)/n}``. The squared-distance term stands in for the
pretraining-loss path back to ``w1``, so the pretraining data is never needed.
All three terms share one minibatch per step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError
from .model import Batch, ModelSpec, check_spec, loss_and_grad
from .params import ParamVector, check_compatible, interpolate, l2_norm_sq, sub
from .trainer import Checkpoint, EpochHook, TrainConfig, sgd


@dataclass(frozen=True)
class MergeTuneConfig:
    lam: float = 8.0
    beta: float = 0.5
    n_alpha: int = 5
    tau: float = 0.3
    optimizer: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.lam >= 0:
            raise DomainError(f"lambda must be >= 0, got {self.lam}")
        if not self.beta >= 0:
            raise DomainError(f"beta must be >= 0, got {self.beta}")
        if self.n_alpha < 1:
            raise DomainError(f"n_alpha must be >= 1, got {self.n_alpha}")
        if not 0.0 <= self.tau <= 1.0:
            raise DomainError(f"tau must lie in [0, 1], got {self.tau}")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "beta": self.beta,
            "n_alpha": self.n_alpha,
            "tau": self.tau,
            "optimizer": self.optimizer.to_dict(),
        }


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    surrogate: float
    lmc: float
    total: float


def init_blend(w1: ParamVector, w2: ParamVector, tau: float) -> ParamVector:
    """``(1 - tau) * w1 + tau * w2``: the starting point of the continued model."""
    return interpolate(w1, w2, tau)


def alpha_grid(n: int) -> list[float]:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    return [k / n for k in range(1, n)]


def lmc_point(w: ParamVector, w2: ParamVector, alpha: float) -> ParamVector:
    """``w2 + alpha * (w - w2)``, the point a fraction ``alpha`` from w2 toward w."""
    return w2.with_values(w2.values + alpha * (w.values - w2.values))


def lmc_term(spec: ModelSpec, w: ParamVector, w2: ParamVector, alpha: float, batch: Batch) -> tuple[float, np.ndarray]:
    """Loss at ``lmc_point(w, w2, alpha)`` and its gradient w.r.t. ``w``.

    By the chain rule the gradient is ``alpha`` times the plain gradient at the
    interpolated point.
    """
    value, g = loss_and_grad(spec, lmc_point(w, w2, alpha), batch)
    return value, alpha * g.values


def mergetune_loss_and_grad(
    spec: ModelSpec,
    w: ParamVector,
    w1: ParamVector,
    w2: ParamVector,
    batch: Batch,
    config: MergeTuneConfig,
) -> tuple[LossBreakdown, ParamVector]:
    check_spec(spec, w)
    check_compatible(w, w1)
    check_compatible(w, w2)

    task, g_task = loss_and_grad(spec, w, batch)
    diff = sub(w, w1)
    surrogate = l2_norm_sq(diff)

    grid = alpha_grid(config.n_alpha)
    lmc = 0.0
    g_lmc = np.zeros(len(w))
    if grid:
        # fixed summation order keeps the result bitwise reproducible
        for a in grid:
            value, g = lmc_term(spec, w, w2, a, batch)
            lmc += value
            g_lmc += g
        lmc /= len(grid)
        g_lmc /= len(grid)
    elif config.beta > 0:
        warnings.warn("n_alpha=1 gives an empty interpolation grid; the LMC term is 0", RuntimeWarning)

    total = task + config.lam * surrogate + config.beta * lmc
    grad = g_task.values + 2.0 * config.lam * diff.values + config.beta * g_lmc
    return LossBreakdown(task, surrogate, lmc, total), w.with_values(grad)


def run_mergetune(
    spec: ModelSpec,
    w1: Checkpoint,
    w2: Checkpoint,
    dataset,
    config: MergeTuneConfig,
    *,
    history: Optional[list] = None,
    lineage: str = "",
    on_epoch_end: Optional[EpochHook] = None,
) -> Checkpoint:
    """Continue fine-tuning from ``init_blend(w1, w2, tau)`` on the downstream data.

    ``dataset`` is the only data the loop sees. If ``history`` is a list, one
    dict per epoch is appended with the epoch-mean of each loss term.
    ``on_epoch_end(epoch, w)`` sees the parameters after every epoch.
    """
    if w1.spec != spec or w2.spec != spec:
        raise DomainError("both endpoint checkpoints must share the model spec")
    a, b = w1.params, w2.params
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}

    def objective(w, batch):
        parts, grad = mergetune_loss_and_grad(spec, w, a, b, batch, config)
        objective.last = parts
        return parts.total, grad

    def on_step(epoch, step, loss_value, w):
        p = objective.last
        sums[epoch] = sums.get(epoch, 0.0) + np.array([p.task, p.surrogate, p.lmc, p.total])
        counts[epoch] = counts.get(epoch, 0) + 1

    params = sgd(objective, init_blend(a, b, config.tau), dataset, config.optimizer, stage="mergetune",
                 on_step=on_step, on_epoch_end=on_epoch_end)
    if history is not None:
        for epoch in sorted(sums):
            task, sur, lmc, total = sums[epoch] / counts[epoch]
            history.append({"epoch": epoch, "task": task, "surrogate": sur, "lmc": lmc, "total": total})
    name = lineage or f"mergetune(lambda={config.lam},beta={config.beta},n_alpha={config.n_alpha},tau={config.tau})"
    return Checkpoint(spec, params, "mergetuned", name, config.optimizer, config.optimizer.seed)
