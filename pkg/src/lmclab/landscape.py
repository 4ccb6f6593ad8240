"""Interpolation-path probes, loss barriers, and checks of the quadratic
surrogate for the pretraining loss."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import DomainError
from .model import ModelSpec, evaluate
from .params import ParamVector, check_compatible, interpolate, l2_norm_sq, sub
from .trainer import Checkpoint


@dataclass(frozen=True)
class PathProbe:
    alphas: tuple[float, ...]
    losses: tuple[float, ...]
    accuracies: tuple[float, ...]
    endpoint_ids: tuple[str, str] = ("", "")
    eval_spec: str = ""

    def __post_init__(self):
        for name in ("alphas", "losses", "accuracies"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        n = len(self.alphas)
        if n < 2 or len(self.losses) != n or len(self.accuracies) != n:
            raise DomainError("probe columns must have equal length >= 2")
        if self.alphas[0] != 0.0 or self.alphas[-1] != 1.0:
            raise DomainError("probe alphas must start at 0 and end at 1")
        if any(b <= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise DomainError("probe alphas must be strictly increasing")

    def to_csv(self, path) -> None:
        # repr() gives shortest round-trip float text
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "loss", "accuracy"])
            for row in zip(self.alphas, self.losses, self.accuracies):
                writer.writerow([repr(v) for v in row])

    @classmethod
    def from_csv(cls, path, endpoint_ids=("", ""), eval_spec="") -> "PathProbe":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            tuple(float(r["alpha"]) for r in rows),
            tuple(float(r["loss"]) for r in rows),
            tuple(float(r["accuracy"]) for r in rows),
            tuple(endpoint_ids),
            eval_spec,
        )


def probe_alphas(n_points: int) -> list[float]:
    if n_points < 2:
        raise DomainError(f"n_points must be >= 2, got {n_points}")
    return [k / (n_points - 1) for k in range(n_points)]


def probe_path(
    spec: ModelSpec,
    wA: ParamVector,
    wB: ParamVector,
    n_points: int,
    dataset,
    class_subset: Optional[Iterable[int]] = None,
    *,
    endpoint_ids: tuple[str, str] = ("A", "B"),
    eval_spec: str = "",
) -> PathProbe:
    """Loss and accuracy at evenly spaced points from ``wA`` (alpha=0) to ``wB``."""
    check_compatible(wA, wB)
    alphas = probe_alphas(n_points)
    subset = None if class_subset is None else sorted(class_subset)
    losses, accs = [], []
    for a in alphas:
        loss, acc = evaluate(spec, interpolate(wA, wB, a), dataset, subset)
        losses.append(loss)
        accs.append(acc)
    return PathProbe(tuple(alphas), tuple(losses), tuple(accs), tuple(endpoint_ids), eval_spec)


def barrier(probe: PathProbe) -> float:
    """Highest loss on the path minus the larger endpoint loss."""
    return max(probe.losses) - max(probe.losses[0], probe.losses[-1])


@dataclass(frozen=True)
class QuadraticTask:
    """Isotropic quadratic ``(mu / 2) * ||v - center||^2``."""

    mu: float
    center: ParamVector

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError(f"mu must be > 0, got {self.mu}")


def quadratic_loss(task: QuadraticTask, v: ParamVector) -> float:
    return 0.5 * task.mu * l2_norm_sq(sub(v, task.center))


def quadratic_grad(task: QuadraticTask, v: ParamVector) -> ParamVector:
    return v.with_values(task.mu * sub(v, task.center).values)


def surrogate_value(mu: float, alpha: float, w: ParamVector, center: ParamVector) -> float:
    """``(mu * alpha^2 / 2) * ||w - center||^2``."""
    return 0.5 * mu * alpha * alpha * l2_norm_sq(sub(w, center))


def surrogate_exactness_check(task: QuadraticTask, w: ParamVector, alphas: Sequence[float]) -> float:
    """Largest |exact - surrogate| over ``alphas`` along the path center -> w.

    The exact side evaluates the quadratic at the interpolated point; for a
    quadratic the second-order expansion is exact, so this is rounding only.
    """
    check_compatible(task.center, w)
    worst = 0.0
    for a in alphas:
        exact = quadratic_loss(task, interpolate(task.center, w, a))
        approx = surrogate_value(task.mu, a, w, task.center)
        worst = max(worst, abs(exact - approx))
    return worst


@dataclass(frozen=True)
class GapRow:
    alpha: float
    exact_loss: float
    surrogate_value: float
    gap: float


def surrogate_gap_report(
    spec: ModelSpec,
    w1: Checkpoint,
    w: ParamVector,
    replay_dataset,
    alphas: Sequence[float],
    lambda_eff: float,
) -> list[GapRow]:
    """Compare the real pretraining loss at ``w1 + alpha * (w - w1)`` with the
    quadratic stand-in ``lambda_eff * alpha^2 * ||w - w1||^2``.

    Diagnostic only: it needs the pretraining data, which the tuning loop never
    sees. ``lambda_eff`` plays the role of ``mu / 2``. The constant ``L1(w1)``
    is not subtracted, so at ``w = w1`` (or ``alpha = 0``) the gap is ``L1(w1)``.
    """
    dist = l2_norm_sq(sub(w, w1.params))
    rows = []
    for a in alphas:
        exact, _ = evaluate(spec, interpolate(w1.params, w, a), replay_dataset)
        approx = lambda_eff * a * a * dist
        rows.append(GapRow(float(a), exact, approx, exact - approx))
    return rows
