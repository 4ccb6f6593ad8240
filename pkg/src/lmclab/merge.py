"""Training-free merging baselines: linear averaging, TIES and DARE.

For the two-endpoint experiments the base is the zero-shot weights ``w1`` and
the single delta is ``w2 - w1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .params import ParamVector, check_compatible, interpolate, sub
from .trainer import Checkpoint

METHODS = ("linear", "ties", "dare")


@dataclass(frozen=True)
class MergeConfig:
    method: str = "linear"
    alpha: float = 0.5
    density: float = 0.2
    drop_p: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"merge method must be one of {METHODS}, got {self.method!r}")
        if self.method == "linear" and not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.method == "ties" and not 0.0 < self.density <= 1.0:
            raise DomainError(f"density must lie in (0, 1], got {self.density}")
        if self.method == "dare" and not 0.0 <= self.drop_p < 1.0:
            raise DomainError(f"drop_p must lie in [0, 1), got {self.drop_p}")

    @property
    def name(self) -> str:
        if self.method == "linear":
            return f"linear(alpha={self.alpha:g})"
        if self.method == "ties":
            return f"ties(density={self.density:g})"
        return f"dare(drop_p={self.drop_p:g})"

    def to_dict(self) -> dict:
        return {"method": self.method, "alpha": self.alpha, "density": self.density,
                "drop_p": self.drop_p, "seed": self.seed}


def linear_merge(w1: ParamVector, w2: ParamVector, alpha: float) -> ParamVector:
    return interpolate(w1, w2, alpha)


def _trim(values: np.ndarray, density: float) -> np.ndarray:
    k = math.ceil(density * values.size)
    if k >= values.size:
        return values.copy()
    keep = np.argsort(-np.abs(values), kind="stable")[:k]
    out = np.zeros_like(values)
    out[keep] = values[keep]
    return out


def _elect(trimmed: np.ndarray) -> np.ndarray:
    """Per-coordinate sign of the column sum; ties go to the largest-magnitude
    entry, then to +."""
    sign = np.sign(trimmed.sum(axis=0))
    tied = sign == 0
    if tied.any():
        cols = trimmed[:, tied]
        mags = np.abs(cols)
        top = mags.max(axis=0)
        at_top = mags == top
        has_pos = (at_top & (cols > 0)).any(axis=0)
        has_neg = (at_top & (cols < 0)).any(axis=0)
        sign[tied] = np.where(has_neg & ~has_pos, -1.0, 1.0)
    return sign


def ties_merge(base: ParamVector, deltas: list[ParamVector], density: float) -> ParamVector:
    """Trim, elect sign, disjoint mean; trimming is done per named segment."""
    if not deltas:
        raise DomainError("ties_merge needs at least one delta")
    if not 0.0 < density <= 1.0:
        raise DomainError(f"density must lie in (0, 1], got {density}")
    for d in deltas:
        check_compatible(base, d)

    trimmed = np.zeros((len(deltas), len(base)))
    for _, sl, _ in base.segment_slices():
        for i, d in enumerate(deltas):
            trimmed[i, sl] = _trim(d.values[sl], density)

    elected = _elect(trimmed)
    agree = np.sign(trimmed) == elected
    counts = agree.sum(axis=0)
    sums = np.where(agree, trimmed, 0.0).sum(axis=0)
    merged = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return base.with_values(base.values + merged)


def dare_transform(delta: ParamVector, drop_p: float, seed: int) -> ParamVector:
    if not 0.0 <= drop_p < 1.0:
        raise DomainError(f"drop_p must lie in [0, 1), got {drop_p}")
    rng = np.random.default_rng(seed)
    keep = rng.random(len(delta)) >= drop_p
    return delta.with_values(np.where(keep, delta.values / (1.0 - drop_p), 0.0))


def dare_merge(base: ParamVector, delta: ParamVector, drop_p: float = 0.9, seed: int = 0) -> ParamVector:
    """Drop each delta coordinate with probability ``drop_p``, rescale the rest
    by ``1 / (1 - drop_p)``, and add to ``base``."""
    check_compatible(base, delta)
    return base.with_values(base.values + dare_transform(delta, drop_p, seed).values)


def merge_endpoints(config: MergeConfig, w1: ParamVector, w2: ParamVector) -> ParamVector:
    if config.method == "linear":
        return linear_merge(w1, w2, config.alpha)
    delta = sub(w2, w1)
    if config.method == "ties":
        return ties_merge(w1, [delta], config.density)
    return dare_merge(w1, delta, config.drop_p, config.seed)


def merge_checkpoints(config: MergeConfig, w1: Checkpoint, w2: Checkpoint) -> Checkpoint:
    if w1.spec != w2.spec:
        raise DomainError("cannot merge checkpoints with different model specs")
    params = merge_endpoints(config, w1.params, w2.params)
    lineage = f"{config.name}[{w1.lineage or w1.provenance} -> {w2.lineage or w2.provenance}]"
    return Checkpoint(w1.spec, params, "merged", lineage, None, config.seed)
