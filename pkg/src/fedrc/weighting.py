"""Aggregation weight vectors for a server's children.

Two strategies are supported:

* ``proportion`` -- the classic weight, each child's share of the total
  dataset size.
* ``fedrc`` -- inverse Bhattacharyya distance between a child's dataset
  summary and its parent's, normalized across children, so that children
  whose data looks like the parent's pooled data count for more.

Weights are functions of the data summaries only; they are computed once at
experiment initialization and reused for every round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .gauss_stats import GaussianSummary, bhattacharyya

__all__ = [
    "StrategyKind",
    "StrategyChoice",
    "DEFAULT_EPSILON",
    "VARIANCE_FLOOR",
    "proportion_weights",
    "fedrc_weights",
    "floored_distances",
    "resolve_weights",
]

# Distance floor (nats) applied before inversion, bounding weights when a
# child coincides with its parent.
DEFAULT_EPSILON = 1e-6

# Variance floor applied to summaries before distance evaluation so constant
# images/datasets stay usable.
VARIANCE_FLOOR = 1e-6


class StrategyKind(Enum):
    PROPORTION = "proportion"
    FEDRC = "fedrc"


@dataclass(frozen=True)
class StrategyChoice:
    """Which weighting rule to use, plus the distance floor for ``fedrc``."""

    kind: StrategyKind
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if not isinstance(self.kind, StrategyKind):
            raise ValueError(f"unknown strategy kind: {self.kind!r}")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError("epsilon must be > 0")


def proportion_weights(sizes: list[int]) -> np.ndarray:
    """Dataset-size proportions: ``w_i = size_i / sum(sizes)``."""
    if not len(sizes):
        raise ValueError("no children to weight")
    for s in sizes:
        if int(s) != s or s < 1:
            raise ValueError("every child size must be an integer >= 1")
    total = sum(int(s) for s in sizes)
    return np.array([s / total for s in sizes], dtype=np.float64)


def _floored(summary: GaussianSummary) -> GaussianSummary:
    if summary.var >= VARIANCE_FLOOR:
        return summary
    return GaussianSummary(n=summary.n, mu=summary.mu, var=VARIANCE_FLOOR)


def floored_distances(
    children: list[GaussianSummary],
    parent: GaussianSummary,
    epsilon: float = DEFAULT_EPSILON,
) -> list[float]:
    """Per-child Bhattacharyya distance to the parent, floored at epsilon.

    Variances are floored at :data:`VARIANCE_FLOOR` first so degenerate
    (constant) datasets produce finite distances.
    """
    if not children:
        raise ValueError("no children to weight")
    if not (math.isfinite(epsilon) and epsilon > 0.0):
        raise ValueError("epsilon must be > 0")
    parent_f = _floored(parent)
    return [max(bhattacharyya(_floored(c), parent_f), epsilon) for c in children]


def fedrc_weights(
    children: list[GaussianSummary],
    parent: GaussianSummary,
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """Inverse-distance weights: ``w_i = (1/d_i) / sum_j (1/d_j)``.

    ``d_i`` is the floored Bhattacharyya distance between child ``i`` and the
    parent summary. Dataset sizes do not enter; a child identical to its
    parent hits the epsilon floor, so a set of identical children degrades
    smoothly to uniform weights.
    """
    dists = floored_distances(children, parent, epsilon)
    inv = [1.0 / d for d in dists]
    total = math.fsum(inv)
    return np.array([v / total for v in inv], dtype=np.float64)


def resolve_weights(
    strategy: StrategyChoice,
    children: list[tuple[int, GaussianSummary]],
    parent: GaussianSummary,
) -> np.ndarray:
    """Dispatch to the configured strategy for (size, summary) children."""
    if not children:
        raise ValueError("no children to weight")
    if strategy.kind is StrategyKind.PROPORTION:
        return proportion_weights([size for size, _ in children])
    return fedrc_weights([summ for _, summ in children], parent, strategy.epsilon)
