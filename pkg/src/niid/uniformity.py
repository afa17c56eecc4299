"""Uniformity testing of the average distribution from two draws per source.

The statistic counts within-source collisions of the two draws together
with cross-source collisions of the first draws,

    Z = (sum_t Y_t + 2 sum_{s<t} Y_st) / T**2,

which is an unbiased estimate of ``||p_avg||_2^2``.  A uniform average has
``||p_avg||_2^2 = 1/k``; an average at l1 distance at least ``epsilon`` from
uniform has ``||p_avg||_2^2 >= (1 + epsilon**2)/k``.  The test rejects once
``Z`` reaches ``(1 + epsilon**2/3)/k``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import SampleBatch, SupportMismatchError, ValidationError

DEFAULT_ALPHA = 2600.0


class Decision(enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class UniformityParams:
    k: int
    epsilon: float
    alpha_const: float = DEFAULT_ALPHA

    def __post_init__(self):
        if int(self.k) < 1:
            raise ValidationError("k must be positive")
        if not 0 < self.epsilon <= 1:
            raise ValidationError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not self.alpha_const > 0:
            raise ValidationError("alpha_const must be positive")

    @property
    def threshold(self) -> float:
        return (1 + self.epsilon**2 / 3) / self.k


@dataclass(frozen=True)
class Verdict:
    """Outcome of one run of a tester.

    ``epsilon`` is the distance parameter the statistic was calibrated for
    (l1, except for the bare l2 test); ``extras`` holds tester-specific
    metadata.
    """

    statistic: float
    threshold: float
    decision: Decision
    under_sampled: bool
    T: int
    k: int
    c: int
    epsilon: float
    seed: int | None = None
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def rejected(self) -> bool:
        return self.decision is Decision.REJECT

    def to_dict(self) -> dict[str, Any]:
        out = {
            "statistic": float(self.statistic),
            "threshold": float(self.threshold),
            "decision": self.decision.value,
            "under_sampled": bool(self.under_sampled),
            "T": int(self.T),
            "k": int(self.k),
            "c": int(self.c),
            "epsilon": float(self.epsilon),
            "seed": self.seed,
        }
        out.update(self.extras)
        return out


def decide(statistic: float, threshold: float) -> Decision:
    # ties reject
    return Decision.REJECT if statistic >= threshold else Decision.ACCEPT


def collision_counts(first: np.ndarray, second: np.ndarray) -> tuple[int, int]:
    """``(sum_t Y_t, sum_{s<t} Y_st)`` for draw columns ``first``/``second``.

    Cross-source pairs are counted from the first-draw histogram:
    ``sum_{s<t} 1[X_s(1) = X_t(1)] = sum_i C(n_i, 2)``.
    """
    within = int(np.count_nonzero(first == second))
    hist = np.bincount(first).astype(np.int64)
    cross = int((hist * (hist - 1) // 2).sum())
    return within, cross


def collision_statistic_z(batch: SampleBatch) -> float:
    if batch.c != 2:
        raise ValidationError(f"the collision statistic needs c = 2 draws per source, got {batch.c}")
    T = batch.T
    if T < 2:
        raise ValidationError("the collision statistic needs at least two sources")
    within, cross = collision_counts(batch.draws[:, 0], batch.draws[:, 1])
    return (within + 2 * cross) / (T * T)


def required_T(params: UniformityParams) -> int:
    """``ceil(alpha * (sqrt(k)/eps^2 + 1/eps^4))``."""
    eps = params.epsilon
    value = params.alpha_const * (math.sqrt(params.k) / eps**2 + 1 / eps**4)
    nearest = round(value)
    if abs(value - nearest) <= 1e-9 * max(1.0, value):
        return int(nearest)
    return int(math.ceil(value))


def test_uniformity(batch: SampleBatch, params: UniformityParams, seed: int | None = None) -> Verdict:
    """Decide ``p_avg = u_k`` versus ``||p_avg - u_k||_1 >= epsilon``.

    Runs below ``required_T`` still return a verdict, flagged
    ``under_sampled``.
    """
    if batch.k != params.k:
        raise SupportMismatchError(f"batch has k={batch.k} but params have k={params.k}")
    statistic = collision_statistic_z(batch)
    threshold = params.threshold
    return Verdict(
        statistic=statistic,
        threshold=threshold,
        decision=decide(statistic, threshold),
        under_sampled=batch.T < required_T(params),
        T=batch.T,
        k=params.k,
        c=batch.c,
        epsilon=params.epsilon,
        seed=seed,
    )


test_uniformity.__test__ = False
