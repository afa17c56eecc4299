"""Pooled (label-free) samples: Poissonized pooling, fingerprints, and the
linear map between collision counts and fingerprint entries."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DistributionSequence,
    ProbabilityVector,
    RngLike,
    SampleBatch,
    ValidationError,
    as_generator,
)
from .identity import ReductionMap, build_reduction, map_samples
from .uniformity import DEFAULT_ALPHA, UniformityParams, Verdict, test_uniformity

# n = M c and c = M^{-1} n for (c2, c3, c4) and (n2, n3, n4)
COLLISIONS_TO_FP = np.array([[1, -3, 6], [0, 1, -4], [0, 0, 1]], dtype=np.int64)
FP_TO_COLLISIONS = np.array([[1, 3, 6], [0, 1, 4], [0, 0, 1]], dtype=np.int64)


class NotRealizableError(ValidationError):
    """A collision vector whose fingerprint image has negative entries."""


@dataclass(frozen=True)
class FingerprintVector:
    """``counts[j]`` = number of elements seen exactly ``j`` times (``j >= 1``)."""

    counts: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {int(j): int(n) for j, n in self.counts.items() if n}
        if any(j < 1 or n < 0 for j, n in clean.items()):
            raise ValidationError("fingerprint multiplicities must be >= 1 and counts >= 0")
        object.__setattr__(self, "counts", dict(sorted(clean.items())))

    @property
    def size(self) -> int:
        """Total number of pooled samples."""
        return sum(j * n for j, n in self.counts.items())

    def __getitem__(self, j: int) -> int:
        return self.counts.get(j, 0)

    def to_json(self) -> str:
        return json.dumps({str(j): n for j, n in self.counts.items()})

    @classmethod
    def from_json(cls, text: str) -> "FingerprintVector":
        return cls({int(j): int(n) for j, n in json.loads(text).items()})


@dataclass(frozen=True)
class CollisionVector:
    c2: int
    c3: int
    c4: int

    def as_array(self) -> np.ndarray:
        return np.array([self.c2, self.c3, self.c4], dtype=np.int64)


def pool_poissonized(seq: DistributionSequence, c_mean: float, rng: RngLike) -> np.ndarray:
    """``Poi(c_mean)`` draws from each source, labels dropped, sorted."""
    if not c_mean > 0:
        raise ValidationError("c_mean must be positive")
    gen = as_generator(rng)
    counts = gen.poisson(c_mean, size=seq.T)
    per_palette = np.bincount(seq.assignment, weights=counts, minlength=len(seq.palette)).astype(np.int64)
    parts = [d.sample(int(n), gen) for d, n in zip(seq.palette, per_palette) if n]
    if not parts:
        return np.empty(0, dtype=np.int32)
    return np.sort(np.concatenate(parts))


def fingerprint(pooled) -> FingerprintVector:
    pooled = np.asarray(pooled, dtype=np.int64)
    if pooled.size == 0:
        return FingerprintVector({})
    if pooled.min() < 1:
        raise ValidationError("pooled samples must be positive integers")
    occ = np.bincount(pooled)
    fp = np.bincount(occ[occ > 0])
    return FingerprintVector({j: int(n) for j, n in enumerate(fp) if j and n})


def collision_vector(pooled) -> CollisionVector:
    """``c_j = sum_v C(n_v, j)`` from the occurrence counts ``n_v``."""
    pooled = np.asarray(pooled, dtype=np.int64)
    if pooled.size == 0:
        return CollisionVector(0, 0, 0)
    occ = np.bincount(pooled).astype(object)  # exact for large counts
    c2 = sum(n * (n - 1) // 2 for n in occ if n > 1)
    c3 = sum(n * (n - 1) * (n - 2) // 6 for n in occ if n > 2)
    c4 = sum(n * (n - 1) * (n - 2) * (n - 3) // 24 for n in occ if n > 3)
    return CollisionVector(int(c2), int(c3), int(c4))


def collision_vectors_rowwise(samples: np.ndarray, k: int) -> np.ndarray:
    """``(c2, c3, c4)`` for every row of a 2D array of values in ``[1, k]``."""
    samples = np.asarray(samples, dtype=np.int64)
    rows = samples.shape[0]
    flat = (samples - 1 + k * np.arange(rows)[:, None]).ravel()
    occ = np.bincount(flat, minlength=rows * k).reshape(rows, k)
    out = np.empty((rows, 3), dtype=np.int64)
    out[:, 0] = (occ * (occ - 1) // 2).sum(axis=1)
    out[:, 1] = (occ * (occ - 1) * (occ - 2) // 6).sum(axis=1)
    out[:, 2] = (occ * (occ - 1) * (occ - 2) * (occ - 3) // 24).sum(axis=1)
    return out


def collisions_to_fingerprint(cv: CollisionVector, strict: bool = False) -> tuple[int, int, int]:
    """``(n2, n3, n4)``; with ``strict`` a negative entry raises ``NotRealizableError``."""
    n2, n3, n4 = (int(x) for x in COLLISIONS_TO_FP @ cv.as_array())
    if strict and min(n2, n3, n4) < 0:
        raise NotRealizableError(f"{cv} is not the collision vector of any multiset")
    return n2, n3, n4


def fingerprint_to_collisions(n2: int, n3: int, n4: int) -> CollisionVector:
    c2, c3, c4 = (int(x) for x in FP_TO_COLLISIONS @ np.array([n2, n3, n4], dtype=np.int64))
    return CollisionVector(c2, c3, c4)


def is_realizable(cv: CollisionVector) -> bool:
    return min(collisions_to_fingerprint(cv)) >= 0


def test_identity_poissonized(
    pooled,
    q: ProbabilityVector | ReductionMap,
    epsilon: float,
    rng: RngLike,
    alpha_const: float = DEFAULT_ALPHA,
    seed: int | None = None,
) -> Verdict:
    """Identity test from a pooled Poissonized multiset.

    Pooled samples are i.i.d. from ``p_avg`` given their number, so after a
    seeded shuffle consecutive pairs act as two-draw pseudo-sources for the
    uniformity test over ``[4k]`` at ``epsilon / 4``.  An odd last sample is
    discarded and flagged.
    """
    pooled = np.asarray(pooled)
    if pooled.ndim != 1:
        raise ValidationError("pooled samples must be a flat array")
    if pooled.size < 4:
        raise ValidationError(f"need at least 4 pooled samples, got {pooled.size}")
    rmap = q if isinstance(q, ReductionMap) else build_reduction(q)
    gen = as_generator(rng)
    shuffled = gen.permutation(pooled)
    discarded = int(shuffled.size % 2)
    if discarded:
        shuffled = shuffled[:-1]
    mapped = map_samples(rmap, shuffled, gen).reshape(-1, 2)
    inner = UniformityParams(rmap.k_prime, epsilon / 4, alpha_const)
    verdict = test_uniformity(SampleBatch(mapped, rmap.k_prime), inner, seed=seed)
    verdict.extras.update({
        "reference_k": rmap.k,
        "outer_epsilon": float(epsilon),
        "pooled_size": int(pooled.size),
        "discarded_odd_sample": bool(discarded),
    })
    return verdict


test_identity_poissonized.__test__ = False
