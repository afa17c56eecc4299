"""Identity testing by reduction to uniformity over ``[4k]``.

Given a reference ``q`` over ``[k]`` the reduction composes three maps:

* smoothing: ``p -> p/2 + u_k/2``;
* rounding: element ``i`` keeps mass with probability
  ``floor(k' r(i)) / (k' r(i))`` (``r`` the smoothed reference,
  ``k' = 4k``), the rest goes to an extra element ``k+1``;
* splitting: element ``j`` of ``[k+1]`` is spread evenly over a block
  ``S_j`` of ``[4k]`` of size ``k' s(j)``.

Any sequence averaging to ``q`` is mapped to a sequence averaging to
``Unif(4k)``, and total variation between averages shrinks by at most a
factor four.  Each map has a sampling counterpart, so samples of ``p_t``
become samples of the mapped ``p_t`` without knowing ``p_t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    ProbabilityVector,
    RngLike,
    SampleBatch,
    SupportMismatchError,
    ValidationError,
    as_generator,
)
from ._kernels import reduction_map
from .uniformity import DEFAULT_ALPHA, UniformityParams, Verdict, test_uniformity

FLOOR_GUARD = 1e-9


class FloorInstabilityError(ValidationError):
    """A rounding boundary is too close to call in floating point."""


@dataclass(frozen=True, eq=False)
class ReductionMap:
    k: int
    k_prime: int
    r: ProbabilityVector
    s: ProbabilityVector
    ratios: np.ndarray
    sizes: np.ndarray
    starts: np.ndarray
    exact_ratios: tuple[Fraction, ...] | None = None

    @property
    def exact(self) -> bool:
        return self.exact_ratios is not None

    def block(self, j: int) -> range:
        """The 1-based elements of ``S_j`` for ``j`` in ``1..k+1``."""
        start = int(self.starts[j - 1])
        return range(start + 1, start + int(self.sizes[j - 1]) + 1)


def build_reduction(q: ProbabilityVector, exact: bool | None = None) -> ReductionMap:
    """Reduction map for reference ``q``.

    The exact path (default when ``q`` carries rationals) computes every
    floor without rounding error.  The float path refuses references for
    which some ``k' r(i)`` sits just below an integer, since an off-by-one
    floor there silently breaks the uniform image of ``q``.
    """
    k = q.k
    k_prime = 4 * k
    if exact is None:
        exact = q.is_exact
    if exact and not q.is_exact:
        raise ValidationError("the exact reduction needs a reference built from rationals")

    if exact:
        scaled = [2 * k * v + 2 for v in q.exact]  # k' r(i)
        floors = [math.floor(x) for x in scaled]
        ratio_q = tuple(Fraction(f) / x for f, x in zip(floors, scaled))
        r = ProbabilityVector.from_fractions(x / k_prime for x in scaled)
        ratios = np.array([float(v) for v in ratio_q])
    else:
        scaled_f = 2.0 * k * q.mass + 2.0
        floors_f = np.floor(scaled_f)
        gap = np.ceil(scaled_f) - scaled_f
        unstable = (gap > 0) & (gap < FLOOR_GUARD)
        if np.any(unstable):
            i = int(np.flatnonzero(unstable)[0]) + 1
            raise FloorInstabilityError(
                f"k' r({i}) = {scaled_f[i - 1]!r} is within {FLOOR_GUARD} of an integer; "
                "use the exact-rational path"
            )
        floors = [int(f) for f in floors_f]
        ratio_q = None
        r = ProbabilityVector(scaled_f / k_prime)
        ratios = floors_f / scaled_f

    sizes = np.array(floors + [k_prime - sum(floors)], dtype=np.int64)
    if sizes[-1] < 0 or min(floors) < 2:
        raise ValidationError("reduction invariants violated")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    s = ProbabilityVector.from_fractions(Fraction(int(n), k_prime) for n in sizes)
    for arr in (ratios, sizes, starts):
        arr.setflags(write=False)
    return ReductionMap(k, k_prime, r, s, ratios, sizes, starts, ratio_q)


def map_distribution(rmap: ReductionMap, p: ProbabilityVector) -> ProbabilityVector:
    """Image of ``p`` under the composed map, a distribution over ``[4k]``."""
    if p.k != rmap.k:
        raise SupportMismatchError(f"map expects k={rmap.k}, got k={p.k}")
    k = rmap.k
    if rmap.exact and p.is_exact:
        half_u = Fraction(1, 2 * k)
        smoothed = [v / 2 + half_u for v in p.exact]
        kept = [a * b for a, b in zip(rmap.exact_ratios, smoothed)]
        kept.append(sum((1 - a) * b for a, b in zip(rmap.exact_ratios, smoothed)))
        out: list[Fraction] = []
        for y, n in zip(kept, rmap.sizes):
            n = int(n)
            if n:
                out.extend([y / n] * n)
            elif y:
                raise ValidationError("mass assigned to an empty block")
        return ProbabilityVector.from_fractions(out)
    smoothed = p.mass / 2 + 1 / (2 * k)
    kept = np.append(rmap.ratios * smoothed, np.sum((1 - rmap.ratios) * smoothed))
    nonempty = rmap.sizes > 0
    out = np.repeat(kept[nonempty] / rmap.sizes[nonempty], rmap.sizes[nonempty])
    return ProbabilityVector(out)


def map_samples(rmap: ReductionMap, xs, rng: RngLike) -> np.ndarray:
    """Vectorized sampling map: each ``x`` in ``[k]`` goes to ``[4k]``.

    For ``X ~ p`` the output is distributed as ``map_distribution(rmap, p)``.
    """
    gen = as_generator(rng)
    xs = np.asarray(xs)
    shape = xs.shape
    flat = xs.reshape(-1).astype(np.int32)
    if flat.size and (flat.min() < 1 or flat.max() > rmap.k):
        raise ValidationError(f"samples must lie in [1, {rmap.k}]")
    n = flat.size
    # stage draws: smoothing slot in [0, 2k) (below k means "replace"),
    # keep-or-divert coin, position inside the block
    smooth = gen.integers(0, 2 * rmap.k, size=n, dtype=np.int32)
    keep = gen.random(n)
    place = gen.random(n)
    out = np.empty(n, dtype=np.int32)
    reduction_map(flat, smooth, keep, place, rmap.k, rmap.ratios, rmap.starts, rmap.sizes, out)
    return out.reshape(shape)


def map_sample(rmap: ReductionMap, x: int, rng: RngLike) -> int:
    """Map a single sample; the three stages applied one after another."""
    if not 1 <= x <= rmap.k:
        raise ValidationError(f"sample {x} outside [1, {rmap.k}]")
    gen = as_generator(rng)
    k = rmap.k
    if gen.random() < 0.5:
        x = int(gen.integers(1, k + 1))
    j = x if gen.random() < rmap.ratios[x - 1] else k + 1
    return int(rmap.starts[j - 1] + gen.integers(0, rmap.sizes[j - 1]) + 1)


def test_identity(
    batch: SampleBatch,
    q: ProbabilityVector | ReductionMap,
    epsilon: float,
    rng: RngLike,
    alpha_const: float = DEFAULT_ALPHA,
    seed: int | None = None,
) -> Verdict:
    """Decide ``p_avg = q`` versus ``||p_avg - q||_1 >= epsilon``.

    Samples are pushed through the reduction and tested for uniformity over
    ``[4k]`` at ``epsilon / 4``.  The verdict reports the mapped support and
    distance; the original ones are kept in ``extras``.
    """
    rmap = q if isinstance(q, ReductionMap) else build_reduction(q)
    if batch.k != rmap.k:
        raise SupportMismatchError(f"batch has k={batch.k}, reference has k={rmap.k}")
    if batch.c != 2:
        raise ValidationError(f"identity testing needs c = 2 draws per source, got {batch.c}")
    mapped = SampleBatch(map_samples(rmap, batch.draws, rng), rmap.k_prime)
    inner = UniformityParams(rmap.k_prime, epsilon / 4, alpha_const)
    verdict = test_uniformity(mapped, inner, seed=seed)
    verdict.extras.update({"reference_k": rmap.k, "outer_epsilon": float(epsilon)})
    return verdict


test_identity.__test__ = False
