"""Distributions, labeled sample batches, distances and seeded sampling.

Support elements are the 1-based integers ``1..k``.  Internally a
probability vector is a length-``k`` float64 array whose entry ``i - 1``
holds the mass of element ``i``; an optional tuple of ``Fraction`` values
carries the same vector exactly when it was built from rationals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

from ._kernels import alias_pick

SIMPLEX_TOL = 1e-9
MAX_SEED = 2**64 - 1


class NiidError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(NiidError, ValueError):
    """An input violates a documented precondition."""


class SupportMismatchError(ValidationError):
    """Two objects that must share a support size do not."""


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngSeed:
    """A root seed plus a path of integer stream labels.

    ``RngSeed(s, (trial, source))`` always yields the same Philox stream, and
    streams with different label paths are statistically independent.  The
    labels are folded into the seed by ``numpy.random.SeedSequence`` (its
    ``spawn_key`` hashing), so children never need to be spawned in order.
    """

    seed: int
    labels: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) <= MAX_SEED:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if any(int(label) < 0 for label in self.labels):
            raise ValidationError("stream labels must be non-negative integers")

    def child(self, *labels: int) -> "RngSeed":
        return RngSeed(self.seed, self.labels + tuple(int(x) for x in labels))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.labels)
        return np.random.Generator(np.random.Philox(ss))


RngLike = Union[RngSeed, np.random.Generator, int]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSeed):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngSeed(int(rng)).generator()
    raise TypeError(f"cannot build a random generator from {type(rng).__name__}")


# ---------------------------------------------------------------------------
# Probability vectors
# ---------------------------------------------------------------------------


def _check_simplex(total, negative: bool):
    if negative:
        raise ValidationError("probability masses must be non-negative")
    if abs(total - 1) > SIMPLEX_TOL:
        raise ValidationError(f"probability masses sum to {float(total)!r}, not 1")


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    """Non-negative masses over ``[k]`` summing to one.

    Inputs whose total is within ``SIMPLEX_TOL`` of one are renormalized;
    anything further off is rejected rather than silently repaired.
    """

    mass: np.ndarray
    exact: tuple[Fraction, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.exact is not None:
            values = tuple(Fraction(v) for v in self.exact)
            if not values:
                raise ValidationError("a probability vector needs k >= 1")
            total = sum(values)
            _check_simplex(total, any(v < 0 for v in values))
            if total != 1:
                values = tuple(v / total for v in values)
            object.__setattr__(self, "exact", values)
            mass = np.array([float(v) for v in values], dtype=np.float64)
        else:
            mass = np.array(self.mass, dtype=np.float64).reshape(-1)
            if mass.size == 0:
                raise ValidationError("a probability vector needs k >= 1")
            if not np.all(np.isfinite(mass)):
                raise ValidationError("probability masses must be finite")
            total = float(mass.sum())
            _check_simplex(total, bool(np.any(mass < 0)))
            if total != 1.0:
                mass = mass / total
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_fractions(cls, values: Iterable) -> "ProbabilityVector":
        return cls(np.empty(0), exact=tuple(Fraction(v) for v in values))

    @classmethod
    def uniform(cls, k: int) -> "ProbabilityVector":
        if k < 1:
            raise ValidationError("k must be positive")
        return cls.from_fractions([Fraction(1, k)] * k)

    @classmethod
    def point_mass(cls, k: int, element: int) -> "ProbabilityVector":
        if not 1 <= element <= k:
            raise ValidationError(f"element {element} outside [1, {k}]")
        values = [Fraction(0)] * k
        values[element - 1] = Fraction(1)
        return cls.from_fractions(values)

    @property
    def k(self) -> int:
        return int(self.mass.size)

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    def __len__(self) -> int:
        return self.k

    def __getitem__(self, element: int) -> float:
        """Mass of the 1-based support element ``element``."""
        if not 1 <= element <= self.k:
            raise IndexError(element)
        return float(self.mass[element - 1])

    def allclose(self, other: "ProbabilityVector", atol: float = 1e-12) -> bool:
        return self.k == other.k and bool(np.allclose(self.mass, other.mass, rtol=0, atol=atol))

    def relabel(self, perm: Sequence[int]) -> "ProbabilityVector":
        """Vector whose element ``perm[i]`` carries the mass of element ``i + 1``.

        ``perm`` is a permutation of ``1..k``.
        """
        perm = np.asarray(perm, dtype=np.int64) - 1
        if self.exact is not None:
            values = [Fraction(0)] * self.k
            for i, j in enumerate(perm):
                values[j] = self.exact[i]
            return ProbabilityVector.from_fractions(values)
        out = np.empty(self.k)
        out[perm] = self.mass
        return ProbabilityVector(out)

    @cached_property
    def _alias(self) -> tuple[np.ndarray, np.ndarray]:
        return alias_table(self.mass)

    def sample(self, size: int, rng: RngLike) -> np.ndarray:
        """``size`` i.i.d. draws (1-based, int32) via the alias method."""
        prob, alias = self._alias
        gen = as_generator(rng)
        slot = gen.integers(0, self.k, size=size, dtype=np.int32)
        coin = gen.random(size)
        out = np.empty(size, dtype=np.int32)
        alias_pick(slot, coin, prob, alias, out)
        return out


def alias_table(mass: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose's alias table for ``mass`` (already normalized).

    Returns ``(prob, alias)``: slot ``j`` yields ``j`` with probability
    ``prob[j]`` and ``alias[j]`` otherwise.
    """
    k = mass.size
    scaled = np.asarray(mass, dtype=np.float64) * k
    prob = np.ones(k)
    alias = np.arange(k, dtype=np.int32)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    # leftovers are 1 up to rounding
    for i in small + large:
        prob[i] = 1.0
    return prob, alias


def uniform(k: int) -> ProbabilityVector:
    return ProbabilityVector.uniform(k)


# ---------------------------------------------------------------------------
# Sequences of distributions
# ---------------------------------------------------------------------------


class DistributionSequence:
    """An ordered list ``p_1..p_T`` of distributions over a common ``[k]``.

    Stored as a palette of distinct distributions plus, for each source, the
    palette index it uses.  Long sequences built from a few distinct rows
    (the usual Monte Carlo case) therefore cost O(T) memory, not O(T k).
    """

    def __init__(self, dists: Sequence[ProbabilityVector], assignment=None):
        dists = tuple(dists)
        if not dists:
            raise ValidationError("a distribution sequence needs T >= 1")
        k = dists[0].k
        if any(d.k != k for d in dists):
            raise SupportMismatchError("all distributions in a sequence must share k")
        if assignment is None:
            assignment = np.arange(len(dists), dtype=np.int64)
        else:
            assignment = np.array(assignment, dtype=np.int64).reshape(-1)
            if assignment.size == 0:
                raise ValidationError("a distribution sequence needs T >= 1")
            if assignment.min() < 0 or assignment.max() >= len(dists):
                raise ValidationError("assignment refers to a missing palette entry")
        assignment.setflags(write=False)
        self._palette = dists
        self._assignment = assignment
        self._k = k

    @classmethod
    def from_rows(cls, rows) -> "DistributionSequence":
        return cls([r if isinstance(r, ProbabilityVector) else ProbabilityVector(r) for r in rows])

    @classmethod
    def repeat(cls, p: ProbabilityVector, T: int) -> "DistributionSequence":
        return cls([p], np.zeros(T, dtype=np.int64))

    @classmethod
    def cycle(cls, dists: Sequence[ProbabilityVector], T: int) -> "DistributionSequence":
        """Sources take ``dists`` in round-robin order."""
        return cls(dists, np.arange(T, dtype=np.int64) % len(dists))

    @property
    def k(self) -> int:
        return self._k

    @property
    def T(self) -> int:
        return int(self._assignment.size)

    @property
    def palette(self) -> tuple[ProbabilityVector, ...]:
        return self._palette

    @property
    def assignment(self) -> np.ndarray:
        return self._assignment

    @cached_property
    def palette_counts(self) -> np.ndarray:
        return np.bincount(self._assignment, minlength=len(self._palette))

    def __len__(self) -> int:
        return self.T

    def __getitem__(self, t: int) -> ProbabilityVector:
        return self._palette[int(self._assignment[t])]

    def __iter__(self):
        for g in self._assignment:
            yield self._palette[int(g)]

    def rows(self) -> np.ndarray:
        """Dense ``T x k`` matrix of the sequence."""
        if self.T * self.k > 50_000_000:
            raise ValidationError("sequence too large to materialize densely")
        table = np.stack([d.mass for d in self._palette])
        return table[self._assignment]

    @property
    def is_exact(self) -> bool:
        return all(d.is_exact for d in self._palette)

    def relabel(self, perm: Sequence[int]) -> "DistributionSequence":
        return DistributionSequence([d.relabel(perm) for d in self._palette], self._assignment)


# ---------------------------------------------------------------------------
# Labeled samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """``c`` draws from each of ``T`` sources; row ``t`` holds source ``t``'s draws."""

    draws: np.ndarray
    k: int

    def __post_init__(self):
        draws = np.array(self.draws, copy=True)
        if draws.ndim != 2 or draws.shape[0] < 1 or draws.shape[1] < 1:
            raise ValidationError("draws must be a non-empty T x c array")
        if not np.issubdtype(draws.dtype, np.integer):
            if not np.all(np.equal(np.mod(draws, 1), 0)):
                raise ValidationError("sample values must be integers")
        draws = draws.astype(np.int32 if self.k < 2**31 - 1 else np.int64)
        if int(self.k) < 1:
            raise ValidationError("k must be positive")
        if draws.min() < 1 or draws.max() > self.k:
            raise ValidationError(f"sample values must lie in [1, {self.k}]")
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "k", int(self.k))

    @classmethod
    def from_lists(cls, per_source: Sequence[Sequence[int]], k: int) -> "SampleBatch":
        lengths = {len(row) for row in per_source}
        if len(lengths) > 1:
            raise ValidationError("every source must contribute the same number of draws")
        return cls(np.array([list(row) for row in per_source]), k)

    @property
    def T(self) -> int:
        return int(self.draws.shape[0])

    @property
    def c(self) -> int:
        return int(self.draws.shape[1])

    def column(self, j: int) -> np.ndarray:
        """The ``j``-th draw (1-based) of every source."""
        if not 1 <= j <= self.c:
            raise ValidationError(f"draw index {j} outside [1, {self.c}]")
        return self.draws[:, j - 1]

    def pooled(self) -> np.ndarray:
        """All draws with source labels discarded, as a sorted array."""
        return np.sort(self.draws, axis=None)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def average(seq: DistributionSequence) -> ProbabilityVector:
    """Entrywise mean ``(1/T) sum_t p_t``; exact when every member is exact."""
    counts = seq.palette_counts
    T = seq.T
    if seq.is_exact:
        acc = [Fraction(0)] * seq.k
        for d, n in zip(seq.palette, counts):
            if n == 0:
                continue
            for i, v in enumerate(d.exact):
                if v:
                    acc[i] += n * v
        return ProbabilityVector.from_fractions(a / T for a in acc)
    table = np.stack([d.mass for d in seq.palette])
    return ProbabilityVector((counts / T) @ table)


def _same_support(a: ProbabilityVector, b: ProbabilityVector):
    if a.k != b.k:
        raise SupportMismatchError(f"support sizes differ: {a.k} vs {b.k}")


def l1_distance(a: ProbabilityVector, b: ProbabilityVector, exact: bool = False):
    _same_support(a, b)
    if exact:
        if not (a.is_exact and b.is_exact):
            raise ValidationError("exact distance needs exact inputs")
        return sum(abs(x - y) for x, y in zip(a.exact, b.exact))
    return float(np.abs(a.mass - b.mass).sum())


def tv_distance(a: ProbabilityVector, b: ProbabilityVector, exact: bool = False):
    """Total variation distance, half the l1 distance."""
    return l1_distance(a, b, exact=exact) / 2


def power_sum(p: ProbabilityVector, order: int) -> float:
    """``sum_i p(i)**order`` (so ``power_sum(p, 2) == ||p||_2^2``)."""
    return float(np.sum(p.mass**order))


def lp_norm(p: ProbabilityVector, order: int) -> float:
    if order not in (2, 3):
        raise ValidationError(f"unsupported norm order {order}; use 2 or 3")
    return power_sum(p, order) ** (1.0 / order)


def inner_product(*vectors: ProbabilityVector) -> float:
    """Generalized inner product ``sum_i prod_j v_j(i)``."""
    k = vectors[0].k
    if any(v.k != k for v in vectors):
        raise SupportMismatchError("inner product needs equal supports")
    prod = np.ones(k)
    for v in vectors:
        prod = prod * v.mass
    return float(prod.sum())


def draw_batch(seq: DistributionSequence, c: int, rng: RngLike) -> SampleBatch:
    """Draw ``c`` i.i.d. samples from each source of ``seq``.

    Sources sharing a palette entry are drawn together from one stream, in
    source order, so a fixed generator state reproduces the batch exactly.
    """
    if c < 1:
        raise ValidationError("c must be at least 1")
    gen = as_generator(rng)
    T = seq.T
    draws = np.empty((T, c), dtype=np.int32)
    if len(seq.palette) == 1:
        draws[:] = seq.palette[0].sample(T * c, gen).reshape(T, c)
        return SampleBatch(draws, seq.k)
    if len(seq.palette) <= 8:
        groups = [np.flatnonzero(seq.assignment == g) for g in range(len(seq.palette))]
    else:
        order = np.argsort(seq.assignment, kind="stable")
        bounds = np.concatenate([[0], np.cumsum(seq.palette_counts)])
        groups = [order[bounds[g]:bounds[g + 1]] for g in range(len(seq.palette))]
    for dist, sources in zip(seq.palette, groups):
        if sources.size:
            draws[sources] = dist.sample(sources.size * c, gen).reshape(sources.size, c)
    return SampleBatch(draws, seq.k)


def learn_average(batch: SampleBatch) -> ProbabilityVector:
    """Empirical frequency of the (single) draw of each source."""
    if batch.c != 1:
        raise ValidationError("learn_average needs c = 1; pass the first draws only")
    counts = np.bincount(batch.draws[:, 0], minlength=batch.k + 1)[1:]
    T = batch.T
    return ProbabilityVector.from_fractions(Fraction(int(n), T) for n in counts)


__all__ = [
    "DistributionSequence",
    "NiidError",
    "ProbabilityVector",
    "RngSeed",
    "SampleBatch",
    "SupportMismatchError",
    "ValidationError",
    "alias_table",
    "as_generator",
    "average",
    "draw_batch",
    "inner_product",
    "l1_distance",
    "learn_average",
    "lp_norm",
    "power_sum",
    "tv_distance",
    "uniform",
]
