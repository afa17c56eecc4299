"""Instance generators: far-from-uniform targets, the c = 1 indistinguishable
pair, and the tiled block sequences that defeat label-blind testers."""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    DistributionSequence,
    ProbabilityVector,
    RngLike,
    SampleBatch,
    ValidationError,
    as_generator,
)

# ---------------------------------------------------------------------------
# Simple targets
# ---------------------------------------------------------------------------


def gen_paired_bias(k: int, epsilon) -> ProbabilityVector:
    """Masses alternate ``(1+eps)/k, (1-eps)/k``; l1 distance to uniform is ``eps``.

    A ``Fraction`` or integer ``epsilon`` gives an exact vector.
    """
    if k < 2 or k % 2:
        raise ValidationError(f"paired-bias needs an even k, got {k}")
    if not 0 <= epsilon <= 1:
        raise ValidationError(f"epsilon must lie in [0, 1], got {epsilon}")
    if isinstance(epsilon, (int, Fraction)):
        eps = Fraction(epsilon)
        hi, lo = (1 + eps) / k, (1 - eps) / k
        return ProbabilityVector.from_fractions([hi, lo] * (k // 2))
    mass = np.empty(k)
    mass[0::2] = (1 + epsilon) / k
    mass[1::2] = (1 - epsilon) / k
    return ProbabilityVector(mass)


def split_heterogeneous(p: ProbabilityVector) -> tuple[ProbabilityVector, ProbabilityVector]:
    """Two distributions ``A != B`` (unless ``p`` is a point mass) with ``(A+B)/2 = p``.

    ``A`` doubles the mass on a greedy set ``H`` with ``p(H) <= 1/2`` and
    shrinks the rest proportionally; ``B`` is the mirror image.
    """
    exact = p.is_exact
    values = list(p.exact) if exact else [float(v) for v in p.mass]
    order = sorted(range(p.k), key=lambda i: values[i], reverse=True)
    half = Fraction(1, 2) if exact else 0.5
    heavy, total = set(), 0 * half
    for i in order:
        if values[i] and total + values[i] <= half:
            heavy.add(i)
            total += values[i]
    rest = 1 - total
    if not heavy or not rest:
        return p, p
    shrink = total / rest
    a = [v * 2 if i in heavy else v * (1 - shrink) for i, v in enumerate(values)]
    b = [0 * v if i in heavy else v * (1 + shrink) for i, v in enumerate(values)]
    if exact:
        return ProbabilityVector.from_fractions(a), ProbabilityVector.from_fractions(b)
    return ProbabilityVector(np.array(a)), ProbabilityVector(np.array(b))


def random_exact_distribution(k: int, rng: RngLike, denominator: int = 60, zeros: bool = False) -> ProbabilityVector:
    """Random rational distribution with small denominators."""
    gen = as_generator(rng)
    low = 0 if zeros else 1
    while True:
        weights = gen.integers(low, denominator, size=k)
        if weights.sum() > 0:
            break
    total = int(weights.sum())
    return ProbabilityVector.from_fractions(Fraction(int(w), total) for w in weights)


def sequence_with_average(q: ProbabilityVector, T: int, rng: RngLike) -> DistributionSequence:
    """Random exact heterogeneous sequence of length ``T`` averaging to ``q``.

    ``p_t = q + lam (D_t - D_bar)`` for random rational directions ``D_t``
    supported on ``supp(q)``; ``lam`` is the largest step keeping every
    ``p_t`` non-negative, scaled by a random factor.
    """
    if not q.is_exact:
        raise ValidationError("sequence_with_average needs an exact reference")
    gen = as_generator(rng)
    support = [i for i, v in enumerate(q.exact) if v]
    dirs = []
    for _ in range(T):
        d = [Fraction(0)] * q.k
        w = gen.integers(0, 10, size=len(support))
        if w.sum() == 0:
            w[0] = 1
        for i, wi in zip(support, w):
            d[i] = Fraction(int(wi), int(w.sum()))
        dirs.append(d)
    mean = [sum(col) / T for col in zip(*dirs)]
    lam = None
    for d in dirs:
        for i in support:
            drop = mean[i] - d[i]
            if drop > 0:
                bound = q.exact[i] / drop
                lam = bound if lam is None else min(lam, bound)
    if lam is None:
        return DistributionSequence.repeat(q, T)
    lam *= Fraction(int(gen.integers(1, 11)), 10)
    rows = [
        ProbabilityVector.from_fractions(q.exact[i] + lam * (d[i] - mean[i]) for i in range(q.k))
        for d in dirs
    ]
    return DistributionSequence(rows)


# ---------------------------------------------------------------------------
# The c = 1 pair
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class C1Instance:
    """A random-sequence generator from the c = 1 indistinguishable pair.

    ``kind`` is ``"D1"`` (sources uniform on disjoint blocks of size
    ``r_prime``) or ``"D2"`` (point masses on the block heads).  The first
    ``T_prime`` sources use the blocks; the rest are uniform on ``[k]``.
    Blocks come from a fresh uniform permutation on every draw.
    """

    kind: str
    k: int
    T: int
    r_prime: int
    T_prime: int

    def permutation(self, gen: np.random.Generator) -> np.ndarray:
        return gen.permutation(self.k).astype(np.int64) + 1

    def _block_rows(self, perm: np.ndarray) -> list[ProbabilityVector]:
        rows = []
        for i in range(self.T_prime):
            block = perm[i * self.r_prime:(i + 1) * self.r_prime]
            if self.kind == "D1":
                vals = [Fraction(0)] * self.k
                for e in block:
                    vals[e - 1] = Fraction(1, self.r_prime)
                rows.append(ProbabilityVector.from_fractions(vals))
            else:
                rows.append(ProbabilityVector.point_mass(self.k, int(block[0])))
        return rows

    def draw_sequence(self, rng: RngLike) -> DistributionSequence:
        """One sequence from the generator (dense; meant for small ``k``)."""
        if self.T_prime * self.k > 5_000_000:
            raise ValidationError("instance too large to materialize; use sample()")
        perm = self.permutation(as_generator(rng))
        rows = self._block_rows(perm)
        if self.T > self.T_prime:
            rows.append(ProbabilityVector.uniform(self.k))
        assignment = np.minimum(np.arange(self.T), self.T_prime)
        return DistributionSequence(rows, assignment)

    def _draw(self, perm: np.ndarray, source: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        """One draw for each entry of ``source`` (0-based source indices)."""
        out = gen.integers(1, self.k + 1, size=source.size, dtype=np.int64)
        blocked = source < self.T_prime
        start = source[blocked] * self.r_prime
        if self.kind == "D1":
            start = start + gen.integers(0, self.r_prime, size=start.size)
        out[blocked] = perm[start]
        return out

    def sample(self, c: int, rng: RngLike) -> SampleBatch:
        """Draw a sequence, then ``c`` labeled draws from each source."""
        gen = as_generator(rng)
        perm = self.permutation(gen)
        source = np.repeat(np.arange(self.T), c)
        return SampleBatch(self._draw(perm, source, gen).reshape(self.T, c), self.k)

    def sample_poisson(self, c_mean: float, rng: RngLike) -> np.ndarray:
        """Draw a sequence, then ``Poi(c_mean)`` draws per source, pooled and sorted."""
        if not c_mean > 0:
            raise ValidationError("c_mean must be positive")
        gen = as_generator(rng)
        perm = self.permutation(gen)
        counts = gen.poisson(c_mean, size=self.T)
        source = np.repeat(np.arange(self.T), counts)
        return np.sort(self._draw(perm, source, gen))

    @property
    def avg_tv_to_uniform(self) -> Fraction:
        """``d_TV(avg, u_k)``: zero for D1, ``(k - T')T'/(T k)`` for D2."""
        if self.kind == "D1":
            return Fraction(0)
        return Fraction((self.k - self.T_prime) * self.T_prime, self.T * self.k)


def gen_c1_pair(k: int, T: int) -> tuple[C1Instance, C1Instance]:
    """Generators ``(D1, D2)``; ``k`` is rounded up to a power of two."""
    if k < 2 or T < 1:
        raise ValidationError("need k >= 2 and T >= 1")
    k = 1 << (int(k) - 1).bit_length()
    if T > k // 2:
        raise ValidationError(f"need T <= k/2 = {k // 2}, got T={T}")
    r = Fraction(k, T)
    r_prime = 1 << math.ceil(math.log2(r)) if r > 1 else 1
    while r_prime < r:  # guard against float log rounding
        r_prime <<= 1
    while r_prime // 2 >= r:
        r_prime //= 2
    T_prime = k // r_prime
    return C1Instance("D1", k, T, r_prime, T_prime), C1Instance("D2", k, T, r_prime, T_prime)


def c1_outcome_law(inst: C1Instance) -> dict[tuple[int, ...], Fraction]:
    """Exact law of one c = 1 draw per source, averaged over all permutations.

    Exhaustive, so only for tiny ``k`` (``k! * r'^T'`` terms).
    """
    if inst.k > 8:
        raise ValidationError("exhaustive enumeration limited to k <= 8")
    law: Counter = Counter()
    tail = inst.T - inst.T_prime
    weight = Fraction(1, math.factorial(inst.k) * inst.k**tail)
    tails = list(itertools.product(range(1, inst.k + 1), repeat=tail))
    for perm in itertools.permutations(range(1, inst.k + 1)):
        blocks = [perm[i * inst.r_prime:(i + 1) * inst.r_prime] for i in range(inst.T_prime)]
        if inst.kind == "D1":
            choices = blocks
            w = weight / inst.r_prime**inst.T_prime
        else:
            choices = [b[:1] for b in blocks]
            w = weight
        for head in itertools.product(*choices):
            for rest in tails:
                law[head + rest] += w
    return dict(law)


# ---------------------------------------------------------------------------
# Tiled block construction
# ---------------------------------------------------------------------------

EPSILON_B = 1 / math.sqrt(2)
BETA = Fraction(7, 8)
ALPHA_MIX = Fraction(3, 4)
BLOCK_KINDS = ("p", "q", "r", "s")


@dataclass(frozen=True)
class BlockParams:
    m: int = 64
    n_blocks: int = 64

    def __post_init__(self):
        if self.m < 16 or self.m % 16:
            raise ValidationError(f"m must be a positive multiple of 16, got {self.m}")
        if self.n_blocks < 4 or self.n_blocks % 4:
            raise ValidationError(f"n_blocks must be a positive multiple of 4, got {self.n_blocks}")

    @property
    def k(self) -> int:
        return self.m * self.n_blocks

    @property
    def T(self) -> int:
        return 2 * self.n_blocks

    @property
    def first_kind_blocks(self) -> int:
        """Blocks tiled with (p, q); the remaining ones use (r, s)."""
        return int(ALPHA_MIX * self.n_blocks)


def block_distributions(kind: str, m: int) -> tuple[list, list]:
    """The two distributions of one block over ``[m]``.

    ``p`` and ``r`` come back as ``Fraction`` lists; ``q`` and ``s`` involve
    ``1/sqrt(2)`` and come back as floats.
    """
    if m % 16:
        raise ValidationError("m must be a multiple of 16")
    half, head = m // 2, (m // 2) * 7 // 8
    if kind == "p":
        u = [Fraction(1, m)] * m
        return u, list(u)
    if kind == "r":
        two = Fraction(2, m)
        return [two] * half + [Fraction(0)] * half, [Fraction(0)] * half + [two] * half
    if kind in ("q", "s"):
        hi, lo = (1 + EPSILON_B) / m, (1 - EPSILON_B) / m
        first = [hi] * half + [lo] * half
        second = [lo] * head + [hi] * (half - head) + [hi] * head + [lo] * (half - head)
        return first, second
    raise ValidationError(f"unknown block kind {kind!r}; expected one of {BLOCK_KINDS}")


def _embed(values: list, offset: int, k: int, exact: bool) -> ProbabilityVector:
    if exact:
        full = [Fraction(0)] * k
        full[offset:offset + len(values)] = values
        return ProbabilityVector.from_fractions(full)
    full = np.zeros(k)
    full[offset:offset + len(values)] = values
    return ProbabilityVector(full)


def gen_pooled_lb_pair(params: BlockParams) -> tuple[DistributionSequence, DistributionSequence]:
    """Sequences ``a`` (uniform average) and ``b`` (far average).

    Block ``j`` occupies elements ``j*m + 1 .. (j+1)*m`` and hosts sources
    ``2j+1, 2j+2``.  The first three quarters of the blocks hold ``p`` (in
    ``a``) or ``q`` (in ``b``); the rest hold ``r`` or ``s``.
    """
    m, n, k = params.m, params.n_blocks, params.k
    out = []
    for kinds in (("p", "r"), ("q", "s")):
        rows = []
        for j in range(n):
            kind = kinds[0] if j < params.first_kind_blocks else kinds[1]
            exact = kind in ("p", "r")
            for dist in block_distributions(kind, m):
                rows.append(_embed(dist, j * m, k, exact))
        out.append(DistributionSequence(rows))
    return out[0], out[1]


def expected_block_collisions(kind: str, m: int) -> tuple[Fraction, Fraction, Fraction]:
    """Closed-form ``(E c2, E c3, E c4)`` for two draws from each of a block's two sources."""
    if kind in ("q", "s"):
        return Fraction(11, 2 * m), Fraction(3, m**2), Fraction(3, 4 * m**3)
    if kind == "p":
        return Fraction(6, m), Fraction(4, m**2), Fraction(1, m**3)
    if kind == "r":
        return Fraction(4, m), Fraction(0), Fraction(0)
    raise ValidationError(f"unknown block kind {kind!r}; expected one of {BLOCK_KINDS}")


# samples 0, 1 come from the first source of a block and 2, 3 from the second
_SOURCE_OF = (0, 0, 1, 1)
_SUBSETS = {j: list(itertools.combinations(range(4), j)) for j in (2, 3, 4)}


def _all_equal_prob(indices, dists) -> float:
    prod = None
    for a in indices:
        v = dists[_SOURCE_OF[a]]
        prod = v if prod is None else prod * v
    return prod.sum()


def block_collision_moments(x1, x2) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean and covariance of ``(c2, c3, c4)`` for one block.

    ``c_j`` counts ``j``-subsets of the four samples that are all equal.
    For subsets ``A``, ``B``: ``E[Y_A Y_B]`` is the all-equal probability of
    ``A | B`` when they overlap, else the product of the two expectations.
    """
    dists = (np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    e = {s: _all_equal_prob(s, dists) for j in (2, 3, 4) for s in _SUBSETS[j]}
    mean = np.array([sum(e[s] for s in _SUBSETS[j]) for j in (2, 3, 4)])
    second = np.zeros((3, 3))
    for a, ja in enumerate((2, 3, 4)):
        for b, jb in enumerate((2, 3, 4)):
            total = 0.0
            for A in _SUBSETS[ja]:
                for B in _SUBSETS[jb]:
                    if set(A) & set(B):
                        total += _all_equal_prob(sorted(set(A) | set(B)), dists)
                    else:
                        total += e[A] * e[B]
            second[a, b] = total
    return mean, second - np.outer(mean, mean)


def leading_block_covariance(mean) -> np.ndarray:
    """Covariance with every product of expectations dropped.

    Only the overlapping-subset terms survive, which makes this a linear
    function of the mean vector.
    """
    c2, c3, c4 = (float(v) for v in mean)
    return np.array([
        [c2, 3 * c3, 6 * c4],
        [3 * c3, c3, 4 * c4],
        [6 * c4, 4 * c4, c4],
    ])


def sequence_collision_moments(params: BlockParams, member: str) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean and covariance of the summed collision vector of ``a`` or ``b``."""
    kinds = {"a": ("p", "r"), "b": ("q", "s")}[member]
    n_first = params.first_kind_blocks
    mean = np.zeros(3)
    cov = np.zeros((3, 3))
    for kind, count in ((kinds[0], n_first), (kinds[1], params.n_blocks - n_first)):
        x1, x2 = block_distributions(kind, params.m)
        mu, sigma = block_collision_moments([float(v) for v in x1], [float(v) for v in x2])
        mean += count * mu
        cov += count * sigma
    return mean, cov


__all__ = [
    "ALPHA_MIX",
    "BETA",
    "BlockParams",
    "C1Instance",
    "EPSILON_B",
    "block_collision_moments",
    "block_distributions",
    "c1_outcome_law",
    "expected_block_collisions",
    "gen_c1_pair",
    "gen_paired_bias",
    "gen_pooled_lb_pair",
    "leading_block_covariance",
    "random_exact_distribution",
    "sequence_collision_moments",
    "sequence_with_average",
    "split_heterogeneous",
]
