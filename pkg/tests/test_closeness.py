import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from niid.closeness import (
    ClosenessParams,
    heavy_distance,
    heavy_light_split,
    l2_statistic_f,
    l2_test,
    light_restrict,
    light_restricted_sample,
    ordered_cross_collisions,
    test_closeness_l1 as run_closeness,
)
from niid.core import DistributionSequence, ProbabilityVector, RngSeed, SampleBatch, ValidationError, draw_batch, uniform


def stats_pairwise(dp, dq):
    """O(T^2) oracle for (Z, Z', Q, F) on draws 2 and 3."""
    T = len(dp)

    def z(d):
        total = sum(int(row[1] == row[2]) for row in d)
        for s, t in itertools.combinations(range(T), 2):
            total += 2 * int(d[t][1] == d[s][2])
        return total / T**2

    Q = sum(int(dp[s][1] == dq[t][1]) for s in range(T) for t in range(T)) / T**2
    Z, Zp = z(dp), z(dq)
    return Z, Zp, Q, Z + Zp - 2 * Q


def batch(rows, k):
    return SampleBatch.from_lists(rows, k)


class TestParams:
    def test_derived_values(self):
        p = ClosenessParams(64, 0.6)
        assert p.b == pytest.approx((0.6 / 64) ** (2 / 3))
        assert p.heavy_reject == pytest.approx(0.1)
        assert p.l2_eps == pytest.approx(0.6 / 80)
        assert p.required_T == math.ceil(1000 * 64 ** (2 / 3) / 0.6 ** (8 / 3))

    def test_epsilon_lower_bound(self):
        with pytest.raises(ValidationError):
            ClosenessParams(1000, 0.1)  # k^(-1/3) = 0.1
        ClosenessParams(1000, 0.11)

    def test_epsilon_range(self):
        with pytest.raises(ValidationError):
            ClosenessParams(64, 2.5)


class TestL2Statistics:
    def test_identical_point_masses(self):
        b = SampleBatch(np.full((6, 3), 2), 4)
        s = l2_statistic_f(b, b)
        assert (s.Z, s.Z_prime, s.Q, s.F) == (1.0, 1.0, 1.0, 0.0)

    def test_disjoint_point_masses(self):
        s = l2_statistic_f(SampleBatch(np.full((6, 3), 1), 4), SampleBatch(np.full((6, 3), 3), 4))
        assert (s.Z, s.Z_prime, s.Q, s.F) == (1.0, 1.0, 0.0, 2.0)

    def test_matches_pairwise_oracle(self, rng):
        for _ in range(30):
            T = int(rng.integers(2, 25))
            k = int(rng.integers(1, 6))
            dp = rng.integers(1, k + 1, size=(T, 3))
            dq = rng.integers(1, k + 1, size=(T, 3))
            got = l2_statistic_f(SampleBatch(dp, k), SampleBatch(dq, k))
            np.testing.assert_allclose(got, stats_pairwise(dp.tolist(), dq.tolist()), atol=1e-12)

    def test_cross_collisions_brute_force(self, rng):
        for _ in range(30):
            T = int(rng.integers(1, 40))
            a = rng.integers(1, 5, size=T)
            b = rng.integers(1, 5, size=T)
            brute = sum(int(a[t] == b[s]) for s in range(T) for t in range(s + 1, T))
            assert ordered_cross_collisions(a, b) == brute

    def test_first_draw_ignored(self, rng):
        dp = rng.integers(1, 5, size=(10, 3))
        dq = rng.integers(1, 5, size=(10, 3))
        base = l2_statistic_f(SampleBatch(dp, 4), SampleBatch(dq, 4))
        dp2 = dp.copy()
        dp2[:, 0] = rng.integers(1, 5, size=10)
        assert l2_statistic_f(SampleBatch(dp2, 4), SampleBatch(dq, 4)) == base

    def test_needs_three_draws(self):
        with pytest.raises(ValidationError):
            l2_statistic_f(SampleBatch(np.ones((3, 2), int), 2), SampleBatch(np.ones((3, 2), int), 2))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            l2_statistic_f(SampleBatch(np.ones((3, 3), int), 2), SampleBatch(np.ones((4, 3), int), 2))

    def test_expected_q(self):
        p = ProbabilityVector([0.5, 0.3, 0.2])
        q = ProbabilityVector([0.2, 0.2, 0.6])
        sp, sq = DistributionSequence.repeat(p, 30), DistributionSequence.repeat(q, 30)
        gen = RngSeed(5).generator()
        vals = np.array([l2_statistic_f(draw_batch(sp, 3, gen), draw_batch(sq, 3, gen)).Q for _ in range(5000)])
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - float(p.mass @ q.mass)) <= 4 * se


class TestL2Test:
    def test_zero_accepts(self):
        b = SampleBatch(np.full((4, 3), 1), 3)
        assert not l2_test(b, b, 0.1).rejected

    def test_far_rejects(self):
        v = l2_test(SampleBatch(np.full((4, 3), 1), 3), SampleBatch(np.full((4, 3), 2), 3), 0.1)
        assert v.rejected
        assert v.threshold == pytest.approx(0.005)
        assert "l2_required_T" in v.extras

    def test_threshold_boundary(self):
        eps2 = 0.1
        # F = eps2^2 would reject; the cut is at eps2^2 / 2
        v = l2_test(SampleBatch(np.full((4, 3), 1), 3), SampleBatch(np.full((4, 3), 1), 3), eps2)
        assert v.statistic == 0 and not v.rejected


class TestHeavyLight:
    def test_all_mass_one_element(self):
        b = SampleBatch(np.full((5, 3), 3), 4)
        split = heavy_light_split(b, b, 0.5)
        assert split.heavy.tolist() == [3]
        assert split.light.tolist() == [1, 2, 4]

    def test_worked_example(self):
        split = heavy_light_split(batch([[1, 1, 1], [2, 2, 2]], 5), batch([[3, 3, 3], [4, 4, 4]], 5), 0.4)
        assert split.heavy.tolist() == [1, 2, 3, 4]
        assert heavy_distance(split) == pytest.approx(2.0)

    def test_threshold_inclusive(self):
        split = heavy_light_split(batch([[1, 1, 1], [2, 2, 2]], 3), batch([[1, 1, 1], [1, 1, 1]], 3), 0.5)
        assert split.heavy.tolist() == [1, 2]

    def test_unreachable_threshold(self):
        b = SampleBatch(np.full((5, 3), 3), 4)
        split = heavy_light_split(b, b, 1.5)
        assert split.heavy.size == 0
        assert heavy_distance(split) == 0

    def test_heavy_distance_sum(self):
        p_rows = [[1, 0, 0]] * 3 + [[2, 0, 0]] * 2
        q_rows = [[1, 0, 0]] * 2 + [[2, 0, 0]] * 3
        bp = SampleBatch([[r[0], 1, 1] for r in p_rows], 3)
        bq = SampleBatch([[r[0], 1, 1] for r in q_rows], 3)
        split = heavy_light_split(bp, bq, 0.3)
        assert split.heavy.tolist() == [1, 2]
        assert heavy_distance(split) == pytest.approx(0.4)

    def test_uses_first_draw_only(self):
        bp = batch([[1, 2, 2], [1, 2, 2]], 3)
        split = heavy_light_split(bp, bp, 0.9)
        assert split.heavy.tolist() == [1]


class TestLightRestriction:
    def test_full_light_set_is_identity(self):
        gen = RngSeed(0).generator()
        assert all(light_restricted_sample(x, set(range(1, 6)), 5, gen) == x for x in range(1, 6))

    def test_empty_light_set_is_uniform(self):
        gen = RngSeed(1).generator()
        out = np.array([light_restricted_sample(2, set(), 4, gen) for _ in range(8000)])
        counts = np.bincount(out, minlength=5)[1:]
        assert np.all(np.abs(counts / 8000 - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 8000))

    def test_exact_law(self):
        # enumerate x ~ p and the fresh uniform draw, compare with p(i) 1[i in S] + p(B)/k
        k = 4
        p = [Fraction(1, 2), Fraction(1, 4), Fraction(1, 8), Fraction(1, 8)]
        S = {2, 4}
        law = [Fraction(0)] * k
        for x in range(1, k + 1):
            if x in S:
                law[x - 1] += p[x - 1]
            else:
                for y in range(1, k + 1):
                    law[y - 1] += p[x - 1] / k
        pB = sum(p[i - 1] for i in range(1, k + 1) if i not in S)
        expected = [p[i - 1] * (i in S) + pB / k for i in range(1, k + 1)]
        assert law == expected
        light_sq = sum(law[i - 1] ** 2 for i in S)
        assert light_sq <= sum(p[i - 1] ** 2 for i in S) + 2 * pB / k + Fraction(1, k)

    def test_vectorized_law(self):
        gen = RngSeed(2).generator()
        mask = np.array([False, True, False, True])
        xs = np.full(40000, 1)
        out = light_restrict(xs, mask, gen)
        counts = np.bincount(out, minlength=5)[1:] / xs.size
        assert np.all(np.abs(counts - 0.25) < 0.01)
        xs = np.full(100, 2)
        assert np.all(light_restrict(xs, mask, gen) == 2)

    def test_range(self):
        with pytest.raises(ValidationError):
            light_restricted_sample(0, set(), 3, RngSeed(0))


class TestL1Tester:
    def test_heavy_stage_fires(self):
        k, T = 64, 200
        pa = DistributionSequence.repeat(ProbabilityVector.point_mass(k, 1), T)
        pb = DistributionSequence.repeat(ProbabilityVector.point_mass(k, 2), T)
        params = ClosenessParams(k, 0.6)
        v = run_closeness(draw_batch(pa, 3, RngSeed(0)), draw_batch(pb, 3, RngSeed(1)), params, RngSeed(2))
        assert v.rejected
        assert v.extras["decided_by"] == "heavy"
        assert v.extras["heavy_distance"] == pytest.approx(2.0)

    def test_l2_stage_metadata(self):
        k, T = 64, 400
        s = DistributionSequence.repeat(uniform(k), T)
        params = ClosenessParams(k, 0.6)
        v = run_closeness(draw_batch(s, 3, RngSeed(0)), draw_batch(s, 3, RngSeed(1)), params, RngSeed(2), seed=5)
        assert v.extras["decided_by"] == "l2"
        assert v.extras["l2_epsilon"] == pytest.approx(params.l2_eps)
        assert v.under_sampled
        for key in ("Z", "Z_prime", "Q", "b", "heavy_count"):
            assert key in v.extras

    def test_within_class_permutation_invariance(self, rng):
        k, T = 64, 300
        s = DistributionSequence.repeat(uniform(k), T)
        bp, bq = draw_batch(s, 3, RngSeed(3)), draw_batch(s, 3, RngSeed(4))
        params = ClosenessParams(k, 0.6)
        base = run_closeness(bp, bq, params, RngSeed(9))
        perm = rng.permutation(T)
        shuffled_p = bp.draws.copy()
        shuffled_p[:, 0] = shuffled_p[perm, 0]
        v = run_closeness(SampleBatch(shuffled_p, k), bq, params, RngSeed(9))
        assert v.extras["heavy_distance"] == base.extras["heavy_distance"]

    def test_needs_three_draws(self):
        b = SampleBatch(np.ones((4, 2), int), 64)
        with pytest.raises(ValidationError):
            run_closeness(b, b, ClosenessParams(64, 0.6), RngSeed(0))
