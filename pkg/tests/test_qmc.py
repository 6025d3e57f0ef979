"""Lattice, Hammersley, and candidate-pool tests."""

import numpy as np
import pytest

from medsampler.errors import CandidatePoolError, ConfigError
from medsampler.qmc import (
    DEDUP_TOLERANCE,
    DELTA_SEPARATION,
    LatticeRule,
    _cbc_vector,
    _dedup_keep_first,
    cbc_lattice,
    halton_block,
    hammersley,
    is_prime,
    largest_prime_below,
    local_candidates,
    nth_prime,
    radical_inverse,
)


def brute_force_error(n, zs):
    """Full criterion evaluated from scratch; independent of the CBC code path."""
    k = np.arange(n)
    total = np.ones(n)
    for l, z in enumerate(zs, start=1):
        x = np.mod(k * z, n) / n
        total *= 1.0 + (1.0 / l**2) * (x * x - x + 1.0 / 6.0)
    return -1.0 + total.mean()


class TestPrimes:
    def test_is_prime_small(self):
        assert [m for m in range(20) if is_prime(m)] == [2, 3, 5, 7, 11, 13, 17, 19]

    def test_largest_prime_below(self):
        assert largest_prime_below(110) == 109
        assert largest_prime_below(250) == 241
        assert largest_prime_below(3) == 2

    def test_nth_prime(self):
        assert [nth_prime(k) for k in (1, 2, 3, 10, 60)] == [2, 3, 5, 29, 281]


class TestCbcLattice:
    def test_one_dimensional_lattice_is_equispaced(self):
        rule = cbc_lattice(5, 1)
        assert rule.shift is None
        np.testing.assert_allclose(np.sort(rule.points()[:, 0]), [0, 0.2, 0.4, 0.6, 0.8])

    def test_first_component_is_one(self):
        assert cbc_lattice(13, 4).z[0] == 1

    @pytest.mark.parametrize("n", [5, 7, 11, 13])
    def test_matches_exhaustive_search_p2(self, n):
        rule = cbc_lattice(n, 2)
        best = min(brute_force_error(n, [1, c]) for c in range(1, n))
        got = brute_force_error(n, rule.z)
        assert got == pytest.approx(best, rel=1e-12)

    def test_109_by_2_projections_distinct(self):
        pts = cbc_lattice(109, 2).points()
        assert pts.shape == (109, 2)
        for col in pts.T:
            assert len(np.unique(col)) == 109

    @pytest.mark.parametrize("n,p", [(7, 3), (31, 5), (109, 4)])
    def test_projection_gap_is_one_over_n(self, n, p):
        pts = cbc_lattice(n, p).points()
        for col in pts.T:
            srt = np.sort(col)
            np.testing.assert_allclose(np.diff(srt), 1.0 / n, atol=1e-12)

    def test_composite_n_uses_coprime_components(self):
        z = _cbc_vector(25, 3)
        assert all(np.gcd(int(c), 25) == 1 for c in z)
        pts = LatticeRule(n=25, z=z).points()
        for col in pts.T:
            assert len(np.unique(col)) == 25

    def test_shift_is_seeded_and_in_unit_cube(self):
        a = cbc_lattice(11, 3, seed=7)
        b = cbc_lattice(11, 3, seed=7)
        c = cbc_lattice(11, 3, seed=8)
        np.testing.assert_array_equal(a.shift, b.shift)
        assert not np.array_equal(a.shift, c.shift)
        assert np.all((a.shift >= 0) & (a.shift < 1))
        assert np.all((a.points() >= 0) & (a.points() < 1))

    def test_rejects_composite_n(self):
        with pytest.raises(ConfigError):
            cbc_lattice(9, 2)

    def test_deterministic(self):
        np.testing.assert_array_equal(cbc_lattice(31, 6).z, cbc_lattice(31, 6).z)


class TestHammersley:
    def test_radical_inverse_hand_values(self):
        assert radical_inverse(np.array([1]), 2)[0] == 0.5
        assert radical_inverse(np.array([3]), 2)[0] == 0.75
        assert radical_inverse(np.array([2]), 3)[0] == pytest.approx(2.0 / 3.0)

    def test_first_coordinate_is_i_over_n(self):
        pts = hammersley(8, 3)
        np.testing.assert_allclose(pts[:, 0], np.arange(8) / 8)

    def test_second_coordinate_is_base2_inverse(self):
        pts = hammersley(4, 2)
        np.testing.assert_allclose(pts[:, 1], [0.0, 0.5, 0.25, 0.75])

    def test_depends_only_on_n_and_p(self):
        np.testing.assert_array_equal(hammersley(50, 5), hammersley(50, 5))

    def test_in_unit_cube(self):
        pts = hammersley(100, 12)
        assert pts.shape == (100, 12)
        assert np.all((pts >= 0) & (pts < 1))

    def test_halton_block_is_extensible(self):
        whole = halton_block(0, 30, 4)
        head = halton_block(0, 10, 4)
        tail = halton_block(10, 20, 4)
        np.testing.assert_array_equal(whole, np.vstack([head, tail]))


class TestLocalCandidates:
    def region(self):
        return np.array(
            [[0.4, 0.4], [0.5, 0.5], [0.6, 0.4], [0.45, 0.6], [0.55, 0.35]]
        )

    def test_fill_count_and_box(self):
        region = self.region()
        pool = local_candidates(
            center=region[1],
            region=region,
            m=40,
            n_combos=0,
            existing=region,
            rng=np.random.default_rng(0),
        )
        fills = pool.points[np.array(pool.provenance) == "local-fill"]
        assert len(fills) == 40
        lo, hi = region.min(axis=0), region.max(axis=0)
        assert np.all(fills >= lo - 1e-12) and np.all(fills <= hi + 1e-12)

    def test_separation_from_existing(self):
        region = self.region()
        rng = np.random.default_rng(1)
        existing = np.vstack([region, rng.uniform(0.4, 0.6, size=(50, 2))])
        pool = local_candidates(region[1], region, 60, 5, existing, np.random.default_rng(2))
        gaps = np.abs(pool.points[:, None, :] - existing[None, :, :]).max(axis=2)
        assert gaps.min() >= DELTA_SEPARATION

    def test_combos_replay_rng(self):
        # Replaying the generator's draws reconstructs the combo points exactly.
        region = self.region()
        center = region[1]
        pool = local_candidates(center, region, 10, 4, region, np.random.default_rng(3))
        replay = np.random.default_rng(3)
        replay.random(2)  # fill shift drawn first
        w = replay.uniform(-0.5, 1.5, size=4)
        others = region[[0, 2, 3, 4]]
        order = np.argsort(np.sum((others - center) ** 2, axis=1))
        a, b = others[order[0]], others[order[1]]
        want = np.clip(w[:, None] * a + (1 - w)[:, None] * b, 0.0, 1.0)
        combos = pool.points[np.array(pool.provenance) == "linear-combination"]
        kept = [
            row for row in want
            if np.abs(row - region).max(axis=1).min() >= DELTA_SEPARATION
        ]
        np.testing.assert_allclose(combos, np.array(kept), atol=1e-15)

    def test_combo_midpoint_and_clipping(self):
        # Force a diagonal pair so the combo line is w*(0,0) + (1-w)*(1,1).
        region = np.array([[0.0, 0.0], [1.0, 1.0], [0.02, 0.01]])
        center = region[2]
        pool = local_candidates(center, region, 5, 50, region, np.random.default_rng(4))
        combos = pool.points[np.array(pool.provenance) == "linear-combination"]
        # All combos sit on the clipped diagonal segment.
        np.testing.assert_allclose(combos[:, 0], combos[:, 1], atol=1e-12)
        assert np.all((combos >= 0.0) & (combos <= 1.0))

    def test_degenerate_region_is_inflated(self):
        region = np.array([[0.5, 0.5]])
        pool = local_candidates(
            region[0], region, 8, 0, np.zeros((0, 2)), np.random.default_rng(5)
        )
        assert len(pool.points) == 8
        assert np.all(np.abs(pool.points - 0.5) <= DELTA_SEPARATION + 1e-15)

    def test_deterministic_given_seed(self):
        region = self.region()
        a = local_candidates(region[1], region, 20, 3, region, np.random.default_rng(6))
        b = local_candidates(region[1], region, 20, 3, region, np.random.default_rng(6))
        np.testing.assert_array_equal(a.points, b.points)
        assert a.provenance == b.provenance

    def test_unplaceable_pool_raises(self):
        region = np.array([[0.5]])
        existing = np.array([[0.5]])
        with pytest.raises(CandidatePoolError):
            local_candidates(region[0], region, 5, 0, existing, np.random.default_rng(7))

    def test_dedup_drops_later_duplicate(self):
        pts = np.array([[0.1, 0.2], [0.3, 0.4], [0.1, 0.2 + 1e-14], [0.5, 0.6]])
        keep = _dedup_keep_first(pts)
        assert list(keep) == [0, 1, 3]

    def test_pool_has_no_near_duplicates(self):
        region = self.region()
        pool = local_candidates(region[1], region, 50, 10, region, np.random.default_rng(8))
        d = np.abs(pool.points[:, None, :] - pool.points[None, :, :]).max(axis=2)
        np.fill_diagonal(d, 1.0)
        assert d.min() >= DEDUP_TOLERANCE
