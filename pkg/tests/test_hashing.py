import math

import numpy as np
import pytest

from dotspin.errors import (
    EmptyCorrespondences,
    NoBasisAboveThreshold,
    OutsideDisk,
    TooFewDots,
)
from dotspin.geometry import Rotation, geodesic_angle, random_rotation
from dotspin.hashing import (
    DotPattern,
    ObservedDotSet,
    RecognitionConfig,
    build_hash_table,
    lift_to_sphere,
    nearest_hash_values,
    recognize,
    reprojection_rmse,
)
from dotspin.pattern import perturb_dot, random_pattern, visible_dots


@pytest.fixture(scope="module")
def pattern20():
    return random_pattern(20, 0.3, np.random.default_rng(100))


@pytest.fixture(scope="module")
def table20(pattern20):
    return build_hash_table(pattern20)


class TestLiftToSphere:
    def test_center_maps_to_pole(self):
        assert np.allclose(lift_to_sphere((0.0, 0.0), 1.0), [0, 0, 1])

    def test_limb_point(self):
        assert np.allclose(lift_to_sphere((1.0, 0.0), 1.0), [1, 0, 0])

    def test_three_four_five(self):
        assert np.allclose(lift_to_sphere((0.6, 0.0), 1.0), [0.6, 0.0, 0.8])

    def test_radius_scaling(self):
        assert np.allclose(lift_to_sphere((1.2, 0.0), 2.0), [0.6, 0.0, 0.8])

    def test_outside_disk(self):
        with pytest.raises(OutsideDisk):
            lift_to_sphere((1.01, 0.0), 1.0)


class TestDomainTypes:
    def test_pattern_rejects_non_unit(self):
        with pytest.raises(ValueError):
            DotPattern(np.array([[1.0, 0, 0], [0, 0, 2.0]]))

    def test_pattern_rejects_coincident(self):
        d = np.array([0.0, 0.0, 1.0])
        with pytest.raises(ValueError):
            DotPattern(np.array([d, d + np.array([1e-9, 0, 0])]) /
                       np.linalg.norm([d, d + np.array([1e-9, 0, 0])], axis=1, keepdims=True))

    def test_pattern_id_is_content_hash(self, pattern20):
        again = DotPattern(pattern20.dots.copy())
        assert again.id == pattern20.id

    def test_observed_rejects_far_side(self):
        with pytest.raises(ValueError):
            ObservedDotSet(np.array([[0.0, 0.0, -1.0]]))


class TestBuildHashTable:
    def test_entry_count_20(self, table20):
        assert len(table20) == 20 * 19 * 18
        assert table20.n_skipped_bases == 0

    def test_entry_count_3(self):
        pattern = DotPattern(np.eye(3))
        assert len(build_hash_table(pattern)) == 6

    def test_orthonormal_triad_hash_value(self):
        table = build_hash_table(DotPattern(np.eye(3)))
        for entry in table.entries:
            if entry.basis_id == (0, 1) and entry.dot_id == 2:
                assert np.allclose(entry.hash_value, [0, 0, 1], atol=1e-12)
                return
        raise AssertionError("missing entry for basis (0, 1)")

    def test_near_parallel_bases_skipped(self):
        # an antipodal pair kills the cross product for both orderings
        dots = np.array([[0, 0, 1.0], [0, 0, -1.0], [1.0, 0, 0], [0, 1.0, 0]])
        table = build_hash_table(DotPattern(dots))
        assert table.n_skipped_bases == 2
        assert len(table) == (4 * 3 - 2) * 2

    def test_too_few_dots(self):
        with pytest.raises(TooFewDots):
            build_hash_table(DotPattern(np.array([[1.0, 0, 0], [0, 1.0, 0]])))

    def test_entries_recomputable(self):
        pattern = random_pattern(8, 0.3, np.random.default_rng(101))
        table = build_hash_table(pattern)
        for entry in table.entries:
            i, j = entry.basis_id
            basis = np.column_stack([
                pattern.dots[i], pattern.dots[j],
                np.cross(pattern.dots[i], pattern.dots[j]),
            ])
            recomputed = np.linalg.solve(basis, pattern.dots[entry.dot_id])
            assert np.max(np.abs(recomputed - entry.hash_value)) < 1e-12


class TestNearestHashValues:
    def test_exact_entry_ranked_first(self, table20):
        entry = table20.entries[123]
        got = nearest_hash_values(table20, entry.hash_value, 3)
        assert np.allclose(got[0].hash_value, entry.hash_value)

    def test_k_at_least_table_size_returns_all(self):
        table = build_hash_table(DotPattern(np.eye(3)))
        assert len(nearest_hash_values(table, np.zeros(3), 99)) == 6

    def test_matches_linear_scan_oracle(self, table20):
        rng = np.random.default_rng(102)
        values = table20.hash_values
        for _ in range(1000):
            q = rng.normal(scale=2.0, size=3)
            d = np.linalg.norm(values - q, axis=1)
            order = np.lexsort((table20.dot_ids, table20.basis_pairs[:, 1],
                                table20.basis_pairs[:, 0], d))
            expected = order[:8]
            got = nearest_hash_values(table20, q, 8)
            got_keys = [(tuple(e.basis_id), e.dot_id) for e in got]
            exp_keys = [(tuple(table20.basis_pairs[i]), int(table20.dot_ids[i]))
                        for i in expected]
            assert got_keys == exp_keys


class TestRecognize:
    def test_clean_round_trip(self, pattern20, table20):
        rng = np.random.default_rng(103)
        tried = 0
        for _ in range(300):
            r = random_rotation(rng)
            ids, vis = visible_dots(pattern20, r)
            if len(vis) < 4:
                continue
            tried += 1
            result = recognize(table20, ObservedDotSet(vis))
            assert geodesic_angle(result.orientation, r) < 1e-6
            # every correspondence must map back to the generating dot
            obs_to_ref = dict(result.correspondences)
            for k, ref in obs_to_ref.items():
                assert ids[k] == ref
        assert tried > 250

    def test_too_few_dots(self, table20):
        obs = ObservedDotSet(np.array([[1.0, 0, 0], [0, 1.0, 0]]))
        with pytest.raises(TooFewDots):
            recognize(table20, obs)

    def test_equivariance_about_view_axis(self, pattern20, table20):
        # rotating the observation about z keeps all dots visible and must
        # rotate the answer by exactly that amount
        rng = np.random.default_rng(104)
        for _ in range(20):
            r = random_rotation(rng)
            _, vis = visible_dots(pattern20, r)
            if len(vis) < 4:
                continue
            extra = Rotation.from_axis_angle([0, 0, 1], rng.uniform(0, 2 * math.pi))
            base = recognize(table20, ObservedDotSet(vis))
            moved = recognize(table20, ObservedDotSet(extra.apply(vis)))
            assert geodesic_angle(moved.orientation, extra * base.orientation) < 1e-8

    def test_rmse_recomputable(self, pattern20, table20):
        rng = np.random.default_rng(105)
        r = random_rotation(rng)
        _, vis = visible_dots(pattern20, r)
        noisy = np.array([perturb_dot(v, math.radians(2), rng) for v in vis])
        noisy[:, 2] = np.abs(noisy[:, 2])
        obs = ObservedDotSet(noisy)
        result = recognize(table20, obs)
        again = reprojection_rmse(result.orientation, pattern20, obs,
                                  result.correspondences)
        assert abs(again - result.rmse) < 1e-12

    def test_noisy_rmse_band(self, pattern20, table20):
        # with 3 deg per-dot noise the reprojection rmse sits in a band
        rng = np.random.default_rng(106)
        rmses = []
        for trial in range(100):
            r = random_rotation(rng)
            _, vis = visible_dots(pattern20, r)
            if len(vis) < 4:
                continue
            noisy = np.array([perturb_dot(v, math.radians(3), rng) for v in vis])
            noisy[:, 2] = np.abs(noisy[:, 2])
            try:
                result = recognize(table20, ObservedDotSet(noisy))
            except NoBasisAboveThreshold:
                continue
            rmses.append(result.rmse)
        med = np.median(rmses)
        assert math.radians(1.0) < med < math.radians(6.0)

    def test_randomize_needs_rng(self, table20, pattern20):
        _, vis = visible_dots(pattern20, random_rotation(np.random.default_rng(1)))
        with pytest.raises(ValueError):
            recognize(table20, ObservedDotSet(vis), RecognitionConfig(randomize=True))

    def test_randomized_clean_still_exact(self, pattern20, table20):
        rng = np.random.default_rng(107)
        r = random_rotation(rng)
        _, vis = visible_dots(pattern20, r)
        result = recognize(table20, ObservedDotSet(vis),
                           RecognitionConfig(randomize=True), rng=rng)
        assert geodesic_angle(result.orientation, r) < 1e-6

    def test_degradation_monotone_small(self, pattern20):
        from dotspin.pattern import EvalConfig, evaluate_pattern
        rates = []
        for sigma in (0.0, 3.0, 8.0):
            rep = evaluate_pattern(pattern20, 300, math.radians(sigma),
                                   EvalConfig(seed=9))
            rates.append(rep.success_rate)
        assert rates[0] >= rates[1] >= rates[2] - 0.02
        assert rates[0] == 1.0


class TestReprojectionRmse:
    def test_exact_zero(self, pattern20):
        ids = np.nonzero(pattern20.dots[:, 2] > 0)[0]
        obs = ObservedDotSet(pattern20.dots[ids])
        corr = [(k, int(i)) for k, i in enumerate(ids)]
        assert reprojection_rmse(Rotation.identity(), pattern20, obs, corr) < 1e-9

    def test_single_offset_pair(self):
        d = np.array([0.0, 0.0, 1.0])
        moved = np.array([math.sin(0.1), 0.0, math.cos(0.1)])
        pattern = DotPattern(np.array([d, [1.0, 0, 0]]))
        obs = ObservedDotSet(np.array([moved]))
        rmse = reprojection_rmse(Rotation.identity(), pattern, obs, [(0, 0)])
        assert rmse == pytest.approx(0.1, abs=1e-12)

    def test_empty_correspondences(self, pattern20):
        obs = ObservedDotSet(np.array([[0.0, 0.0, 1.0]]))
        with pytest.raises(EmptyCorrespondences):
            reprojection_rmse(Rotation.identity(), pattern20, obs, [])
