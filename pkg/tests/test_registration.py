import os

import numpy as np
import pytest

from models.aligner import AlignmentResult
from models.data_manager import read_point_cloud
from models.errors import InvalidInputError
from models.geometry import PointCloud, RigidTransform, center_to_origin, chamfer_distance, random_rotation
from models.registration import ransac_align, realign_flips, split_modes


@pytest.fixture
def cube_pair(data_dir):
    clouds = os.path.join(data_dir, "clouds")
    return (read_point_cloud(os.path.join(clouds, "cube_query.xyz")),
            read_point_cloud(os.path.join(clouds, "cube_reference.xyz")))


class TestRansac:
    def test_recovers_a_rotated_box(self, cube_pair):
        query, reference = cube_pair
        result = ransac_align(query, reference, iterations=1000)
        assert result.method == "ransac"
        assert result.chamfer < 1e-8
        assert result.transform.is_proper()

    def test_recovers_a_rotated_64_point_cloud(self, rng):
        reference = rng.normal(size=(64, 3)) * np.array([3.0, 2.0, 1.0])
        query = reference @ random_rotation(rng).T + np.array([4.0, -1.0, 2.5])
        result = ransac_align(PointCloud(query), PointCloud(reference), iterations=10_000,
                              inlier_threshold=0.25, rng_seed=2)
        assert result.chamfer < 0.5

    def test_single_iteration_returns_its_hypothesis(self, cube_pair):
        query, reference = cube_pair
        result = ransac_align(query, reference, iterations=1, rng_seed=4)
        q_centered, _ = center_to_origin(query)
        r_centered, _ = center_to_origin(reference)
        moved = result.transform.apply(q_centered.points)
        assert np.array_equal(result.aligned_coords.points, moved)
        assert result.chamfer == chamfer_distance(moved, r_centered.points)
        # the first hypothesis of a longer run is the same draw
        longer = ransac_align(query, reference, iterations=50, rng_seed=4)
        assert longer.chamfer <= result.chamfer

    def test_more_iterations_never_hurt(self, cube_pair):
        query, reference = cube_pair
        scores = [ransac_align(query, reference, iterations=n, rng_seed=5).chamfer for n in (1, 10, 100)]
        assert scores[0] >= scores[1] >= scores[2]

    def test_deterministic_for_a_seed(self, cube_pair):
        query, reference = cube_pair
        first = ransac_align(query, reference, iterations=20, rng_seed=9)
        second = ransac_align(query, reference, iterations=20, rng_seed=9)
        assert first.chamfer == second.chamfer
        assert np.array_equal(first.transform.rotation, second.transform.rotation)

    def test_rejects_tiny_clouds_and_zero_iterations(self, cube_pair, rng):
        query, reference = cube_pair
        with pytest.raises(InvalidInputError):
            ransac_align(PointCloud(rng.normal(size=(2, 3))), reference)
        with pytest.raises(InvalidInputError):
            ransac_align(query, reference, iterations=0)


class TestSplitModes:
    def test_two_separated_modes(self):
        threshold, lower = split_modes([0.1, 0.2, 5.0, 5.2])
        assert 0.2 < threshold < 5.0
        assert lower.tolist() == [True, True, False, False]

    def test_close_values_form_one_mode(self):
        threshold, lower = split_modes([1.0, 1.1, 1.3])
        assert threshold == float("inf")
        assert lower.all()

    def test_single_value(self):
        _, lower = split_modes([3.0])
        assert lower.tolist() == [True]


def _result(points: np.ndarray) -> AlignmentResult:
    cloud = PointCloud(points)
    return AlignmentResult(RigidTransform.identity(), 0.0, cloud, cloud)


class TestRealignFlips:
    def test_high_rmsd_conformers_are_resampled(self, rng):
        reference = PointCloud(rng.normal(size=(5, 3)) * 2.0)
        centered = center_to_origin(reference)[0].points
        calls = []

        def flaky_align(query, target):
            # the first pass flips the last two conformers, every retry lands
            calls.append(len(calls))
            if len(calls) in (3, 4):
                return _result(-centered)
            return _result(centered)

        clouds = [reference] * 4
        outcome = realign_flips(None, clouds, reference, [(0, 0), (1, 1), (2, 2)], align_fn=flaky_align)
        assert outcome.iterations == 1
        assert outcome.lower_fraction == 1.0
        assert outcome.history == [0.5, 1.0]
        assert max(outcome.rmsds) < 1e-12
        assert len(calls) == 6

    def test_needs_model_or_align_fn(self, rng):
        reference = PointCloud(rng.normal(size=(5, 3)))
        with pytest.raises(InvalidInputError):
            realign_flips(None, [reference], reference, [(0, 0)])

    def test_needs_anchor_pairs(self, rng):
        reference = PointCloud(rng.normal(size=(5, 3)))
        with pytest.raises(InvalidInputError):
            realign_flips(None, [reference], reference, [], align_fn=lambda q, r: _result(q.points))
