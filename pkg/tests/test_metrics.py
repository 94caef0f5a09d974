import pytest

from models.errors import InvalidInputError
from models.metrics import eval_generation, shape_novelty, similarities_to


class TestShapeNovelty:
    def test_scaled_distance_times_diversity(self):
        novelty = shape_novelty([0.0, 1.0, 2.0], [0.0, 0.5, 1.0])
        assert novelty.values == [1.0, 0.25, 0.0]
        assert novelty.mean == pytest.approx(1.25 / 3.0)

    def test_equal_distances_scale_to_one(self):
        assert shape_novelty([3.0], [0.2]).values == [pytest.approx(0.8)]
        assert shape_novelty([1.5, 1.5], [0.0, 0.0]).values == [1.0, 1.0]

    def test_length_mismatch_and_empty_input(self):
        with pytest.raises(InvalidInputError):
            shape_novelty([1.0, 2.0], [0.5])
        with pytest.raises(InvalidInputError):
            shape_novelty([], [])


class TestGenerationMetrics:
    SAMPLES = ["CCO", "CCO", "OCC", "CCN", "CCC", "c1ccccc1", "CCOC", "CCCl", "xx", "C1CC"]

    def test_validity_uniqueness_novelty(self):
        metrics = eval_generation(self.SAMPLES, ["OCC"])
        assert metrics["n_samples"] == 10
        assert metrics["validity"] == pytest.approx(0.8)
        assert metrics["uniqueness"] == pytest.approx(0.75)
        assert metrics["novelty"] == pytest.approx(5.0 / 6.0)

    def test_empty_reference_makes_everything_novel(self):
        assert eval_generation(self.SAMPLES, [])["novelty"] == 1.0

    def test_unparseable_reference_entries_are_ignored(self):
        assert eval_generation(["CCO"], ["not_a_smiles", "CCO"])["novelty"] == 0.0

    def test_empty_denominators_give_none(self):
        metrics = eval_generation([], [])
        assert metrics["validity"] is None
        assert metrics["uniqueness"] is None
        assert metrics["novelty"] is None
        assert eval_generation(["xx"], [])["uniqueness"] is None


def test_similarities_to_references():
    values = similarities_to(["CCOCC", "xx"], ["CCOCC", "c1ccccc1"])
    assert values == [1.0, None]
    assert similarities_to(["CCO"], []) == [0.0]
