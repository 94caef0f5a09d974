import json

import numpy as np
import pytest

from models.aligner import (AlignerModel, align, kabsch_backward, load_checkpoint, loss_and_grads, loss_only,
                            save_checkpoint, transform_atoms)
from models.aligner_training import TrainConfig, evaluate, synthetic_self_alignment_dataset, train
from models.errors import InvalidInputError
from models.geometry import PointCloud, kabsch_rotation
from models.gradcheck import check_gradients, numeric_gradient, relative_error
from models.registration import ransac_align
from models.surface import AtomSet


@pytest.fixture
def tiny_model():
    return AlignerModel.create(d_a=4, h=2, rng_seed=3)


def test_analytic_gradients_match_finite_differences(tiny_model, small_pair):
    query, reference = small_pair
    _, analytic = loss_and_grads(tiny_model, query, reference)
    errors = check_gradients(lambda: loss_only(tiny_model, query, reference), tiny_model.params, analytic)
    assert set(errors) == set(AlignerModel.parameter_names())
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-3, f"{worst}: {errors[worst]}"


def test_svd_backward_matches_finite_differences(rng):
    p = rng.normal(size=(7, 3))
    q = rng.normal(size=(7, 3))
    covariance = p.T @ q
    upstream = rng.normal(size=(3, 3))

    def loss():
        # p = I hands the helper H itself as the covariance
        rotation = kabsch_rotation(np.eye(3), covariance)[0]
        return float(np.sum(upstream * rotation))

    _, u, s, vt, d = kabsch_rotation(p, q)
    analytic = kabsch_backward(upstream, u, s, vt, d)
    numeric = numeric_gradient(loss, covariance, eps=1e-6)
    assert relative_error(analytic, numeric) < 1e-5


def test_loss_is_invariant_to_point_order(tiny_model, small_pair, rng):
    query, reference = small_pair
    base = loss_only(tiny_model, query, reference)
    shuffled_query = PointCloud(query.points[rng.permutation(len(query))])
    shuffled_reference = PointCloud(reference.points[rng.permutation(len(reference))])
    assert loss_only(tiny_model, shuffled_query, shuffled_reference) == pytest.approx(base, abs=1e-9)


def test_alignment_result_is_a_proper_rigid_motion(tiny_model, small_pair):
    query, reference = small_pair
    result = align(tiny_model, query, reference)
    assert result.transform.is_proper()
    assert result.chamfer >= 0.0
    assert len(result.pseudo_coords) == len(query)
    assert result.method == "aligner"
    data = result.to_dict()
    assert np.array(data["rotation"]).shape == (3, 3)


def test_transform_atoms_follows_the_surface(tiny_model, small_pair):
    query, reference = small_pair
    result = align(tiny_model, query, reference)
    atoms = AtomSet(("C",) * len(query), query.points)
    moved = transform_atoms(result, atoms)
    assert np.allclose(moved.positions, result.aligned_coords.points + reference.centroid, atol=1e-10)


def test_query_needs_three_points(tiny_model, rng):
    with pytest.raises(InvalidInputError):
        align(tiny_model, PointCloud(rng.normal(size=(2, 3))), PointCloud(rng.normal(size=(5, 3))))


def test_head_count_must_divide_width():
    with pytest.raises(InvalidInputError):
        AlignerModel.create(d_a=6, h=4)


class TestCheckpoints:
    def test_round_trip_is_exact(self, tiny_model, small_pair, tmp_path):
        path = str(tmp_path / "aligner.json")
        save_checkpoint(tiny_model, path)
        restored = load_checkpoint(path)
        for name, value in tiny_model.params.items():
            assert np.array_equal(restored.params[name], value)
        query, reference = small_pair
        assert loss_only(restored, query, reference) == loss_only(tiny_model, query, reference)

    def test_wrong_version_rejected(self, tiny_model, tmp_path):
        data = tiny_model.to_dict()
        data["format_version"] = 99
        path = tmp_path / "old.json"
        path.write_text(json.dumps(data))
        with pytest.raises(InvalidInputError):
            load_checkpoint(str(path))

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(InvalidInputError):
            load_checkpoint(str(path))
        with pytest.raises(InvalidInputError):
            load_checkpoint(str(tmp_path / "missing.json"))


class TestTraining:
    def test_zero_epochs_returns_the_initial_model(self, tiny_model):
        dataset = synthetic_self_alignment_dataset(4, 12, np.random.default_rng(0))
        trained, trace = train(tiny_model, dataset, TrainConfig(epochs=0, d_a=4, h=2))
        assert len(trace) == 1
        for name, value in tiny_model.params.items():
            assert np.array_equal(trained.params[name], value)

    def test_training_is_deterministic(self, tiny_model):
        dataset = synthetic_self_alignment_dataset(6, 12, np.random.default_rng(0))
        config = TrainConfig(epochs=2, batch_size=2, d_a=4, h=2)
        first, trace_a = train(tiny_model, dataset, config)
        second, trace_b = train(tiny_model, dataset, config)
        assert [r.to_row() for r in trace_a] == [r.to_row() for r in trace_b]
        for name in first.params:
            assert np.array_equal(first.params[name], second.params[name])

    def test_original_model_is_not_modified(self, tiny_model):
        before = {k: v.copy() for k, v in tiny_model.params.items()}
        dataset = synthetic_self_alignment_dataset(4, 12, np.random.default_rng(0))
        train(tiny_model, dataset, TrainConfig(epochs=1, d_a=4, h=2))
        for name, value in before.items():
            assert np.array_equal(tiny_model.params[name], value)

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            TrainConfig(epochs=-1)
        with pytest.raises(InvalidInputError):
            TrainConfig.from_dict({"epochs": 5, "momentum": 0.9})
        assert TrainConfig.from_dict({"optimizer": {"grad_clip": 1.0}}).optimizer.grad_clip == 1.0

    @pytest.mark.slow
    def test_training_halves_held_out_chamfer(self):
        rng = np.random.default_rng(0)
        pairs = synthetic_self_alignment_dataset(220, 48, rng)
        dataset, held_out = pairs[:200], pairs[200:]
        model = AlignerModel.create(16, 8, rng_seed=0)
        trained, trace = train(model, dataset, TrainConfig(epochs=50), validation=held_out)
        assert trace[-1].val_loss < 0.5 * trace[0].val_loss
        ransac = np.mean([ransac_align(q, r, 1000).chamfer for q, r in held_out])
        print(f"aligner {evaluate(trained, held_out):.3f} vs RANSAC {ransac:.3f}")
