import os

import numpy as np
import pytest

from models.data_manager import read_sdf, read_smiles_file
from models.diversity_filter import DiversityFilterState
from models.errors import InvalidInputError, NumericError, TrainingFailedError
from models.gradcheck import check_gradients
from models.optimizer import Adam
from models.reinforcement import (RLConfig, augmented_likelihood, policy_loss, policy_loss_grad, rl_run, rl_step,
                                  sample_smiles, score_samples)
from models.scoring import ScoreRecord, ScoringConfig, ScoringFunction
from models.sequence_model import (PriorConfig, SequenceModel, Vocabulary, likelihood, loglik_and_grads,
                                   pretrain_prior)
from models.surface import SurfaceParams, sample_surface
from utils.seeding import substream

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")

CORPUS = ["*CCO*", "*CCN*", "*CCOCC*", "*c1ccc(*)cc1", "*CC(=O)N*", "*CCC*", "*CNC*"]


def constant_score(value):
    def score_fn(smiles):
        return ScoreRecord(smiles, (), value, "", value, canonical=smiles)
    return score_fn


def contains_oxygen(smiles):
    value = 1.0 if "O" in smiles else 0.0
    return ScoreRecord(smiles, (), value, "", value, canonical=smiles)


@pytest.fixture
def prior():
    return SequenceModel.create(Vocabulary.from_corpus(CORPUS), hidden_size=8, embedding_dim=4, rng_seed=0)


def small_config(**overrides):
    settings = {"batch_size": 6, "epochs": 2, "max_length": 24, "n_samples": 0, "rng_seed": 3}
    settings.update(overrides)
    return RLConfig(**settings)


class TestObjective:
    def test_augmented_likelihood(self):
        assert augmented_likelihood(-40.0, 0.5, 120.0) == 20.0
        result = augmented_likelihood(np.array([-10.0, -20.0]), np.array([0.0, 1.0]), 10.0)
        assert result.tolist() == [-10.0, -10.0]

    def test_scores_outside_the_unit_interval_rejected(self):
        with pytest.raises(InvalidInputError):
            augmented_likelihood(-1.0, 1.5, 120.0)

    def test_policy_loss(self):
        assert policy_loss(20.0, 10.0) == 100.0
        assert policy_loss(np.array([1.0, 3.0]), np.array([0.0, 0.0])) == 5.0

    def test_policy_loss_rejects_non_finite_input(self):
        with pytest.raises(NumericError):
            policy_loss(np.array([np.inf]), np.array([0.0]))

    def test_policy_loss_grad(self):
        grad = policy_loss_grad(np.array([3.0, 1.0]), np.array([1.0, 1.0]))
        assert grad.tolist() == [-2.0, 0.0]

    def test_loss_gradient_matches_finite_differences_on_two_tokens(self):
        vocabulary = Vocabulary.from_corpus(["CO", "OC"])
        assert vocabulary.tokens[3:] == ("C", "O")
        prior = SequenceModel.create(vocabulary, hidden_size=4, embedding_dim=3, rng_seed=1)
        agent = SequenceModel.create(vocabulary, hidden_size=4, embedding_dim=3, rng_seed=2)
        sequences = [vocabulary.encode(s) for s in ("CO", "OC", "C", "O", "CCO")]
        log_aug = augmented_likelihood(likelihood(prior, sequences), np.array([1.0, 0.0, 0.5, 0.2, 0.8]), 3.0)

        upstream = policy_loss_grad(log_aug, likelihood(agent, sequences))
        _, analytic = loglik_and_grads(agent, sequences, upstream)
        errors = check_gradients(lambda: policy_loss(log_aug, likelihood(agent, sequences)), agent.params, analytic)
        assert max(errors.values()) < 1e-3


class TestStep:
    def test_zero_score_with_agent_equal_to_prior_is_a_fixed_point(self, prior):
        agent = prior.copy()
        before = {k: v.copy() for k, v in agent.params.items()}
        prior_before = {k: v.copy() for k, v in prior.params.items()}
        config = small_config()
        optimizer = Adam(agent.params, config.learning_rate, config.optimizer)
        agent, diagnostics = rl_step(agent, prior, constant_score(0.0), None, config, optimizer,
                                     np.random.default_rng(0))
        assert diagnostics.mean_loss == 0.0
        for name, value in before.items():
            assert np.array_equal(agent.params[name], value)
            assert np.array_equal(prior.params[name], prior_before[name])

    def test_positive_score_moves_the_agent(self, prior):
        agent = prior.copy()
        config = small_config()
        optimizer = Adam(agent.params, config.learning_rate, config.optimizer)
        agent, diagnostics = rl_step(agent, prior, constant_score(1.0), None, config, optimizer,
                                     np.random.default_rng(0))
        assert diagnostics.mean_loss > 0.0
        assert diagnostics.mean_score == 1.0
        assert not np.array_equal(agent.params["output.w"], prior.params["output.w"])

    def test_diagnostics_row(self, prior):
        agent = prior.copy()
        config = small_config()
        optimizer = Adam(agent.params, config.learning_rate, config.optimizer)
        _, diagnostics = rl_step(agent, prior, constant_score(0.5), None, config, optimizer,
                                 np.random.default_rng(1), epoch=4)
        row = diagnostics.to_row()
        assert row["epoch"] == 4
        assert row["valid_frac"] == 1.0
        assert len(diagnostics.smiles) == config.batch_size
        assert set(row) >= {"mean_score", "mean_loss", "unique_frac", "mean_shape", "mean_rot_raw"}

    def test_numeric_failure_is_reported_with_the_epoch(self, prior):
        broken_prior = prior.copy()
        broken_prior.params["output.b"][:] = np.nan
        agent = prior.copy()
        config = small_config()
        optimizer = Adam(agent.params, config.learning_rate, config.optimizer)
        with pytest.raises(TrainingFailedError) as info:
            rl_step(agent, broken_prior, constant_score(0.5), None, config, optimizer,
                    np.random.default_rng(0), epoch=7)
        assert info.value.epoch == 7
        assert info.value.exit_code == 3


class TestRun:
    def test_zero_epochs_returns_the_prior(self, prior):
        agent, curve = rl_run(small_config(epochs=0), prior, constant_score(1.0))
        assert curve == []
        for name, value in prior.params.items():
            assert np.array_equal(agent.params[name], value)

    def test_run_is_deterministic(self, prior):
        config = small_config(epochs=3)
        first, curve_a = rl_run(config, prior, contains_oxygen)
        second, curve_b = rl_run(config, prior, contains_oxygen, threads=2)
        assert curve_a == curve_b
        for name in first.params:
            assert np.array_equal(first.params[name], second.params[name])

    def test_prior_stays_frozen_across_epochs(self, prior):
        before = {name: value.copy() for name, value in prior.params.items()}
        agent, curve = rl_run(small_config(epochs=5), prior, constant_score(0.7))
        assert len(curve) == 5
        for name, value in before.items():
            assert np.array_equal(prior.params[name], value)
        assert not np.array_equal(agent.params["output.w"], prior.params["output.w"])

    def test_checkpoints_are_reported(self, prior):
        seen = []
        rl_run(small_config(epochs=4, checkpoint_every=2), prior, constant_score(0.0),
               on_checkpoint=lambda epoch, agent: seen.append(epoch))
        assert seen == [2, 4]

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            RLConfig(sigma=0.0)
        with pytest.raises(InvalidInputError):
            RLConfig(temperature=-1.0)
        with pytest.raises(InvalidInputError):
            RLConfig.from_dict({"kl_weight": 0.1})

    @pytest.mark.slow
    def test_agent_learns_to_include_oxygen(self):
        corpus = ["*CCN*", "*CCC*", "*CNC*", "*CCCC*", "*CCNC*", "*CCCN*", "*NCCN*", "*CCCCN*", "*CNCC*",
                  "*CCO*"] * 8
        prior, _ = pretrain_prior(corpus, PriorConfig(epochs=10, hidden_size=32, embedding_dim=8,
                                                      learning_rate=0.01))
        # every sample shares the acyclic "" bucket
        config = RLConfig(sigma=60.0, batch_size=32, learning_rate=3e-4, epochs=200, max_length=32,
                          bucket_capacity=10**9)
        _, curve = rl_run(config, prior, contains_oxygen)
        assert len(curve) == 200
        windows = [np.mean([row["mean_score"] for row in curve[i:i + 50]]) for i in range(0, 200, 50)]
        for earlier, later in zip(windows, windows[1:]):
            assert later >= earlier - 0.02
        assert windows[-1] >= 2.0 * windows[0]

    @pytest.mark.slow
    def test_agent_moves_towards_the_reference_shape(self):
        corpus = read_smiles_file(os.path.join(DATA_DIR, "linker_corpus.smi"))
        prior, _ = pretrain_prior(corpus, PriorConfig(epochs=3, hidden_size=32, embedding_dim=8,
                                                      learning_rate=0.005))
        surface = SurfaceParams(seeds_per_atom=32)
        atoms, _ = read_sdf(os.path.join(DATA_DIR, "reference_linker.sdf"))
        scoring = ScoringConfig(weights={"shape": 1.0}, n_conformers=1, ransac_iterations=50, surface=surface)
        score_fn = ScoringFunction(scoring, reference_cloud=sample_surface(atoms, surface))
        config = RLConfig(sigma=120.0, batch_size=16, learning_rate=5e-4, epochs=100, max_length=48,
                          bucket_capacity=10**9)
        _, curve = rl_run(config, prior, score_fn)

        def mean_chamfer(rows):
            values = [row["mean_shape_raw"] for row in rows if row["mean_shape_raw"] is not None]
            return np.mean(values)

        assert mean_chamfer(curve[-50:]) < mean_chamfer(curve[:50])


def test_score_samples_applies_the_filter_in_order():
    state = DiversityFilterState.create(2)
    records = score_samples(constant_score(0.9), ["*CC*"] * 3, state)
    assert [r.score for r in records] == [0.9, 0.9, 0.0]


def test_sample_smiles_is_deterministic(prior):
    first = sample_smiles(prior, 5, 1.5, substream(0, "sample"), 24)
    second = sample_smiles(prior, 5, 1.5, substream(0, "sample"), 24)
    assert first == second
    assert len(first) == 5
