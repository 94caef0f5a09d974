import numpy as np
import pytest

from models.errors import InvalidInputError
from models.gradcheck import check_gradients
from models.sequence_model import (PriorConfig, SequenceModel, Vocabulary, likelihood, loglik_and_grads,
                                   perplexity, pretrain_prior, sample_batch, tokenize_smiles)

CORPUS = ["*CCO*", "*CCN*", "*CCOCC*", "*c1ccc(*)cc1", "*CC(=O)N*", "*C1CCN(CC1)*"]


@pytest.fixture
def vocabulary():
    return Vocabulary.from_corpus(CORPUS)


@pytest.fixture
def tiny_model(vocabulary):
    return SequenceModel.create(vocabulary, hidden_size=6, embedding_dim=4, rng_seed=2)


class TestVocabulary:
    def test_specials_come_first(self, vocabulary):
        assert vocabulary.tokens[:3] == ("<pad>", "^", "$")
        assert (vocabulary.pad, vocabulary.begin, vocabulary.end) == (0, 1, 2)

    def test_encode_decode(self, vocabulary):
        ids = vocabulary.encode("*C1CCN(CC1)*")
        assert ids[0] == vocabulary.begin and ids[-1] == vocabulary.end
        assert vocabulary.decode(ids) == "*C1CCN(CC1)*"

    def test_multi_character_tokens(self):
        assert tokenize_smiles("ClCC[NH+]%12Br") == ["Cl", "C", "C", "[NH+]", "%12", "Br"]

    def test_unknown_token_rejected(self, vocabulary):
        with pytest.raises(InvalidInputError):
            vocabulary.encode("CCS")
        with pytest.raises(InvalidInputError):
            tokenize_smiles("CC$")

    def test_malformed_vocabulary(self):
        with pytest.raises(InvalidInputError):
            Vocabulary(("C", "O"))


def test_analytic_gradients_match_finite_differences(tiny_model, vocabulary):
    sequences = [vocabulary.encode(s) for s in CORPUS[:3]]
    upstream = np.array([0.7, -1.3, 0.4])
    _, analytic = loglik_and_grads(tiny_model, sequences, upstream)
    errors = check_gradients(lambda: float(upstream @ likelihood(tiny_model, sequences)), tiny_model.params,
                             analytic)
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-5, f"{worst}: {errors[worst]}"


def test_padding_does_not_change_likelihood(tiny_model, vocabulary):
    sequences = [vocabulary.encode(s) for s in CORPUS]
    batched = likelihood(tiny_model, sequences)
    single = np.array([likelihood(tiny_model, [s])[0] for s in sequences])
    assert np.allclose(batched, single, atol=1e-12)
    assert np.all(batched < 0)


class TestSampling:
    def test_sample_log_prob_matches_likelihood(self, tiny_model):
        samples = sample_batch(tiny_model, 16, rng=np.random.default_rng(0), max_length=40)
        scored = likelihood(tiny_model, [list(s.token_ids) for s in samples])
        assert np.allclose([s.log_prob for s in samples], scored, atol=1e-9)
        for sample in samples:
            assert sample.token_ids[0] == tiny_model.vocabulary.begin
            assert sample.terminated == (sample.token_ids[-1] == tiny_model.vocabulary.end)
            assert len(sample.token_ids) <= 41

    def test_deterministic_for_a_generator_seed(self, tiny_model):
        first = sample_batch(tiny_model, 8, 1.5, np.random.default_rng(5))
        second = sample_batch(tiny_model, 8, 1.5, np.random.default_rng(5))
        assert [s.token_ids for s in first] == [s.token_ids for s in second]

    def test_arguments_validated(self, tiny_model):
        assert sample_batch(tiny_model, 0) == []
        with pytest.raises(InvalidInputError):
            sample_batch(tiny_model, -1)
        with pytest.raises(InvalidInputError):
            sample_batch(tiny_model, 4, temperature=0.0)

    def test_low_temperature_reproduces_a_memorised_string(self):
        config = PriorConfig(epochs=300, batch_size=1, learning_rate=0.02, hidden_size=16, embedding_dim=8)
        model, history = pretrain_prior(["CCO"], config)
        assert history[-1] < history[0]
        samples = sample_batch(model, 10, temperature=0.01, rng=np.random.default_rng(0))
        assert {s.smiles for s in samples} == {"CCO"}


class TestPretraining:
    def test_perplexity_decreases(self):
        config = PriorConfig(epochs=5, batch_size=2, learning_rate=0.01, hidden_size=16, embedding_dim=8)
        model, history = pretrain_prior(CORPUS, config)
        assert len(history) == 6
        assert history[-1] < history[0]
        assert perplexity(model, CORPUS) == pytest.approx(history[-1])

    def test_zero_epochs_only_reports_the_initial_perplexity(self):
        _, history = pretrain_prior(CORPUS, PriorConfig(epochs=0, hidden_size=8, embedding_dim=4))
        assert len(history) == 1

    def test_config_and_corpus_validation(self):
        with pytest.raises(InvalidInputError):
            pretrain_prior([], PriorConfig())
        with pytest.raises(InvalidInputError):
            PriorConfig.from_dict({"dropout": 0.1})
        with pytest.raises(InvalidInputError):
            PriorConfig(batch_size=0)


def test_checkpoint_round_trip(tiny_model, vocabulary, tmp_path):
    path = str(tmp_path / "prior.json")
    tiny_model.save(path)
    restored = SequenceModel.load(path)
    assert restored.vocabulary == tiny_model.vocabulary
    for name, value in tiny_model.params.items():
        assert np.array_equal(restored.params[name], value)
    sequences = [vocabulary.encode(s) for s in CORPUS]
    assert np.array_equal(likelihood(restored, sequences), likelihood(tiny_model, sequences))


def test_copy_is_independent(tiny_model):
    clone = tiny_model.copy()
    clone.params["output.b"] += 1.0
    assert not np.array_equal(clone.params["output.b"], tiny_model.params["output.b"])
