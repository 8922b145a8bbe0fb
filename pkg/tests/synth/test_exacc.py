import numpy as np
import pytest

from tailrlab.model.core import ModelConfig, SequenceModel, parameter_shapes, step_log_prob_rows
from tailrlab.synth.core import VocabularyMismatchError
from tailrlab.synth.exacc import *

UNIFORM = [1 / 3, 1 / 3, 1 / 3]


@pytest.fixture
def config() -> ExAccConfig:
    return ExAccConfig(context_length=4, samples=40)


def _bigram(rows) -> SequenceModel:
    """
    A recurrent model that conditions only on the last input id: the update gate is shut,
    embeddings are one-hot and the saturated candidate copies them into the hidden state.
    rows[i] is the next-token distribution after input id i (EOS, body tokens, BOS, PAD).
    """
    config = ModelConfig(vocab_size=3, embedding_dim=5, hidden_dim=5)
    parameters = {name: np.zeros(shape) for name, shape in parameter_shapes(config).items()}
    parameters['emb'] = np.eye(5)
    parameters['w_xn'] = 30.0 * np.eye(5)
    parameters['b_z'] = np.full(5, -50.0)
    parameters['w_out'] = np.log(np.asarray(rows, dtype=np.float64))
    return SequenceModel(config, parameters)


@pytest.fixture(scope='module')
def bigram_oracle() -> SequenceModel:
    # token 2 is almost never emitted
    return _bigram([UNIFORM, [0.3, 0.69, 0.01], [0.3, 0.69, 0.01], [0.01, 0.98, 0.01], UNIFORM])


@pytest.fixture(scope='module')
def bigram_learner() -> SequenceModel:
    # leaks mass to token 2 and then keeps repeating it
    return _bigram([UNIFORM, [0.3, 0.6, 0.1], [0.05, 0.05, 0.9], [0.01, 0.89, 0.1], UNIFORM])


class TestExAccReport:
    def test_oracle_against_itself_reports_zero(self, oracle, config):
        report = exacc_report(oracle, oracle, config, seed=0)
        assert (report.regret, report.epsilon, report.percent) == (0.0, 0.0, 0.0)
        assert report.mode == 'exact'

    def test_importance_sampling_against_itself_reports_zero(self, oracle, config):
        report = exacc_report(oracle, oracle, config.copy(update={'importance_sampling': True}), seed=0)
        assert (report.regret, report.epsilon, report.percent) == (0.0, 0.0, 0.0)
        assert report.mode == 'importance'

    def test_learner_accumulates_error(self, learner, oracle, config):
        report = exacc_report(learner, oracle, config, seed=0)
        assert report.epsilon > 0.0
        assert report.regret > 0.0
        assert len(report.model_steps) == len(report.oracle_steps) == 4
        assert report.regret == pytest.approx(sum(report.model_steps))
        assert report.epsilon == pytest.approx(sum(report.oracle_steps) / 4)
        assert np.isfinite(report.percent)

    def test_is_reproducible(self, learner, oracle, config):
        first = exacc_report(learner, oracle, config, seed=3)
        second = exacc_report(learner, oracle, config, seed=3)
        assert (first.regret, first.epsilon, first.regret_se) == (second.regret, second.epsilon, second.regret_se)
        assert exacc_err(learner, oracle, config, seed=3) == first.percent

    def test_importance_estimate_is_close_to_the_exact_one(self, learner, oracle):
        exact = exacc_report(learner, oracle, ExAccConfig(context_length=2, samples=3000), seed=0)
        estimated = exacc_report(learner, oracle,
                                 ExAccConfig(context_length=2, samples=3000, importance_sampling=True), seed=0)
        assert estimated.epsilon == pytest.approx(exact.epsilon, abs=6 * estimated.epsilon_se + 1e-3)

    def test_bigram_construction_is_exact(self, bigram_learner):
        rows = np.exp(step_log_prob_rows(bigram_learner, [[1], [2], [1, 2], [2, 1]]))
        np.testing.assert_allclose(rows, [[0.3, 0.6, 0.1], [0.05, 0.05, 0.9], [0.05, 0.05, 0.9], [0.3, 0.6, 0.1]],
                                   atol=1e-12)

    def test_error_compounds_on_learner_prefixes(self, bigram_learner, bigram_oracle):
        report = exacc_report(bigram_learner, bigram_oracle, ExAccConfig(context_length=6, samples=400), seed=0)
        assert report.regret > report.context_length * report.epsilon
        assert report.model_steps[0] == pytest.approx(report.oracle_steps[0])
        assert all(model > oracle for model, oracle in zip(report.model_steps[1:], report.oracle_steps[1:]))
        assert report.percent > 100.0

    def test_importance_and_exact_modes_agree(self, bigram_learner, bigram_oracle):
        config = ExAccConfig(context_length=6, samples=2000)
        exact = exacc_report(bigram_learner, bigram_oracle, config, seed=1)
        estimated = exacc_report(bigram_learner, bigram_oracle, config.copy(update={'importance_sampling': True}),
                                 seed=1)
        assert estimated.regret == pytest.approx(exact.regret, abs=6 * estimated.regret_se + 1e-3)
        assert estimated.epsilon == pytest.approx(exact.epsilon, abs=6 * estimated.epsilon_se + 1e-3)

    def test_needs_a_shared_vocabulary(self, oracle, config):
        small = SequenceModel.initialize(ModelConfig(vocab_size=5, embedding_dim=2, hidden_dim=2),
                                         np.random.default_rng(0))
        with pytest.raises(VocabularyMismatchError):
            exacc_report(small, oracle, config)


class TestPercent:
    def test_excess_over_linear_accumulation(self):
        report = ExAccReport(10, 12.0, 0.0, 1.0, 0.0, [], [], 'exact', 1e-12)
        assert report.percent == pytest.approx(20.0)

    def test_below_linear_accumulation_is_negative(self):
        report = ExAccReport(5, 2.5, 0.0, 1.0, 0.0, [], [], 'exact', 1e-12)
        assert report.percent == pytest.approx(-50.0)

    def test_epsilon_below_tolerance_reports_zero(self):
        report = ExAccReport(10, 12.0, 0.0, 1e-13, 0.0, [], [], 'exact', 1e-12)
        assert report.percent == 0.0


def test_exacc_rows():
    reports = [ExAccReport(5, 6.0, 0.1, 1.0, 0.01, [], [], 'exact', 1e-12),
               ExAccReport(10, 12.0, 0.2, 1.0, 0.01, [], [], 'exact', 1e-12)]
    rows = exacc_rows('mle', reports)
    assert all(len(row) == len(EXACC_HEADER) for row in rows)
    assert rows[0] == ('mle', 5, pytest.approx(20.0), 'exact', 6.0, 0.1, 1.0, 0.01)
    assert [row[1] for row in rows] == [5, 10]
