import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from nltk.translate.bleu_score import sentence_bleu

from tailrlab.metrics import *

bodies = st.lists(st.lists(st.integers(min_value=1, max_value=5), min_size=0, max_size=8), min_size=2, max_size=12)


@pytest.fixture
def references():
    return [[1, 2, 3, 4, 5], [1, 2, 3, 4, 6, 7], [2, 3, 4, 5, 6], [5, 4, 3, 2, 1]]


@pytest.fixture
def samples():
    return [[1, 2, 3, 4], [1, 2, 3, 4], [1, 2, 3, 5], [2, 3, 4, 5, 1], [2, 3, 4, 5, 1, 2], [4, 3, 2, 1]]


class TestBleu:
    def test_agrees_with_nltk_sentence_bleu(self, references):
        hypotheses = [[1, 2, 3, 4, 5, 6], [2, 3, 4, 5], [1, 2, 3, 4, 6]]
        expected = 100.0 * np.mean([sentence_bleu(references, hypothesis) for hypothesis in hypotheses])
        assert bleu_n(hypotheses, references) == pytest.approx(expected, rel=1e-9)

    def test_hypotheses_copied_from_the_references_score_100(self, references):
        assert bleu_n(references, references) == pytest.approx(100.0)

    def test_no_shared_ngram_scores_zero(self, references):
        assert bleu_n([[8, 9, 8, 9]], references) == 0.0

    def test_short_hypotheses_score_zero_at_higher_orders(self, references):
        assert bleu_n([[1, 2]], references, n=4) == 0.0
        assert bleu_n([[1, 2]], references, n=2) > 0.0

    def test_brevity_penalty_uses_the_closest_reference(self):
        value = bleu_n([[1, 2]], [[1, 2, 3, 4]], n=1)
        assert value == pytest.approx(100.0 * np.exp(1.0 - 4 / 2))

    @pytest.mark.parametrize('n', [0, 5])
    def test_order_must_be_between_one_and_four(self, references, n):
        with pytest.raises(ValueError):
            bleu_n(references, references, n)

    def test_empty_corpora(self, references):
        with pytest.raises(EmptyCorpusError) as exception_info:
            bleu_n([], references)

        assert str(exception_info.value) == 'BLEU needs a nonempty hypothesis corpus.'
        with pytest.raises(EmptyCorpusError):
            bleu_n(references, [])

    @settings(derandomize=True, max_examples=40)
    @given(bodies, bodies)
    def test_is_bounded(self, hypotheses, references):
        assert 0.0 <= bleu_n(hypotheses, references) <= 100.0 + 1e-9


class TestSelfBleu:
    def test_agrees_with_leave_one_out_nltk(self, samples):
        expected = 100.0 * np.mean([sentence_bleu(samples[:i] + samples[i + 1:], samples[i])
                                    for i in range(len(samples))])
        assert self_bleu_n(samples) == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_distinct_samples_score_below_duplicates(self):
        duplicates = [[1, 2, 3, 4, 5]] * 4
        varied = [[1, 2, 3, 4, 5], [5, 4, 3, 2, 1], [2, 4, 1, 5, 3], [3, 1, 4, 2, 5]]
        assert self_bleu_n(duplicates) == pytest.approx(100.0)
        assert self_bleu_n(varied) < self_bleu_n(duplicates)

    def test_cap_subsamples_reproducibly(self, samples):
        assert self_bleu_n(samples, cap=4, seed=3) == self_bleu_n(samples, cap=4, seed=3)
        assert self_bleu_n(samples, cap=len(samples)) == self_bleu_n(samples)

    def test_needs_two_sequences(self):
        with pytest.raises(CorpusTooSmallError) as exception_info:
            self_bleu_n([[1, 2, 3, 4]])

        assert str(exception_info.value) == 'SelfBLEU needs at least 2 sequences, got 1.'

    def test_cap_of_one_is_too_small(self, samples):
        with pytest.raises(CorpusTooSmallError):
            self_bleu_n(samples, cap=1)

    @settings(derandomize=True, max_examples=40)
    @given(bodies)
    def test_is_bounded(self, corpus):
        assert 0.0 <= self_bleu_n(corpus) <= 100.0 + 1e-9


def test_subsample_keeps_corpus_order():
    corpus = [[i] for i in range(10)]
    chosen = subsample(corpus, 4, seed=1)
    assert len(chosen) == 4
    assert chosen == sorted(chosen)
    assert chosen == subsample(corpus, 4, seed=1)
    assert subsample(corpus, None, seed=1) == corpus
    assert subsample(corpus, 20, seed=1) == corpus


class TestDistinct:
    @pytest.mark.parametrize('corpus,n,expected', [
        ([[1, 2, 1, 2]], 2, 2 / 3),
        ([[1, 2, 1, 2]], 1, 2 / 4),
        ([[1, 2], [1, 2]], 2, 1 / 2),
        ([[1, 2, 3], [4]], 1, 1.0),
    ])
    def test_values(self, corpus, n, expected):
        assert distinct_n(corpus, n) == pytest.approx(expected)

    def test_needs_at_least_one_ngram(self):
        with pytest.raises(CorpusTooSmallError):
            distinct_n([[1], [2]], 2)

    @settings(derandomize=True, max_examples=40)
    @given(bodies.filter(lambda corpus: any(corpus)))
    def test_lies_in_unit_interval(self, corpus):
        assert 0.0 < distinct_n(corpus, 1) <= 1.0


class TestRep:
    @pytest.mark.parametrize('l,expected', [(1, 1 / 4), (2, 2 / 4), (16, 2 / 4)])
    def test_values(self, l, expected):
        assert rep_l([[1, 2, 1, 1]], l) == pytest.approx(expected)

    def test_pools_positions_across_sequences(self):
        assert rep_l([[1, 1], [2, 3, 4, 5, 6, 7]], 4) == pytest.approx(1 / 8)

    def test_empty_bodies_give_zero(self):
        assert rep_l([[], []], 4) == 0.0

    def test_rejects_bad_window_and_empty_corpus(self):
        with pytest.raises(ValueError):
            rep_l([[1]], 0)
        with pytest.raises(EmptyCorpusError):
            rep_l([], 4)

    @settings(derandomize=True, max_examples=40)
    @given(bodies)
    def test_grows_with_the_window(self, corpus):
        assert rep_l(corpus, 1) <= rep_l(corpus, 4) <= rep_l(corpus, 16) <= 1.0


class TestPairedBootstrap:
    def test_identical_systems(self):
        values = np.random.default_rng(0).normal(size=50)
        assert paired_bootstrap(values, values) == 1.0

    def test_clearly_different_systems(self):
        values = np.random.default_rng(0).normal(size=50)
        assert paired_bootstrap(values + 1.0, values) == 0.0
        assert paired_bootstrap(values - 1.0, values) == 0.0

    def test_is_reproducible(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=30), rng.normal(size=30)
        assert paired_bootstrap(a, b, seed=4) == paired_bootstrap(a, b, seed=4)

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(LengthMismatchError) as exception_info:
            paired_bootstrap([1.0, 2.0], [1.0])

        assert str(exception_info.value) == 'Paired values must have equal lengths, got 2 and 1.'

    def test_rejects_too_few_resamples(self):
        with pytest.raises(ValueError):
            paired_bootstrap([1.0], [2.0], resamples=10)

    def test_rejects_empty_lists(self):
        with pytest.raises(EmptyCorpusError):
            paired_bootstrap([], [])


class TestGenerationReports:
    def test_keeps_requested_order(self, samples, references):
        reports = generation_reports(samples, references, ['rep', 'bleu', 'distinct', 'selfbleu'], selfbleu_cap=4)
        assert [report.column for report in reports] == ['rep16', 'bleu4', 'distinct2', 'selfbleu4']
        selfbleu = reports[-1]
        assert (selfbleu.hypotheses, selfbleu.references, selfbleu.seed) == (4, 3, 0)
        assert reports[1].row() == ('bleu', 4, bleu_n(samples, references), len(samples), len(references), '')

    def test_rejects_unknown_metric(self, samples, references):
        with pytest.raises(ValueError) as exception_info:
            generation_reports(samples, references, ['meteor'])

        assert 'meteor' in str(exception_info.value)
