import pytest

from tailrlab.config import DataConfig, ExAccSection, MetricsConfig, PerturbConfig, RunConfig, SweepConfig, \
    VerifyConfig
from tailrlab.model.core import ModelConfig, SequenceModel, TokenSequence
from tailrlab.model.train import TrainRun
from tailrlab.seeding import substream
from tailrlab.synth.gaussian import DescentSpec, GridSpec, ToyGaussianConfig
from tailrlab.synth.oracle import OracleSpec, build_oracle, synthesize

TINY_VOCAB = 6
TINY_MAX_LEN = 8


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(vocab_size=TINY_VOCAB, embedding_dim=4, hidden_dim=5)


@pytest.fixture
def learner(tiny_config) -> SequenceModel:
    return SequenceModel.initialize(tiny_config, substream(0, 'learner'))


@pytest.fixture
def oracle_spec(tiny_config) -> OracleSpec:
    return OracleSpec(model=tiny_config.copy(update={'output_gain': 6.0}), seed=3, expected_length=4.0,
                      max_len=TINY_MAX_LEN)


@pytest.fixture
def oracle(oracle_spec) -> SequenceModel:
    return build_oracle(oracle_spec)


@pytest.fixture
def tiny_data(oracle):
    return synthesize(oracle, n_train=24, n_dev=6, n_test=10, max_len=TINY_MAX_LEN, seed=0)


@pytest.fixture
def sequences():
    return [
        TokenSequence.from_body([1, 2, 3]),
        TokenSequence.from_body([4]),
        TokenSequence.from_body([2, 2, 5, 2, 1]),
        TokenSequence.from_body([]),
    ]


@pytest.fixture
def tiny_run_config(tmp_path, tiny_config, oracle_spec) -> RunConfig:
    return RunConfig(
        seed=0,
        out=str(tmp_path / 'run'),
        plots=False,
        data=DataConfig(n_train=24, n_dev=6, n_test=10, max_len=TINY_MAX_LEN),
        model=tiny_config,
        oracle=oracle_spec,
        training=TrainRun(epochs=1, batch_size=8, learning_rate=0.03),
        metrics=MetricsConfig(names=['bleu', 'selfbleu', 'distinct', 'rep'], samples=12, selfbleu_cap=10,
                              distinct_order=1),
        verify=VerifyConfig(trials=4),
        toy_gaussian=ToyGaussianConfig(grid=GridSpec(points=401), descent=DescentSpec(max_iterations=300)),
        perturb=PerturbConfig(steps=3, origins=5, buckets=4),
        exacc=ExAccSection(context_lengths=[2, 4], samples=10),
        sweep=SweepConfig(gammas=[1e-3, 1.0], curve_points=5),
    )
