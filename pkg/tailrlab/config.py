import logging
import os
from typing import List, Literal, Optional, Sequence

from pydantic import BaseModel, confloat, conint, validator

from tailrlab.form import resolve_config
from tailrlab.model.core import ModelConfig
from tailrlab.model.train import TrainRun
from tailrlab.objectives import ObjectiveSpec, TailrConfig
from tailrlab.serialization import PathLike
from tailrlab.synth.exacc import ExAccConfig
from tailrlab.synth.gaussian import ToyGaussianConfig
from tailrlab.synth.oracle import OracleSpec
from tailrlab.synth.perturb import KINDS

LOG_LEVEL = 'TAILRLAB_LOG_LEVEL'
INJECT_FAULT = 'TAILRLAB_INJECT_FAULT'

logger = logging.getLogger(__name__)


class MissingEnvironmentVariableError(Exception):
    """
    Error raised when an environment variable could not be found in the configured environment
    """

    def __init__(self, env_var_name: str):
        self.env_var_name = env_var_name

    def __str__(self):
        return f'An environment variable with the name: {self.env_var_name} could not be found.'


def env_var(name: str, default: str = None, environment=os.environ) -> str:
    """
    Retrieves a specified environment variable.
    A default value can be provided in the case the value could not be found.
    Otherwise an exception is raised detailing that the variable could not be retrieved.

    :param name: The name of the environment variable to retrieve
    :param default: The value that will be used if no environment variable could be found.
    :param environment: The environment to attempt to retrieve the variable from. By default the os environment is used.
    :return:
    """
    try:
        return environment[name]
    except KeyError:
        if default is None:
            raise MissingEnvironmentVariableError(name)
        return default


def log_level(environment=os.environ) -> str:
    return env_var(LOG_LEVEL, default='INFO', environment=environment).upper()


def inject_fault(environment=os.environ) -> bool:
    """
    Test-only switch that makes the verifier suite fail on purpose.
    """
    return env_var(INJECT_FAULT, default='0', environment=environment).strip().lower() in ('1', 'true', 'yes')


class DataConfig(BaseModel):
    n_train: conint(ge=1) = 5000
    n_dev: conint(ge=1) = 500
    n_test: conint(ge=1) = 1000
    max_len: conint(ge=1) = 20

    class Config:
        extra = 'forbid'


class MetricsConfig(BaseModel):
    """
    Generation metrics computed for every learner on its own samples, with the test split as
    reference corpus.
    """
    names: List[Literal['bleu', 'selfbleu', 'distinct', 'rep']] = ['bleu', 'selfbleu']
    samples: conint(ge=2) = 1000
    bleu_order: conint(ge=1, le=4) = 4
    selfbleu_cap: conint(ge=2) = 1000
    distinct_order: conint(ge=1) = 2
    rep_window: conint(ge=1) = 16

    class Config:
        extra = 'forbid'


class VerifyConfig(BaseModel):
    trials: conint(ge=1) = 1000

    class Config:
        extra = 'forbid'


class PerturbConfig(BaseModel):
    steps: conint(ge=0) = 30
    kinds: List[Literal['repeat', 'delete', 'substitute']] = list(KINDS)
    origins: conint(ge=1) = 500
    buckets: conint(ge=1) = 20
    length_width: conint(ge=1) = 1

    @validator('kinds')
    def kinds_not_empty(cls, value):
        if not value:
            raise ValueError('at least one perturbation kind is required')
        return value

    class Config:
        extra = 'forbid'


class ExAccSection(BaseModel):
    context_lengths: List[conint(ge=1)] = [5, 10, 15]
    samples: conint(ge=1) = 1000
    importance_sampling: bool = False
    zero_epsilon_tolerance: confloat(ge=0.0) = 1e-12
    include_oracle: bool = True

    class Config:
        extra = 'forbid'

    def for_length(self, context_length: int) -> ExAccConfig:
        return ExAccConfig(context_length=context_length,
                           samples=self.samples,
                           importance_sampling=self.importance_sampling,
                           zero_epsilon_tolerance=self.zero_epsilon_tolerance)


class SweepConfig(BaseModel):
    gammas: List[confloat(ge=0.0, le=1.0)] = [1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 1.0]
    weight_floor: confloat(ge=0.0, lt=1.0) = 0.0
    curve_points: conint(ge=2) = 101

    @validator('gammas')
    def gammas_not_empty(cls, value):
        if not value:
            raise ValueError('the gamma list must not be empty')
        return value

    class Config:
        extra = 'forbid'

    def objective(self, gamma: float) -> ObjectiveSpec:
        return ObjectiveSpec(kind='tailr', label=f'tailr_gamma_{gamma!r}',
                             tailr=TailrConfig(gamma=gamma, weight_floor=self.weight_floor))


def _default_objectives() -> List[ObjectiveSpec]:
    return [ObjectiveSpec(kind='mle'), ObjectiveSpec(kind='tailr')]


class RunConfig(BaseModel):
    """
    Everything one experiment run depends on. Identical configs produce identical files.
    """
    seed: conint(ge=0) = 0
    out: str = 'runs/default'
    plots: bool = True
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    oracle: OracleSpec = OracleSpec()
    training: TrainRun = TrainRun()
    objectives: List[ObjectiveSpec] = _default_objectives()
    metrics: MetricsConfig = MetricsConfig()
    verify: VerifyConfig = VerifyConfig()
    toy_gaussian: ToyGaussianConfig = ToyGaussianConfig()
    perturb: PerturbConfig = PerturbConfig()
    exacc: ExAccSection = ExAccSection()
    sweep: SweepConfig = SweepConfig()

    @validator('oracle')
    def oracle_shares_vocabulary(cls, value, values):
        model = values.get('model')
        if model is not None and value.model.vocab_size != model.vocab_size:
            raise ValueError(f'oracle vocab_size {value.model.vocab_size} differs from model vocab_size '
                             f'{model.vocab_size}')
        return value

    @validator('objectives')
    def labels_are_unique(cls, value):
        labels = [spec.label for spec in value]
        duplicates = sorted({label for label in labels if labels.count(label) > 1})
        if duplicates:
            raise ValueError(f'objective labels must be unique, repeated: {duplicates}')
        if not value:
            raise ValueError('at least one objective is required')
        return value

    class Config:
        extra = 'forbid'

    def select(self, labels: Sequence[str]) -> 'RunConfig':
        """
        A copy keeping only the objectives with the given labels, in the given order.

        :raises ValueError: if a label is not configured
        """
        by_label = {spec.label: spec for spec in self.objectives}
        unknown = [label for label in labels if label not in by_label]
        if unknown:
            raise ValueError(f'Unknown objectives {unknown}; configured: {list(by_label)}')
        return self.copy(update={'objectives': [by_label[label] for label in labels]})

    def training_for(self, spec: ObjectiveSpec) -> TrainRun:
        return self.training.copy(update={'objective': spec, 'seed': self.seed})


def default_run_config() -> RunConfig:
    return RunConfig()


def load_run_config(path: Optional[PathLike] = None) -> RunConfig:
    """
    Reads and validates a JSON run config; the defaults when no path is given.

    :raises ConfigValidationError: if the file is not valid JSON or does not match RunConfig
    """
    if path is None:
        return default_run_config()
    try:
        with open(path, encoding='utf-8') as file:
            text = file.read()
    except OSError as ex:
        logger.error('Could not read run config %s: %s', path, ex)
        text = ''
    return resolve_config(text, RunConfig)
