"""
Run directory holding the oracle, the synthetic datasets and one learner per objective.

Each artifact is built on first use and persisted with a key describing its inputs; a later
run with the same inputs reads it back instead of rebuilding it.
"""
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional

from tailrlab.model import checkpoint
from tailrlab.model.core import SequenceModel
from tailrlab.model.train import EpochLog, train
from tailrlab.objectives import ObjectiveSpec
from tailrlab.seeding import substream
from tailrlab.serialization import PathLike, bytes_hash, from_json, to_json, write_atomic, write_csv
from tailrlab.synth.core import ensure_same_vocab, read_dataset
from tailrlab.synth.oracle import SyntheticData, build_oracle, persist, synthesize

if TYPE_CHECKING:
    from tailrlab.config import RunConfig

logger = logging.getLogger(__name__)

TRAINING_LOG_HEADER = ('epoch', 'train_loss', 'dev_ppl', 'mean_weight', 'dropped')


def _key(*parts) -> str:
    return bytes_hash(to_json(list(parts)).encode('utf-8'))


class Workspace:
    """
    Lazily built, persisted experiment state under one output directory.
    """

    def __init__(self, config: 'RunConfig', root: Optional[PathLike] = None):
        self.config = config
        self.root = Path(root if root is not None else config.out)
        self.files: List[Path] = []
        self._oracle: Optional[SequenceModel] = None
        self._oracle_hash: Optional[str] = None
        self._data: Optional[SyntheticData] = None
        self._learners: Dict[str, SequenceModel] = {}
        self.training_logs: Dict[str, List[EpochLog]] = {}

    def _produced(self, path: Path) -> Path:
        if path not in self.files:
            self.files.append(path)
        return path

    def _stored_key(self, path: Path) -> Optional[str]:
        if not path.is_file():
            return None
        with open(path, encoding='utf-8') as file:
            return from_json(file.read()).get('key')

    def oracle(self) -> SequenceModel:
        if self._oracle is None:
            path, sidecar = self.root / 'oracle.ckpt', self.root / 'oracle.json'
            key = _key(self.config.oracle.dict())
            if path.is_file() and self._stored_key(sidecar) == key:
                self._oracle = checkpoint.load(path)
                logger.info('Loaded oracle from %s', path)
            else:
                self._oracle = build_oracle(self.config.oracle)
                checkpoint.save(self._oracle, path)
                write_atomic(sidecar, to_json({'key': key}))
            self._oracle_hash = checkpoint.model_hash(self._oracle)
            self._produced(path)
        return self._oracle

    def data(self) -> SyntheticData:
        if self._data is None:
            oracle = self.oracle()
            directory = self.root / 'data'
            settings = self.config.data
            key = _key(self._oracle_hash, settings.dict(), self.config.seed)
            manifest = directory / 'datasets.json'
            if self._stored_key(directory / 'key.json') == key and manifest.is_file():
                with open(manifest, encoding='utf-8') as file:
                    stored = from_json(file.read())
                self._data = SyntheticData(read_dataset(directory / 'train.txt'),
                                           read_dataset(directory / 'dev.txt'),
                                           read_dataset(directory / 'test.txt'),
                                           stored['oracleHash'], stored['seeds'], stored['maxLen'],
                                           stored['resampled'])
                logger.info('Loaded %r from %s', self._data, directory)
            else:
                self._data = synthesize(oracle, settings.n_train, settings.n_dev, settings.n_test,
                                        settings.max_len, self.config.seed)
                persist(self._data, directory)
                write_atomic(directory / 'key.json', to_json({'key': key}))
            for name in ('train', 'dev', 'test'):
                self._produced(directory / f'{name}.txt')
            self._produced(manifest)
        return self._data

    def learner(self, spec: ObjectiveSpec) -> SequenceModel:
        """
        The learner trained on the synthetic train split with the given objective. All learners
        start from the same initial parameters.
        """
        if spec.label not in self._learners:
            data = self.data()
            directory = self.root / 'learners'
            path = directory / f'{spec.label}.ckpt'
            run = self.config.training_for(spec)
            key = _key(self._oracle_hash, self.config.data.dict(), self.config.model.dict(), run.dict())
            if path.is_file() and self._stored_key(directory / f'{spec.label}.json') == key:
                model = checkpoint.load(path)
                ensure_same_vocab(model, self.oracle(), spec.label)
                logger.info('Loaded learner %s from %s', spec.label, path)
            else:
                initial = SequenceModel.initialize(self.config.model, substream(self.config.seed, 'learner'))
                model, log = train(initial, data.train, run, data.dev)
                checkpoint.save(model, path)
                write_atomic(directory / f'{spec.label}.json', to_json({'key': key}))
                write_csv(directory / f'{spec.label}_log.csv', TRAINING_LOG_HEADER, [entry.row() for entry in log])
                self.training_logs[spec.label] = log
            self._learners[spec.label] = model
            self._produced(path)
            self._produced(directory / f'{spec.label}_log.csv')
        return self._learners[spec.label]

    def learners(self) -> Dict[str, SequenceModel]:
        return {spec.label: self.learner(spec) for spec in self.config.objectives}
