import struct

import numpy as np
import pytest

from tailrlab.model.checkpoint import *
from tailrlab.model.core import PARAMETER_NAMES, SequenceModel, Vocab
from tailrlab.serialization import content_hash


def test_restores_parameters_config_and_words(learner, tmp_path):
    model = SequenceModel(learner.config, learner.parameters, Vocab(6, ['</s>', 'a', 'b', 'c', 'd', '<unk>']))
    sha = save(model, tmp_path / 'model.ckpt')
    restored = load(tmp_path / 'model.ckpt')

    assert sha == content_hash(tmp_path / 'model.ckpt') == model_hash(model)
    assert restored.config == model.config
    assert restored.vocab.words == model.vocab.words
    assert all(np.array_equal(restored.parameters[name], model.parameters[name]) for name in PARAMETER_NAMES)


def test_layout_starts_with_magic_and_version(learner):
    data = dumps(learner)
    magic, version = struct.unpack_from('<4sH', data, 0)
    assert (magic, version) == (MAGIC, FORMAT_VERSION)
    assert model_hash(learner) == model_hash(learner.copy())


def test_hash_changes_with_parameters(learner):
    changed = learner.copy()
    changed.parameters['b_out'][0] += 1e-12
    assert model_hash(changed) != model_hash(learner)


@pytest.mark.parametrize('mutate,reason', [
    (lambda data: data[:5], 'shorter than the header'),
    (lambda data: b'XXXX' + data[4:], 'bad magic'),
    (lambda data: data[:4] + struct.pack('<H', 99) + data[6:], 'format version 99'),
    (lambda data: data[:-8], 'truncated'),
    (lambda data: data + b'\x00', 'trailing bytes'),
    (lambda data: data[:10] + b'{' * 8 + data[18:], 'config block'),
])
def test_rejects_damaged_files(learner, mutate, reason):
    with pytest.raises(CheckpointFormatError) as exception_info:
        loads(mutate(dumps(learner)), 'model.ckpt')

    assert reason in str(exception_info.value)
    assert 'model.ckpt' in str(exception_info.value)
