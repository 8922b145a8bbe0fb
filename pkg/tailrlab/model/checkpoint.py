"""
Versioned binary checkpoints.

Layout: magic b'TLRC', u16 format version, u32 length of a UTF-8 JSON block (model config and
optional vocabulary words), then every parameter in PARAMETER_NAMES order as little-endian
float64 values in row-major order.
"""
import struct
from typing import Optional

import numpy as np

from tailrlab.model.core import PARAMETER_NAMES, ModelConfig, SequenceModel, Vocab, parameter_shapes
from tailrlab.serialization import PathLike, bytes_hash, from_json, to_json, write_atomic

MAGIC = b'TLRC'
FORMAT_VERSION = 1
_HEADER = struct.Struct('<4sHI')


class CheckpointFormatError(ValueError):
    """
    Error raised when checkpoint bytes do not follow the expected layout or version.
    """

    def __init__(self, reason: str, path: Optional[str] = None):
        self.reason = reason
        self.path = path

    def __str__(self):
        where = f' {self.path}' if self.path else ''
        return f'Could not read checkpoint{where}: {self.reason}.'


def dumps(model: SequenceModel) -> bytes:
    block = {'config': model.config.dict(), 'words': model.vocab.words}
    config_bytes = to_json(block).encode('utf-8')
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(config_bytes)), config_bytes]
    for name in PARAMETER_NAMES:
        chunks.append(np.ascontiguousarray(model.parameters[name], dtype='<f8').tobytes())
    return b''.join(chunks)


def loads(data: bytes, path: Optional[str] = None) -> SequenceModel:
    """
    :param data: Checkpoint bytes
    :param path: Only used in error messages
    :return: The restored model
    """
    if len(data) < _HEADER.size:
        raise CheckpointFormatError('file is shorter than the header', path)
    magic, version, config_length = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(f'bad magic bytes {magic!r}', path)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f'format version {version} is not supported (expected {FORMAT_VERSION})', path)

    offset = _HEADER.size
    try:
        block = from_json(data[offset:offset + config_length])
        config = ModelConfig(**block['config'])
    except Exception as ex:
        raise CheckpointFormatError(f'config block is unreadable ({ex})', path) from ex
    offset += config_length

    parameters = {}
    for name, shape in parameter_shapes(config).items():
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointFormatError(f'parameter {name} is truncated', path)
        parameters[name] = np.frombuffer(data[offset:end], dtype='<f8').astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise CheckpointFormatError(f'{len(data) - offset} trailing bytes after the last parameter', path)

    words = block.get('words')
    return SequenceModel(config, parameters, Vocab(config.vocab_size, words))


def save(model: SequenceModel, path: PathLike) -> str:
    """
    Writes the checkpoint atomically.

    :return: SHA-256 of the written bytes
    """
    data = dumps(model)
    write_atomic(path, data)
    return bytes_hash(data)


def load(path: PathLike) -> SequenceModel:
    with open(path, 'rb') as file:
        return loads(file.read(), str(path))


def model_hash(model: SequenceModel) -> str:
    return bytes_hash(dumps(model))
