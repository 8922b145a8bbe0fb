import csv
import hashlib
import math
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import jsonpickle

PathLike = Union[str, os.PathLike]


class NonFiniteCellError(ValueError):
    """
    Error raised when a non-finite number is about to be written into a CSV artifact.
    """

    def __init__(self, path: PathLike, column: str, value: float):
        self.path = str(path)
        self.column = column
        self.value = value

    def __str__(self):
        return f'Refusing to write non-finite value {self.value!r} in column {self.column} of {self.path}.'


class CamelCaseAttributesMixin:
    """
    Mixin used alongside jsonpickle (which reads objects through __getstate__) so that
    artifact records such as run manifests are written with camel cased keys.

    Only root level attributes are renamed.
    """

    def __getstate__(self):
        return {snake_case_to_camel_case(key): value for key, value in self.__dict__.items()}


def snake_case_to_camel_case(value: str) -> str:
    """
    Converts given string from snake case to camel case

    :param value: The snake case string
    :return: The given string in camel case format
    """
    if '_' not in value:
        return value

    return re.sub(r'_([a-zA-Z0-9])', lambda match: match.group(1).upper(), value.strip('_'))


def to_json(value: Any) -> str:
    """
    Serializes plain data (dicts, lists, numbers, mixin records) into indented JSON.
    Key order follows insertion order so equal inputs always give equal bytes.
    """
    return jsonpickle.dumps(value, unpicklable=False, indent=2) + '\n'


def from_json(text: Union[str, bytes]) -> Any:
    if isinstance(text, bytes):
        text = text.decode('utf-8')
    return jsonpickle.loads(text)


def format_cell(value: Any) -> str:
    """
    Formats a CSV cell. Floats use the shortest repr that round-trips exactly.
    """
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, 'item'):
        # numpy scalars
        return format_cell(value.item())
    return str(value)


def write_atomic(path: PathLike, data: Union[str, bytes]) -> Path:
    """
    Writes data to a temporary file next to path and renames it into place.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode('utf-8') if isinstance(data, str) else data
    handle, temporary = tempfile.mkstemp(dir=str(path.parent), prefix=f'.{path.name}.')
    try:
        with os.fdopen(handle, 'wb') as file:
            file.write(payload)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.remove(temporary)
        raise
    return path


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Writes a header row followed by the given rows. Every numeric cell must be finite.

    :param path: Destination file
    :param header: Column names
    :param rows: Row values in header order
    :return: The written path
    """
    lines: List[List[str]] = []
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f'Row has {len(row)} cells but header has {len(header)} columns: {row!r}')
        cells = []
        for column, value in zip(header, row):
            if isinstance(value, float) and not math.isfinite(value):
                raise NonFiniteCellError(path, column, value)
            cells.append(format_cell(value))
        lines.append(cells)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(lines)
    return path


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    with open(path, newline='', encoding='utf-8') as file:
        return list(csv.DictReader(file))


def content_hash(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as file:
        for chunk in iter(lambda: file.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def bytes_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
