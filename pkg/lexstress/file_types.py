from __future__ import annotations

import json
from abc import ABC
from functools import partial
from pathlib import Path
from typing import Any, Callable, ClassVar, List, Set

import yaml
from pydantic import BaseModel

from lexstress import FormatError


class FileType(BaseModel, ABC, arbitrary_types_allowed=True):
    """**Abstract Base** File Type

    :param extension: The file extension(s) for this file type
    :type extension: Set[str]
    :param load_fn: The function to load the file contents for this file type
    :type load_fn: Callable[[str], Any]
    :param dump_fn: The function to dump contents to a string for this file type
    :type dump_fn: Callable[[Any], str]
    """

    extension: ClassVar[Set[str]]
    load_fn: ClassVar[Callable[[str], Any]]
    dump_fn: ClassVar[Callable[[Any], str]]

    def __hash__(self):
        return hash(tuple(self.extension))

    @classmethod
    def load(cls, path: Path | str) -> Any:
        """Read and parse a file

        :raises FormatError: if the contents do not parse
        """
        path = Path(path)
        try:
            return cls.load_fn(path.read_text())
        except (ValueError, yaml.YAMLError) as e:
            if isinstance(e, FormatError):
                raise FormatError(f"{path}: {e}") from None
            raise FormatError(f"{path}: not valid {'/'.join(sorted(cls.extension))} ({e})") from None

    @classmethod
    def dump(cls, contents: Any, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(cls.dump_fn(contents))
        return path


class FileTypeJSON(FileType):
    """JSON File Type

    ```pycon
    >>> out = FileTypeJSON.dump_fn({'a': 1}); out
    '{"a": 1}'
    >>> FileTypeJSON.load_fn(out)
    {'a': 1}

    ```
    :param extension: JSON
    :type extension: Set[str]
    :param load_fn: json.loads
    :type load_fn: Callable[[str], dict]
    :param dump_fn: json.dumps
    :type dump_fn: Callable[[dict], str]
    """

    extension: ClassVar[Set[str]] = {"JSON"}
    load_fn: ClassVar[Callable[[str], dict]] = json.loads
    dump_fn: ClassVar[Callable[[dict], str]] = partial(json.dumps, default=str)


def jsonl_loads(input_str: str) -> List[dict]:
    """One JSON object per line; blank lines are skipped

    ```pycon
    >>> jsonl_loads('{"a": 1}\\n\\n{"a": 2}\\n')
    [{'a': 1}, {'a': 2}]
    >>> jsonl_loads('{"a": 1}\\n[1, 2]')
    Traceback (most recent call last):
    lexstress.FormatError: line 2: expected a JSON object, got list
    >>> jsonl_loads('{"a": ')
    Traceback (most recent call last):
    lexstress.FormatError: line 1: ...

    ```
    :param input_str: the whole file
    :type input_str: str
    :return: the records, in file order
    :rtype: List[dict]
    """
    records = []
    for line_number, line in enumerate(input_str.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"line {line_number}: {e}") from None
        if not isinstance(record, dict):
            raise FormatError(f"line {line_number}: expected a JSON object, got {type(record).__name__}")
        records.append(record)
    return records


def jsonl_dumps(records: List[dict]) -> str:
    """
    ```pycon
    >>> print(jsonl_dumps([{"a": 1}, {"b": [1, 2]}]), end="")
    {"a": 1}
    {"b": [1, 2]}

    ```
    """
    return "".join(json.dumps(r, default=str) + "\n" for r in records)


class FileTypeJSONL(FileType):
    """JSON-lines File Type, used for manifests and decode outputs

    :param extension: JSONL
    :type extension: Set[str]
    :param load_fn: jsonl_loads
    :type load_fn: Callable[[str], List[dict]]
    :param dump_fn: jsonl_dumps
    :type dump_fn: Callable[[List[dict]], str]
    """

    extension: ClassVar[Set[str]] = {"JSONL"}
    load_fn: ClassVar[Callable[[str], List[dict]]] = jsonl_loads
    dump_fn: ClassVar[Callable[[List[dict]], str]] = jsonl_dumps


class FileTypeYAML(FileType):
    """YAML File Type, used for run configs and synthetic corpus specs

    ```pycon
    >>> out = FileTypeYAML.dump_fn({'a': 1}); out
    'a: 1\\n'
    >>> FileTypeYAML.load_fn(out)
    {'a': 1}

    ```
    :param extension: YAML, YML
    :type extension: Set[str]
    :param load_fn: yaml.safe_load
    :type load_fn: Callable[[str], dict]
    :param dump_fn: yaml.safe_dump
    :type dump_fn: Callable[[dict], str]
    """

    extension: ClassVar[Set[str]] = {"YAML", "YML"}
    load_fn: ClassVar[Callable[[str], dict]] = yaml.safe_load
    dump_fn: ClassVar[Callable[[dict], str]] = partial(yaml.safe_dump, sort_keys=False)


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
