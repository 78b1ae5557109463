from __future__ import annotations

import json
from typing import Mapping

__version__ = "0.3.0"

version = __version__


class LexiconError(ValueError):
    """Raised for malformed pronunciation dictionaries, unknown phoneme symbols and out-of-vocabulary words

    ```pycon
    >>> raise LexiconError("unknown phoneme symbol 'XX'", symbol="XX", line_number=3)
    Traceback (most recent call last):
    lexstress.LexiconError: line 3: unknown phoneme symbol 'XX'

    ```
    """

    def __init__(
        self, message: str, *, line_number: int | None = None, symbol: str | None = None, word: str | None = None
    ):
        self.line_number = line_number
        self.symbol = symbol
        self.word = word
        super().__init__(f"line {line_number}: {message}" if line_number is not None else message)


class FormatError(ValueError):
    """Raised when a file on disk (WAV, feature dump, checkpoint, manifest) is not in the expected format"""


class NumericsError(FloatingPointError):
    """Raised when a computation produces NaN or Inf"""


def trim_dict(v, max_length: int | None = None):
    """Stringify and trim a mapping if it's longer than `TRIM_LOG_OBJECT_LENGTH`
    (keeps log lines about manifest records readable)

    ```pycon
    >>> trim_dict({"audio": "a.wav", "transcript": "PREDICT"}, max_length=20)
    '{"audio": "a.wav", "...'
    >>> trim_dict([{"a": 1}], max_length=-1)
    [{'a': 1}]

    ```
    """
    from lexstress.config import TRIM_LOG_OBJECT_LENGTH

    max_length = TRIM_LOG_OBJECT_LENGTH if max_length is None else max_length
    if max_length != -1 and isinstance(v, Mapping):
        if len(str(v)) > max_length:
            return json.dumps(v, default=str)[:max_length] + "..."
    if isinstance(v, list):
        return [trim_dict(_v, max_length) for _v in v]
    return v


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
