"""
Phoneme vocabulary, CMU pronunciation dictionary parsing and decoding constraints.

A stress-marked phoneme sequence such as `P R IH0 D IH1 K T` ("PREDICT") is the unit the model
predicts. Stripping the stress digits gives the base sequence `P R IH D IH K T`, which is what the
decoder is restricted to: consonant positions are fixed, vowel positions may take any stress digit.

```pycon
>>> lex = parse_dictionary(["PREDICT  P R IH0 D IH1 K T"])
>>> lex.first("predict")
(P, R, IH0, D, IH1, K, T)
>>> strip_stress(lex.first("PREDICT"))
('P', 'R', 'IH', 'D', 'IH', 'K', 'T')
>>> lattice = build_constraint(["PREDICT"], lex)
>>> [sorted(VOCABULARY.decode(i) for i in p) for p in lattice.positions][:3]
[['P'], ['R'], ['IH0', 'IH1', 'IH2']]
>>> lattice.word_spans
(WordSpan(start=0, end=7, word='PREDICT', is_polysyllabic=True),)

```
"""

from __future__ import annotations

import re
import threading
from functools import lru_cache
from itertools import product
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, List, Literal, Mapping, Sequence, Tuple

from loguru import logger
from pydantic import BaseModel, field_validator, model_validator

from lexstress import LexiconError

CONSONANTS: Tuple[str, ...] = (
    "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N",
    "NG", "P", "R", "S", "SH", "T", "TH", "V", "W", "Y", "Z", "ZH",
)  # fmt: skip
"""The 24 CMU consonants, which never carry stress"""

VOWELS: Tuple[str, ...] = (
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
)  # fmt: skip
"""The 15 CMU vowels, which always carry a stress digit"""

STRESS_DIGITS: Tuple[int, ...] = (0, 1, 2)
"""0 = unstressed, 1 = primary stress, 2 = secondary stress"""

PAD, SOS, EOS = "<pad>", "<sos>", "<eos>"
PAD_ID, SOS_ID, EOS_ID = 0, 1, 2
SPECIALS: Tuple[str, ...] = (PAD, SOS, EOS)

_VOWEL_SET = frozenset(VOWELS)
_BASE_SET = frozenset(CONSONANTS) | _VOWEL_SET
_TOKEN_RE = re.compile(r"^(?P<base>[A-Z]+)(?P<stress>[0-9])?$")
_ALTERNATE_RE = re.compile(r"^(?P<word>.+?)\((?P<n>\d+)\)$")


class PhonemeToken(BaseModel, frozen=True, extra="forbid"):
    """A base phoneme plus a stress digit, present if and only if the base is a vowel

    ```pycon
    >>> PhonemeToken.parse("IH1")
    IH1
    >>> PhonemeToken(base="K")
    K
    >>> PhonemeToken(base="K", stress=1)
    Traceback (most recent call last):
    pydantic_core._pydantic_core.ValidationError: ...
    >>> PhonemeToken.parse("IH")
    Traceback (most recent call last):
    lexstress.LexiconError: vowel 'IH' is missing its stress digit

    ```

    :param base: symbol from the 39 CMU phonemes
    :type base: str
    :param stress: stress digit in {0, 1, 2}, only for vowels
    :type stress: int | None
    """

    base: str
    stress: Literal[0, 1, 2] | None = None

    @model_validator(mode="after")
    def _stress_iff_vowel(self):
        if self.base not in _BASE_SET:
            raise ValueError(f"unknown phoneme symbol '{self.base}'")
        if (self.stress is not None) != (self.base in _VOWEL_SET):
            raise ValueError(
                f"'{self.base}' {'requires' if self.base in _VOWEL_SET else 'cannot carry'} a stress digit"
            )
        return self

    @property
    def is_vowel(self) -> bool:
        return self.base in _VOWEL_SET

    @staticmethod
    @lru_cache(maxsize=None)
    def parse(text: str) -> "PhonemeToken":
        """Parse the textual form (`IH1`, `K`); instances are cached, there are only 72 of them"""
        match = _TOKEN_RE.match(text.strip().upper())
        if not match or match["base"] not in _BASE_SET:
            raise LexiconError(f"unknown phoneme symbol '{text}'", symbol=text)
        base, stress = match["base"], match["stress"]
        if base in _VOWEL_SET and stress is None:
            raise LexiconError(f"vowel '{base}' is missing its stress digit", symbol=text)
        if base not in _VOWEL_SET and stress is not None:
            raise LexiconError(f"consonant '{base}' cannot carry a stress digit", symbol=text)
        if stress is not None and int(stress) not in STRESS_DIGITS:
            raise LexiconError(f"unknown stress digit in '{text}'", symbol=text)
        return PhonemeToken(base=base, stress=None if stress is None else int(stress))

    def __str__(self):
        return self.base if self.stress is None else f"{self.base}{self.stress}"

    def __repr__(self):
        return str(self)


class Vocabulary:
    """Fixed bijection between token text and ids:
    3 specials, then the 24 consonants, then each of the 15 vowels with digits 0, 1, 2

    ```pycon
    >>> len(VOCABULARY)
    72
    >>> VOCABULARY.encode("IH1"), VOCABULARY.decode(55)
    (55, 'IH1')
    >>> VOCABULARY.encode("P"), VOCABULARY.encode("<eos>")
    (16, 2)

    ```
    """

    def __init__(self):
        tokens = list(SPECIALS) + list(CONSONANTS) + [f"{v}{d}" for v in VOWELS for d in STRESS_DIGITS]
        self.tokens: Tuple[str, ...] = tuple(tokens)
        self._ids = MappingProxyType({t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def encode(self, token: str | PhonemeToken) -> int:
        try:
            return self._ids[str(token)]
        except KeyError:
            raise LexiconError(f"unknown phoneme symbol '{token}'", symbol=str(token)) from None

    def decode(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise LexiconError(f"token id {token_id} is outside the vocabulary of {len(self.tokens)}")
        return self.tokens[token_id]

    def encode_all(self, tokens: Iterable[str | PhonemeToken]) -> List[int]:
        return [self.encode(t) for t in tokens]

    def decode_all(self, ids: Iterable[int]) -> List[str]:
        return [self.decode(i) for i in ids]

    def is_special(self, token_id: int) -> bool:
        return token_id < len(SPECIALS)


VOCABULARY = Vocabulary()


class Lexicon:
    """Mapping from uppercase words to one or more pronunciations, in dictionary order.
    Immutable once built by [`parse_dictionary`][lexstress.lexicon.parse_dictionary].

    ```pycon
    >>> lex = parse_dictionary([";;; comment", "A  AH0", "A(2)  EY1"])
    >>> lex.pronunciations("A")
    ((AH0,), (EY1,))
    >>> len(lex), lex.num_pronunciations
    (1, 2)
    >>> "a" in lex
    True

    ```
    """

    def __init__(self, entries: Mapping[str, Sequence[Sequence[PhonemeToken]]]):
        self._entries = MappingProxyType({w: tuple(tuple(p) for p in prons) for w, prons in entries.items()})
        self._warned: set[str] = set()
        self._warned_lock = threading.Lock()

    def __len__(self):
        return len(self._entries)

    def __contains__(self, word: str) -> bool:
        return normalize_word(word) in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __eq__(self, other):
        return isinstance(other, Lexicon) and dict(self._entries) == dict(other._entries)

    def __repr__(self):
        return f"Lexicon(words={len(self)}, pronunciations={self.num_pronunciations})"

    @property
    def entries(self) -> Mapping[str, Tuple[Tuple[PhonemeToken, ...], ...]]:
        return self._entries

    @property
    def num_pronunciations(self) -> int:
        return sum(len(p) for p in self._entries.values())

    def pronunciations(self, word: str) -> Tuple[Tuple[PhonemeToken, ...], ...]:
        key = normalize_word(word)
        if key not in self._entries:
            raise LexiconError(f"out-of-vocabulary word '{key}'", word=key)
        return self._entries[key]

    def first(self, word: str) -> Tuple[PhonemeToken, ...]:
        """The pronunciation used for decoding and reference stress; alternates are ignored with a warning"""
        prons = self.pronunciations(word)
        if len(prons) > 1:
            key = normalize_word(word)
            with self._warned_lock:
                unseen = key not in self._warned
                self._warned.add(key)
            if unseen:
                logger.warning(f"'{key}' has {len(prons)} pronunciations, using the first")
        return prons[0]


def normalize_word(word: str) -> str:
    """Uppercase and strip leading/trailing punctuation

    ```pycon
    >>> normalize_word('"predict,')
    'PREDICT'
    >>> normalize_word("don't")
    "DON'T"

    ```
    """
    return re.sub(r"^[^\w']+|[^\w']+$", "", word.strip()).upper()


def parse_dictionary(text: str | Iterable[str]) -> Lexicon:
    """Parse CMU dictionary text: `;;;` comments, `WORD  PH1 PH2 ...` entries and `WORD(2)` alternates

    ```pycon
    >>> parse_dictionary([";;; only a comment"])
    Lexicon(words=0, pronunciations=0)
    >>> parse_dictionary(["PREDICT  P R IH0 D IH1 K XX"])
    Traceback (most recent call last):
    lexstress.LexiconError: line 1: unknown phoneme symbol 'XX'
    >>> parse_dictionary(["PREDICT"])
    Traceback (most recent call last):
    lexstress.LexiconError: line 1: malformed entry, expected 'WORD  PH1 PH2 ...'

    ```

    :param text: the whole dictionary as a string, or an iterable of lines (e.g. an open file)
    :type text: str | Iterable[str]
    :return: the parsed lexicon
    :rtype: Lexicon
    :raises LexiconError: on a malformed line or an unknown phoneme symbol, naming the line number
    """
    lines = text.splitlines() if isinstance(text, str) else text
    entries: dict[str, list[Tuple[PhonemeToken, ...]]] = {}
    for line_number, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith(";;;"):
            continue
        fields = line.split()
        if len(fields) < 2:
            raise LexiconError("malformed entry, expected 'WORD  PH1 PH2 ...'", line_number=line_number)
        word, symbols = fields[0], fields[1:]
        if alternate := _ALTERNATE_RE.match(word):
            word = alternate["word"]
        try:
            pronunciation = tuple(PhonemeToken.parse(s) for s in symbols)
        except LexiconError as e:
            raise LexiconError(str(e), line_number=line_number, symbol=e.symbol) from None
        entries.setdefault(word.upper(), []).append(pronunciation)
    logger.debug(f"Parsed {len(entries)} words from pronunciation dictionary")
    return Lexicon(entries)


def load_lexicon(path: Path) -> Lexicon:
    with Path(path).open("r", encoding="latin-1") as f:
        return parse_dictionary(f)


def dump_lexicon(lexicon: Lexicon) -> str:
    """Render a lexicon back to CMU dictionary text

    ```pycon
    >>> print(dump_lexicon(parse_dictionary(["A  AH0", "A(2)  EY1"])))
    A  AH0
    A(2)  EY1

    ```
    """
    lines = []
    for word, prons in lexicon.entries.items():
        for i, pron in enumerate(prons):
            key = word if i == 0 else f"{word}({i + 1})"
            lines.append(f"{key}  {' '.join(str(t) for t in pron)}")
    return "\n".join(lines)


def strip_stress(seq: Iterable[PhonemeToken | str]) -> Tuple[str, ...]:
    """Remove stress digits, leaving base symbols; idempotent on bare symbols

    ```pycon
    >>> strip_stress([PhonemeToken.parse(t) for t in ["K", "AE1", "T"]])
    ('K', 'AE', 'T')
    >>> strip_stress(["K", "AE", "T"])
    ('K', 'AE', 'T')
    >>> strip_stress([])
    ()

    ```
    """
    return tuple(t.base if isinstance(t, PhonemeToken) else str(t).rstrip("012") for t in seq)


class ConstraintConfig(BaseModel, frozen=True, extra="forbid"):
    """Whether vowel positions may take secondary stress (three classes) or only 0/1 (two classes)

    :param stress_classes: 3 allows digits {0, 1, 2}, 2 allows {0, 1}
    :type stress_classes: int
    """

    stress_classes: Literal[2, 3] = 3


DEFAULT_CONSTRAINT = ConstraintConfig()


def stress_variants(base: str, cfg: ConstraintConfig = DEFAULT_CONSTRAINT) -> frozenset[int]:
    """Token ids a base phoneme may be decoded as

    ```pycon
    >>> sorted(VOCABULARY.decode(i) for i in stress_variants("IH"))
    ['IH0', 'IH1', 'IH2']
    >>> sorted(VOCABULARY.decode(i) for i in stress_variants("IH", ConstraintConfig(stress_classes=2)))
    ['IH0', 'IH1']
    >>> [VOCABULARY.decode(i) for i in stress_variants("P")]
    ['P']
    >>> stress_variants("Q")
    Traceback (most recent call last):
    lexstress.LexiconError: unknown phoneme symbol 'Q'

    ```
    """
    base = base.upper()
    if base not in _BASE_SET:
        raise LexiconError(f"unknown phoneme symbol '{base}'", symbol=base)
    if base in _VOWEL_SET:
        return frozenset(VOCABULARY.encode(f"{base}{d}") for d in STRESS_DIGITS[: cfg.stress_classes])
    return frozenset({VOCABULARY.encode(base)})


class WordSpan(BaseModel, frozen=True, extra="forbid"):
    """Half-open range `[start, end)` of lattice positions covered by one word"""

    start: int
    end: int
    word: str
    is_polysyllabic: bool


class ConstraintLattice(BaseModel, frozen=True, extra="forbid"):
    """Per-position sets of allowed token ids, derived from a stress-stripped phoneme sequence

    :param positions: allowed token ids at each decoding step
    :type positions: Tuple[frozenset[int], ...]
    :param word_spans: which positions belong to which word
    :type word_spans: Tuple[WordSpan, ...]
    """

    positions: Tuple[frozenset[int], ...]
    word_spans: Tuple[WordSpan, ...] = ()

    @field_validator("positions")
    @classmethod
    def _non_empty_sets(cls, v):
        for i, allowed in enumerate(v):
            if not allowed:
                raise ValueError(f"position {i} has an empty allowed set")
            bases = {strip_stress([VOCABULARY.decode(t)])[0] for t in allowed}
            if len(bases) != 1:
                raise ValueError(f"position {i} mixes base phonemes {sorted(bases)}")
        return v

    def __len__(self):
        return len(self.positions)

    def base_sequence(self) -> Tuple[str, ...]:
        return tuple(strip_stress([VOCABULARY.decode(min(p))])[0] for p in self.positions)

    def vowel_positions(self) -> List[int]:
        return [i for i, base in enumerate(self.base_sequence()) if base in _VOWEL_SET]

    def num_paths(self) -> int:
        n = 1
        for p in self.positions:
            n *= len(p)
        return n

    def paths(self) -> Iterator[Tuple[int, ...]]:
        """Every full path through the lattice, in lexicographic id order"""
        return product(*(sorted(p) for p in self.positions))


def _lattice_for(words: Sequence[str], prons: Sequence[Sequence[PhonemeToken]], cfg: ConstraintConfig):
    positions, spans = [], []
    for word, pron in zip(words, prons):
        start = len(positions)
        positions.extend(stress_variants(b, cfg) for b in strip_stress(pron))
        spans.append(
            WordSpan(
                start=start,
                end=len(positions),
                word=word,
                is_polysyllabic=sum(t.is_vowel for t in pron) >= 2,
            )
        )
    return ConstraintLattice(positions=tuple(positions), word_spans=tuple(spans))


def build_constraint(
    transcript: Sequence[str] | str, lex: Lexicon, cfg: ConstraintConfig = DEFAULT_CONSTRAINT
) -> ConstraintLattice:
    """Lattice for a transcript using each word's first dictionary pronunciation

    ```pycon
    >>> lex = parse_dictionary(["THE  DH AH0"])
    >>> lattice = build_constraint("the", lex)
    >>> lattice.base_sequence(), lattice.word_spans[0].is_polysyllabic
    (('DH', 'AH'), False)
    >>> build_constraint(["THE", "CAT"], lex)
    Traceback (most recent call last):
    lexstress.LexiconError: out-of-vocabulary word 'CAT'

    ```

    :raises LexiconError: for a word missing from the lexicon (no silent skip)
    """
    words = transcript_words(transcript)
    return _lattice_for(words, [lex.first(w) for w in words], cfg)


def reference_tokens(transcript: Sequence[str] | str, lex: Lexicon) -> Tuple[PhonemeToken, ...]:
    """Stress-marked sequence of the transcript, from first pronunciations"""
    return tuple(t for w in transcript_words(transcript) for t in lex.first(w))


def build_constraint_from_phones(
    transcript: Sequence[str] | str,
    phones: Sequence[PhonemeToken | str] | str,
    lex: Lexicon,
    cfg: ConstraintConfig = DEFAULT_CONSTRAINT,
) -> ConstraintLattice:
    """Lattice for a transcript whose stress-marked phones are given (e.g. annotated realized stress).
    The phones must match the lexicon base sequence of the transcript; word spans come from the lexicon.

    ```pycon
    >>> lex = parse_dictionary(["PREDICT  P R IH0 D IH1 K T"])
    >>> build_constraint_from_phones("PREDICT", "P R IH1 D IH0 K T", lex).base_sequence()
    ('P', 'R', 'IH', 'D', 'IH', 'K', 'T')
    >>> build_constraint_from_phones("PREDICT", "P R IH1 D K T", lex)
    Traceback (most recent call last):
    lexstress.LexiconError: phones do not match the pronunciation of 'PREDICT'

    ```
    """
    tokens = parse_phones(phones)
    words = transcript_words(transcript)
    prons, offset = [], 0
    for word in words:
        expected = strip_stress(lex.first(word))
        actual = tokens[offset : offset + len(expected)]
        if strip_stress(actual) != expected:
            raise LexiconError(f"phones do not match the pronunciation of '{word}'", word=word)
        prons.append(actual)
        offset += len(expected)
    if offset != len(tokens):
        raise LexiconError(f"{len(tokens) - offset} phones left over after the last word of the transcript")
    return _lattice_for(words, prons, cfg)


def parse_phones(phones: Sequence[PhonemeToken | str] | str) -> Tuple[PhonemeToken, ...]:
    if isinstance(phones, str):
        phones = phones.split()
    return tuple(p if isinstance(p, PhonemeToken) else PhonemeToken.parse(p) for p in phones)


def transcript_words(transcript: Sequence[str] | str) -> List[str]:
    if isinstance(transcript, str):
        transcript = transcript.split()
    return [w for w in (normalize_word(w) for w in transcript) if w]


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
