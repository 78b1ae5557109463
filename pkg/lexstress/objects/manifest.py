from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterator, List, Tuple

from loguru import logger
from pydantic import BaseModel, model_validator

from lexstress import trim_dict
from lexstress.dsp import FeatureSequence, extract_features, read_feature_dump, read_wav, write_feature_dump
from lexstress.file_types import FileTypeJSONL
from lexstress.lexicon import (
    ConstraintConfig,
    ConstraintLattice,
    DEFAULT_CONSTRAINT,
    Lexicon,
    PhonemeToken,
    build_constraint,
    build_constraint_from_phones,
    parse_phones,
    reference_tokens,
)


class Utterance(BaseModel, extra="ignore"):
    """One manifest record: audio or precomputed features, plus the transcript

    ```pycon
    >>> Utterance(audio="a.wav", transcript="PREDICT").uid
    'a'
    >>> Utterance(transcript="PREDICT")
    Traceback (most recent call last):
    pydantic_core._pydantic_core.ValidationError: ...

    ```

    :param id: utterance id, defaults to the audio or feature file stem
    :type id: str, optional
    :param audio: path of a 16 kHz mono PCM16 WAV file, relative to the manifest
    :type audio: str, optional
    :param features: path of a feature dump, relative to the manifest; used instead of `audio` when present
    :type features: str, optional
    :param transcript: space-separated words
    :type transcript: str
    :param phones: stress-marked phones of the whole utterance, overriding the lexicon's stress
    :type phones: str, optional
    """

    id: str | None = None
    audio: str | None = None
    features: str | None = None
    transcript: str
    phones: str | None = None

    @model_validator(mode="after")
    def _has_input(self):
        if not self.audio and not self.features:
            raise ValueError("a manifest record needs 'audio' or 'features'")
        return self

    @property
    def uid(self) -> str:
        return self.id or Path(self.features or self.audio).stem

    def load_features(self, base_dir: Path | str = ".") -> FeatureSequence:
        """Raw (un-normalized) log-mel features, from the feature dump if given, else from the WAV"""
        base_dir = Path(base_dir)
        if self.features:
            return read_feature_dump(base_dir / self.features)
        return extract_features(read_wav(base_dir / self.audio))

    def lattice(self, lex: Lexicon, cfg: ConstraintConfig = DEFAULT_CONSTRAINT) -> ConstraintLattice:
        """Decoding constraint; `phones`, when present, must agree with the lexicon's base phonemes"""
        if self.phones:
            return build_constraint_from_phones(self.transcript, self.phones, lex, cfg)
        return build_constraint(self.transcript, lex, cfg)

    def reference(self, lex: Lexicon) -> tuple[PhonemeToken, ...]:
        """Reference stress-marked phones: the `phones` field if present, else first lexicon pronunciations"""
        if self.phones:
            build_constraint_from_phones(self.transcript, self.phones, lex)
            return parse_phones(self.phones)
        return reference_tokens(self.transcript, lex)


class Manifest:
    """Records of a JSON-lines manifest; relative paths resolve against the manifest's directory

    ```pycon
    >>> manifest = Manifest([Utterance(features="f/1.feat", transcript="A")], base_dir="/data")
    >>> len(manifest), [u.uid for u in manifest]
    (1, ['1'])

    ```
    """

    def __init__(self, utterances: List[Utterance], base_dir: Path | str = "."):
        self.utterances = list(utterances)
        self.base_dir = Path(base_dir)

    def __len__(self):
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def __getitem__(self, i: int) -> Utterance:
        return self.utterances[i]

    def __repr__(self):
        return f"Manifest(utterances={len(self)}, base_dir={self.base_dir})"

    @staticmethod
    def load(path: Path | str) -> "Manifest":
        path = Path(path)
        records = FileTypeJSONL.load(path)
        utterances = []
        for i, record in enumerate(records):
            logger.debug(f"Manifest record {i}: {trim_dict(record)}")
            utterances.append(Utterance(**record))
        logger.info(f"Loaded {len(utterances)} utterances from {path}")
        return Manifest(utterances, base_dir=path.parent)

    def dump(self, path: Path | str) -> Path:
        return FileTypeJSONL.dump([u.model_dump(exclude_none=True) for u in self.utterances], path)

    def featurize(self, out_dir: Path | str, workers: int = 1) -> Tuple["Manifest", Dict[str, str]]:
        """Write a feature dump per utterance to `out_dir/feats/<id>.feat`

        :return: a manifest of the written dumps (relative to `out_dir`, in manifest order),
            and the failure reason of every utterance that could not be featurized
        """
        out_dir = Path(out_dir)

        def run(utterance: Utterance):
            relative = Path("feats") / f"{utterance.uid}.feat"
            try:
                write_feature_dump(utterance.load_features(self.base_dir), out_dir / relative)
            except (ValueError, OSError) as e:
                logger.warning(f"Could not featurize '{utterance.uid}': {e}")
                return None, f"{type(e).__name__}: {e}"
            logger.debug(f"Wrote {relative}")
            record = Utterance(
                id=utterance.uid, features=relative.as_posix(), transcript=utterance.transcript, phones=utterance.phones
            )
            return record, None

        with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
            outcomes = list(pool.map(run, self.utterances))
        written = [u for u, _ in outcomes if u is not None]
        failures = {u.uid: reason for u, (_, reason) in zip(self.utterances, outcomes) if reason is not None}
        return Manifest(written, base_dir=out_dir), failures


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
