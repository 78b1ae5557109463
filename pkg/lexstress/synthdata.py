"""
Synthetic corpora in which lexical stress is carried by the features.

Every base phoneme gets a prototype mean vector; an utterance is a sequence of words, each phoneme
of which is realized as its prototype repeated for a sampled number of frames, plus Gaussian noise.
Stressed vowels are longer (`duration_multiplier`), louder (`energy_boost` on dims 0-19) and
higher (`pitch_shift` on dims 20-29). Features are generated directly, no waveform is synthesized.

```pycon
>>> spec = SynthSpec(vocabulary_size=4, seed=7)
>>> lexicon = build_lexicon(spec)
>>> sorted(lexicon)
['W000', 'W001', 'W002', 'W003']
>>> [u.id for u in synthesize(spec, lexicon, 2)]
['train-00000', 'train-00001']
>>> negative_control().energy_boost, negative_control().duration_multiplier
(0.0, 1.0)

```
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from lexstress.dsp import N_MELS, FeatureSequence, write_feature_dump
from lexstress.lexicon import CONSONANTS, VOWELS, Lexicon, PhonemeToken, dump_lexicon
from lexstress.objects.manifest import Manifest, Utterance

Split = Literal["train", "valid", "test"]
SPLITS: Tuple[str, ...] = ("train", "valid", "test")

ENERGY_DIMS = slice(0, 20)
PITCH_DIMS = slice(20, 30)

LEXICON_FILE = "lexicon.dict"


class SynthSpec(BaseModel, frozen=True, extra="forbid"):
    """Knobs of the synthetic corpus. Cue magnitudes are tuned for learnability, not realism.

    :param seed: root of every random draw (lexicon, prototypes, utterances)
    :type seed: int
    :param vocabulary_size: number of synthetic words, named `W000`, `W001`, ...
    :type vocabulary_size: int
    :param max_vowels: most vowels in one word
    :type max_vowels: int
    :param polysyllabic_fraction: share of words with at least two vowels
    :type polysyllabic_fraction: float
    :param min_frames: shortest phoneme realization, in frames
    :type min_frames: int
    :param max_frames: longest phoneme realization before stress lengthening, in frames
    :type max_frames: int
    :param min_words: fewest words per utterance
    :type min_words: int
    :param max_words: most words per utterance
    :type max_words: int
    :param duration_multiplier: length factor of stressed vowels
    :type duration_multiplier: float
    :param energy_boost: added to dims 0-19 of stressed vowel frames
    :type energy_boost: float
    :param pitch_shift: added to dims 20-29 of stressed vowel frames
    :type pitch_shift: float
    :param noise_sigma: standard deviation of the per-frame Gaussian noise
    :type noise_sigma: float
    :param secondary_stress_rate: probability that a non-primary vowel of a polysyllabic word carries
        secondary stress, realized with half-magnitude cues
    :type secondary_stress_rate: float
    :param prototype_scale: standard deviation of the per-phoneme prototype means
    :type prototype_scale: float
    """

    seed: int = 0
    vocabulary_size: int = Field(50, ge=1)
    max_vowels: int = Field(3, ge=2)
    polysyllabic_fraction: float = Field(0.7, ge=0.5, le=1.0)
    min_frames: int = Field(4, ge=1)
    max_frames: int = Field(8, ge=1)
    min_words: int = Field(1, ge=1)
    max_words: int = Field(5, ge=1)
    duration_multiplier: float = Field(1.5, ge=1.0)
    energy_boost: float = 2.0
    pitch_shift: float = 1.0
    noise_sigma: float = Field(0.3, ge=0)
    secondary_stress_rate: float = Field(0.0, ge=0, le=1)
    prototype_scale: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _ranges(self):
        if self.max_frames < self.min_frames:
            raise ValueError(f"max_frames ({self.max_frames}) is below min_frames ({self.min_frames})")
        if self.max_words < self.min_words:
            raise ValueError(f"max_words ({self.max_words}) is below min_words ({self.min_words})")
        return self


def negative_control(spec: SynthSpec | None = None) -> SynthSpec:
    """The same corpus with every stress cue removed: stressed and unstressed vowels are identically distributed"""
    spec = spec or SynthSpec()
    return spec.model_copy(update={"duration_multiplier": 1.0, "energy_boost": 0.0, "pitch_shift": 0.0})


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def build_lexicon(spec: SynthSpec) -> Lexicon:
    """Synthetic words with one fixed stress pattern each. The first `ceil(polysyllabic_fraction * N)`
    words have 2 to `max_vowels` vowels and exactly one primary stress; the rest are single-vowel words.
    """
    rng = _rng(spec.seed, 0, 0)
    n_poly = math.ceil(spec.polysyllabic_fraction * spec.vocabulary_size)
    entries: Dict[str, List[Tuple[PhonemeToken, ...]]] = {}
    for w in range(spec.vocabulary_size):
        n_vowels = int(rng.integers(2, spec.max_vowels + 1)) if w < n_poly else 1
        primary = int(rng.integers(n_vowels))
        pron: List[PhonemeToken] = []
        for v in range(n_vowels):
            if v == 0 or rng.random() < 0.7:
                pron.append(PhonemeToken(base=str(rng.choice(CONSONANTS))))
            if v == primary:
                stress = 1
            elif n_vowels > 1 and rng.random() < spec.secondary_stress_rate:
                stress = 2
            else:
                stress = 0
            pron.append(PhonemeToken(base=str(rng.choice(VOWELS)), stress=stress))
        if rng.random() < 0.5:
            pron.append(PhonemeToken(base=str(rng.choice(CONSONANTS))))
        entries[f"W{w:03d}"] = [tuple(pron)]
    return Lexicon(entries)


def prototypes(spec: SynthSpec) -> Dict[str, np.ndarray]:
    """One mean feature vector per base phoneme"""
    rng = _rng(spec.seed, 0, 1)
    return {base: spec.prototype_scale * rng.standard_normal(N_MELS) for base in CONSONANTS + VOWELS}


class SynthUtterance(BaseModel):
    """An in-memory synthetic utterance

    :param segments: `[start, end)` frame range of each phone
    :type segments: List[Tuple[int, int]]
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    id: str
    transcript: str
    phones: Tuple[PhonemeToken, ...]
    frames: np.ndarray
    segments: List[Tuple[int, int]]

    @property
    def features(self) -> FeatureSequence:
        return FeatureSequence(frames=self.frames)


def _realize(
    token: PhonemeToken, spec: SynthSpec, protos: Mapping[str, np.ndarray], rng: np.random.Generator
) -> np.ndarray:
    n = int(rng.integers(spec.min_frames, spec.max_frames + 1))
    mean = protos[token.base].copy()
    if token.is_vowel and token.stress:
        # secondary stress carries half of each cue
        weight = 1.0 if token.stress == 1 else 0.5
        n = int(round(n * (1.0 + weight * (spec.duration_multiplier - 1.0))))
        mean[ENERGY_DIMS] += weight * spec.energy_boost
        mean[PITCH_DIMS] += weight * spec.pitch_shift
    return mean + spec.noise_sigma * rng.standard_normal((n, N_MELS))


def synthesize(
    spec: SynthSpec, lexicon: Lexicon, n: int, split: Split = "train", protos: Mapping[str, np.ndarray] | None = None
) -> List[SynthUtterance]:
    """`n` utterances of one split; utterance `i` draws from its own seed, so any subset can be regenerated alone

    :raises ValueError: if `n < 1` or the lexicon is empty
    """
    if n < 1:
        raise ValueError(f"need at least one utterance, got {n}")
    if not len(lexicon):
        raise ValueError("synthetic vocabulary is empty")
    protos = protos or prototypes(spec)
    words = list(lexicon)
    split_index = SPLITS.index(split)
    utterances = []
    for i in range(n):
        rng = _rng(spec.seed, 1 + split_index, i)
        n_words = int(rng.integers(spec.min_words, spec.max_words + 1))
        chosen = [words[j] for j in rng.integers(len(words), size=n_words)]
        phones = tuple(t for w in chosen for t in lexicon.first(w))
        chunks, segments, t = [], [], 0
        for token in phones:
            chunk = _realize(token, spec, protos, rng)
            chunks.append(chunk)
            segments.append((t, t + len(chunk)))
            t += len(chunk)
        utterances.append(
            SynthUtterance(
                id=f"{split}-{i:05d}",
                transcript=" ".join(chosen),
                phones=phones,
                frames=np.concatenate(chunks).astype(np.float32),
                segments=segments,
            )
        )
    return utterances


def stress_fraction(lexicon: Lexicon) -> float:
    """Share of stressed vowels (digit 1 or 2) over the lexicon, which is what a corpus drawing words
    uniformly converges to"""
    vowels = [t for w in lexicon for t in lexicon.first(w) if t.is_vowel]
    return sum(t.stress != 0 for t in vowels) / len(vowels)


def _write_split(
    spec: SynthSpec, lexicon: Lexicon, n: int, split: Split, out_dir: Path, protos: Mapping[str, np.ndarray]
) -> Path:
    records = []
    for u in synthesize(spec, lexicon, n, split, protos):
        feature_path = Path("feats") / split / f"{u.id}.feat"
        write_feature_dump(u.features, out_dir / feature_path)
        records.append(
            Utterance(
                id=u.id,
                features=feature_path.as_posix(),
                transcript=u.transcript,
                phones=" ".join(str(t) for t in u.phones),
            )
        )
    path = Manifest(records, base_dir=out_dir).dump(out_dir / f"{split}.jsonl")
    logger.info(f"Wrote {n} synthetic utterances to {path}")
    return path


def generate_splits(spec: SynthSpec, sizes: Mapping[str, int], out_dir: Path | str) -> Dict[str, Path]:
    """Write a shared `lexicon.dict`, one `<split>.jsonl` manifest per split and its feature dumps under
    `feats/<split>/`; returns the manifest path of every split

    :raises ValueError: for an unknown split name or a split size below 1
    """
    out_dir = Path(out_dir)
    unknown = set(sizes) - set(SPLITS)
    if unknown:
        raise ValueError(f"unknown split(s) {sorted(unknown)}, expected some of {SPLITS}")
    lexicon = build_lexicon(spec)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / LEXICON_FILE).write_text(dump_lexicon(lexicon) + "\n")
    protos = prototypes(spec)
    return {split: _write_split(spec, lexicon, n, split, out_dir, protos) for split, n in sizes.items()}


def generate(spec: SynthSpec, n: int, out_dir: Path | str, split: Split = "train") -> Path:
    """One split of the corpus; see [`generate_splits`][lexstress.synthdata.generate_splits]"""
    return generate_splits(spec, {split: n}, out_dir)[split]


def vowel_segments(utterance: SynthUtterance) -> List[Tuple[np.ndarray, int]]:
    """`(frames, stress digit)` of every vowel segment, used to check that a corpus is learnable"""
    return [
        (utterance.frames[start:end], token.stress)
        for token, (start, end) in zip(utterance.phones, utterance.segments)
        if token.is_vowel
    ]


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
