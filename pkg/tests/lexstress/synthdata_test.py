import math

import numpy as np
import pytest

from lexstress.lexicon import load_lexicon
from lexstress.objects.manifest import Manifest
from lexstress.synthdata import (
    ENERGY_DIMS,
    LEXICON_FILE,
    SynthSpec,
    build_lexicon,
    generate,
    generate_splits,
    negative_control,
    stress_fraction,
    synthesize,
    vowel_segments,
)


def _energy_and_stress(spec: SynthSpec, n: int):
    lexicon = build_lexicon(spec)
    segments = [s for u in synthesize(spec, lexicon, n) for s in vowel_segments(u)]
    energy = np.array([frames[:, ENERGY_DIMS].mean() for frames, _ in segments])
    stressed = np.array([digit != 0 for _, digit in segments])
    return energy, stressed


def test_stress_is_linearly_separable():
    energy, stressed = _energy_and_stress(SynthSpec(seed=1), 300)
    assert 0 < stressed.sum() < len(stressed)
    accuracy = np.mean((energy > 1.0) == stressed)
    assert accuracy >= 0.9


def test_negative_control_removes_the_cues():
    spec = negative_control(SynthSpec(seed=1))
    assert (spec.duration_multiplier, spec.energy_boost, spec.pitch_shift) == (1.0, 0.0, 0.0)
    energy, stressed = _energy_and_stress(spec, 300)
    assert abs(energy[stressed].mean() - energy[~stressed].mean()) < 0.2


def test_stressed_vowels_are_longer():
    spec = SynthSpec(seed=2, duration_multiplier=2.0)
    lengths = {True: [], False: []}
    for u in synthesize(spec, build_lexicon(spec), 200):
        for frames, digit in vowel_segments(u):
            lengths[digit != 0].append(len(frames))
    assert np.mean(lengths[True]) > 1.5 * np.mean(lengths[False])


def test_lexicon_stress_patterns():
    spec = SynthSpec(seed=3, vocabulary_size=20, polysyllabic_fraction=0.7, max_vowels=4)
    lexicon = build_lexicon(spec)
    assert len(lexicon) == 20
    for i, word in enumerate(lexicon):
        vowels = [t for t in lexicon.first(word) if t.is_vowel]
        assert [t.stress for t in vowels].count(1) == 1
        if i < math.ceil(0.7 * 20):
            assert 2 <= len(vowels) <= 4
        else:
            assert len(vowels) == 1


def test_secondary_stress():
    lexicon = build_lexicon(SynthSpec(seed=4, secondary_stress_rate=1.0, polysyllabic_fraction=1.0))
    for word in lexicon:
        digits = [t.stress for t in lexicon.first(word) if t.is_vowel]
        assert sorted(set(digits)) == [1, 2]


def test_corpus_stress_fraction_matches_lexicon():
    spec = SynthSpec(seed=5)
    lexicon = build_lexicon(spec)
    digits = [t.stress for u in synthesize(spec, lexicon, 1000) for t in u.phones if t.is_vowel]
    assert abs(np.mean([d != 0 for d in digits]) - stress_fraction(lexicon)) < 0.05


def test_utterances_regenerate_independently():
    spec = SynthSpec(seed=6)
    lexicon = build_lexicon(spec)
    five, three = synthesize(spec, lexicon, 5), synthesize(spec, lexicon, 3)
    for a, b in zip(five, three):
        assert (a.id, a.transcript, a.phones) == (b.id, b.transcript, b.phones)
        np.testing.assert_array_equal(a.frames, b.frames)
    valid = synthesize(spec, lexicon, 3, split="valid")
    assert valid[0].id == "valid-00000"
    assert not np.array_equal(valid[0].frames, five[0].frames)


def test_generation_is_deterministic(tmp_path):
    spec = SynthSpec(seed=7, vocabulary_size=10)
    generate_splits(spec, {"train": 4, "valid": 2}, tmp_path / "a")
    generate_splits(spec, {"train": 4, "valid": 2}, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 1 + 2 + 4 + 2
    for relative in files:
        assert (tmp_path / "a" / relative).read_bytes() == (tmp_path / "b" / relative).read_bytes()


def test_generated_corpus_loads(tmp_path):
    path = generate(SynthSpec(seed=8, vocabulary_size=10), 6, tmp_path)
    assert path == tmp_path / "train.jsonl"
    lexicon = load_lexicon(tmp_path / LEXICON_FILE)
    manifest = Manifest.load(path)
    assert [u.uid for u in manifest] == [f"train-{i:05d}" for i in range(6)]
    for utterance in manifest:
        lattice = utterance.lattice(lexicon)
        reference = utterance.reference(lexicon)
        assert len(reference) == len(lattice)
        assert reference == tuple(t for w in utterance.transcript.split() for t in lexicon.first(w))
        assert utterance.load_features(manifest.base_dir).frames.shape[1] == 80


def test_invalid_specs(tmp_path):
    with pytest.raises(ValueError):
        SynthSpec(min_frames=5, max_frames=4)
    with pytest.raises(ValueError):
        SynthSpec(polysyllabic_fraction=0.3)
    with pytest.raises(ValueError):
        SynthSpec(vocabulary_size=0)
    with pytest.raises(ValueError):
        synthesize(SynthSpec(), build_lexicon(SynthSpec()), 0)
    with pytest.raises(ValueError, match="unknown split"):
        generate_splits(SynthSpec(), {"dev": 2}, tmp_path)
