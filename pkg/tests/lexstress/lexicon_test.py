import pytest

from lexstress import LexiconError
from lexstress.lexicon import (
    VOCABULARY,
    ConstraintConfig,
    PhonemeToken,
    build_constraint,
    build_constraint_from_phones,
    dump_lexicon,
    load_lexicon,
    parse_dictionary,
    parse_phones,
    reference_tokens,
    strip_stress,
)
from tests.conftest import TINY_DICTIONARY


def test_vocabulary_layout():
    assert len(VOCABULARY) == 72
    assert VOCABULARY.decode_all([0, 1, 2]) == ["<pad>", "<sos>", "<eos>"]
    assert VOCABULARY.encode("B") == 3
    assert VOCABULARY.encode("ZH") == 26
    assert VOCABULARY.encode("AA0") == 27
    assert VOCABULARY.encode("UW2") == 71
    for token_id in range(72):
        assert VOCABULARY.encode(VOCABULARY.decode(token_id)) == token_id


def test_vocabulary_rejects_unknown():
    with pytest.raises(LexiconError):
        VOCABULARY.encode("IH3")
    with pytest.raises(LexiconError):
        VOCABULARY.decode(72)


def test_parse_dictionary_alternates_and_comments(tiny_lexicon):
    assert len(tiny_lexicon) == 5
    assert tiny_lexicon.num_pronunciations == 7
    assert [str(t) for t in tiny_lexicon.first("record")] == ["R", "EH1", "K", "ER0", "D"]
    assert len(tiny_lexicon.pronunciations("RECORD")) == 2


def test_parse_dictionary_errors_name_the_line():
    with pytest.raises(LexiconError) as e:
        parse_dictionary(["A  AH0", "B  B IY9"])
    assert e.value.line_number == 2
    with pytest.raises(LexiconError) as e:
        parse_dictionary(["A  AH0", ";;; fine", "BAD"])
    assert e.value.line_number == 3
    with pytest.raises(LexiconError) as e:
        parse_dictionary(["CAT  K AE T"])
    assert e.value.symbol == "AE"


def test_first_pronunciation_warns_once(tiny_lexicon):
    from loguru import logger

    messages = []
    sink = logger.add(messages.append, level="WARNING")
    try:
        tiny_lexicon.first("THE")
        tiny_lexicon.first("the")
    finally:
        logger.remove(sink)
    assert len(messages) == 1
    assert "THE" in messages[0]


def test_first_pronunciation_warns_once_across_threads():
    from concurrent.futures import ThreadPoolExecutor

    from loguru import logger

    lexicon = parse_dictionary(TINY_DICTIONARY)
    messages = []
    sink = logger.add(messages.append, level="WARNING")
    try:
        with ThreadPoolExecutor(max_workers=8) as pool:
            firsts = list(pool.map(lexicon.first, ["THE", "the", "record", "RECORD", "cat"] * 200))
    finally:
        logger.remove(sink)
    assert len(messages) == 2
    assert sorted(m.split("'")[1] for m in messages) == ["RECORD", "THE"]
    assert len(set(firsts)) == 3


def test_dump_lexicon_round_trips(tmp_path, tiny_lexicon):
    path = tmp_path / "lexicon.dict"
    path.write_text(dump_lexicon(tiny_lexicon))
    assert load_lexicon(path) == tiny_lexicon


def test_strip_stress_idempotent():
    tokens = parse_phones("P R IH0 D IH1 K T")
    assert strip_stress(tokens) == ("P", "R", "IH", "D", "IH", "K", "T")
    assert strip_stress(strip_stress(tokens)) == strip_stress(tokens)


def test_phoneme_token_parse():
    assert PhonemeToken.parse("ih1") == PhonemeToken(base="IH", stress=1)
    with pytest.raises(LexiconError):
        PhonemeToken.parse("K1")
    with pytest.raises(LexiconError):
        PhonemeToken.parse("XX")


def test_build_constraint_positions(tiny_lexicon):
    lattice = build_constraint("the predict", tiny_lexicon)
    assert lattice.base_sequence() == ("DH", "AH", "P", "R", "IH", "D", "IH", "K", "T")
    assert [len(p) for p in lattice.positions] == [1, 3, 1, 1, 3, 1, 3, 1, 1]
    assert lattice.vowel_positions() == [1, 4, 6]
    assert lattice.num_paths() == 27
    assert [(s.start, s.end, s.is_polysyllabic) for s in lattice.word_spans] == [(0, 2, False), (2, 9, True)]


def test_build_constraint_two_classes(tiny_lexicon):
    lattice = build_constraint("CAT", tiny_lexicon, ConstraintConfig(stress_classes=2))
    assert [sorted(VOCABULARY.decode_all(p)) for p in lattice.positions] == [["K"], ["AE0", "AE1"], ["T"]]
    assert lattice.num_paths() == len(list(lattice.paths())) == 2


def test_build_constraint_oov(tiny_lexicon):
    with pytest.raises(LexiconError) as e:
        build_constraint("THE DOG", tiny_lexicon)
    assert e.value.word == "DOG"


def test_build_constraint_empty_transcript(tiny_lexicon):
    lattice = build_constraint("", tiny_lexicon)
    assert len(lattice) == 0
    assert lattice.num_paths() == 1


def test_every_path_strips_to_the_base_sequence(tiny_lexicon):
    lattice = build_constraint("BANANA CAT", tiny_lexicon)
    paths = list(lattice.paths())
    assert len(paths) == lattice.num_paths() == 3**4
    for path in paths:
        assert strip_stress(VOCABULARY.decode_all(path)) == lattice.base_sequence()


def test_build_constraint_from_phones(tiny_lexicon):
    lattice = build_constraint_from_phones("CAT PREDICT", "K AE1 T P R IH1 D IH0 K T", tiny_lexicon)
    assert lattice.base_sequence() == strip_stress(reference_tokens("CAT PREDICT", tiny_lexicon))
    with pytest.raises(LexiconError) as e:
        build_constraint_from_phones("CAT PREDICT", "K AE1 T P R IH1 D IY0 K T", tiny_lexicon)
    assert e.value.word == "PREDICT"
    with pytest.raises(LexiconError):
        build_constraint_from_phones("CAT", "K AE1 T T", tiny_lexicon)


def test_tiny_dictionary_is_valid_cmu_text():
    assert parse_dictionary(TINY_DICTIONARY.splitlines()) == parse_dictionary(TINY_DICTIONARY)
