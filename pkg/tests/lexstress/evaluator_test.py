import io
import json

import numpy as np
import pytest

from lexstress import FormatError
from lexstress.dsp import FeatureSequence, write_feature_dump
from lexstress.evaluator import (
    EvalConfig,
    StressReport,
    UtteranceScore,
    apply_policy,
    evaluate_corpus,
    evaluate_decodes,
    load_decodes,
    render_table,
    score,
)
from lexstress.file_types import FileTypeJSON, FileTypeJSONL
from lexstress.lexicon import build_constraint, parse_dictionary, parse_phones, reference_tokens
from lexstress.model import init_parameters
from lexstress.objects.decode_record import DecodeRecord
from lexstress.objects.manifest import Manifest, Utterance


def _score(transcript, predicted, lexicon, policy="collapse-2-0"):
    reference = reference_tokens(transcript, lexicon)
    spans = build_constraint(transcript, lexicon).word_spans
    return score(reference, parse_phones(predicted), spans, policy)


def test_one_of_two_wrong(tiny_lexicon):
    result = _score("PREDICT", "P R IH1 D IH1 K T", tiny_lexicon)
    assert (result.counted, result.errors, result.error_rate) == (2, 1, 0.5)
    assert result.confusion == {0: {1: 1}, 1: {1: 1}}


def test_monosyllabic_words_are_not_counted(tiny_lexicon):
    result = _score("THE CAT", "DH AH1 K AE0 T", tiny_lexicon)
    assert (result.counted, result.errors, result.error_rate) == (0, 0, None)
    report = StressReport(utterances=[result])
    assert not report.rate_defined
    assert report.to_json()["totals"]["error_rate"] is None


def test_only_polysyllabic_spans_count(tiny_lexicon):
    result = _score("THE BANANA CAT", "DH AH1 B AH0 N AE1 N AH1 K AE0 T", tiny_lexicon)
    assert (result.counted, result.errors) == (3, 1)


@pytest.mark.parametrize(
    "policy,errors",
    [("three-class", 1), ("collapse-2-0", 0), ("collapse-2-1", 1)],
)
def test_secondary_stress_policies(policy, errors):
    lexicon = parse_dictionary(["DICTATE  D IH1 K T EY2 T"])
    assert _score("DICTATE", "D IH1 K T EY0 T", lexicon, policy).errors == errors


def test_unknown_policy():
    with pytest.raises(ValueError):
        apply_policy(2, "collapse-2-3")


def test_mismatched_sequences(tiny_lexicon):
    with pytest.raises(ValueError, match="base phonemes"):
        _score("PREDICT", "P R IY0 D IH1 K T", tiny_lexicon)
    with pytest.raises(ValueError, match="phones"):
        _score("PREDICT", "P R IH0 D IH1 K", tiny_lexicon)


def test_flipping_a_correct_position_adds_one_error(tiny_lexicon):
    transcript = "BANANA PREDICT"
    reference = [str(t) for t in reference_tokens(transcript, tiny_lexicon)]
    before = _score(transcript, reference, tiny_lexicon)
    for i in build_constraint(transcript, tiny_lexicon).vowel_positions():
        flipped = list(reference)
        flipped[i] = flipped[i][:-1] + ("0" if flipped[i].endswith("1") else "1")
        after = _score(transcript, flipped, tiny_lexicon)
        assert after.errors == before.errors + 1
        assert after.counted == before.counted


def test_errors_are_symmetric(tiny_lexicon):
    transcript = "BANANA PREDICT"
    spans = build_constraint(transcript, tiny_lexicon).word_spans
    rng = np.random.default_rng(0)
    base = [str(t)[:-1] if str(t)[-1].isdigit() else str(t) for t in reference_tokens(transcript, tiny_lexicon)]
    for _ in range(50):
        a, b = ([p + str(rng.integers(0, 3)) if p in ("AH", "AE", "IH") else p for p in base] for _ in range(2))
        forward = score(parse_phones(a), parse_phones(b), spans, "three-class")
        backward = score(parse_phones(b), parse_phones(a), spans, "three-class")
        assert forward.errors == backward.errors


def test_corpus_rate_pools_positions():
    report = StressReport(
        utterances=[UtteranceScore(id="a", counted=2, errors=2), UtteranceScore(id="b", counted=8, errors=0)]
    )
    assert report.error_rate == pytest.approx(0.2)


def _manifest(transcripts, base_dir=".", phones=None):
    phones = phones or {}
    return Manifest(
        [
            Utterance(id=f"u{i}", features=f"u{i}.feat", transcript=t, phones=phones.get(f"u{i}"))
            for i, t in enumerate(transcripts)
        ],
        base_dir=base_dir,
    )


def _identity_decodes(manifest, lexicon):
    return [
        DecodeRecord(id=u.uid, transcript=u.transcript, predicted=[str(t) for t in u.reference(lexicon)])
        for u in manifest
    ]


def test_identity_decodes_score_zero(tiny_lexicon):
    manifest = _manifest(["PREDICT", "BANANA THE", "RECORD CAT"])
    report = evaluate_decodes(_identity_decodes(manifest, tiny_lexicon), manifest, tiny_lexicon)
    assert report.error_rate == 0.0
    assert report.counted == 2 + 3 + 2
    assert not report.exclusions


def test_missing_and_unscorable_decodes_are_excluded(tiny_lexicon):
    manifest = _manifest(["PREDICT", "BANANA", "CAT", "THE DOG"])
    decodes = _identity_decodes(_manifest(["PREDICT", "BANANA", "CAT"]), tiny_lexicon)
    decodes[1] = DecodeRecord(id="u1", transcript="BANANA", predicted=["B", "AH0"])
    report = evaluate_decodes(decodes, manifest, tiny_lexicon, EvalConfig(dataset="tiny", method="oracle"))
    assert [e.id for e in report.exclusions] == ["u1", "u3"]
    assert "no decode" in report.exclusions[1].reason
    assert [u.id for u in report.utterances] == ["u0", "u2"]
    assert (report.dataset, report.method) == ("tiny", "oracle")


def test_annotated_phones_are_the_reference(tiny_lexicon):
    manifest = _manifest(["PREDICT"], phones={"u0": "P R IH1 D IH0 K T"})
    decodes = [DecodeRecord(id="u0", transcript="PREDICT", predicted="P R IH0 D IH1 K T".split())]
    assert evaluate_decodes(decodes, manifest, tiny_lexicon).errors == 2


def test_random_predictions_score_near_chance():
    lexicon = parse_dictionary(["BANANA  B AH0 N AE1 N AH0"])
    rng = np.random.default_rng(11)
    n = 3000
    manifest = _manifest(["BANANA"] * n)
    decodes = [
        DecodeRecord(
            id=f"u{i}", transcript="BANANA", predicted=["B", f"AH{d[0]}", "N", f"AE{d[1]}", "N", f"AH{d[2]}"]
        )
        for i, d in enumerate(rng.integers(0, 3, size=(n, 3)))
    ]
    report = evaluate_decodes(decodes, manifest, lexicon, EvalConfig(policy="three-class"))
    sigma = np.sqrt((2 / 3) * (1 / 3) / report.counted)
    assert abs(report.error_rate - 2 / 3) < 3 * sigma


def test_report_files(tmp_path, tiny_lexicon):
    manifest = _manifest(["PREDICT", "CAT"])
    decodes = _identity_decodes(manifest, tiny_lexicon)
    decodes[0] = DecodeRecord(id="u0", transcript="PREDICT", predicted="P R IH1 D IH1 K T".split())
    report = evaluate_decodes(decodes, manifest, tiny_lexicon, EvalConfig(dataset="tiny"))
    path = report.write(tmp_path / "eval")

    written = json.loads(path.read_text())
    assert written["schema_version"] == 1
    assert written["totals"] == {
        "counted": 2,
        "errors": 1,
        "error_rate": 0.5,
        "rate_defined": True,
        "utterances": 2,
        "excluded": 0,
    }
    assert written["confusion"] == {"0": {"1": 1}, "1": {"1": 1}}
    assert [u["error_rate"] for u in written["utterances"]] == [0.5, None]
    assert "50.00%" in (tmp_path / "eval" / "report.txt").read_text()

    out = io.StringIO()
    report.render(out)
    assert "Stress Error Rate" in out.getvalue()
    assert "50.00%" in out.getvalue()


def test_render_table_compares_runs():
    reports = [
        StressReport(dataset="synth", method="greedy", utterances=[UtteranceScore(counted=10, errors=1)]),
        StressReport(dataset="synth", method="beam-4"),
    ]
    table = render_table(reports)
    assert "10.00%" in table
    assert "undefined" in table


def test_load_decodes(tmp_path):
    records = [DecodeRecord(id="a", transcript="CAT", predicted=["K", "AE1", "T"])]
    path = FileTypeJSONL.dump([r.model_dump(exclude_none=True) for r in records], tmp_path / "decodes.jsonl")
    assert load_decodes(path) == records


def test_evaluate_corpus_excludes_decode_failures(tmp_path, tiny_lexicon, tiny_config):
    manifest = _manifest(["PREDICT", "THE DOG"], base_dir=tmp_path)
    for u in manifest:
        write_feature_dump(FeatureSequence(frames=np.zeros((5, 80))), tmp_path / u.features)
    report = evaluate_corpus(manifest, tiny_lexicon, init_parameters(tiny_config))
    assert [u.id for u in report.utterances] == ["u0"]
    assert report.counted == 2
    assert [e.id for e in report.exclusions] == ["u1"]
    assert "DOG" in report.exclusions[0].reason


def test_reports_reload_and_combine(tmp_path, tiny_lexicon):
    manifest = _manifest(["PREDICT", "BANANA"])
    decodes = _identity_decodes(manifest, tiny_lexicon)
    decodes[0] = DecodeRecord(id="u0", transcript="PREDICT", predicted="P R IH1 D IH1 K T".split())
    first = evaluate_decodes(decodes, manifest, tiny_lexicon, EvalConfig(dataset="synth-1k"))
    reloaded = StressReport.load(first.write(tmp_path / "a"))
    assert reloaded.to_json() == first.to_json()

    second = evaluate_decodes(decodes[:1], manifest, tiny_lexicon, EvalConfig(dataset="synth-2k"))
    second.write(tmp_path / "b", previous=[reloaded])
    lines = (tmp_path / "b" / "report.txt").read_text().splitlines()
    assert [line.split()[0] for line in lines[2:]] == ["synth-1k", "synth-2k"]
    assert "20.00%" in lines[2] and "50.00%" in lines[3]


def test_loading_a_foreign_report(tmp_path):
    with pytest.raises(FormatError):
        StressReport.load(FileTypeJSON.dump({"schema_version": 99}, tmp_path / "report.json"))
