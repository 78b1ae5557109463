import json

from click.testing import CliRunner

from lexstress.__main__ import lexstress
from tests.conftest import manual_tests


def _pipeline(root, *synth_flags) -> dict:
    def run(*args):
        result = CliRunner().invoke(lexstress, [str(a) for a in args], catch_exceptions=False)
        assert result.exit_code == 0, result.output

    data = root / "data"
    for split, n in (("train", 2000), ("valid", 200), ("test", 200)):
        run("synth", "--out-dir", data, "--n", n, "--split", split, "--seed", 0, *synth_flags)
    lexicon = data / "lexicon.dict"
    run(
        "train",
        "--manifest", data / "train.jsonl",
        "--val-manifest", data / "valid.jsonl",
        "--lexicon", lexicon,
        "--out", root / "run",
        "--max-steps", 5000,
        "--seed", 0,
    )  # fmt: skip
    run(
        "decode",
        "--manifest", data / "test.jsonl",
        "--lexicon", lexicon,
        "--checkpoint", root / "run" / "best.ckpt",
        "--out", root / "decodes.jsonl",
    )  # fmt: skip
    run(
        "evaluate",
        "--decodes", root / "decodes.jsonl",
        "--manifest", data / "test.jsonl",
        "--lexicon", lexicon,
        "--out-dir", root / "eval",
    )  # fmt: skip
    return json.loads((root / "eval" / "report.json").read_text())["totals"]


@manual_tests
def test_stress_is_learned_from_synthetic_cues(tmp_path):
    cued = _pipeline(tmp_path / "cued")
    assert not cued["excluded"]
    assert cued["error_rate"] < 0.10

    # word identity still predicts stress without the acoustic cues, so the control is only required to do worse
    control = _pipeline(tmp_path / "control", "--negative-control")
    assert control["error_rate"] > cued["error_rate"]
