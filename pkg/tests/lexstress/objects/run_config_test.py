import pytest
from pydantic import ValidationError

from lexstress.file_types import FileTypeYAML
from lexstress.objects.run_config import RUN_CONFIG_FILE, RunConfig


def test_defaults():
    cfg = RunConfig.resolve()
    assert cfg.seed is None
    assert cfg.model.d_model == 64
    assert cfg.evaluate.policy == "collapse-2-0"


def test_flags_override_the_file(tmp_path):
    path = FileTypeYAML.dump({"train": {"max_steps": 7, "batch_size": 3}, "decode": {"beam": 2}}, tmp_path / "c.yaml")
    cfg = RunConfig.resolve(path, {"train.max_steps": 9, "decode.beam": None})
    assert (cfg.train.max_steps, cfg.train.batch_size, cfg.decode.beam) == (9, 3, 2)


def test_top_level_seed_wins(tmp_path):
    path = FileTypeYAML.dump({"train": {"seed": 1}, "synth": {"seed": 2}}, tmp_path / "c.yaml")
    assert (RunConfig.resolve(path).train.seed, RunConfig.resolve(path).synth.seed) == (1, 2)
    cfg = RunConfig.resolve(path, {"seed": 5})
    assert (cfg.train.seed, cfg.synth.seed) == (5, 5)


def test_snapshot_reloads(tmp_path):
    cfg = RunConfig.resolve(overrides={"seed": 4, "model.n_heads": 2, "evaluate.policy": "three-class"})
    path = cfg.snapshot(tmp_path)
    assert path == tmp_path / RUN_CONFIG_FILE
    assert RunConfig.resolve(path) == cfg


def test_invalid_configs(tmp_path):
    with pytest.raises(ValidationError):
        RunConfig.resolve(overrides={"modle.d_model": 32})
    with pytest.raises(ValueError, match="not a section"):
        RunConfig.resolve(FileTypeYAML.dump({"model": 3}, tmp_path / "flat.yaml"), {"model.d_model": 32})
    with pytest.raises(ValueError, match="mapping"):
        RunConfig.resolve(FileTypeYAML.dump([1, 2], tmp_path / "list.yaml"))


def test_mapping_overrides_merge_into_sections(tmp_path):
    path = FileTypeYAML.dump({"synth": {"vocabulary_size": 8, "noise_sigma": 0.2}}, tmp_path / "c.yaml")
    cfg = RunConfig.resolve(path, {"synth": {"noise_sigma": 0.1, "max_words": 2}})
    assert (cfg.synth.vocabulary_size, cfg.synth.noise_sigma, cfg.synth.max_words) == (8, 0.1, 2)
    assert cfg.synth.min_words == RunConfig().synth.min_words
