from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

from loguru import logger
from pydantic import BaseModel

from lexstress.config import LEXSTRESS_CONFIG
from lexstress.decoder import DecodeConfig
from lexstress.evaluator import EvalConfig
from lexstress.file_types import FileTypeYAML
from lexstress.lexicon import ConstraintConfig
from lexstress.model import ModelConfig
from lexstress.synthdata import SynthSpec
from lexstress.trainer import TrainConfig

RUN_CONFIG_FILE = "run_config.yaml"


def _set_dotted(data: dict, key: str, value: Any):
    *parents, leaf = key.split(".")
    for parent in parents:
        data = data.setdefault(parent, {})
        if not isinstance(data, dict):
            raise ValueError(f"cannot set '{key}': '{parent}' is not a section")
    if isinstance(value, dict) and isinstance(data.get(leaf), dict):
        for child, child_value in value.items():
            _set_dotted(data[leaf], child, child_value)
    else:
        data[leaf] = value


class RunConfig(BaseModel, frozen=True, extra="forbid"):
    """Every setting of a pipeline run, one section per stage

    Settings are merged as defaults < YAML file < command-line flags, then frozen. A top-level
    `seed`, when set, replaces the seeds of the `train` and `synth` sections.

    ```pycon
    >>> cfg = RunConfig.resolve(overrides={"seed": 3, "train.max_steps": 10, "decode.beam": None})
    >>> cfg.train.seed, cfg.synth.seed, cfg.train.max_steps, cfg.decode.beam
    (3, 3, 10, 1)
    >>> RunConfig.resolve(overrides={"model.d_model": 30})
    Traceback (most recent call last):
    pydantic_core._pydantic_core.ValidationError: ...

    ```

    :param seed: overrides `train.seed` and `synth.seed` when given
    :type seed: int, optional
    """

    seed: int | None = None
    constraint: ConstraintConfig = ConstraintConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    decode: DecodeConfig = DecodeConfig()
    evaluate: EvalConfig = EvalConfig()
    synth: SynthSpec = SynthSpec()

    @classmethod
    def resolve(cls, config_file: Path | str | None = None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        """Load `config_file` (or `LEXSTRESS_CONFIG`), apply dotted-key `overrides` that are not `None`, validate

        A mapping override merges into the section it names instead of replacing it.

        :raises FormatError: if the file is not valid YAML
        :raises ValidationError: for unknown keys or out-of-range values
        """
        config_file = config_file or LEXSTRESS_CONFIG
        data: dict = {}
        if config_file:
            logger.debug(f"Reading run config from {config_file}")
            data = FileTypeYAML.load(config_file) or {}
            if not isinstance(data, dict):
                raise ValueError(f"{config_file}: expected a mapping of sections, got {type(data).__name__}")
        for key, value in (overrides or {}).items():
            if value is not None:
                _set_dotted(data, key, value)
        cfg = cls.model_validate(data)
        if cfg.seed is not None:
            cfg = cfg.model_copy(
                update={
                    "train": cfg.train.model_copy(update={"seed": cfg.seed}),
                    "synth": cfg.synth.model_copy(update={"seed": cfg.seed}),
                }
            )
        return cfg

    def snapshot(self, out_dir: Path | str) -> Path:
        """Write the resolved config as `run_config.yaml` in `out_dir`"""
        path = FileTypeYAML.dump(self.model_dump(mode="json"), Path(out_dir) / RUN_CONFIG_FILE)
        logger.debug(f"Wrote run config to {path}")
        return path


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
