from __future__ import annotations

import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Literal, Tuple

import rich_click as click
from loguru import logger

from lexstress import NumericsError, __version__
from lexstress.config import EXIT_INPUT_ERROR, EXIT_RUNTIME_ERROR, LEXSTRESS_WORKERS, LOG_LEVEL
from lexstress.file_types import FileTypeJSONL, FileTypeYAML
from lexstress.lexicon import load_lexicon
from lexstress.objects.manifest import Manifest
from lexstress.objects.run_config import RunConfig


# ### LOGGING ###
def formatter(r):
    return (
        "<lvl>"
        + (  # add [time] WARN, etc. if it's not INFO
            "[{time:HH:mm:ss}|{level}] " if r["level"].no != logging.INFO else "[{time:HH:mm:ss}] "
        )
        + "{message}</>\n{exception}"  # add exception, if there is one
    )


logger.remove()
sys.tracebacklimit = 1000 if LOG_LEVEL == "DEBUG" else 0
logger_defaults = dict(colorize=True, format=formatter)
exceptions_off = {"backtrace": False, "diagnose": False}
exceptions_on = {"backtrace": True, "diagnose": True}
logger.add(
    sys.stdout,
    level=LOG_LEVEL,
    **logger_defaults,
    **(exceptions_off if LOG_LEVEL != "DEBUG" else exceptions_on),
)

FILE_KWARGS = dict(
    type=click.Path(exists=True, dir_okay=False, file_okay=True, readable=True, resolve_path=True, path_type=Path),
    required=True,
)
OUT_DIR_KWARGS = dict(
    type=click.Path(dir_okay=True, file_okay=False, resolve_path=True, path_type=Path),
    required=True,
)
CONFIG_ARGS = ("-c", "--config")
CONFIG_KWARGS = dict(
    type=click.Path(exists=True, dir_okay=False, readable=True, resolve_path=True, path_type=Path),
    help="YAML run config; `LEXSTRESS_CONFIG` is used when not given. Flags override its values.",
)
SEED_KWARGS = dict(type=int, help="Seed of every random draw, overriding the config file")
WORKERS_KWARGS = dict(type=click.IntRange(min=1), default=LEXSTRESS_WORKERS, show_default=True, help="Parallel workers")


@contextmanager
def exit_codes():
    """Map input errors to exit code 2 and runtime failures to exit code 1, logging the reason"""
    try:
        yield
    except click.exceptions.Exit:
        raise
    except (ValueError, OSError) as e:
        # LexiconError, FormatError and pydantic's ValidationError are all ValueErrors
        logger.error(f"{type(e).__name__}: {e}")
        raise click.exceptions.Exit(EXIT_INPUT_ERROR)
    except (NumericsError, RuntimeError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        raise click.exceptions.Exit(EXIT_RUNTIME_ERROR)


@click.group(
    context_settings={"auto_envvar_prefix": "LEXSTRESS"},
    epilog="Run `lexstress synth` then `lexstress train` for a desk-scale quickstart",
)
@click.version_option(version=__version__, prog_name="lexstress")
def lexstress():
    """
    lexstress detects English lexical stress from speech features with a transformer whose decoding is
    restricted to the stress variants of the known phoneme sequence.
    """


@lexstress.command()
@click.option("--manifest", **FILE_KWARGS, help="JSON-lines manifest of WAV files and transcripts")
@click.option("--out-dir", **OUT_DIR_KWARGS, help="Directory to write `feats/*.feat` and `index.jsonl` to")
@click.option(*CONFIG_ARGS, **CONFIG_KWARGS)
@click.option("--workers", **WORKERS_KWARGS)
def featurize(manifest: Path, out_dir: Path, config: Path | None, workers: int):
    """Extract log-mel features for every utterance of a `--manifest`.

    Writes one feature dump per utterance and an `index.jsonl` manifest pointing at them, which
    `train` and `decode` accept. Utterances that fail are listed in `failures.jsonl`; the command then
    exits with code 2, after writing everything that succeeded.
    """
    with exit_codes():
        cfg = RunConfig.resolve(config)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.snapshot(out_dir)
        index, failures = Manifest.load(manifest).featurize(out_dir, workers)
        index.dump(out_dir / "index.jsonl")
        logger.info(f"Wrote {len(index)} feature dumps to {out_dir / 'feats'}")
        if failures:
            FileTypeJSONL.dump([{"id": k, "reason": v} for k, v in failures.items()], out_dir / "failures.jsonl")
            for uid, reason in failures.items():
                logger.error(f"{uid}: {reason}")
            raise click.exceptions.Exit(EXIT_INPUT_ERROR)


@lexstress.command()
@click.option("--manifest", **FILE_KWARGS, help="Training manifest")
@click.option("--val-manifest", **FILE_KWARGS, help="Validation manifest, for early stopping")
@click.option("--lexicon", **FILE_KWARGS, help="CMU-format pronunciation dictionary")
@click.option("--out", **OUT_DIR_KWARGS, help="Directory to write checkpoints and `train_log.csv` to")
@click.option(*CONFIG_ARGS, **CONFIG_KWARGS)
@click.option("--seed", **SEED_KWARGS)
@click.option("--max-steps", type=click.IntRange(min=1), help="Overrides `train.max_steps`")
@click.option(
    "--resume/--no-resume", default=False, show_default=True, help="Continue from `last.ckpt` in `--out`, if present"
)
@click.option("--workers", **WORKERS_KWARGS)
def train(
    manifest: Path,
    val_manifest: Path,
    lexicon: Path,
    out: Path,
    config: Path | None,
    seed: int | None,
    max_steps: int | None,
    resume: bool,
    workers: int,
):
    """Train a model on a `--manifest`, early-stopping on the `--val-manifest`.

    Every transcript must be covered by the `--lexicon`; an out-of-vocabulary word fails before the first step.
    """
    from lexstress.trainer import load_dataset, train as run_training

    with exit_codes():
        cfg = RunConfig.resolve(config, {"seed": seed, "train.max_steps": max_steps})
        out.mkdir(parents=True, exist_ok=True)
        cfg.snapshot(out)
        lex = load_lexicon(lexicon)
        train_set = load_dataset(Manifest.load(manifest), lex, workers)
        valid_set = load_dataset(Manifest.load(val_manifest), lex, workers)
        result = run_training(train_set, valid_set, cfg.model, cfg.train, out, resume=resume)
        logger.info(
            f"Best validation loss {result.best_val_loss:.4f} at step {result.best_step} "
            f"({result.steps} steps{', stopped early' if result.stopped_early else ''}); wrote {result.best_checkpoint}"
        )


@lexstress.command()
@click.option("--manifest", **FILE_KWARGS, help="Manifest of utterances to decode")
@click.option("--lexicon", **FILE_KWARGS, help="CMU-format pronunciation dictionary")
@click.option("--checkpoint", **FILE_KWARGS, help="Trained model checkpoint")
@click.option(
    "--out",
    type=click.Path(dir_okay=False, resolve_path=True, path_type=Path),
    help="JSON-lines file to write decode records to  [default: ./decodes.jsonl]",
)
@click.option(*CONFIG_ARGS, **CONFIG_KWARGS)
@click.option(
    "--mode",
    type=click.Choice(["constrained", "free"]),
    help="`constrained` lattice decoding, or `free` greedy decoding for diagnostics  [default: constrained]",
)
@click.option("--beam", type=click.IntRange(min=1), help="Beam width of constrained decoding  [default: 1]")
@click.option("--workers", **WORKERS_KWARGS)
def decode(
    manifest: Path,
    lexicon: Path,
    checkpoint: Path,
    out: Path | None,
    config: Path | None,
    mode: Literal["constrained", "free"] | None,
    beam: int | None,
    workers: int,
):
    """Decode every utterance of a `--manifest` with a trained `--checkpoint`.

    Utterances that cannot be decoded are skipped with a warning and the command exits with code 2
    after writing the rest.
    """
    from lexstress.decoder import decode_corpus
    from lexstress.model import load_checkpoint

    with exit_codes():
        out = out or Path.cwd() / "decodes.jsonl"
        cfg = RunConfig.resolve(config, {"decode.mode": mode, "decode.beam": beam, "decode.workers": workers})
        cfg.snapshot(out.parent)
        params = load_checkpoint(checkpoint).params
        utterances, lex = Manifest.load(manifest), load_lexicon(lexicon)
        records, failures = decode_corpus(utterances, lex, params, cfg.decode, cfg.constraint)
        FileTypeJSONL.dump([r.model_dump(exclude_none=True) for r in records], out)
        logger.info(f"Wrote {len(records)} decode records to {out}")
        if failures:
            raise click.exceptions.Exit(EXIT_INPUT_ERROR)


@lexstress.command()
@click.option("--decodes", **FILE_KWARGS, help="Decode records written by `lexstress decode`")
@click.option("--manifest", **FILE_KWARGS, help="Manifest the decodes were made from")
@click.option("--lexicon", **FILE_KWARGS, help="CMU-format pronunciation dictionary")
@click.option("--out-dir", **OUT_DIR_KWARGS, help="Directory to write `report.json` and `report.txt` to")
@click.option(*CONFIG_ARGS, **CONFIG_KWARGS)
@click.option(
    "--policy",
    type=click.Choice(["three-class", "collapse-2-0", "collapse-2-1"]),
    help="How secondary stress is scored  [default: collapse-2-0]",
)
@click.option("--dataset", help="Dataset label of the report table")
@click.option("--method", help="Method label of the report table")
@click.option(
    "--combine",
    type=click.Path(exists=True, dir_okay=False, readable=True, resolve_path=True, path_type=Path),
    multiple=True,
    help="Earlier `report.json` files whose rows come before this run in the report table; repeatable",
)
def evaluate(
    decodes: Path,
    manifest: Path,
    lexicon: Path,
    out_dir: Path,
    config: Path | None,
    policy: str | None,
    dataset: str | None,
    method: str | None,
    combine: Tuple[Path, ...],
):
    """Score `--decodes` against the stress references of a `--manifest`.

    References come from each record's `phones`, else from the `--lexicon`. Manifest entries without a
    decode are listed as exclusions.
    """
    from lexstress.evaluator import StressReport, evaluate_decodes, load_decodes

    with exit_codes():
        cfg = RunConfig.resolve(
            config, {"evaluate.policy": policy, "evaluate.dataset": dataset, "evaluate.method": method}
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.snapshot(out_dir)
        report = evaluate_decodes(
            load_decodes(decodes), Manifest.load(manifest), load_lexicon(lexicon), cfg.evaluate, cfg.constraint
        )
        previous = [StressReport.load(path) for path in combine]
        report.write(out_dir, previous)
        report.render(previous=previous)


@lexstress.command()
@click.option("--out-dir", **OUT_DIR_KWARGS, help="Directory to write the corpus to")
@click.option("--spec", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="YAML corpus spec")
@click.option("--n", "n", type=click.IntRange(min=1), default=2000, show_default=True, help="Utterances to generate")
@click.option("--split", type=click.Choice(["train", "valid", "test"]), default="train", show_default=True)
@click.option(*CONFIG_ARGS, **CONFIG_KWARGS)
@click.option("--seed", **SEED_KWARGS)
@click.option(
    "--negative-control/--no-negative-control",
    default=False,
    show_default=True,
    help="Remove the duration, energy and pitch cues of stress from the audio features",
)
def synth(
    out_dir: Path,
    spec: Path | None,
    n: int,
    split: Literal["train", "valid", "test"],
    config: Path | None,
    seed: int | None,
    negative_control: bool,
):
    """Generate a synthetic corpus: `lexicon.dict`, a `<split>.jsonl` manifest and its feature dumps.

    Run once per split with the same seed; the lexicon is identical across runs.
    """
    from lexstress.synthdata import generate, negative_control as without_cues

    with exit_codes():
        overrides = {"synth": FileTypeYAML.load(spec) or {}} if spec else {}
        cfg = RunConfig.resolve(config, {**overrides, "seed": seed})
        synth_spec = without_cues(cfg.synth) if negative_control else cfg.synth
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.model_copy(update={"synth": synth_spec}).snapshot(out_dir)
        generate(synth_spec, n, out_dir, split)


if __name__ == "__main__":
    lexstress()
