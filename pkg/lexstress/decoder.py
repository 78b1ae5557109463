"""
Decoding over a stress lattice.

[`constrained_greedy`][lexstress.decoder.constrained_greedy] runs exactly one step per lattice
position: the next-token log-probabilities are restricted to the position's allowed ids, the
best one (lowest id on ties) is appended and fed back as the next prefix. Consonant positions
are singletons, so only the stress digit of each vowel is ever chosen.

```pycon
>>> import numpy as np
>>> from lexstress.lexicon import parse_dictionary, build_constraint
>>> lattice = build_constraint("PREDICT", parse_dictionary(["PREDICT  P R IH0 D IH1 K T"]))
>>> class FavorsPrimary:
...     vocab_size = 72
...     def decode_step(self, prefix):
...         logits = np.zeros(72)
...         logits[VOCABULARY.encode("IH1")] = 2.0
...         return logits
>>> result = constrained_greedy(FavorsPrimary(), lattice)
>>> result.tokens
(P, R, IH1, D, IH1, K, T)
>>> [sorted(s.renormalized) for s in result.per_position]
[['IH0', 'IH1', 'IH2'], ['IH0', 'IH1', 'IH2']]

```
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Literal, Protocol, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from lexstress.lexicon import (
    EOS_ID,
    PAD_ID,
    SOS_ID,
    VOCABULARY,
    ConstraintConfig,
    ConstraintLattice,
    DEFAULT_CONSTRAINT,
    Lexicon,
    PhonemeToken,
    strip_stress,
)
from lexstress.model import ModelParameters, TransformerStepper
from lexstress.objects.decode_record import DecodeRecord, StressScores
from lexstress.objects.manifest import Manifest, Utterance


class StepModel(Protocol):
    """Anything that yields next-token logits for a token prefix starting with `SOS`"""

    vocab_size: int

    def decode_step(self, prefix: Sequence[int]) -> np.ndarray: ...


class DecodeConfig(BaseModel, frozen=True, extra="forbid"):
    """
    :param mode: `constrained` lattice decoding, or `free` unconstrained greedy decoding for diagnostics
    :type mode: str
    :param beam: beam width for constrained decoding; 1 is greedy
    :type beam: int
    :param max_len: longest output of `free` mode
    :type max_len: int
    :param workers: utterances decoded concurrently
    :type workers: int
    """

    mode: Literal["constrained", "free"] = "constrained"
    beam: int = Field(1, ge=1)
    max_len: int = Field(200, ge=1)
    workers: int = Field(1, ge=1)


class DecodeResult(BaseModel, frozen=True, extra="forbid"):
    """Output of a constrained decode

    :param tokens: predicted stress-marked phones, one per lattice position
    :type tokens: Tuple[PhonemeToken, ...]
    :param token_ids: the same, as vocabulary ids
    :type token_ids: Tuple[int, ...]
    :param step_probabilities: full-vocabulary probability of the chosen token at every position
    :type step_probabilities: Tuple[float, ...]
    :param per_position: stress probabilities at each vowel position
    :type per_position: Tuple[StressScores, ...]
    :param total_log_prob: sum of the chosen tokens' full-vocabulary log-probabilities
    :type total_log_prob: float
    """

    tokens: Tuple[PhonemeToken, ...]
    token_ids: Tuple[int, ...]
    step_probabilities: Tuple[float, ...]
    per_position: Tuple[StressScores, ...]
    total_log_prob: float


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _step_log_probs(model: StepModel, prefix: Sequence[int]) -> np.ndarray:
    logits = np.asarray(model.decode_step(list(prefix)), dtype=np.float64)
    if logits.shape != (len(VOCABULARY),):
        raise ValueError(f"mismatched vocabulary: model returned {logits.shape[-1]} logits, expected {len(VOCABULARY)}")
    return log_softmax(logits)


def _check_vocabulary(model: StepModel):
    if model.vocab_size != len(VOCABULARY):
        raise ValueError(f"mismatched vocabulary: model has {model.vocab_size} tokens, lattice uses {len(VOCABULARY)}")


def _result(lattice: ConstraintLattice, path: Sequence[int], step_log_probs: Sequence[np.ndarray]) -> DecodeResult:
    per_position = []
    for i, (allowed, log_probs) in enumerate(zip(lattice.positions, step_log_probs)):
        token = PhonemeToken.parse(VOCABULARY.decode(path[i]))
        if not token.is_vowel:
            continue
        ids = sorted(allowed)
        probs = np.exp(log_probs[ids])
        per_position.append(
            StressScores(
                position=i,
                phone=token.base,
                probabilities={VOCABULARY.decode(t): float(p) for t, p in zip(ids, probs)},
                renormalized={VOCABULARY.decode(t): float(p) for t, p in zip(ids, probs / probs.sum())},
            )
        )
    chosen = [float(lp[t]) for lp, t in zip(step_log_probs, path)]
    return DecodeResult(
        tokens=tuple(PhonemeToken.parse(t) for t in VOCABULARY.decode_all(path)),
        token_ids=tuple(path),
        step_probabilities=tuple(float(np.exp(c)) for c in chosen),
        per_position=tuple(per_position),
        total_log_prob=float(sum(chosen)),
    )


def constrained_greedy(model: StepModel, lattice: ConstraintLattice) -> DecodeResult:
    """Greedy decoding restricted to the lattice, one step per position; `EOS` is never consumed

    :raises ValueError: for an empty lattice, an empty allowed set, or a model whose vocabulary is not the lattice's
    """
    if not len(lattice):
        raise ValueError("cannot decode an empty lattice")
    _check_vocabulary(model)
    prefix, path, step_log_probs = [SOS_ID], [], []
    for i, allowed in enumerate(lattice.positions):
        if not allowed:
            raise ValueError(f"position {i} has an empty allowed set")
        log_probs = _step_log_probs(model, prefix)
        ids = sorted(allowed)
        choice = ids[int(np.argmax(log_probs[ids]))]
        path.append(choice)
        prefix.append(choice)
        step_log_probs.append(log_probs)
    return _result(lattice, path, step_log_probs)


def constrained_beam(model: StepModel, lattice: ConstraintLattice, width: int) -> DecodeResult:
    """Beam search over the lattice. Hypotheses are ranked by total log-probability, then by id
    sequence, so `width=1` is exactly [`constrained_greedy`][lexstress.decoder.constrained_greedy] and a
    width of at least `lattice.num_paths()` is an exhaustive search.

    :raises ValueError: if `width < 1`, or as `constrained_greedy`
    """
    if width < 1:
        raise ValueError(f"beam width must be at least 1, got {width}")
    if not len(lattice):
        raise ValueError("cannot decode an empty lattice")
    _check_vocabulary(model)
    # (score, path, per-step log-probs)
    beam: List[Tuple[float, Tuple[int, ...], Tuple[np.ndarray, ...]]] = [(0.0, (), ())]
    for i, allowed in enumerate(lattice.positions):
        if not allowed:
            raise ValueError(f"position {i} has an empty allowed set")
        candidates = []
        for score, path, history in beam:
            log_probs = _step_log_probs(model, (SOS_ID, *path))
            for token in sorted(allowed):
                candidates.append((score + float(log_probs[token]), (*path, token), (*history, log_probs)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beam = candidates[:width]
    _, path, history = beam[0]
    return _result(lattice, path, history)


def score_path(model: StepModel, path: Sequence[int]) -> float:
    """Total log-probability of a full token path under chained `decode_step` calls"""
    total, prefix = 0.0, [SOS_ID]
    for token in path:
        total += float(_step_log_probs(model, prefix)[token])
        prefix.append(token)
    return total


def unconstrained_greedy(model: StepModel, max_len: int) -> Tuple[str, ...]:
    """Plain greedy decoding until `EOS` or `max_len` tokens; `PAD` and `SOS` are never emitted

    :raises ValueError: if `max_len < 1`
    """
    if max_len < 1:
        raise ValueError(f"max_len must be at least 1, got {max_len}")
    _check_vocabulary(model)
    prefix: List[int] = [SOS_ID]
    while len(prefix) - 1 < max_len:
        log_probs = _step_log_probs(model, prefix)
        log_probs[[PAD_ID, SOS_ID]] = -np.inf
        token = int(np.argmax(log_probs))
        if token == EOS_ID:
            break
        prefix.append(token)
    return tuple(VOCABULARY.decode_all(prefix[1:]))


def decode_lattice(model: StepModel, lattice: ConstraintLattice, beam: int = 1) -> DecodeResult:
    """Greedy for `beam == 1`, beam search otherwise; re-asserts the lattice's base sequence on the output

    :raises RuntimeError: if the output violates the lattice
    """
    result = constrained_greedy(model, lattice) if beam == 1 else constrained_beam(model, lattice, beam)
    if strip_stress(result.tokens) != lattice.base_sequence():
        raise RuntimeError(f"constrained decode left the lattice: {result.tokens} vs {lattice.base_sequence()}")
    return result


def decode_utterance(
    utterance: Utterance,
    lexicon: Lexicon,
    params: ModelParameters,
    base_dir: Path | str,
    cfg: DecodeConfig = DecodeConfig(),
    constraint: ConstraintConfig = DEFAULT_CONSTRAINT,
) -> DecodeRecord:
    stepper = TransformerStepper.from_features(utterance.load_features(base_dir), params)
    if cfg.mode == "free":
        predicted = unconstrained_greedy(stepper, cfg.max_len)
        return DecodeRecord(id=utterance.uid, transcript=utterance.transcript, mode="free", predicted=list(predicted))
    lattice = utterance.lattice(lexicon, constraint)
    result = decode_lattice(stepper, lattice, cfg.beam)
    return DecodeRecord(
        id=utterance.uid,
        transcript=utterance.transcript,
        mode="constrained",
        base_phones=list(lattice.base_sequence()),
        predicted=[str(t) for t in result.tokens],
        stress=list(result.per_position),
        total_log_prob=result.total_log_prob,
    )


def decode_corpus(
    manifest: Manifest,
    lexicon: Lexicon,
    params: ModelParameters,
    cfg: DecodeConfig = DecodeConfig(),
    constraint: ConstraintConfig = DEFAULT_CONSTRAINT,
) -> Tuple[List[DecodeRecord], Dict[str, str]]:
    """Decode every utterance of a manifest, in manifest order, with `cfg.workers` threads

    :return: decode records, and the failure reason of each utterance that could not be decoded
    """

    def run(utterance: Utterance):
        try:
            return decode_utterance(utterance, lexicon, params, manifest.base_dir, cfg, constraint), None
        except (ValueError, OSError) as e:
            logger.warning(f"Could not decode '{utterance.uid}': {e}")
            return None, f"{type(e).__name__}: {e}"

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        outcomes = list(pool.map(run, manifest))
    records = [r for r, _ in outcomes if r is not None]
    failures = {u.uid: reason for u, (_, reason) in zip(manifest, outcomes) if reason is not None}
    logger.info(f"Decoded {len(records)}/{len(manifest)} utterances ({cfg.mode}, beam={cfg.beam})")
    return records, failures


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
