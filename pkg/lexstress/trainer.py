"""
Teacher-forced training of the stress transformer: label-smoothed loss, Adam with a Noam-style
schedule, length-bucketed batches and early stopping on validation loss.

```pycon
>>> round(noam_rate(4000, d_model=64, factor=0.15, warmup_steps=4000), 8)
0.00029646
>>> noam_rate(2000, 64, 0.15, 4000) < noam_rate(4000, 64, 0.15, 4000) > noam_rate(8000, 64, 0.15, 4000)
True

```
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Mapping, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from lexstress import NumericsError
from lexstress.dsp import FeatureSequence, FeatureStats, compute_stats, normalize
from lexstress.lexicon import EOS_ID, PAD_ID, SOS_ID, VOCABULARY, Lexicon
from lexstress.model import (
    ModelConfig,
    ModelParameters,
    forward_train,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
)
from lexstress.numerics import Graph, Tensor, ops
from lexstress.objects.manifest import Manifest, Utterance


class TrainConfig(BaseModel, frozen=True, extra="forbid"):
    """Optimizer, schedule and loop settings

    The default schedule reads a base rate of 0.15 as the scale factor of a warmup then
    inverse-square-root schedule; `schedule="constant"` uses `constant_lr` instead.

    :param beta1: Adam first-moment decay
    :type beta1: float
    :param beta2: Adam second-moment decay
    :type beta2: float
    :param eps: Adam denominator epsilon
    :type eps: float
    :param schedule: `noam` or `constant`
    :type schedule: str
    :param lr_factor: scale factor of the `noam` schedule
    :type lr_factor: float
    :param warmup_steps: steps of linear warmup for the `noam` schedule
    :type warmup_steps: int
    :param constant_lr: learning rate of the `constant` schedule
    :type constant_lr: float
    :param label_smoothing: probability mass spread uniformly over the vocabulary
    :type label_smoothing: float
    :param max_steps: optimizer steps before stopping
    :type max_steps: int
    :param batch_size: utterances per batch
    :type batch_size: int
    :param eval_interval: steps between validation evaluations
    :type eval_interval: int
    :param patience: evaluations without improvement tolerated before stopping early
    :type patience: int
    :param log_interval: steps between training-loss log lines
    :type log_interval: int
    :param seed: seeds weight init, batch order and dropout
    :type seed: int
    """

    beta1: float = Field(0.9, gt=0, lt=1)
    beta2: float = Field(0.997, gt=0, lt=1)
    eps: float = Field(1e-9, gt=0)
    schedule: Literal["noam", "constant"] = "noam"
    lr_factor: float = Field(0.15, gt=0)
    warmup_steps: int = Field(4000, ge=1)
    constant_lr: float = Field(1e-3, ge=0)
    label_smoothing: float = Field(0.1, ge=0, lt=1)
    max_steps: int = Field(5000, ge=1)
    batch_size: int = Field(16, ge=1)
    eval_interval: int = Field(250, ge=1)
    patience: int = Field(5, ge=0)
    log_interval: int = Field(50, ge=1)
    seed: int = 0


def noam_rate(step: int, d_model: int, factor: float, warmup_steps: int) -> float:
    """`factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`, peaking at `step == warmup_steps`"""
    step = max(step, 1)
    return factor * d_model**-0.5 * min(step**-0.5, step * warmup_steps**-1.5)


def learning_rate(step: int, cfg: TrainConfig, d_model: int | None = None) -> float:
    if cfg.schedule == "constant":
        return cfg.constant_lr
    if d_model is None:
        raise ValueError("the noam schedule needs d_model")
    return noam_rate(step, d_model, cfg.lr_factor, cfg.warmup_steps)


class Example(BaseModel):
    """A training pair: raw features and stress-marked target ids (no `SOS`/`EOS`)"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    id: str
    features: FeatureSequence
    targets: Tuple[int, ...]


class Batch(BaseModel):
    """Padded, normalized model inputs for a group of examples

    :param features: `(B, T, 80)` normalized frames, zero past each length
    :type features: np.ndarray
    :param frame_lengths: real frames per example
    :type frame_lengths: np.ndarray
    :param decoder_inputs: `(B, U)` ids `SOS + targets`, `PAD` past each length
    :type decoder_inputs: np.ndarray
    :param targets: `(B, U)` ids `targets + EOS`, `PAD` past each length
    :type targets: np.ndarray
    :param target_lengths: real target positions per example, `EOS` included
    :type target_lengths: np.ndarray
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    ids: List[str]
    features: np.ndarray
    frame_lengths: np.ndarray
    decoder_inputs: np.ndarray
    targets: np.ndarray
    target_lengths: np.ndarray

    def __len__(self):
        return len(self.ids)

    @property
    def frame_mask(self) -> np.ndarray:
        return np.arange(self.features.shape[1])[None, :] < self.frame_lengths[:, None]

    @property
    def target_mask(self) -> np.ndarray:
        return self.targets != PAD_ID

    @property
    def num_tokens(self) -> int:
        return int(self.target_mask.sum())


def make_batch(examples: Sequence[Example], stats: FeatureStats, pad_frames: int = 0, pad_tokens: int = 0) -> Batch:
    """Normalize and pad a group of examples; `pad_frames` / `pad_tokens` add extra padding beyond the longest"""
    if not examples:
        raise ValueError("cannot make an empty batch")
    frame_lengths = np.array([len(e.features) for e in examples])
    target_lengths = np.array([len(e.targets) + 1 for e in examples])
    t, u = int(frame_lengths.max()) + pad_frames, int(target_lengths.max()) + pad_tokens
    features = np.zeros((len(examples), t, examples[0].features.frames.shape[1]), dtype=np.float32)
    decoder_inputs = np.full((len(examples), u), PAD_ID, dtype=np.int64)
    targets = np.full((len(examples), u), PAD_ID, dtype=np.int64)
    for i, e in enumerate(examples):
        features[i, : len(e.features)] = normalize(e.features, stats).frames
        decoder_inputs[i, : len(e.targets) + 1] = (SOS_ID, *e.targets)
        targets[i, : len(e.targets) + 1] = (*e.targets, EOS_ID)
    return Batch(
        ids=[e.id for e in examples],
        features=features,
        frame_lengths=frame_lengths,
        decoder_inputs=decoder_inputs,
        targets=targets,
        target_lengths=target_lengths,
    )


def make_batches(
    examples: Sequence[Example], batch_size: int, stats: FeatureStats, rng: np.random.Generator | None = None
) -> List[Batch]:
    """Bucket examples by frame count so each batch pads little; with `rng`, the order within
    equal lengths and the order of batches are shuffled"""
    order = np.arange(len(examples)) if rng is None else rng.permutation(len(examples))
    lengths = np.array([len(examples[i].features) for i in order])
    order = order[np.argsort(lengths, kind="stable")]
    batches = [
        make_batch([examples[i] for i in order[start : start + batch_size]], stats)
        for start in range(0, len(order), batch_size)
    ]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def smoothed_loss(logits: Tensor, targets: np.ndarray, smoothing: float, vocab_size: int | None = None) -> Tensor:
    """Cross-entropy against `(1 - smoothing) * onehot + smoothing / V`, averaged over non-`PAD` targets

    ```pycon
    >>> g = Graph(dtype=np.float64)
    >>> loss = smoothed_loss(g.constant(np.zeros((1, 2, 72))), np.array([[5, PAD_ID]]), 0.1)
    >>> round(float(loss.value), 6) == round(math.log(72), 6)
    True

    ```
    :raises ValueError: if a target id is outside the vocabulary, or every target is `PAD`
    """
    vocab_size = vocab_size or logits.shape[-1]
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[-1] != vocab_size or logits.shape[:-1] != targets.shape:
        raise ValueError(f"smoothed_loss shape mismatch: logits {logits.shape} and targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab_size):
        raise ValueError(f"target ids must be in [0, {vocab_size}), got range [{targets.min()}, {targets.max()}]")
    mask = targets != PAD_ID
    count = int(mask.sum())
    if not count:
        raise ValueError("no non-pad targets to average the loss over")
    target_dist = np.full(targets.shape + (vocab_size,), smoothing / vocab_size)
    np.put_along_axis(target_dist, targets[..., None], 1.0 - smoothing + smoothing / vocab_size, axis=-1)
    weights = -target_dist * mask[..., None] / count
    return ops.weighted_sum(ops.log_softmax(logits), weights)


class AdamState:
    """First and second moment estimates, one array per parameter"""

    def __init__(self, m: Dict[str, np.ndarray], v: Dict[str, np.ndarray]):
        self.m = m
        self.v = v

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})

    def as_dict(self) -> Dict[str, Dict[str, np.ndarray]]:
        return {"m": self.m, "v": self.v}


def adam_step(
    params: ModelParameters | Dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    step: int,
    cfg: TrainConfig,
    d_model: int | None = None,
) -> float:
    """Bias-corrected Adam update, in place, at the scheduled learning rate for `step` (1-based)

    ```pycon
    >>> p = {"w": np.array([1.0])}
    >>> cfg = TrainConfig(schedule="constant", constant_lr=0.1)
    >>> lr = adam_step(p, {"w": np.array([0.5])}, AdamState.zeros(p), 1, cfg)
    >>> lr, p["w"].round(6)
    (0.1, array([0.9]))

    ```
    :return: the learning rate used
    :raises ValueError: if a gradient or moment does not match its parameter's shape
    """
    tensors = params.tensors if isinstance(params, ModelParameters) else params
    lr = learning_rate(step, cfg, d_model)
    bias1, bias2 = 1.0 - cfg.beta1**step, 1.0 - cfg.beta2**step
    for name, p in tensors.items():
        g, m, v = grads[name], state.m[name], state.v[name]
        if not (g.shape == m.shape == v.shape == p.shape):
            raise ValueError(f"adam_step shape mismatch for '{name}': {p.shape} and {g.shape}")
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= (lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)).astype(p.dtype)
    return lr


def batch_loss(params: ModelParameters, batch: Batch, smoothing: float, graph: Graph | None = None) -> Tensor:
    graph = graph if graph is not None else Graph(requires_grad=False)
    logits = forward_train(graph, params, batch.features, batch.frame_lengths, batch.decoder_inputs)
    return smoothed_loss(logits, batch.targets, smoothing, params.config.vocab_size)


def validation_loss(params: ModelParameters, batches: Sequence[Batch], smoothing: float) -> float:
    """Token-weighted mean smoothed loss in eval mode"""
    total, tokens = 0.0, 0
    for batch in batches:
        total += float(batch_loss(params, batch, smoothing).value) * batch.num_tokens
        tokens += batch.num_tokens
    return total / tokens


def example_from(utterance: Utterance, lexicon: Lexicon, base_dir: Path) -> Example:
    targets = tuple(VOCABULARY.encode_all(utterance.reference(lexicon)))
    return Example(id=utterance.uid, features=utterance.load_features(base_dir), targets=targets)


def load_dataset(manifest: Manifest, lexicon: Lexicon, workers: int = 1) -> List[Example]:
    """Features and reference targets for every record of a manifest

    :raises ValueError: on an empty manifest
    :raises LexiconError: if a transcript has a word missing from the lexicon
    """
    if not len(manifest):
        raise ValueError(f"manifest in {manifest.base_dir} has no utterances")
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        return list(pool.map(lambda u: example_from(u, lexicon, manifest.base_dir), manifest))


class TrainResult(BaseModel):
    steps: int
    best_step: int
    best_val_loss: float
    stopped_early: bool
    evaluations: int
    best_checkpoint: Path
    last_checkpoint: Path
    log: Path


def _endless_batches(
    examples: Sequence[Example], cfg: TrainConfig, stats: FeatureStats, rng: np.random.Generator
) -> Iterator[Batch]:
    while True:
        yield from make_batches(examples, cfg.batch_size, stats, rng)


def train(
    train_set: Sequence[Example],
    valid_set: Sequence[Example],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir: Path | str,
    resume: bool = False,
) -> TrainResult:
    """Optimize until `max_steps`, or until validation loss fails to improve for more than `patience` evaluations.

    Writes `best.ckpt` (lowest validation loss), `last.ckpt` (with optimizer moments, for resuming)
    and `train_log.csv` (`step,lr,train_loss,val_loss`, one row per evaluation) into `out_dir`.

    :raises ValueError: if either split is empty
    :raises NumericsError: if the loss becomes non-finite
    """
    if not train_set:
        raise ValueError("the training split is empty")
    if not valid_set:
        raise ValueError("the validation split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path, last_path, log_path = out_dir / "best.ckpt", out_dir / "last.ckpt", out_dir / "train_log.csv"

    step, best_step, best_val, since_best, evaluations = 0, 0, math.inf, 0, 0
    if resume and last_path.exists():
        checkpoint = load_checkpoint(last_path)
        params, step = checkpoint.params, checkpoint.step
        if checkpoint.optimizer_state:
            state = AdamState(**checkpoint.optimizer_state)
        else:
            state = AdamState.zeros(params.tensors)
        best_step = int(checkpoint.extra.get("best_step", step))
        best_val = float(checkpoint.extra.get("best_val_loss", math.inf))
        since_best = int(checkpoint.extra.get("evals_since_best", 0))
        evaluations = int(checkpoint.extra.get("evaluations", 0))
        logger.info(f"Resuming from {last_path} at step {step}")
    else:
        stats = compute_stats(e.features for e in train_set)
        params = init_parameters(model_cfg, seed=train_cfg.seed, stats=stats)
        state = AdamState.zeros(params.tensors)
        with log_path.open("w", newline="") as f:
            csv.writer(f).writerow(["step", "lr", "train_loss", "val_loss"])
    logger.info(f"Training {params!r} on {len(train_set)} utterances, validating on {len(valid_set)}")

    rng = np.random.default_rng([train_cfg.seed, step])
    valid_batches = make_batches(valid_set, train_cfg.batch_size, params.stats)
    batches = _endless_batches(train_set, train_cfg, params.stats, rng)
    interval_loss, interval_steps, stopped_early, lr = 0.0, 0, False, 0.0

    while step < train_cfg.max_steps:
        step += 1
        batch = next(batches)
        graph = Graph(training=True, rng=rng)
        try:
            loss = batch_loss(params, batch, train_cfg.label_smoothing, graph)
            grads = graph.backward(loss)
            lr = adam_step(params, grads, state, step, train_cfg, params.config.d_model)
        except NumericsError as e:
            raise NumericsError(
                f"step {step}: {e} (lr={learning_rate(step, train_cfg, params.config.d_model):.3g}, "
                f"batch={batch.ids[:5]}{'...' if len(batch) > 5 else ''})"
            ) from e
        interval_loss += float(loss.value)
        interval_steps += 1
        if step % train_cfg.log_interval == 0:
            logger.debug(f"step {step}: lr={lr:.3g} loss={float(loss.value):.4f}")

        if step % train_cfg.eval_interval and step != train_cfg.max_steps:
            continue
        evaluations += 1
        val = validation_loss(params, valid_batches, train_cfg.label_smoothing)
        train_loss = interval_loss / interval_steps
        interval_loss, interval_steps = 0.0, 0
        with log_path.open("a", newline="") as f:
            csv.writer(f).writerow([step, f"{lr:.6g}", f"{train_loss:.6f}", f"{val:.6f}"])
        if val < best_val:
            best_val, best_step, since_best = val, step, 0
            save_checkpoint(best_path, params, step)
            logger.info(f"step {step}: train loss {train_loss:.4f}, validation loss {val:.4f} (best)")
        else:
            since_best += 1
            logger.info(
                f"step {step}: train loss {train_loss:.4f}, validation loss {val:.4f} ({since_best} since best)"
            )
        extra = {
            "best_step": best_step,
            "best_val_loss": best_val,
            "evals_since_best": since_best,
            "evaluations": evaluations,
        }
        save_checkpoint(last_path, params, step, optimizer_state=state.as_dict(), extra=extra)
        if since_best > train_cfg.patience:
            logger.info(f"Stopping early at step {step}: no improvement for {since_best} evaluations")
            stopped_early = True
            break

    return TrainResult(
        steps=step,
        best_step=best_step,
        best_val_loss=best_val,
        stopped_early=stopped_early,
        evaluations=evaluations,
        best_checkpoint=best_path,
        last_checkpoint=last_path,
        log=log_path,
    )


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
