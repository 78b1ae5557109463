"""
Transformer encoder-decoder from log-mel frames to stress-marked phoneme logits.

Both stacks are pre-layer-norm residual blocks with a final layer norm. Frames enter through a
linear `80 -> d_model` projection, target tokens through an embedding scaled by `sqrt(d_model)`;
both get sinusoidal positions added. The token embedding and the output projection are separate
weights.

```pycon
>>> import numpy as np
>>> from lexstress.dsp import FeatureSequence, FeatureStats
>>> cfg = ModelConfig(d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=32)
>>> params = init_parameters(cfg, seed=0)
>>> params.num_parameters == count_parameters(cfg)
True
>>> memory = encode(FeatureSequence(frames=np.zeros((10, 80))), params)
>>> memory.states.shape
(10, 16)
>>> decode_step(memory, [SOS_ID], params).shape
(72,)

```
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Iterator, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from lexstress import FormatError
from lexstress.dsp import N_MELS, FeatureSequence, FeatureStats, normalize
from lexstress.lexicon import SOS_ID, VOCABULARY
from lexstress.numerics import Graph, Tensor, ops

CHECKPOINT_MAGIC = b"SDCKPT01"
CHECKPOINT_VERSION = 1
_CHECKPOINT_PREFIX = struct.Struct("<8sII")

NEG_INF = -np.inf


class ModelConfig(BaseModel, frozen=True, extra="forbid"):
    """Transformer dimensions; defaults are a desk-scale model that trains on the synthetic corpus in minutes

    :param d_model: width of every residual stream
    :type d_model: int
    :param n_heads: attention heads, must divide `d_model`
    :type n_heads: int
    :param n_enc_layers: encoder blocks
    :type n_enc_layers: int
    :param n_dec_layers: decoder blocks
    :type n_dec_layers: int
    :param d_ff: hidden width of the feed-forward sublayers
    :type d_ff: int
    :param dropout_rate: dropout applied to sublayer outputs and embeddings while training
    :type dropout_rate: float
    :param max_positions: longest frame or token sequence accepted
    :type max_positions: int
    """

    d_model: int = Field(64, gt=0)
    n_heads: int = Field(4, gt=0)
    n_enc_layers: int = Field(2, gt=0)
    n_dec_layers: int = Field(2, gt=0)
    d_ff: int = Field(256, gt=0)
    dropout_rate: float = Field(0.1, ge=0, lt=1)
    max_positions: int = Field(2048, gt=0)
    vocab_size: int = Field(len(VOCABULARY), gt=0)
    feature_dim: int = Field(N_MELS, gt=0)

    @model_validator(mode="after")
    def _heads_divide_width(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        return self


def _attention_shapes(prefix: str, d: int) -> Iterator[Tuple[str, Tuple[int, ...]]]:
    for proj in ("q", "k", "v", "o"):
        yield f"{prefix}.{proj}.weight", (d, d)
        yield f"{prefix}.{proj}.bias", (d,)


def _norm_shapes(prefix: str, d: int) -> Iterator[Tuple[str, Tuple[int, ...]]]:
    yield f"{prefix}.gain", (d,)
    yield f"{prefix}.bias", (d,)


def _ff_shapes(prefix: str, d: int, d_ff: int) -> Iterator[Tuple[str, Tuple[int, ...]]]:
    yield f"{prefix}.w1.weight", (d, d_ff)
    yield f"{prefix}.w1.bias", (d_ff,)
    yield f"{prefix}.w2.weight", (d_ff, d)
    yield f"{prefix}.w2.bias", (d,)


def parameter_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Every named tensor of the model and its shape, in a fixed order"""
    d = cfg.d_model
    shapes = {"input_proj.weight": (cfg.feature_dim, d), "input_proj.bias": (d,)}
    for i in range(cfg.n_enc_layers):
        shapes.update(_norm_shapes(f"enc.{i}.ln1", d))
        shapes.update(_attention_shapes(f"enc.{i}.self_attn", d))
        shapes.update(_norm_shapes(f"enc.{i}.ln2", d))
        shapes.update(_ff_shapes(f"enc.{i}.ff", d, cfg.d_ff))
    shapes.update(_norm_shapes("enc.final_ln", d))
    shapes["embed.weight"] = (cfg.vocab_size, d)
    for i in range(cfg.n_dec_layers):
        shapes.update(_norm_shapes(f"dec.{i}.ln1", d))
        shapes.update(_attention_shapes(f"dec.{i}.self_attn", d))
        shapes.update(_norm_shapes(f"dec.{i}.ln2", d))
        shapes.update(_attention_shapes(f"dec.{i}.cross_attn", d))
        shapes.update(_norm_shapes(f"dec.{i}.ln3", d))
        shapes.update(_ff_shapes(f"dec.{i}.ff", d, cfg.d_ff))
    shapes.update(_norm_shapes("dec.final_ln", d))
    shapes["output_proj.weight"] = (d, cfg.vocab_size)
    shapes["output_proj.bias"] = (cfg.vocab_size,)
    return shapes


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form trainable parameter count

    ```pycon
    >>> count_parameters(ModelConfig())
    248200

    ```
    """
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    attention = 4 * (d * d + d)
    feed_forward = d * f + f + f * d + d
    norm = 2 * d
    encoder_layer = attention + feed_forward + 2 * norm
    decoder_layer = 2 * attention + feed_forward + 3 * norm
    return (
        (cfg.feature_dim * d + d)
        + cfg.n_enc_layers * encoder_layer
        + norm
        + v * d
        + cfg.n_dec_layers * decoder_layer
        + norm
        + (d * v + v)
    )


class ModelParameters:
    """Named weight arrays plus everything needed to run them: config, feature statistics and init seed

    :param config: the model dimensions
    :type config: ModelConfig
    :param tensors: name to array, shapes as given by `parameter_shapes(config)`
    :type tensors: Dict[str, np.ndarray]
    :param stats: corpus statistics the inputs are normalized with
    :type stats: FeatureStats
    :param seed: RNG seed the weights were initialized from
    :type seed: int
    """

    def __init__(self, config: ModelConfig, tensors: Dict[str, np.ndarray], stats: FeatureStats, seed: int = 0):
        expected = parameter_shapes(config)
        if set(expected) != set(tensors):
            missing, extra = set(expected) - set(tensors), set(tensors) - set(expected)
            raise ValueError(
                f"parameter names do not match the config (missing={sorted(missing)}, extra={sorted(extra)})"
            )
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ValueError(f"parameter '{name}' has shape {tensors[name].shape}, expected {shape}")
        self.config = config
        self.tensors = {name: tensors[name] for name in expected}
        self.stats = stats
        self.seed = seed

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __repr__(self):
        return f"ModelParameters(d_model={self.config.d_model}, parameters={self.num_parameters})"

    @property
    def num_parameters(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.stats, self.seed)


def init_parameters(cfg: ModelConfig, seed: int = 0, stats: FeatureStats | None = None) -> ModelParameters:
    """Xavier-uniform weight matrices, zero biases, unit layer-norm gains"""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".gain"):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif len(shape) == 1:
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(np.float32)
    return ModelParameters(cfg, tensors, stats or FeatureStats.identity(), seed)


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal positions: `sin` on even features, `cos` on odd, wavelengths up to `10000 * 2 pi`

    ```pycon
    >>> pe = positional_encoding(3, 4)
    >>> pe.shape, pe[0].tolist()
    ((3, 4), [0.0, 1.0, 0.0, 1.0])

    ```
    """
    position = np.arange(length)[:, None]
    div = np.exp(np.arange(0, d_model, 2) * (-np.log(10000.0) / d_model))
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(position * div)
    pe[:, 1::2] = np.cos(position * div)[:, : d_model // 2]
    return pe


class EncoderMemory(BaseModel):
    """`T x d_model` encoder output for one utterance"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    states: np.ndarray

    @field_validator("states")
    @classmethod
    def _matrix(cls, v):
        if np.ndim(v) != 2:
            raise ValueError(f"encoder memory must be a T x d_model matrix, got shape {np.shape(v)}")
        return v

    def __len__(self):
        return self.states.shape[0]


def padding_mask(lengths: Sequence[int], max_len: int) -> np.ndarray:
    """Additive key mask `(B, 1, 1, max_len)`, `-inf` past each length"""
    valid = np.arange(max_len)[None, :] < np.asarray(lengths)[:, None]
    return np.where(valid, 0.0, NEG_INF)[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    """Additive `(length, length)` mask forbidding attention to later positions"""
    return np.triu(np.full((length, length), NEG_INF), k=1)


class _Forward:
    """Builds the model's ops on one graph, resolving parameter names to graph leaves"""

    def __init__(self, graph: Graph, params: ModelParameters):
        self.graph = graph
        self.params = params
        self.cfg = params.config

    def p(self, name: str) -> Tensor:
        return self.graph.parameter(name, self.params[name])

    def dropout(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.cfg.dropout_rate)

    def norm(self, prefix: str, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.p(f"{prefix}.gain"), self.p(f"{prefix}.bias"))

    def linear(self, prefix: str, x: Tensor) -> Tensor:
        return ops.linear(x, self.p(f"{prefix}.weight"), self.p(f"{prefix}.bias"))

    def attention(self, prefix: str, query: Tensor, source: Tensor, mask: np.ndarray) -> Tensor:
        h = self.cfg.n_heads
        q = ops.split_heads(self.linear(f"{prefix}.q", query), h)
        k = ops.split_heads(self.linear(f"{prefix}.k", source), h)
        v = ops.split_heads(self.linear(f"{prefix}.v", source), h)
        return self.linear(f"{prefix}.o", ops.merge_heads(ops.scaled_dot_attention(q, k, v, mask)))

    def feed_forward(self, prefix: str, x: Tensor) -> Tensor:
        return self.linear(f"{prefix}.w2", self.dropout(ops.relu(self.linear(f"{prefix}.w1", x))))

    def positions(self, x: Tensor) -> Tensor:
        return ops.add(x, self.graph.constant(positional_encoding(x.shape[1], self.cfg.d_model)))

    def encoder(self, features: np.ndarray, frame_lengths: Sequence[int]) -> Tensor:
        if features.shape[1] > self.cfg.max_positions:
            raise ValueError(f"{features.shape[1]} frames exceed max_positions={self.cfg.max_positions}")
        mask = padding_mask(frame_lengths, features.shape[1])
        x = self.linear("input_proj", self.graph.constant(features))
        x = self.dropout(self.positions(x))
        for i in range(self.cfg.n_enc_layers):
            h = self.norm(f"enc.{i}.ln1", x)
            x = ops.add(x, self.dropout(self.attention(f"enc.{i}.self_attn", h, h, mask)))
            x = ops.add(x, self.dropout(self.feed_forward(f"enc.{i}.ff", self.norm(f"enc.{i}.ln2", x))))
        return self.norm("enc.final_ln", x)

    def decoder(self, memory: Tensor, frame_lengths: Sequence[int], tokens: np.ndarray) -> Tensor:
        if tokens.shape[1] > self.cfg.max_positions:
            raise ValueError(f"{tokens.shape[1]} tokens exceed max_positions={self.cfg.max_positions}")
        self_mask = causal_mask(tokens.shape[1])[None, None, :, :]
        cross_mask = padding_mask(frame_lengths, memory.shape[1])
        y = ops.scale(ops.embedding_lookup(self.p("embed.weight"), tokens), np.sqrt(self.cfg.d_model))
        y = self.dropout(self.positions(y))
        for i in range(self.cfg.n_dec_layers):
            h = self.norm(f"dec.{i}.ln1", y)
            y = ops.add(y, self.dropout(self.attention(f"dec.{i}.self_attn", h, h, self_mask)))
            h = self.norm(f"dec.{i}.ln2", y)
            y = ops.add(y, self.dropout(self.attention(f"dec.{i}.cross_attn", h, memory, cross_mask)))
            y = ops.add(y, self.dropout(self.feed_forward(f"dec.{i}.ff", self.norm(f"dec.{i}.ln3", y))))
        return self.linear("output_proj", self.norm("dec.final_ln", y))


def forward_train(
    graph: Graph,
    params: ModelParameters,
    features: np.ndarray,
    frame_lengths: Sequence[int],
    decoder_inputs: np.ndarray,
) -> Tensor:
    """Teacher-forced logits `(B, U, vocab_size)` for a padded batch

    :param features: normalized frames `(B, T, 80)`, zero past each length
    :type features: np.ndarray
    :param frame_lengths: real frame count per utterance
    :type frame_lengths: Sequence[int]
    :param decoder_inputs: `SOS`-prefixed target ids `(B, U)`, `PAD` past each length
    :type decoder_inputs: np.ndarray
    """
    forward = _Forward(graph, params)
    memory = forward.encoder(np.asarray(features), frame_lengths)
    return forward.decoder(memory, frame_lengths, np.asarray(decoder_inputs))


def encode(feats: FeatureSequence, params: ModelParameters, dtype=np.float32) -> EncoderMemory:
    """Encoder output for one normalized utterance, in eval mode (no dropout, deterministic)

    :raises ValueError: if the utterance is longer than `max_positions` frames
    """
    graph = Graph(requires_grad=False, dtype=dtype)
    states = _Forward(graph, params).encoder(feats.frames[None, :, :], [len(feats)])
    return EncoderMemory(states=states.value[0])


def decode_step(memory: EncoderMemory, prefix: Sequence[int], params: ModelParameters, dtype=np.float32) -> np.ndarray:
    """Logits for the position after `prefix`; the causal mask makes them independent of anything appended later

    :raises ValueError: if `prefix` is empty or does not start with `SOS`
    """
    if not len(prefix):
        raise ValueError("decode_step needs a non-empty prefix starting with <sos>")
    if prefix[0] != SOS_ID:
        raise ValueError(f"prefix must start with <sos> ({SOS_ID}), got {prefix[0]}")
    graph = Graph(requires_grad=False, dtype=dtype)
    forward = _Forward(graph, params)
    logits = forward.decoder(
        graph.constant(memory.states[None, :, :]), [len(memory)], np.asarray(prefix, dtype=np.int64)[None, :]
    )
    return logits.value[0, -1].astype(np.float64)


class TransformerStepper:
    """Binds an utterance's encoder memory to the model so decoders only see `decode_step(prefix)`

    ```pycon
    >>> from lexstress.dsp import FeatureSequence
    >>> params = init_parameters(ModelConfig(d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=16))
    >>> stepper = TransformerStepper.from_features(FeatureSequence(frames=np.zeros((5, 80))), params)
    >>> stepper.vocab_size, stepper.decode_step([SOS_ID]).shape
    (72, (72,))

    ```
    """

    def __init__(self, memory: EncoderMemory, params: ModelParameters):
        self.memory = memory
        self.params = params

    @classmethod
    def from_features(cls, feats: FeatureSequence, params: ModelParameters) -> "TransformerStepper":
        """Normalize raw features with the checkpoint statistics, then encode"""
        return cls(encode(normalize(feats, params.stats), params), params)

    @property
    def vocab_size(self) -> int:
        return self.params.config.vocab_size

    def decode_step(self, prefix: Sequence[int]) -> np.ndarray:
        return decode_step(self.memory, prefix, self.params)


def _write_tensor(f, name: str, array: np.ndarray):
    encoded = name.encode("utf-8")
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<I", array.ndim))
    f.write(struct.pack(f"<{array.ndim}I", *array.shape))
    f.write(np.ascontiguousarray(array, dtype="<f4").tobytes(order="C"))


def _read_tensors(raw: bytes, offset: int, path: Path) -> Dict[str, np.ndarray]:
    tensors = {}
    try:
        while offset < len(raw):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64))
            if offset + 4 * count > len(raw):
                raise FormatError(f"{path}: tensor '{name}' is truncated")
            values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
            tensors[name] = values.reshape(shape).astype(np.float32)
            offset += 4 * count
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: corrupt tensor section ({e})") from None
    return tensors


def save_checkpoint(
    path: Path | str,
    params: ModelParameters,
    step: int = 0,
    optimizer_state: Dict[str, Dict[str, np.ndarray]] | None = None,
    extra: dict | None = None,
) -> Path:
    """Write a checkpoint: magic `SDCKPT01`, u32 version, u32 header length, JSON header
    (config, vocabulary, feature stats, seed, step), then named float32 tensors with shape prefixes.
    Optimizer moments, when given, follow the model tensors as `adam.m.<name>` / `adam.v.<name>`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(
        {
            "config": params.config.model_dump(),
            "vocabulary": list(VOCABULARY.tokens),
            "stats": params.stats.model_dump(),
            "seed": params.seed,
            "step": step,
            "extra": extra or {},
        },
        sort_keys=True,
    ).encode("utf-8")
    with path.open("wb") as f:
        f.write(_CHECKPOINT_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for name, array in params.tensors.items():
            _write_tensor(f, name, array)
        for moment, arrays in (optimizer_state or {}).items():
            for name, array in arrays.items():
                _write_tensor(f, f"adam.{moment}.{name}", array)
    logger.debug(f"Wrote checkpoint {path} at step {step}")
    return path


class Checkpoint(BaseModel):
    """A loaded checkpoint"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ModelParameters
    step: int = 0
    optimizer_state: Dict[str, Dict[str, np.ndarray]] | None = None
    extra: dict = {}


def load_checkpoint(path: Path | str) -> Checkpoint:
    """Read a checkpoint written by [`save_checkpoint`][lexstress.model.save_checkpoint]

    :raises FormatError: on bad magic, an unknown version, a vocabulary other than this build's, or corrupt data
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _CHECKPOINT_PREFIX.size:
        raise FormatError(f"{path}: too short to be a checkpoint")
    magic, version, header_len = _CHECKPOINT_PREFIX.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[_CHECKPOINT_PREFIX.size : _CHECKPOINT_PREFIX.size + header_len])
    except ValueError as e:
        raise FormatError(f"{path}: corrupt header ({e})") from None
    if tuple(header.get("vocabulary", ())) != VOCABULARY.tokens:
        raise FormatError(f"{path}: checkpoint vocabulary does not match this build's {len(VOCABULARY)} tokens")

    tensors = _read_tensors(raw, _CHECKPOINT_PREFIX.size + header_len, path)
    moments: Dict[str, Dict[str, np.ndarray]] = {}
    for name in [n for n in tensors if n.startswith("adam.")]:
        _, moment, param = name.split(".", 2)
        moments.setdefault(moment, {})[param] = tensors.pop(name)
    try:
        params = ModelParameters(
            ModelConfig(**header["config"]), tensors, FeatureStats(**header["stats"]), int(header.get("seed", 0))
        )
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path}: {e}") from None
    return Checkpoint(
        params=params,
        step=int(header.get("step", 0)),
        optimizer_state=moments or None,
        extra=header.get("extra", {}),
    )


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
