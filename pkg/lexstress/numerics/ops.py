"""
Differentiable ops over [`Tensor`][lexstress.numerics.tensor.Tensor] values.

Every op computes its forward value with numpy and registers a backward rule on the graph.
Broadcasting is limited to what the transformer needs: a bias or gain along the last axis,
and shared weights across leading batch/head axes.

```pycon
>>> import numpy as np
>>> from lexstress.numerics import Graph
>>> graph = Graph(dtype=np.float64)
>>> softmax(graph.constant([0.0, 0.0, 0.0])).value
array([0.33333333, 0.33333333, 0.33333333])
>>> layer_norm(graph.constant([5.0, 5.0, 5.0]), graph.constant(np.ones(3)), graph.constant(np.zeros(3))).value
array([0., 0., 0.])

```
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from lexstress.numerics.tensor import Tensor

LAYER_NORM_EPS = 1e-6
"""Added to the variance in [`layer_norm`][lexstress.numerics.ops.layer_norm]"""


def _unbroadcast(grad: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Sum a gradient back down to the shape of a broadcast input"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _broadcast_shape(op: str, a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op} shape mismatch: {a.shape} and {b.shape}") from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; `b` may be shared across the leading axes of `a`"""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} and {b.shape}")
    try:
        value = np.matmul(a.value, b.value)
    except ValueError:
        raise ValueError(f"matmul shape mismatch: {a.shape} and {b.shape}") from None

    def backward(g):
        return (
            _unbroadcast(np.matmul(g, _swap(b.value)), a.shape),
            _unbroadcast(np.matmul(_swap(a.value), g), b.shape),
        )

    return a.graph.record(value, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return a.graph.record(a.value + b.value, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product"""
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return a.graph.record(a.value * b.value, (a, b), backward, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant"""

    def backward(g):
        return (g * factor,)

    return x.graph.record(x.value * factor, (x,), backward, "scale")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """`x @ weight + bias`, with `weight` shaped `(in, out)`"""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape shape mismatch: {x.shape} and {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return x.graph.record(value, (x,), backward, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return x.graph.record(x.value.transpose(axes), (x,), backward, "transpose")


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """`(B, T, d)` to `(B, n_heads, T, d / n_heads)`"""
    b, t, d = x.shape
    if d % n_heads:
        raise ValueError(f"cannot split {d} features into {n_heads} heads")
    return transpose(reshape(x, (b, t, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """`(B, n_heads, T, d_head)` to `(B, T, n_heads * d_head)`"""
    b, h, t, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply `gain` and `bias`"""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ValueError(f"layer_norm shape mismatch: {x.shape} and {gain.shape}/{bias.shape}")
    centered = x.value - x.value.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def backward(g):
        n = x.shape[-1]
        d_normed = g * gain.value
        dx = (inv_std / n) * (
            n * d_normed
            - d_normed.sum(axis=-1, keepdims=True)
            - normed * (d_normed * normed).sum(axis=-1, keepdims=True)
        )
        return dx, _unbroadcast(g * normed, gain.shape), _unbroadcast(g, bias.shape)

    return x.graph.record(normed * gain.value + bias.value, (x, gain, bias), backward, "layer_norm")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row max"""
    e = np.exp(x.value - x.value.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return x.graph.record(s, (x,), backward, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return x.graph.record(out, (x,), backward, "log_softmax")


def relu(x: Tensor) -> Tensor:
    def backward(g):
        return (g * (x.value > 0),)

    return x.graph.record(np.maximum(x.value, 0), (x,), backward, "relu")


def dropout(x: Tensor, rate: float) -> Tensor:
    """Inverted dropout: identity unless the graph is training, otherwise zero each value with
    probability `rate` and scale the survivors by `1 / (1 - rate)`"""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not x.graph.training or rate == 0:
        return x
    mask = (x.graph.rng.random(x.shape) >= rate).astype(x.graph.dtype) / (1.0 - rate)

    def backward(g):
        return (g * mask,)

    return x.graph.record(x.value * mask, (x,), backward, "dropout")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of `table` selected by an integer array of any shape"""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding ids must be in [0, {table.shape[0]}), got range [{ids.min()}, {ids.max()}]")

    def backward(g):
        grad = np.zeros_like(table.value)
        np.add.at(grad, ids, g)
        return (grad,)

    return table.graph.record(table.value[ids], (table,), backward, "embedding_lookup")


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """`softmax(q k^T / sqrt(d_k) + mask) v`

    `mask` is additive, broadcastable to `(..., T_q, T_k)`, with `0` for allowed and `-inf` for
    forbidden positions.

    :raises ValueError: on incompatible shapes, or if a query row is masked at every key position
    """
    if q.shape[:-2] != k.shape[:-2] or k.shape[:-2] != v.shape[:-2]:
        raise ValueError(f"attention shape mismatch: {q.shape} and {k.shape}")
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"attention shape mismatch: {q.shape} and {k.shape}")
    graph = q.graph
    factor = 1.0 / np.sqrt(q.shape[-1])
    scores = np.matmul(q.value, _swap(k.value)) * factor
    if mask is not None:
        mask = np.asarray(mask, dtype=graph.dtype)
        try:
            scores = scores + np.broadcast_to(mask, scores.shape)
        except ValueError:
            raise ValueError(f"attention mask shape mismatch: {mask.shape} and {scores.shape}") from None
        if not np.all(np.any(np.isfinite(scores), axis=-1)):
            raise ValueError("attention row is masked at every key position")
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    weights = e / e.sum(axis=-1, keepdims=True)
    if graph.record_attention:
        graph.attention_weights.append(weights)

    def backward(g):
        gw = np.matmul(g, _swap(v.value))
        gs = weights * (gw - (gw * weights).sum(axis=-1, keepdims=True))
        return (
            np.matmul(gs, k.value) * factor,
            np.matmul(_swap(gs), q.value) * factor,
            np.matmul(_swap(weights), g),
        )

    return graph.record(np.matmul(weights, v.value), (q, k, v), backward, "scaled_dot_attention")


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return x.graph.record(x.value.sum(), (x,), backward, "sum_all")


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """`sum(x * weights)` with constant weights, a scalar; the reduction behind the training loss"""
    weights = np.asarray(weights, dtype=x.graph.dtype)
    try:
        weights = np.broadcast_to(weights, x.shape)
    except ValueError:
        raise ValueError(f"weighted_sum shape mismatch: {x.shape} and {weights.shape}") from None

    def backward(g):
        return (g * weights,)

    return x.graph.record((x.value * weights).sum(), (x,), backward, "weighted_sum")


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
