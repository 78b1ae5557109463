"""
Minimal reverse-mode differentiation over numpy arrays: a
[`Graph`][lexstress.numerics.tensor.Graph] tape, the [`ops`][lexstress.numerics.ops] the
transformer needs, and a central-difference [`gradient_check`][lexstress.numerics.gradient_check].
"""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from lexstress.numerics import ops
from lexstress.numerics.tensor import Graph, Tensor

__all__ = ["Graph", "Tensor", "ops", "gradient_check"]


def gradient_check(
    fn: Callable[[Graph, Dict[str, np.ndarray]], Tensor],
    params: Dict[str, np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-5,
) -> float:
    """Largest relative error between analytic and central-difference gradients, in 64-bit.

    `fn(graph, params)` must build a scalar loss, reading each parameter through
    `graph.parameter(name, params[name])`. The relative error of an element is
    `|analytic - numeric| / max(|analytic| + |numeric|, floor)`.

    ```pycon
    >>> def loss(graph, p):
    ...     x = graph.parameter("x", p["x"])
    ...     return ops.sum_all(ops.mul(x, x))
    >>> bool(gradient_check(loss, {"x": np.array([1.0, -2.0, 3.0])}) < 1e-8)
    True

    ```
    """
    params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    graph = Graph(dtype=np.float64)
    analytic = graph.backward(fn(graph, params))

    def evaluate() -> float:
        return float(fn(Graph(requires_grad=False, dtype=np.float64), params).value)

    worst = 0.0
    for name, value in params.items():
        flat, grad = value.reshape(-1), analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = evaluate()
            flat[i] = original - h
            minus = evaluate()
            flat[i] = original
            numeric = (plus - minus) / (2 * h)
            worst = max(worst, float(abs(grad[i] - numeric) / max(abs(grad[i]) + abs(numeric), floor)))
    return worst


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
