"""
Define-by-run computation tape with reverse-mode gradient accumulation.

A [`Graph`][lexstress.numerics.tensor.Graph] is rebuilt for every forward pass. Each op appends a
node holding its value and a backward rule; since nodes are appended in creation order, walking the
tape backwards is a reverse topological order and visits each node exactly once.

```pycon
>>> import numpy as np
>>> from lexstress.numerics import ops
>>> graph = Graph(dtype=np.float64)
>>> w = graph.parameter("w", np.array([[1.0, 2.0], [3.0, 4.0]]))
>>> x = graph.constant(np.array([[1.0, -1.0]]))
>>> loss = ops.sum_all(ops.matmul(x, w))
>>> float(loss.value[()])
-4.0
>>> graph.backward(loss)["w"]
array([[ 1.,  1.],
       [-1., -1.]])

```
"""

from __future__ import annotations

from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from lexstress import NumericsError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A value on a [`Graph`][lexstress.numerics.tensor.Graph], with its parents and backward rule

    :param value: the forward value, at most 4 dimensions
    :type value: np.ndarray
    :param graph: the owning graph
    :type graph: Graph
    :param parents: inputs of the op that produced this tensor
    :type parents: Tuple[Tensor, ...]
    :param backward_fn: maps the output gradient to one gradient per parent (`None` to skip a parent)
    :type backward_fn: BackwardFn | None
    :param op: op name, for error messages
    :type op: str
    :param name: parameter name, for trainable leaves only
    :type name: str | None
    """

    __slots__ = ("value", "graph", "parents", "backward_fn", "op", "name", "grad")

    def __init__(
        self,
        value: np.ndarray,
        graph: "Graph",
        parents: Tuple["Tensor", ...] = (),
        backward_fn: BackwardFn | None = None,
        op: str = "leaf",
        name: str | None = None,
    ):
        self.value = value
        self.graph = graph
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}{f', name={self.name}' if self.name else ''})"


class Graph:
    """Tape of [`Tensor`][lexstress.numerics.tensor.Tensor] nodes for one forward/backward pass

    :param requires_grad: record backward rules; inference graphs set this to `False`
    :type requires_grad: bool
    :param dtype: float32 for training and inference, float64 for gradient checks
    :type dtype: np.dtype
    :param training: enables dropout
    :type training: bool
    :param rng: source of dropout masks
    :type rng: np.random.Generator | None
    :param record_attention: keep every attention weight matrix in `attention_weights`
    :type record_attention: bool
    """

    def __init__(
        self,
        requires_grad: bool = True,
        dtype=np.float32,
        training: bool = False,
        rng: np.random.Generator | None = None,
        record_attention: bool = False,
    ):
        self.requires_grad = requires_grad
        self.dtype = np.dtype(dtype)
        self.training = training
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.record_attention = record_attention
        self.attention_weights: List[np.ndarray] = []
        self.parameters: Dict[str, Tensor] = {}
        self._tape: List[Tensor] = []

    def __len__(self):
        return len(self._tape)

    def constant(self, value) -> Tensor:
        """Non-trainable leaf"""
        return Tensor(np.asarray(value, dtype=self.dtype), self, op="constant")

    def parameter(self, name: str, value: np.ndarray) -> Tensor:
        """Trainable leaf; requesting the same name twice on a graph returns the same node"""
        if name in self.parameters:
            return self.parameters[name]
        tensor = Tensor(np.asarray(value, dtype=self.dtype), self, op="parameter", name=name)
        self.parameters[name] = tensor
        return tensor

    def record(self, value: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
        """Add an op result to the tape

        :raises NumericsError: if the op produced NaN or Inf
        """
        value = np.asarray(value, dtype=self.dtype)
        if value.ndim > 4:
            raise ValueError(f"{op} produced a {value.ndim}-dimensional tensor, at most 4 are supported")
        if not np.all(np.isfinite(value)):
            raise NumericsError(f"{op} produced non-finite values (shape {value.shape})")
        for parent in parents:
            if parent.graph is not self:
                raise ValueError(f"{op} mixes tensors from different graphs")
        if not self.requires_grad:
            return Tensor(value, self, op=op)
        node = Tensor(value, self, tuple(parents), backward_fn, op=op)
        self._tape.append(node)
        return node

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """Gradients of a scalar loss with respect to every parameter on this graph.
        Parameters the loss does not reach get zero gradients.

        :raises RuntimeError: if the graph does not record gradients, or `loss` was not produced on it
        :raises ValueError: if `loss` is not a scalar
        """
        if not self.requires_grad:
            raise RuntimeError("backward called on a graph built with requires_grad=False")
        if loss.graph is not self or not self._tape or loss not in self._tape:
            raise RuntimeError("backward called before a forward pass produced the loss on this graph")
        if loss.value.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        for node in self._tape:
            node.grad = None
        for tensor in self.parameters.values():
            tensor.grad = None

        loss.grad = np.ones_like(loss.value)
        for node in reversed(self._tape):
            if node.grad is None:
                continue
            for parent, grad in zip(node.parents, node.backward_fn(node.grad)):
                if grad is None or (parent.op == "constant"):
                    continue
                if grad.shape != parent.shape:
                    raise RuntimeError(f"{node.op} returned gradient {grad.shape} for an input of shape {parent.shape}")
                parent.grad = grad if parent.grad is None else parent.grad + grad

        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.value)) for name, t in self.parameters.items()
        }


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
