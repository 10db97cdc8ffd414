"""Reverse-mode differentiation tape.

Ops in :mod:`vrfnet.eltwise` and :mod:`vrfnet.ops` accept either plain
:class:`~vrfnet.tensor.Tensor` values or :class:`Node` handles. With
plain tensors they just compute; with nodes they also append an op
record (saved activations plus an adjoint rule) to the node's
:class:`Tape`. Records are appended in execution order, so the tape is
topologically sorted by construction and :meth:`Tape.backward` visits
each record exactly once, in reverse.

Adjoints are accumulated in the tensor's own dtype. The accumulation
order is deterministic: reverse execution order across nodes, and for
each op the input order as written in its adjoint rule.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import ShapeError, Tensor

_SCALAR_SHAPE = (1, 1, 1, 1)


class Node:
    """A tensor bound to a tape position."""

    __slots__ = ("tensor", "tape", "id", "op", "is_leaf", "_backward")

    def __init__(self, tensor, tape, node_id, op, backward, is_leaf):
        self.tensor = tensor
        self.tape = tape
        self.id = node_id
        self.op = op
        self.is_leaf = is_leaf
        self._backward = backward

    def __repr__(self) -> str:
        kind = "leaf" if self.is_leaf else self.op
        return f"Node(id={self.id}, {kind}, shape={self.tensor.shape})"


class Tape:
    """Ordered record of forward ops, replayed in reverse for gradients."""

    def __init__(self):
        self._nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, tensor: Tensor, name: str | None = None) -> Node:
        """Register an input/parameter tensor and return its handle."""
        node = Node(tensor, self, len(self._nodes), name or "leaf", None, True)
        self._nodes.append(node)
        return node

    def record(self, tensor: Tensor, op: str, backward: Callable) -> Node:
        """Append an op result. ``backward(grad, accumulate)`` distributes
        the adjoint ``grad`` (ndarray) to the op's inputs via
        ``accumulate(input_ref, ndarray)``."""
        node = Node(tensor, self, len(self._nodes), op, backward, False)
        self._nodes.append(node)
        return node

    def backward(self, loss: Node) -> dict[int, Tensor]:
        """Gradient of a scalar loss node with respect to every leaf.

        Returns a dict keyed by leaf node id; leaves the loss does not
        depend on get zero gradients. Raises if the loss is not scalar
        (an all-axes sum as the final node makes any objective scalar).
        """
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ValueError("loss must be a node recorded on this tape")
        if loss.tensor.shape != _SCALAR_SHAPE:
            raise ShapeError(
                f"loss must be scalar with shape {_SCALAR_SHAPE}, got {loss.tensor.shape}"
            )

        adjoints: dict[int, np.ndarray] = {
            loss.id: np.ones(_SCALAR_SHAPE, dtype=loss.tensor.dtype)
        }

        def accumulate(ref, grad: np.ndarray) -> None:
            if not isinstance(ref, Node):
                return  # constant input: no adjoint wanted
            assert grad.shape == ref.tensor.shape, (grad.shape, ref.tensor.shape)
            cur = adjoints.get(ref.id)
            adjoints[ref.id] = grad if cur is None else cur + grad

        for node in reversed(self._nodes):
            grad = adjoints.get(node.id)
            if grad is None or node._backward is None:
                continue
            node._backward(grad, accumulate)

        out: dict[int, Tensor] = {}
        for node in self._nodes:
            if node.is_leaf:
                grad = adjoints.get(node.id)
                if grad is None:
                    out[node.id] = Tensor.wrap(np.zeros_like(node.tensor.data))
                else:
                    out[node.id] = Tensor(grad)
        return out


def value_of(x) -> Tensor:
    """Unwrap a Node to its tensor; pass plain tensors through."""
    return x.tensor if isinstance(x, Node) else x


def tape_of(*args) -> Tape | None:
    """The unique tape among Node arguments, or None if all are plain."""
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is None:
                tape = a.tape
            elif tape is not a.tape:
                raise ValueError("cannot mix nodes from different tapes in one op")
    return tape


def finite_diff_check(f, x: Tensor, h: float = 1e-6) -> float:
    """Max relative error between tape gradients of f and central differences.

    ``f`` maps a tensor (or node) to a scalar tensor (or node) and must be
    deterministic; ``x`` must be float64. The relative error denominator is
    floored at 1e-8 to avoid blowup where the true gradient is zero.
    """
    if x.dtype != np.float64:
        raise TypeError("finite-difference checks require float64 inputs")

    tape = Tape()
    lx = tape.leaf(x)
    out = f(lx)
    if not isinstance(out, Node):
        raise TypeError("f must build on its input so the tape can trace it")
    grad = tape.backward(out)[lx.id].data.reshape(-1)

    flat = x.data.reshape(-1)
    fd = np.empty_like(flat)
    for i in range(flat.size):
        fp = _eval_scalar(f, flat, x.shape, i, +h)
        fm = _eval_scalar(f, flat, x.shape, i, -h)
        fd[i] = (fp - fm) / (2.0 * h)

    rel = np.abs(fd - grad) / np.maximum(np.abs(grad), 1e-8)
    return float(rel.max())


def _eval_scalar(f, flat, shape, i, delta) -> float:
    arr = flat.copy()
    arr[i] += delta
    y = value_of(f(Tensor.wrap(arr.reshape(shape)))).item()
    if not np.isfinite(y):
        raise ValueError(f"f produced a non-finite value {y!r} during finite differencing")
    return y
