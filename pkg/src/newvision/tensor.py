"""Dense tensors with define-by-run reverse-mode differentiation.

A Tensor wraps a numpy array (float32 by default; float64 graphs are allowed
so finite-difference checks can run above f32 noise). A Tape records every
operation whose inputs touch it, in execution order, which is already a
topological order. backward() walks that list once in reverse.

Tapes are rebuilt for every forward pass. Nothing here mutates a tensor
after creation: backward rules return fresh arrays and accumulation always
allocates, which is what makes running backward twice on one tape give
identical results.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import errors

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A value in the graph. Leaves are made by Tape.leaf, constants by
    Tensor(array); op results come from the functions in ops."""

    __slots__ = ("data", "requires_grad", "node_id", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.tape: Optional["Tape"] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise errors.NotScalar(f"item() on shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A constant view of this value, cut off from the tape."""
        return Tensor(self.data)

    def __repr__(self):
        tracked = "" if self.node_id is None else f" node={self.node_id}"
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.dtype}{tracked})"


class Tape:
    """Execution-ordered record of operations for one forward pass."""

    def __init__(self):
        self._needs: list[bool] = []
        self._ops: list[tuple[int, tuple, Callable]] = []
        self._leaves: dict[int, Tensor] = {}

    def leaf(self, data, requires_grad: bool = False) -> Tensor:
        t = Tensor(data, requires_grad=requires_grad)
        t.tape = self
        t.node_id = self._new_node(requires_grad)
        self._leaves[t.node_id] = t
        return t

    def _new_node(self, needs_grad: bool) -> int:
        self._needs.append(bool(needs_grad))
        return len(self._needs) - 1

    def record(self, out: Tensor, inputs: Sequence[Optional[Tensor]],
               backward_fn: Callable) -> Tensor:
        """Attach an op result to this tape.

        inputs may contain None (or off-tape constants) in positions the
        backward rule will not produce a gradient for. backward_fn takes the
        output gradient array and returns one array or None per input.
        """
        in_ids = tuple(
            t.node_id if isinstance(t, Tensor) and t.tape is self else None
            for t in inputs)
        needs = any(i is not None and self._needs[i] for i in in_ids)
        out.tape = self
        out.requires_grad = needs
        out.node_id = self._new_node(needs)
        self._ops.append((out.node_id, in_ids, backward_fn))
        return out


def tape_of(*tensors) -> Optional[Tape]:
    """The single tape the given tensors live on, or None for constants.

    Mixing nodes from two different tapes is always a bug in the caller, so
    it fails loudly instead of picking one.
    """
    tape = None
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise errors.ConfigError(
                    "operands were recorded on different tapes")
    return tape


def backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Gradients of a scalar loss for every requires_grad leaf of the tape.

    Returns a map from leaf node id to gradient Tensor. Tracked leaves the
    loss never touched get zeros; untracked leaves are absent entirely.
    """
    if loss.data.size != 1:
        raise errors.NotScalar(
            f"loss must be a scalar, got shape {loss.data.shape}")
    if loss.tape is not tape or loss.node_id is None:
        raise errors.DetachedLoss("loss is not a node of this tape")

    grads: dict[int, np.ndarray] = {
        loss.node_id: np.ones_like(loss.data)}
    for out_id, in_ids, backward_fn in reversed(tape._ops):
        g = grads.get(out_id)
        if g is None:
            continue
        if not any(i is not None and tape._needs[i] for i in in_ids):
            continue
        for in_id, gi in zip(in_ids, backward_fn(g)):
            if in_id is None or gi is None or not tape._needs[in_id]:
                continue
            held = grads.get(in_id)
            # plain + (never +=): backward rules may return views of g
            grads[in_id] = gi if held is None else held + gi

    out: dict[int, Tensor] = {}
    for node_id, leaf in tape._leaves.items():
        if not leaf.requires_grad:
            continue
        g = grads.get(node_id)
        out[node_id] = Tensor(np.zeros_like(leaf.data) if g is None else g)
    return out
