"""Tape-based reverse-mode differentiation over dense float64 arrays.

Operations are plain functions taking and returning :class:`Tensor`. While a
:class:`Tape` is active (``with Tape() as tape:``) every operation whose
inputs are tracked appends a node holding a closure that maps the output
gradient to input gradients. Nothing is recorded without an active tape.
"""
from __future__ import annotations

import threading

import numpy as np


class ShapeMismatch(ValueError):
    pass


class EmptySegment(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


_local = threading.local()


def active_tape() -> Tape | None:
    return getattr(_local, "tape", None)


class Tensor:
    """A float64 array plus an optional node id on the active tape."""

    __slots__ = ("value", "node", "tape")

    def __init__(self, value, node: int | None = None, tape: Tape | None = None):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1)
        self.value = v
        self.node = node
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.value.reshape(-1)[0])

    def tracked(self) -> bool:
        tape = active_tape()
        return tape is not None and self.tape is tape and self.node is not None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of operations; inputs always precede their users."""

    def __init__(self):
        self.ops: list[str] = []
        self.inputs: list[tuple[int | None, ...]] = []
        self.backward_fns: list = []
        self.gradients: dict[int, np.ndarray] = {}
        self._previous = None

    def __enter__(self) -> Tape:
        self._previous = active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._previous
        self._previous = None

    def __len__(self) -> int:
        return len(self.ops)

    def watch(self, t: Tensor) -> Tensor:
        """Register ``t`` as a differentiable leaf on this tape (in place)."""
        t.node = self._append("leaf", (), None)
        t.tape = self
        return t

    def _append(self, op: str, inputs, fn) -> int:
        self.ops.append(op)
        self.inputs.append(tuple(inputs))
        self.backward_fns.append(fn)
        return len(self.ops) - 1

    def record(self, op: str, value: np.ndarray, inputs, backward_fn) -> Tensor:
        ids = tuple(t.node if (t.tape is self and t.node is not None) else None for t in inputs)
        if all(i is None for i in ids):
            return Tensor(value)
        node = self._append(op, ids, backward_fn)
        return Tensor(value, node, self)

    def gradient(self, loss: Tensor, sources) -> list[np.ndarray]:
        """Gradients of ``loss`` with respect to each tensor in ``sources``."""
        grads = backward(self, loss)
        return [grads.get(s.node, np.zeros_like(s.value)) if s.tape is self else np.zeros_like(s.value)
                for s in sources]


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Populate ``tape.gradients`` for every leaf reachable from ``loss``.

    Returns a mapping from leaf node id to gradient. Leaves that do not
    influence the loss are absent (their gradient is zero).
    """
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    tape.gradients = {}
    if loss.tape is not tape or loss.node is None:
        return {}
    acc: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.value)}
    for node in range(loss.node, -1, -1):
        g = acc.pop(node, None)
        if g is None:
            continue
        fn = tape.backward_fns[node]
        if fn is None:
            tape.gradients[node] = g
            continue
        in_grads = fn(g)
        for i, ig in zip(tape.inputs[node], in_grads):
            if i is None or ig is None:
                continue
            if i in acc:
                acc[i] = acc[i] + ig
            else:
                acc[i] = ig
    return dict(tape.gradients)
