"""Minimal reverse-mode autodiff over dense numpy arrays.

Ops record a backward closure and their parents; Tensor.backward() walks
the recorded graph in reverse topological order and accumulates gradients
into every tensor that requires them.  Inside a `no_grad()` block no
graph is recorded, which keeps inference allocation-light.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense array plus an optional gradient of identical shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: Iterable["Tensor"] = ()):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = tuple(parents)
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ValueError(
                f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf below."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient "
                                 "needs a scalar tensor")
            grad = np.ones_like(self.data)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue
            if node.requires_grad:
                node.accumulate_grad(node_grad)
            if node._backward_fn is not None:
                parent_grads = node._backward_fn(node_grad)
                for parent, pgrad in zip(node._parents, parent_grads):
                    if pgrad is None:
                        continue
                    if id(parent) in grads:
                        grads[id(parent)] = grads[id(parent)] + pgrad
                    else:
                        grads[id(parent)] = pgrad

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    data = np.asarray(value, dtype=dtype)
    return Tensor(data)


def _tracks_grad(*tensors: Tensor) -> bool:
    """True when the graph should record this op."""
    if not _grad_enabled:
        return False
    stack = list(tensors)
    for t in stack:
        if t.requires_grad or t._backward_fn is not None:
            return True
    return False


def make_op(out_data: np.ndarray, parents: tuple[Tensor, ...], op: str,
            backward_fn: Callable[[np.ndarray], tuple] | None) -> Tensor:
    """Wrap an op result; records the closure only when gradients flow."""
    if backward_fn is not None and _tracks_grad(*parents):
        out = Tensor(out_data, op=op, parents=parents)
        out._backward_fn = backward_fn
        return out
    return Tensor(out_data, op=op)
