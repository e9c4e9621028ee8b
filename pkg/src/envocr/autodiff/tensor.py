"""Tensor and reverse-mode tape.

Operations record themselves on the innermost active :class:`Tape` when any
input requires a gradient. Outside a tape everything runs forward-only.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# raise on inf/nan right after the forward op that produced it
CHECK_FINITE = True


class ContractError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from .ops import add
        return add(self, other)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)


class Node:
    __slots__ = ("op", "out", "inputs", "backward", "branch")

    def __init__(self, op: str, out: Tensor, inputs: Sequence[Tensor], backward: Callable, branch=None):
        self.op = op
        self.out = out
        self.inputs = tuple(inputs)
        self.backward = backward
        # piecewise ops (relu, max-pool) keep which branch each element took
        self.branch = branch


class Tape:
    """Append-only record of differentiable operations."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(loss, self)

    def branches(self) -> list[np.ndarray]:
        """Branch records of the piecewise ops, in tape order."""
        return [node.branch for node in self.nodes if node.branch is not None]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, branch=None) -> Tensor:
    """Wrap an op result; registers ``backward`` if the graph needs it.

    ``backward(grad_out)`` returns one gradient (or None) per input.
    """
    if CHECK_FINITE and data.dtype.kind == "f" and not np.isfinite(data).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    tape = Tape.active()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.nodes.append(Node(op, out, inputs, backward, branch))
    return out


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Returns the gradient of every leaf (a requires_grad tensor not produced by
    a node) reached from ``loss``; those gradients are also stored on ``.grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(node.out) for node in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
            if key not in produced:
                leaves[key] = inp
    result = {}
    for key, leaf in leaves.items():
        leaf.grad = grads[key]
        result[leaf] = leaf.grad
    return result
