"""
Tensor Core for the Writer Identification Engine

This module holds the dense tensor type, named parameters and the tape that
records executed operations so gradients can be propagated in reverse.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

_DTYPE_STACK: List[np.dtype] = [np.dtype(np.float32)]
_TAPE_STACK: List['Tape'] = []


class EngineError(RuntimeError):
    """Raised when an engine contract (finite values, scalar loss, ...) is broken."""


class DimensionError(ValueError):
    """Shape mismatch between operands, naming the offending axis."""

    def __init__(self, op: str, axis: str, expected, actual):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.actual = actual
        super().__init__(f"{op}: dimension mismatch on axis '{axis}' (expected {expected}, got {actual})")


def default_dtype() -> np.dtype:
    """Floating type new tensors are stored in."""
    return _DTYPE_STACK[-1]


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the floating type used for new tensors."""
    _DTYPE_STACK.append(np.dtype(dtype))
    try:
        yield
    finally:
        _DTYPE_STACK.pop()


class Tensor:
    """Dense n-dimensional value with an optional gradient buffer.

    4-D feature maps use the [batch, height, width, channels] order.
    """

    __slots__ = ('data', 'grad', 'requires_grad', 'name')

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise EngineError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


@dataclass
class Parameter:
    """Trainable tensor addressed by a dotted path, e.g. ``wd.res1.conv3x3.weight``."""

    name: str
    tensor: Tensor
    frozen: bool = False

    @classmethod
    def create(cls, name: str, values: np.ndarray) -> 'Parameter':
        return cls(name=name, tensor=Tensor(values, requires_grad=True, name=name))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.tensor.shape

    def freeze(self) -> None:
        self.frozen = True
        self.tensor.requires_grad = False
        self.tensor.grad = None

    def unfreeze(self) -> None:
        self.frozen = False
        self.tensor.requires_grad = True


@dataclass
class Node:
    """One executed op: its inputs, output and the closure mapping output grad to input grads."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of executed ops.

    Ops record onto the innermost active tape (``with Tape() as tape:``) when at
    least one input requires a gradient. ``backward`` visits the nodes in exact
    reverse execution order and sums the contributions of every consumer.
    """

    nodes: List[Node] = field(default_factory=list)

    def __enter__(self) -> 'Tape':
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.remove(self)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
               backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> None:
        self.nodes.append(Node(op, tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> Dict[int, np.ndarray]:
        """Propagate d(loss)/d(value) to every reachable tensor that requires a gradient.

        Args:
            loss (Tensor): single-element tensor produced under this tape

        Returns:
            dict: tensor id -> gradient array, for every tensor reached
        """
        if loss.data.size != 1:
            raise EngineError(f"backward needs a scalar loss, got shape {loss.shape}")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        reached: Dict[int, Tensor] = {id(loss): loss}

        for node in reversed(self.nodes):
            grad_out = grads.get(id(node.output))
            if grad_out is None:
                continue
            input_grads = node.backward(grad_out)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    raise EngineError(
                        f"{node.op}: gradient shape {grad.shape} does not match input shape {tensor.shape}")
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                    reached[key] = tensor

        for key, tensor in reached.items():
            if not tensor.requires_grad:
                continue
            grad = grads[key].astype(tensor.data.dtype, copy=False)
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad

        return grads


def current_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(op: str, inputs: Sequence[Tensor], output: Tensor,
           backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Attach ``output`` to the active tape if any input needs a gradient."""
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        tape.record(op, inputs, output, backward)
    return output


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Run reverse-mode differentiation of ``loss`` over ``tape`` (default: active tape)."""
    tape = tape or current_tape()
    if tape is None:
        raise EngineError("backward called without a recorded tape")
    tape.backward(loss)


def check_finite(tensor: Tensor, op: str) -> Tensor:
    if not tensor.is_finite():
        raise EngineError(f"{op}: produced non-finite values")
    return tensor
