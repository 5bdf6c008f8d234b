"""Reverse-mode automatic differentiation: tensors, tape nodes and the tape itself."""

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger("dentlab")

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
BackwardFn = Callable[[np.ndarray, Tuple[bool, ...]], Tuple[Optional[np.ndarray], ...]]
"""Maps the gradient of a node output to the gradients of its parents.

The second argument tells which parents need a gradient; the closure may return None for
the others.
"""


class TapeException(Exception):
    """Thrown when backward is called on a root which is not differentiable on the tape."""

    ...  # pragma: no cover


class ShapeMismatchException(Exception):
    """Thrown when the inputs of an operation have incompatible shapes."""

    def __init__(self, op_name: str, *shapes: Tuple[int, ...], detail: str = ""):
        """Create the exception.

        :param op_name: Name of the operation which rejected its inputs.
        :param shapes: The shapes of the offending inputs.
        :param detail: Optional explanation of the shape rule which was violated.
        """
        self.op_name = op_name
        self.shapes = shapes
        shapes_str = " and ".join(str(tuple(shape)) for shape in shapes)
        message = f"Operation '{op_name}' received incompatible shapes {shapes_str}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class _Precision(threading.local):
    dtype: type = np.float32


class _TapeState(threading.local):
    tape: Optional["Tape"] = None
    recording: bool = True


_PRECISION = _Precision()
_TAPE_STATE = _TapeState()


def default_dtype() -> type:
    """The floating point type new tensors are created with in the current thread."""
    return _PRECISION.dtype


@contextmanager
def float64_mode() -> Iterator[None]:
    """Create all tensors in 64-bit precision while the context is active.

    Only meant for gradient checks; attack and defense loops run in 32-bit.
    """
    previous = _PRECISION.dtype
    _PRECISION.dtype = np.float64
    try:
        yield
    finally:
        _PRECISION.dtype = previous


class Tensor:
    """An n-dimensional float array with an optional gradient slot.

    A tensor produced by an operation on tensors which require a gradient is recorded as a
    node on the active tape; `tape_id` is the index of that node.
    """

    data: np.ndarray
    """The values of the tensor."""
    grad: Optional[np.ndarray]
    """Accumulated gradient of the last backward root with respect to this tensor."""
    requires_grad: bool
    """Whether gradients flow into (and accumulate on) this tensor."""
    tape_id: Optional[int]
    """Index of the node which produced this tensor on its tape, None for leaves."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_tape", "name")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = ""):
        """Create a leaf tensor.

        :param data: Values of the tensor, converted to the current default float type.
        :param requires_grad: Whether gradients should be accumulated on this tensor.
        :param name: Optional name used in error messages and checkpoints.
        """
        self.data = np.asarray(data, dtype=default_dtype())
        self.grad = None
        self.requires_grad = requires_grad
        self.tape_id = None
        self._tape: Optional["Tape"] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        """Extents of the tensor."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        """Return the underlying array (not a copy)."""
        return self.data

    def item(self) -> float:
        """Return the value of a single element tensor."""
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        """A new leaf tensor sharing the values of this tensor but no history."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.tape_id = None
        out._tape = None
        out.name = self.name
        return out

    def zero_grad(self) -> None:
        """Drop the accumulated gradient."""
        self.grad = None

    def accumulate_grad(self, value: np.ndarray) -> None:
        """Add `value` to the gradient slot.

        :param value: Gradient of the same shape as the tensor.
        """
        if not self.requires_grad:
            return
        if value.shape != self.data.shape:
            raise ShapeMismatchException("accumulate_grad", self.data.shape, value.shape)
        if self.grad is None:
            self.grad = np.array(value, dtype=self.data.dtype, copy=True)
        else:
            self.grad += value

    def __repr__(self) -> str:
        """Short representation with shape and gradient flag."""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        from dentlab.autodiff import ops

        return ops.add(self, ops.as_tensor(other))

    def __radd__(self, other: float) -> "Tensor":
        from dentlab.autodiff import ops

        return ops.add(ops.as_tensor(other), self)

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        from dentlab.autodiff import ops

        return ops.sub(self, ops.as_tensor(other))

    def __rsub__(self, other: float) -> "Tensor":
        from dentlab.autodiff import ops

        return ops.sub(ops.as_tensor(other), self)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        from dentlab.autodiff import ops

        return ops.mul(self, ops.as_tensor(other))

    def __rmul__(self, other: float) -> "Tensor":
        from dentlab.autodiff import ops

        return ops.mul(ops.as_tensor(other), self)

    def __truediv__(self, other: Union["Tensor", float]) -> "Tensor":
        from dentlab.autodiff import ops

        return ops.div(self, ops.as_tensor(other))

    def __neg__(self) -> "Tensor":
        from dentlab.autodiff import ops

        return ops.neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from dentlab.autodiff import ops

        return ops.matmul(self, other)


@dataclass
class Node:
    """A recorded operation on the tape."""

    op_name: str
    """Name of the operation, for diagnostics."""
    parents: Tuple[Tensor, ...]
    """Inputs of the operation in call order."""
    output: Tensor
    """The tensor produced by the operation."""
    backward_fn: BackwardFn
    """Closure computing parent gradients from the output gradient."""


@dataclass
class Tape:
    """Ordered list of recorded operations.

    Nodes are appended as operations execute so every node's parents precede it.
    """

    nodes: List[Node] = field(default_factory=list)
    """Recorded operations in execution order."""

    def record(
        self, op_name: str, parents: Tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn
    ) -> None:
        """Append a node for `output` and link the output tensor to it.

        :param op_name: Name of the operation.
        :param parents: Inputs of the operation.
        :param output: Result of the operation.
        :param backward_fn: Gradient closure of the operation.
        """
        output.tape_id = len(self.nodes)
        output._tape = self
        self.nodes.append(Node(op_name, parents, output, backward_fn))

    def clear(self) -> None:
        """Free all nodes; tensors recorded on this tape become leaves without history."""
        for node in self.nodes:
            node.output.tape_id = None
            node.output._tape = None
        self.nodes = []

    def __len__(self) -> int:
        """Number of recorded nodes."""
        return len(self.nodes)

    def _check_root(self, root: Tensor) -> None:
        if not self.nodes:
            raise TapeException("Cannot run backward on an empty tape.")
        if root.size != 1:
            raise TapeException(f"Backward root must be a scalar, got shape {root.shape}.")
        if root._tape is not self or root.tape_id is None:
            raise TapeException("Backward root was not recorded on this tape.")

    def _propagate(
        self, root: Tensor, wanted: Optional[Sequence[Tensor]]
    ) -> Dict[int, Tuple[Tensor, np.ndarray]]:
        """Run the reverse sweep from `root`.

        :param root: Scalar tensor recorded on this tape.
        :param wanted: If given, only gradients leading to these tensors are computed.
        :return: Gradients keyed by tensor id for every reached tensor requiring a gradient.
        """
        self._check_root(root)
        root_index = root.tape_id
        assert root_index is not None

        wanted_ids = set() if wanted is None else {id(tensor) for tensor in wanted}
        leads: Optional[Dict[int, bool]] = None
        if wanted is not None:
            leads = {}
            for node in self.nodes[: root_index + 1]:
                leads[id(node.output)] = id(node.output) in wanted_ids or any(
                    id(parent) in wanted_ids or leads.get(id(parent), False)
                    for parent in node.parents
                )

        grads: Dict[int, Tuple[Tensor, np.ndarray]] = {
            id(root): (root, np.ones_like(root.data))
        }
        for node in reversed(self.nodes[: root_index + 1]):
            entry = grads.get(id(node.output))
            if entry is None:
                continue
            needs = tuple(
                parent.requires_grad
                and (
                    leads is None
                    or id(parent) in wanted_ids
                    or leads.get(id(parent), False)
                )
                for parent in node.parents
            )
            if not any(needs):
                continue
            parent_grads = node.backward_fn(entry[1], needs)
            for parent, need, parent_grad in zip(node.parents, needs, parent_grads):
                if not need or parent_grad is None:
                    continue
                existing = grads.get(id(parent))
                if existing is None:
                    grads[id(parent)] = (parent, parent_grad)
                else:
                    grads[id(parent)] = (parent, existing[1] + parent_grad)
        return grads


def current_tape() -> Tape:
    """The tape operations of this thread are recorded on."""
    if _TAPE_STATE.tape is None:
        _TAPE_STATE.tape = Tape()
    return _TAPE_STATE.tape


def is_recording() -> bool:
    """Whether operations are currently recorded."""
    return _TAPE_STATE.recording


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording; results of operations are plain leaves."""
    previous = _TAPE_STATE.recording
    _TAPE_STATE.recording = False
    try:
        yield
    finally:
        _TAPE_STATE.recording = previous


@contextmanager
def tape_scope() -> Iterator[Tape]:
    """Record on a fresh tape which is freed when the context exits."""
    previous = _TAPE_STATE.tape
    previous_recording = _TAPE_STATE.recording
    tape = Tape()
    _TAPE_STATE.tape = tape
    _TAPE_STATE.recording = True
    try:
        yield tape
    finally:
        tape.clear()
        _TAPE_STATE.tape = previous
        _TAPE_STATE.recording = previous_recording


def backward(root: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(root)/d(tensor) on every reachable tensor which requires a gradient.

    :param root: Scalar tensor recorded on the current tape.
    :param retain_graph: Keep the tape so backward can be replayed; it is freed otherwise.
    :raises TapeException: If the root is not a scalar or the tape is empty.
    """
    tape = root._tape if root._tape is not None else current_tape()
    grads = tape._propagate(root, wanted=None)
    for tensor, value in grads.values():
        if tensor.requires_grad:
            tensor.accumulate_grad(value)
    if not retain_graph:
        tape.clear()


def grad(root: Tensor, wrt: Sequence[Tensor]) -> List[np.ndarray]:
    """Return d(root)/d(tensor) for each tensor in `wrt` without touching gradient slots.

    The tape is kept; only the part of the graph leading to `wrt` is differentiated.

    :param root: Scalar tensor recorded on the current tape.
    :param wrt: Tensors to differentiate against.
    :return: One gradient per tensor, zeros where `root` does not depend on it.
    """
    tape = root._tape if root._tape is not None else current_tape()
    grads = tape._propagate(root, wanted=wrt)
    result = []
    for tensor in wrt:
        entry = grads.get(id(tensor))
        result.append(np.zeros_like(tensor.data) if entry is None else entry[1])
    return result
