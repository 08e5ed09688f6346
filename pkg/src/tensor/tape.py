"""
Reverse-mode differentiation tape.

A Tape records every operation whose inputs include a tracked tensor, in
topological order: a node's inputs always have smaller ids than the node.
`backward` walks the nodes once in descending id order and returns the
gradient of a scalar loss with respect to every watched leaf.

Tensors carry a reference to the tape they were recorded on, so there is no
global "active tape": distinct tapes can be used from distinct threads.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Type
import numpy as np
from src.utils.errors import NonFiniteError, ShapeError, TapeError, UnknownOpError

FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """
    Dense n-dimensional float grid.

    A tensor is tracked when it has a `node_id` on a tape; untracked tensors
    are constants and are never mutated, so they can be shared freely.
    """

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data: Any, tape: Optional["Tape"] = None, node_id: Optional[int] = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.type not in FLOAT_TYPES:
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(extent <= 0 for extent in arr.shape):
            raise ShapeError("tensor", [arr.shape], "extents must be positive")
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"Non-finite values in tensor of shape {arr.shape}")
        self.data = arr
        self.tape = tape
        self.node_id = node_id

    def __repr__(self) -> str:
        return f"<Tensor shape={self.shape}, dtype={self.data.dtype}, tracked={self.requires_grad}>"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def requires_grad(self) -> bool:
        return self.node_id is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", [self.shape], "only single-element tensors convert to float")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data


def detach(t: Tensor) -> Tensor:
    """Return an untracked tensor sharing `t`'s values."""
    return Tensor(t.data)


# ============================================================================
# Op registry
# ============================================================================

class Op:
    """
    Base class for a differentiable operation.

    Subclasses implement:
    - check(arrays, attrs): raise ShapeError on invalid inputs
    - forward(arrays, attrs) -> (output array, saved context)
    - backward(grad, ctx, attrs) -> one gradient (or None) per input
    - branches(ctx) (piecewise ops only) -> which piece every input element took
    """

    kind: str = ""
    arity: int = 1

    @staticmethod
    def check(arrays: Sequence[np.ndarray], attrs: Mapping[str, Any]) -> None:
        return None

    @staticmethod
    def forward(arrays: Sequence[np.ndarray], attrs: Mapping[str, Any]) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError("Forward pass not implemented for this op")

    @staticmethod
    def backward(grad: np.ndarray, ctx: Any, attrs: Mapping[str, Any]) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError("Backward pass not implemented for this op")

    @staticmethod
    def branches(ctx: Any) -> Optional[np.ndarray]:
        """Piece of a piecewise op each input element fell on; None for smooth ops."""
        return None


OPS: Dict[str, Type[Op]] = {}


def register_op(cls: Type[Op]) -> Type[Op]:
    """Class decorator adding an op to the registry (replaces an existing kind)."""
    if not cls.kind:
        raise ValueError(f"{cls.__name__} has no kind")
    OPS[cls.kind] = cls
    return cls


def unregister_op(kind: str) -> None:
    OPS.pop(kind, None)


def get_op(kind: str) -> Type[Op]:
    try:
        return OPS[kind]
    except KeyError:
        raise UnknownOpError(f"Unknown op kind '{kind}'") from None


# ============================================================================
# Tape
# ============================================================================

@dataclass
class _Node:
    op: Optional[Type[Op]]
    inputs: Tuple[Optional[int], ...]
    ctx: Any
    attrs: Dict[str, Any] = field(default_factory=dict)
    shape: Tuple[int, ...] = ()


class Tape:
    """
    Append-only record of tracked operations.

    Args:
        dtype: Precision of everything evaluated on this tape. float32 for
               training; float64 is the shadow mode used by the gradient oracle.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype).type
        if self.dtype not in FLOAT_TYPES:
            raise TapeError(f"Unsupported tape dtype {dtype}")
        self.nodes: List[_Node] = []
        self.leaves: Dict[str, int] = {}
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def _check_open(self) -> None:
        if self.consumed:
            raise TapeError("Tape was consumed by backward()")

    def _append(self, node: _Node) -> int:
        self._check_open()
        self.nodes.append(node)
        return len(self.nodes) - 1

    def watch(self, name: str, value: Any) -> Tensor:
        """Register a named leaf whose gradient backward() will return."""
        if name in self.leaves:
            raise TapeError(f"Leaf '{name}' is already watched")
        arr = np.array(value, dtype=self.dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        node_id = self._append(_Node(op=None, inputs=(), ctx=None, shape=arr.shape))
        self.leaves[name] = node_id
        return Tensor(arr, tape=self, node_id=node_id)

    def constant(self, value: Any) -> Tensor:
        """Untracked tensor in this tape's precision."""
        return Tensor(np.asarray(value, dtype=self.dtype))

    def param(self, name: str, value: Any, track: bool) -> Tensor:
        return self.watch(name, value) if track else self.constant(value)


def record(op_kind: str, inputs: Sequence[Tensor], **attrs: Any) -> Tensor:
    """
    Evaluate an op and append it to the inputs' tape when any input is tracked.

    Untracked inputs are cast to the tape precision; with no tracked input the
    result is an untracked constant computed at the widest input precision.
    """
    op = get_op(op_kind)
    if op.arity != len(inputs):
        raise ShapeError(op_kind, [t.shape for t in inputs], f"expected {op.arity} inputs")

    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise TapeError(f"{op_kind}: inputs come from different tapes")
            tape = t.tape
    if tape is not None:
        tape._check_open()
        dtype = tape.dtype
    else:
        dtype = np.result_type(*[t.data.dtype for t in inputs]).type

    arrays = [t.data if t.data.dtype == dtype else t.data.astype(dtype) for t in inputs]
    op.check(arrays, attrs)
    out, ctx = op.forward(arrays, attrs)
    out = np.asarray(out, dtype=dtype)

    if tape is None:
        return Tensor(out)
    node_id = tape._append(_Node(
        op=op,
        inputs=tuple(t.node_id for t in inputs),
        ctx=ctx,
        attrs=dict(attrs),
        shape=out.shape,
    ))
    return Tensor(out, tape=tape, node_id=node_id)


def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """
    Gradient of a scalar loss with respect to every watched leaf.

    Leaves the loss does not depend on get zero gradients. The tape is
    consumed: recording on it or differentiating it again raises TapeError.
    """
    tape._check_open()
    if loss.tape is not tape or loss.node_id is None:
        raise TapeError("Loss is not recorded on this tape")
    if loss.size != 1:
        raise TapeError(f"Loss must be scalar, got shape {loss.shape}")

    grads: List[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[loss.node_id] = np.ones(loss.shape, dtype=tape.dtype)

    for node_id in range(loss.node_id, -1, -1):
        grad = grads[node_id]
        node = tape.nodes[node_id]
        if grad is None or node.op is None:
            continue
        input_grads = node.op.backward(grad, node.ctx, node.attrs)
        for input_id, input_grad in zip(node.inputs, input_grads):
            if input_id is None or input_grad is None:
                continue
            if grads[input_id] is None:
                grads[input_id] = input_grad
            else:
                grads[input_id] = grads[input_id] + input_grad
        grads[node_id] = None

    tape.consumed = True
    result = {}
    for name, leaf_id in tape.leaves.items():
        grad = grads[leaf_id]
        shape = tape.nodes[leaf_id].shape
        if grad is None:
            result[name] = np.zeros(shape, dtype=tape.dtype)
        else:
            result[name] = np.array(grad, dtype=tape.dtype).reshape(shape)
    return result
