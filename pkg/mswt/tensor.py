"""Dense float64 tensors with a dynamic reverse-mode autograd graph.

Every differentiable operation is a :class:`Function` subclass. Calling
``Function.apply`` runs the forward pass on raw ``numpy`` arrays and, when any
input requires a gradient, links the output tensor to the function instance.
:meth:`Tensor.backward` walks that graph once in reverse topological order.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from typing import Any

import numpy as np

from .errors import GraphError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64

Scalar = int | float

_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without recording a graph; outputs never require gradients."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


def _check_finite(array: np.ndarray, where: str) -> None:
    if array.size and not np.isfinite(array).all():
        msg = f"Non-finite value produced by {where}."
        raise NumericalError(msg)


class Function:
    """Base class for differentiable operations.

    Subclasses implement :meth:`forward` on ``numpy`` arrays and :meth:`backward`,
    which maps the gradient of the output to one gradient (or ``None``) per input.
    Anything the backward rule needs is stored on the instance during forward.
    """

    def __init__(self, *inputs: Tensor) -> None:
        self.inputs = inputs
        self.consumed = False

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        """Run the forward pass and record the node when gradients are needed.

        Parameters
        ----------
        *inputs : Tensor
            Operands of the operation.
        **kwargs
            Non-tensor arguments forwarded to :meth:`forward`.

        Returns
        -------
        Tensor
            Output tensor, linked to this function when any input requires a gradient
            and recording is enabled (see :func:`no_grad`).
        """
        func = cls(*inputs)
        out = func.forward(*(tensor.data for tensor in inputs), **kwargs)
        _check_finite(out, cls.__name__)
        requires_grad = _grad_enabled and any(tensor.requires_grad for tensor in inputs)
        return Tensor(out, requires_grad=requires_grad, creator=func if requires_grad else None)


class Tensor:
    """N-dimensional float64 array with an optional gradient.

    Parameters
    ----------
    data : array_like
        Values; converted to a C-contiguous float64 array.
    requires_grad : bool, optional
        Whether gradients should flow to this tensor, by default ``False``.
    creator : Function, optional
        Operation that produced this tensor; ``None`` for leaves.
    """

    __array_priority__ = 100.0

    def __init__(self, data: Any, *, requires_grad: bool = False, creator: Function | None = None) -> None:
        self.data = np.asarray(data, dtype=DTYPE, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.creator = creator

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            msg = f"item() needs a single-element tensor, got shape {self.shape}."
            raise ShapeError(msg)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def backward(self) -> None:
        """Accumulate ``d self / d leaf`` into every leaf that requires a gradient.

        Raises
        ------
        GraphError
            If the tensor is not a scalar, has no recorded graph, or the graph was
            already consumed by a previous call.
        """
        if self.ndim != 0:
            msg = f"backward() needs a scalar loss, got shape {self.shape}."
            raise GraphError(msg)
        if not self.requires_grad:
            msg = "backward() called on a tensor that does not require gradients."
            raise GraphError(msg)
        if self.creator is None:
            self._accumulate(np.ones_like(self.data))
            return
        if self.creator.consumed:
            msg = "Graph already consumed by a previous backward() call."
            raise GraphError(msg)

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            func = node.creator
            if func is None:
                node._accumulate(grad)
                continue
            input_grads = func.backward(grad)
            func.consumed = True
            for tensor, input_grad in zip(func.inputs, input_grads):
                if input_grad is None or not tensor.requires_grad:
                    continue
                _check_finite(input_grad, f"{type(func).__name__}.backward")
                key = id(tensor)
                grads[key] = grads[key] + input_grad if key in grads else input_grad
        logger.debug("backward visited %d nodes", len(order))

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = np.array(grad, dtype=DTYPE)
        self.grad = grad if self.grad is None else self.grad + grad

    # Operator sugar -------------------------------------------------------

    def __add__(self, other: Tensor | Scalar) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Scalar) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor | Scalar) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Scalar) -> Tensor:
        return add(scale(self, -1.0), other)

    def __mul__(self, other: Tensor | Scalar) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Scalar) -> Tensor:
        return mul(self, other)

    def __truediv__(self, other: Scalar) -> Tensor:
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, key: Any) -> Tensor:
        return Index.apply(self, key=key)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis: int | tuple[int, ...] | None = None, *, keepdims: bool = False) -> Tensor:
        return tensor_sum(self, axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, *, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims=keepdims)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.creator is not None:
            stack.extend((parent, False) for parent in node.creator.inputs if parent.requires_grad)
    return order


def tensor_from(values: Any, shape: Sequence[int], *, requires_grad: bool = False) -> Tensor:
    """Build a row-major tensor from (possibly nested) numeric values.

    Parameters
    ----------
    values : array_like
        Values in row-major order; nesting is flattened.
    shape : sequence of int
        Target extents.
    requires_grad : bool, optional
        Mark the result as a differentiable leaf, by default ``False``.

    Returns
    -------
    Tensor
        New tensor owning a copy of the data.

    Raises
    ------
    ShapeError
        If the number of values differs from ``prod(shape)``.
    """
    flat = np.array(values, dtype=DTYPE).reshape(-1)
    expected = math.prod(shape)
    if flat.size != expected:
        msg = f"{flat.size} values cannot fill shape {tuple(shape)} ({expected} elements)."
        raise ShapeError(msg)
    return Tensor(flat.reshape(tuple(shape)), requires_grad=requires_grad)


def parameter(array: Any) -> Tensor:
    """Wrap ``array`` as a differentiable leaf."""
    return Tensor(array, requires_grad=True)


def _require_same_shape(first: Tensor, second: Tensor, name: str) -> None:
    if first.shape != second.shape:
        msg = f"{name}: shapes {first.shape} and {second.shape} differ."
        raise ShapeError(msg)


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, grad


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, -grad


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad * self.b, grad * self.a


class ScalarMul(Function):
    def forward(self, a: np.ndarray, *, factor: float) -> np.ndarray:
        self.factor = factor
        return a * factor

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.factor,)


class ScalarAdd(Function):
    def forward(self, a: np.ndarray, *, offset: float) -> np.ndarray:
        return a + offset

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad,)


def add(a: Tensor, b: Tensor | Scalar) -> Tensor:
    """Elementwise sum of equal-shape tensors, or tensor plus scalar."""
    if isinstance(b, Tensor):
        _require_same_shape(a, b, "add")
        return Add.apply(a, b)
    return ScalarAdd.apply(a, offset=float(b))


def sub(a: Tensor, b: Tensor | Scalar) -> Tensor:
    """Elementwise difference of equal-shape tensors, or tensor minus scalar."""
    if isinstance(b, Tensor):
        _require_same_shape(a, b, "sub")
        return Sub.apply(a, b)
    return ScalarAdd.apply(a, offset=-float(b))


def mul(a: Tensor, b: Tensor | Scalar) -> Tensor:
    """Elementwise (Hadamard) product, or tensor times scalar."""
    if isinstance(b, Tensor):
        _require_same_shape(a, b, "mul")
        return Mul.apply(a, b)
    return ScalarMul.apply(a, factor=float(b))


def scale(a: Tensor, factor: float) -> Tensor:
    return ScalarMul.apply(a, factor=float(factor))


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.matmul(grad, np.swapaxes(self.b, -1, -2)), np.matmul(np.swapaxes(self.a, -1, -2), grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading (batch) axes must match exactly; no broadcasting is performed.

    Raises
    ------
    ShapeError
        If ranks, batch extents or inner extents disagree.
    """
    if a.ndim < 2 or a.ndim != b.ndim:
        msg = f"matmul needs operands of equal rank >= 2, got {a.shape} and {b.shape}."
        raise ShapeError(msg)
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        msg = f"matmul dimension mismatch: {a.shape} @ {b.shape}."
        raise ShapeError(msg)
    return MatMul.apply(a, b)


class Reshape(Function):
    def forward(self, a: np.ndarray, *, shape: tuple[int, ...]) -> np.ndarray:
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.in_shape),)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(extent) for extent in shape)
    if -1 not in shape and math.prod(shape) != a.size:
        msg = f"Cannot reshape {a.shape} into {shape}."
        raise ShapeError(msg)
    return Reshape.apply(a, shape=shape)


class Transpose(Function):
    def forward(self, a: np.ndarray, *, axes: tuple[int, ...]) -> np.ndarray:
        self.inverse = tuple(int(axis) for axis in np.argsort(axes))
        return np.ascontiguousarray(np.transpose(a, axes))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.ascontiguousarray(np.transpose(grad, self.inverse)),)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None or len(axes) == 0 else tuple(axes)
    if sorted(axis % a.ndim for axis in axes) != list(range(a.ndim)):
        msg = f"Invalid permutation {axes} for rank {a.ndim}."
        raise ShapeError(msg)
    return Transpose.apply(a, axes=tuple(axis % a.ndim for axis in axes))


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        self.bounds = np.cumsum([array.shape[axis] for array in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(np.ascontiguousarray(part) for part in np.split(grad, self.bounds, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate tensors along ``axis`` (the channel axis by default)."""
    if not tensors:
        msg = "concat needs at least one tensor."
        raise ShapeError(msg)
    reference = tensors[0]
    axis = axis % reference.ndim
    for tensor in tensors[1:]:
        if tensor.ndim != reference.ndim or any(
            tensor.shape[dim] != reference.shape[dim] for dim in range(reference.ndim) if dim != axis
        ):
            msg = f"concat along axis {axis}: incompatible shapes {reference.shape} and {tensor.shape}."
            raise ShapeError(msg)
    return Concat.apply(*tensors, axis=axis)


class Index(Function):
    def forward(self, a: np.ndarray, *, key: Any) -> np.ndarray:
        self.in_shape = a.shape
        self.key = key
        return np.array(a[key])

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(self.in_shape, dtype=DTYPE)
        if _is_basic_key(self.key):
            full[self.key] = grad
        else:
            np.add.at(full, self.key, grad)
        return (full,)


def _is_basic_key(key: Any) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(part, (int, slice, type(Ellipsis))) or part is None for part in parts)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Take ``a[..., start:stop, ...]`` along ``axis``."""
    key = [slice(None)] * a.ndim
    key[axis] = slice(start, stop)
    return Index.apply(a, key=tuple(key))


class Sum(Function):
    def forward(self, a: np.ndarray, *, axis: int | tuple[int, ...] | None, keepdims: bool) -> np.ndarray:
        self.in_shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.array(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.array(np.broadcast_to(grad, self.in_shape)),)


def tensor_sum(a: Tensor, axis: int | tuple[int, ...] | None = None, *, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis: int | tuple[int, ...] | None = None, *, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = math.prod(a.shape[dim] for dim in axes)
    if count == 0:
        msg = "mean over an empty extent."
        raise ShapeError(msg)
    return scale(tensor_sum(a, axis, keepdims=keepdims), 1.0 / count)


class BroadcastTo(Function):
    def forward(self, a: np.ndarray, *, shape: tuple[int, ...]) -> np.ndarray:
        self.in_shape = a.shape
        return np.array(np.broadcast_to(a, shape))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        while grad.ndim > len(self.in_shape):
            grad = grad.sum(axis=0)
        for dim, extent in enumerate(self.in_shape):
            if extent == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return (grad,)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        np.broadcast_shapes(a.shape, shape)
    except ValueError as exc:
        msg = f"Cannot broadcast {a.shape} to {shape}."
        raise ShapeError(msg) from exc
    return BroadcastTo.apply(a, shape=shape)


class BiasAdd(Function):
    def forward(self, x: np.ndarray, bias: np.ndarray, *, axis: int) -> np.ndarray:
        self.reduce_axes = tuple(dim for dim in range(x.ndim) if dim != axis)
        view = [1] * x.ndim
        view[axis] = bias.shape[0]
        return x + bias.reshape(view)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, grad.sum(axis=self.reduce_axes)


def bias_add(x: Tensor, bias: Tensor, axis: int = 1) -> Tensor:
    """Add a 1-D ``bias`` along ``axis`` of ``x`` (channels by default)."""
    axis = axis % x.ndim
    if bias.ndim != 1 or bias.shape[0] != x.shape[axis]:
        msg = f"Bias of shape {bias.shape} does not match axis {axis} of {x.shape}."
        raise ShapeError(msg)
    return BiasAdd.apply(x, bias, axis=axis)


class Relu(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.mask = a > 0.0
        return np.where(self.mask, a, 0.0)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


def relu(a: Tensor) -> Tensor:
    return Relu.apply(a)


class Softmax(Function):
    def forward(self, a: np.ndarray, *, axis: int) -> np.ndarray:
        self.axis = axis
        shifted = np.exp(a - a.max(axis=axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    if not -a.ndim <= axis < a.ndim:
        msg = f"Axis {axis} out of range for rank {a.ndim}."
        raise ShapeError(msg)
    _check_finite(a.data, "softmax input")
    return Softmax.apply(a, axis=axis % a.ndim)


__all__ = [
    "DTYPE",
    "Function",
    "Tensor",
    "add",
    "bias_add",
    "broadcast_to",
    "concat",
    "is_grad_enabled",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "parameter",
    "relu",
    "reshape",
    "scale",
    "slice_axis",
    "softmax",
    "sub",
    "tensor_from",
    "tensor_sum",
    "transpose",
]
