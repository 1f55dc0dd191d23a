"""N-dimensional arrays with explicit-tape reverse-mode differentiation.

A `Tensor` wraps a float64 numpy array. Nothing is recorded unless a `Tape` is
involved: `tape.watch(t)` returns a tape-bound view of `t`, every operation with
a tape-bound input is appended to that tape, and `tape.backward(loss)` replays
the record in reverse, writes `.grad` on every watched tensor (and on the leaf it
was watched from) and then clears the tape.

    tape = Tape()
    w = tape.watch(weights)
    loss = ((x @ w) - y).abs().mean()
    tape.backward(loss)          # weights.grad is now populated

There is no ambient tape; two tapes never share a computation.
"""

import logging
from typing import Any, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DimensionError, NumericError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]


class Function:
    """A differentiable operation.

    Subclasses implement `forward` on raw arrays and `backward`, which maps the
    gradient of the output to one gradient per input (None for inputs that take
    no gradient). Intermediates needed by `backward` are kept on the instance and
    freed when the tape is cleared.
    """

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        """Run the operation and record it on the inputs' tape, if any."""
        tape = _common_tape(inputs)
        fn = cls()
        try:
            out = fn.forward(*(t.data for t in inputs), **kwargs)
        except ValueError as e:
            if isinstance(e, DimensionError):
                raise
            shapes = ", ".join(str(t.shape) for t in inputs)
            raise DimensionError(f"{cls.__name__}: incompatible shapes {shapes}: {e}") from e
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{cls.__name__} produced non-finite values")
        if tape is None:
            return Tensor._wrap(out)
        return tape.record(fn, inputs, out)

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: tuple[int, ...]) -> np.ndarray:
        """Sum out the dimensions that broadcasting added or stretched."""
        if grad.shape == to_shape:
            return grad
        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)
        for dim, extent in enumerate(to_shape):
            if extent == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)
        return grad


class _Node:
    """One recorded operation: the function, its inputs and its output."""

    __slots__ = ("fn", "inputs", "output")

    def __init__(self, fn: Function, inputs: tuple["Tensor", ...], output: "Tensor") -> None:
        self.fn = fn
        self.inputs = inputs
        self.output = output


class Tape:
    """Ordered record of the differentiable operations of one computation."""

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._watched: list[Tensor] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def watch(self, tensor: "Tensor") -> "Tensor":
        """Return a tape-bound view of `tensor` whose gradient will be tracked."""
        self._check_open()
        view = Tensor._wrap(tensor.data, requires_grad=True)
        view._tape = self
        view._source = tensor._source if tensor._source is not None else tensor
        self._watched.append(view)
        return view

    def record(self, fn: Function, inputs: tuple["Tensor", ...], out: np.ndarray) -> "Tensor":
        self._check_open()
        result = Tensor._wrap(out, requires_grad=True)
        result._tape = self
        self._nodes.append(_Node(fn, inputs, result))
        return result

    def backward(self, result: "Tensor") -> None:
        """Populate gradients of every watched tensor with respect to `result`.

        Raises:
            ContractError: If `result` is not a scalar recorded on this tape.
        """
        self._check_open()
        if result._tape is not self:
            raise ContractError("backward() needs a result recorded on this tape")
        if result.data.size != 1:
            raise ContractError(f"backward() needs a scalar result, got shape {result.shape}")

        grads: dict[int, np.ndarray] = {id(result): np.ones_like(result.data)}
        for node in reversed(self._nodes):
            grad = grads.pop(id(node.output), None)
            if grad is None:
                continue
            input_grads = node.fn.backward(grad)
            for tensor, g in zip(node.inputs, input_grads):
                if g is None or tensor._tape is not self:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g

        for view in self._watched:
            g = grads.get(id(view))
            g = np.zeros_like(view.data) if g is None else np.asarray(g, dtype=np.float64).reshape(view.shape)
            if not np.all(np.isfinite(g)):
                raise NumericError("backward produced non-finite gradients")
            view.grad = g
            source = view._source
            if source is not None:
                source.grad = g.copy() if source.grad is None else source.grad + g
        logger.debug(f"Tape replayed {len(self._nodes)} operations for {len(self._watched)} watched tensors")
        self.clear()
        self._consumed = True

    def clear(self) -> None:
        """Drop every recorded operation and its saved intermediates."""
        self._nodes.clear()
        self._watched.clear()

    def _check_open(self) -> None:
        if self._consumed:
            raise ContractError("Tape already consumed by backward(); create a new Tape per computation")


def _common_tape(inputs: Sequence["Tensor"]) -> Optional[Tape]:
    tape: Optional[Tape] = None
    for t in inputs:
        if t._tape is None:
            continue
        if tape is None:
            tape = t._tape
        elif t._tape is not tape:
            raise ContractError("Operation mixes tensors recorded on different tapes")
    return tape


class Tensor:
    """Immutable float64 array value with an optional gradient buffer."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None
        self._source: Optional[Tensor] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(array, dtype=np.float64)
        t.requires_grad = requires_grad
        t.grad = None
        t._tape = None
        t._source = None
        return t

    # ---- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def values(self) -> np.ndarray:
        """Flat view of the stored values."""
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return int(self.data.shape[0])

    # ---- arithmetic ----------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, as_tensor(other))

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(as_tensor(other), self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, as_tensor(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(as_tensor(other), self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, as_tensor(other))

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(as_tensor(other), self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self, as_tensor(other))

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(as_tensor(other), self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return MatMul.apply(self, as_tensor(other))

    def __getitem__(self, index: Any) -> "Tensor":
        return Slice.apply(self, index=index)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def tanh(self) -> "Tensor":
        return Tanh.apply(self)

    def relu(self) -> "Tensor":
        return Relu.apply(self)

    def sigmoid(self) -> "Tensor":
        return Sigmoid.apply(self)

    def abs(self) -> "Tensor":
        return Abs.apply(self)

    def square(self) -> "Tensor":
        return Mul.apply(self, self)

    def sum(self, axis: Optional[Union[int, tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def max(self, axis: Optional[Union[int, tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Max.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Union[int, tuple[int, ...]]) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Reshape.apply(self, shape=tuple(int(s) for s in shape))  # type: ignore[arg-type]

    def transpose(self, *axes: int) -> "Tensor":
        return Transpose.apply(self, axes=tuple(axes) if axes else None)

    def flatten(self) -> "Tensor":
        """Flatten every axis but the first."""
        return self.reshape(self.shape[0], -1)


def as_tensor(value: ArrayLike) -> Tensor:
    """Return `value` unchanged if it is a Tensor, else a constant Tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64))


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor._wrap(np.zeros(tuple(shape)), requires_grad=requires_grad)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along an existing axis."""
    if not tensors:
        raise ContractError("concat() needs at least one tensor")
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along a new axis."""
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else len(shape) + axis + 1, 1)
        expanded.append(t.reshape(tuple(shape)))
    return concat(expanded, axis=axis)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic generator for `seed`, optionally split by integer keys."""
    if keys:
        return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(keys)))
    return np.random.default_rng(seed)


# ---- elementwise and linear operations ---------------------------------


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:  # type: ignore[override]
        self.shapes = (a.shape, b.shape)
        return np.asarray(a + b)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:  # type: ignore[override]
        self.shapes = (a.shape, b.shape)
        return np.asarray(a - b)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:  # type: ignore[override]
        self.a, self.b = a, b
        return np.asarray(a * b)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return self.unbroadcast(grad * self.b, self.a.shape), self.unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:  # type: ignore[override]
        if np.any(b == 0):
            raise NumericError("Division by zero")
        self.a, self.b = a, b
        return np.asarray(a / b)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        ga = grad / self.b
        gb = -grad * self.a / (self.b * self.b)
        return self.unbroadcast(ga, self.a.shape), self.unbroadcast(gb, self.b.shape)


class Neg(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore[override]
        return np.asarray(-a)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (-grad,)


class Exp(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore[override]
        with np.errstate(over="ignore"):
            self.out = np.exp(a)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad * self.out,)


class Log(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore[override]
        if np.any(a <= 0):
            raise NumericError("Logarithm of a non-positive value")
        self.a = a
        return np.log(a)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad / self.a,)


class Tanh(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore[override]
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad * (1.0 - self.out * self.out),)


class Relu(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore[override]
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore[override]
        e = np.exp(-np.abs(a))
        self.out = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad * self.out * (1.0 - self.out),)


class Abs(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:  # type: ignore[override]
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad * self.sign,)


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:  # type: ignore[override]
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return np.asarray(np.matmul(a, b))

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return self.unbroadcast(ga, self.a.shape), self.unbroadcast(gb, self.b.shape)


class Reshape(Function):
    def forward(self, a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:  # type: ignore[override]
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a: np.ndarray, axes: Optional[tuple[int, ...]]) -> np.ndarray:  # type: ignore[override]
        if axes is None:
            axes = tuple(reversed(range(a.ndim)))
        self.axes = tuple(ax % a.ndim for ax in axes)
        return np.transpose(a, self.axes)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        return (np.transpose(grad, np.argsort(self.axes)),)


class Slice(Function):
    def forward(self, a: np.ndarray, index: Any) -> np.ndarray:  # type: ignore[override]
        self.in_shape = a.shape
        self.index = index
        return np.array(a[index])

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        full = np.zeros(self.in_shape)
        np.add.at(full, self.index, grad)
        return (full,)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int = 0) -> np.ndarray:  # type: ignore[override]
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


class Sum(Function):
    def forward(self, a: np.ndarray, axis: Any, keepdims: bool) -> np.ndarray:  # type: ignore[override]
        self.in_shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(np.sum(a, axis=axis, keepdims=keepdims))

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        if not self.keepdims and self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Function):
    def forward(self, a: np.ndarray, axis: Any, keepdims: bool) -> np.ndarray:  # type: ignore[override]
        self.in_shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        out = np.asarray(np.mean(a, axis=axis, keepdims=keepdims))
        self.count = a.size // max(out.size, 1)
        return out

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        if not self.keepdims and self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.in_shape).copy(),)


class Max(Function):
    def forward(self, a: np.ndarray, axis: Any, keepdims: bool) -> np.ndarray:  # type: ignore[override]
        self.axis = axis
        self.keepdims = keepdims
        peak = np.max(a, axis=axis, keepdims=True)
        mask = a == peak
        # ties share the gradient evenly
        self.weights = mask / np.sum(mask, axis=axis, keepdims=True)
        return peak if keepdims else np.asarray(np.max(a, axis=axis))

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        if not self.keepdims and self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (grad * self.weights,)
