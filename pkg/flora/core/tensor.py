"""
Reverse-mode autodiff on numpy arrays
=====================================

A `Tensor` wraps a float64 numpy array. Primitives executed while a
`ComputationTape` is active append one node each to the tape; `backward`
replays the tape in reverse and writes `.grad` on every leaf tensor that
requires gradients (the parameters).

    with ComputationTape() as tape:
        loss = (x @ w).relu().sum()
    backward(tape, loss)

Outside an active tape primitives only compute values (inference mode).
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from flora.errors import NonFiniteError, ShapeError, TapeError

logger = logging.getLogger("flora.core")

ArrayLike = Union[np.ndarray, float, int, Sequence]
GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_ACTIVE_TAPES: List["ComputationTape"] = []


class Tensor:
    """Dense float64 array with an optional gradient slot"""

    __slots__ = ("data", "grad", "requires_grad", "name", "_version")
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._version = 0

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = False
        out.name = None
        out._version = 0
        return out

    # ---- introspection ----

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def as_float32(self) -> np.ndarray:
        return self.data.astype(np.float32)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # ---- mutation (bumps the version seen by the tape) ----

    def assign_(self, value: ArrayLike) -> "Tensor":
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ShapeError(f"assign_ expects shape {self.data.shape}, got {value.shape}")
        self.data = value.copy()
        self._version += 1
        return self

    def zero_grad(self) -> None:
        self.grad = None

    # ---- operator sugar ----

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return index(self, key)

    def sum(self, axis=None, keepdims: bool = False): return tensor_sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return tensor_mean(self, axis, keepdims)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def relu(self): return relu(self)
    def silu(self): return silu(self)
    def softplus(self): return softplus(self)
    def sigmoid(self): return sigmoid(self)
    def tanh(self): return tanh(self)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


class Parameter(Tensor):
    """Trainable leaf tensor; picked up by `Module.named_parameters`"""

    __slots__ = ()

    def __init__(self, data: ArrayLike, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


# ============= TAPE =============

class _Node:
    __slots__ = ("op", "inputs", "versions", "output", "output_version", "grad_fn")

    def __init__(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, grad_fn: GradFn):
        self.op = op
        self.inputs = inputs
        self.versions = tuple(t._version for t in inputs)
        self.output = output
        self.output_version = output._version
        self.grad_fn = grad_fn


class ComputationTape:
    """
    Ordered record of primitive operations

    Nodes are appended in execution order, which is a topological order of
    the forward graph; `backward` walks them in reverse exactly once.
    """

    def __init__(self):
        self.nodes: List[_Node] = []
        self.replayed = False

    def __enter__(self) -> "ComputationTape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, grad_fn: GradFn) -> None:
        if self.replayed:
            raise TapeError("cannot record on a tape that was already replayed")
        self.nodes.append(_Node(op, inputs, output, grad_fn))

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def active_tape() -> Optional[ComputationTape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def backward(tape: ComputationTape, loss: Tensor) -> None:
    """
    Populate `.grad` on every leaf tensor that requires gradients

    Args:
        tape: tape that recorded the full forward computation of `loss`
        loss: scalar tensor (shape ())

    Raises:
        TapeError: non-scalar loss, loss not produced on this tape, tape
            already replayed, or a recorded tensor mutated after recording
    """
    if loss.data.shape != ():
        raise TapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if tape.replayed:
        raise TapeError("tape was already replayed")
    if not any(node.output is loss for node in tape.nodes):
        raise TapeError("loss was not recorded on this tape")

    produced = {id(node.output) for node in tape.nodes}
    grads = {id(loss): np.ones((), dtype=np.float64)}
    leaves = {}

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        if node.output._version != node.output_version:
            raise TapeError(f"output of '{node.op}' was mutated after recording")
        for tensor, version in zip(node.inputs, node.versions):
            if tensor._version != version:
                raise TapeError(f"input of '{node.op}' was mutated after recording")

        input_grads = node.grad_fn(g)
        for tensor, tg in zip(node.inputs, input_grads):
            if tg is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + tg
            else:
                grads[key] = tg
            if key not in produced:
                leaves[key] = tensor

    for key, tensor in leaves.items():
        tensor.grad = np.asarray(grads[key], dtype=np.float64).reshape(tensor.data.shape)

    tape.replayed = True
    logger.debug(f"backward: {len(tape.nodes)} nodes, {len(leaves)} leaves")


# ============= PRIMITIVES =============

def _make(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], grad_fn: GradFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"'{op}' produced non-finite values")
    out = Tensor._wrap(np.asarray(data, dtype=np.float64))
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = active_tape()
        if tape is not None:
            tape.record(op, inputs, out, grad_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("div", a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _make("pow", a.data ** exponent, (a,),
                 lambda g: (g * exponent * a.data ** (exponent - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul expects ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", np.matmul(a.data, b.data), (a, b), grad_fn)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), grad_fn)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tensor_sum(a, axis, keepdims) * (1.0 / float(count))


def exp(a) -> Tensor:
    a = as_tensor(a)
    value = np.exp(a.data)
    return _make("exp", value, (a,), lambda g: (g * value,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _make("relu", np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make("silu", a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _make("softplus", np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid(a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    value = np.tanh(a.data)
    return _make("tanh", value, (a,), lambda g: (g * (1.0 - value * value),))


def clip(a, low: float, high: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    return _make("clip", np.clip(a.data, low, high), (a,), lambda g: (g * inside,))


def layer_norm(a, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis (no affine parameters)"""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    y = centered * inv_std

    def grad_fn(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = (g * y).mean(axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - y * gy_mean),)

    return _make("layer_norm", y, (a,), grad_fn)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    extents = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(extents)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, grad_fn)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def index(a, key) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _make("index", a.data[key], (a,), grad_fn)


def repeat_rows(a, repeats: int) -> Tensor:
    """Repeat every row (axis 0) `repeats` times, consecutively"""
    a = as_tensor(a)
    rest = a.shape[1:]

    def grad_fn(g):
        return (g.reshape((a.shape[0], repeats) + rest).sum(axis=1),)

    return _make("repeat_rows", np.repeat(a.data, repeats, axis=0), (a,), grad_fn)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make("broadcast_to", np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, a.shape),))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    value = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(value)
    return _make("log_softmax", value, (a,),
                 lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis))
