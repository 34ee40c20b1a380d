"""
Reverse-Mode Tensor Engine

Dense float64 tensors with define-by-run differentiation. Every primitive
that touches a differentiable input appends a record (inputs + backward rule)
to the active tape; ``backward`` walks the tape in reverse insertion order
exactly once and accumulates gradients into the leaves.

Broadcasting is limited to trailing dimensions: an operand of shape
``(C,)`` combines with ``(..., C)``, which is all bias-add needs.

Usage:
    with Tape():
        loss = reduce_mean(square(matmul(x, w) - y))
        backward(loss)
    w.grad  # dL/dw
"""

import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import EmptyTape, IndexOutOfRange, NotScalar, ShapeMismatch, WindowTooShort

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_local = threading.local()


def _state():
    if not hasattr(_local, "stack"):
        _local.stack = []
        _local.default = Tape()
        _local.enabled = True
    return _local


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: "Tensor", inputs: Sequence["Tensor"], backward: BackwardFn):
        self.out = out
        self.inputs = tuple(inputs)
        self.backward = backward


class Tape:
    """Ordered record of primitive operations. Single-threaded."""

    def __init__(self):
        self.records: List[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: "Tensor", inputs: Sequence["Tensor"], backward: BackwardFn) -> int:
        out._tape = self
        out.tape_id = len(self.records)
        self.records.append(_Record(out, inputs, backward))
        return out.tape_id

    def reset(self) -> None:
        self.records.clear()

    def __enter__(self) -> "Tape":
        _state().stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state().stack.pop()


def current_tape() -> Tape:
    """Innermost active tape of this thread (a per-thread default otherwise)."""
    state = _state()
    return state.stack[-1] if state.stack else state.default


@contextmanager
def no_grad():
    """Evaluate without recording (inference, finite-difference checks)."""
    state = _state()
    previous = state.enabled
    state.enabled = False
    try:
        yield
    finally:
        state.enabled = previous


class Tensor:
    """
    Dense n-dimensional float64 value.

    ``grad`` is allocated the first time a backward pass reaches the tensor;
    ``tape_id`` is set when the tensor is the output of a recorded op.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        # 0-d stays 0-d so scalars broadcast against any shape
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape_id: Optional[int] = None
        self._tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.tape_id is None

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() needs a single element, got shape {self.shape}")
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        return reduce_sum(self)

    def mean(self) -> "Tensor":
        return reduce_mean(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    out = Tensor(data)
    if _state().enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_tape().record(out, inputs, backward_fn)
    return out


def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    if a == b:
        return a
    if len(b) <= len(a) and a[len(a) - len(b):] == b:
        return a
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return b
    raise ShapeMismatch(f"shapes {a} and {b} are not trailing-broadcast compatible")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return grad.reshape((-1,) + shape).sum(axis=0)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def absolute(x) -> Tensor:
    """|x| with subgradient 0 at exact zeros."""
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(ELEMENTWISE)}")
    return fn(*args)


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``a[..., k] @ b[k, n]``; leading dimensions of ``a`` act as rows."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    k, n = b.shape

    def _backward(g):
        grad_a = g @ b.data.T
        grad_b = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return grad_a, grad_b

    return _make(a.data @ b.data, (a, b), _backward)


def conv1d_causal(x, w, b) -> Tensor:
    """
    Valid causal convolution along the leading (time) axis.

    Parameters:
    -----------
    x : Tensor (T, *batch, C_in)
    w : Tensor (K, C_in, C_out)
    b : Tensor (C_out,)

    Returns:
    --------
    Tensor (T - K + 1, *batch, C_out); output step t reads input steps t..t+K-1.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 3 or x.ndim < 2 or x.shape[-1] != w.shape[1] or b.shape != (w.shape[2],):
        raise ShapeMismatch(f"conv1d shapes incompatible: x{x.shape} w{w.shape} b{b.shape}")
    kernel, c_in, c_out = w.shape
    steps = x.shape[0]
    if steps < kernel:
        raise WindowTooShort(f"window of {steps} steps is shorter than kernel {kernel}")
    out_steps = steps - kernel + 1

    out = np.broadcast_to(b.data, (out_steps,) + x.shape[1:-1] + (c_out,)).copy()
    for k in range(kernel):
        out += x.data[k:k + out_steps] @ w.data[k]

    def _backward(g):
        grad_x = np.zeros_like(x.data)
        grad_w = np.empty_like(w.data)
        flat_g = g.reshape(-1, c_out)
        for k in range(kernel):
            grad_x[k:k + out_steps] += g @ w.data[k].T
            grad_w[k] = x.data[k:k + out_steps].reshape(-1, c_in).T @ flat_g
        return grad_x, grad_w, flat_g.sum(axis=0)

    return _make(out, (x, w, b), _backward)


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------

def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat of an empty list")
    if len(tensors) == 1:
        return tensors[0]
    ndim = tensors[0].ndim
    axis = axis % ndim
    reference = tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:axis] + t.shape[axis + 1:] != reference:
            raise ShapeMismatch(f"concat along axis {axis}: {tensors[0].shape} vs {t.shape}")
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, _backward)


def _check_index(index, n: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    if index.size and (index.min() < 0 or index.max() >= n):
        bad = index[(index < 0) | (index >= n)][0]
        raise IndexOutOfRange(f"index {bad} out of range for {n} rows")
    return index


def scatter_sum(messages, targets, n: int) -> Tensor:
    """
    Sum message rows onto their target rows.

    ``messages`` has shape (..., E, d); row ``e`` is added to output row
    ``targets[e]`` of an (..., n, d) result. Rows with no messages are zero.
    Accumulation runs in edge order.
    """
    messages = as_tensor(messages)
    if messages.ndim < 2:
        raise ShapeMismatch(f"scatter_sum needs (..., E, d) messages, got {messages.shape}")
    targets = _check_index(targets, n)
    if targets.size != messages.shape[-2]:
        raise ShapeMismatch(f"{targets.size} targets for {messages.shape[-2]} messages")

    moved = np.moveaxis(messages.data, -2, 0)
    out = np.zeros((n,) + moved.shape[1:])
    np.add.at(out, targets, moved)
    out = np.moveaxis(out, 0, -2)

    return _make(out, (messages,), lambda g: (np.take(g, targets, axis=-2),))


def gather(x, index) -> Tensor:
    """Select rows along axis -2: (..., N, d) -> (..., len(index), d)."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeMismatch(f"gather needs (..., N, d) input, got {x.shape}")
    n = x.shape[-2]
    index = _check_index(index, n)

    def _backward(g):
        grad = np.zeros((n,) + np.moveaxis(g, -2, 0).shape[1:])
        np.add.at(grad, index, np.moveaxis(g, -2, 0))
        return (np.moveaxis(grad, 0, -2),)

    return _make(np.take(x.data, index, axis=-2), (x,), _backward)


def broadcast_to(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if _broadcast_shape(shape, x.shape) != shape:
        raise ShapeMismatch(f"cannot broadcast {x.shape} to {shape}")
    return _make(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (_unbroadcast(g, x.shape),))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return _make(out.copy(), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(np.transpose(x.data, axes)), (x,),
                 lambda g: (np.transpose(g, inverse),))


def reduce_sum(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, np.sum(g)),))


def reduce_mean(x) -> Tensor:
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeMismatch("mean of an empty tensor")
    return _make(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, np.sum(g) / x.size),))


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """
    Populate ``grad`` of every differentiable leaf reachable from ``loss``.

    Repeated calls accumulate; call ``zero_grad`` on the leaves to reset.
    """
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if (tape is None or loss.tape_id is None or loss.tape_id >= len(tape.records)
            or tape.records[loss.tape_id].out is not loss):
        raise EmptyTape("loss was not recorded on a tape")

    pending = {loss.tape_id: np.ones_like(loss.data)}
    for idx in range(loss.tape_id, -1, -1):
        g = pending.pop(idx, None)
        if g is None:
            continue
        record = tape.records[idx]
        for inp, grad in zip(record.inputs, record.backward(g)):
            if grad is None or not inp.requires_grad:
                continue
            if inp._tape is tape and inp.tape_id is not None:
                prev = pending.get(inp.tape_id)
                pending[inp.tape_id] = grad if prev is None else prev + grad
            elif inp.grad is None:
                inp.grad = np.array(grad, dtype=np.float64).reshape(inp.shape)
            else:
                inp.grad = inp.grad + grad


def finite_diff_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> float:
    """
    Compare backward-pass gradients of scalar ``f(*inputs)`` against central
    differences.

    Returns:
    --------
    max over all input elements of |a - b| / max(|a|, |b|, 1e-8)
    """
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()

    with Tape():
        loss = f(*inputs)
        backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in inputs]

    worst = 0.0
    with no_grad():
        for t, grad in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            flat_grad = grad.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                plus = f(*inputs).item()
                flat[i] = original - eps
                minus = f(*inputs).item()
                flat[i] = original
                numeric = (plus - minus) / (2.0 * eps)
                a = flat_grad[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    for t in inputs:
        t.zero_grad()
    return worst
