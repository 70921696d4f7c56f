"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything an episodic trainer needs and nothing more: matrix products,
elementwise arithmetic, a handful of nonlinearities, pairwise squared
distances, and the inverse of small square matrices. Operations record
onto the innermost active :class:`Tape`; ``Tape.backward`` replays the
records in reverse and accumulates gradients for every watched leaf.
"""

from __future__ import annotations

import threading

import numpy as np


class AutodiffError(Exception):
    """Base class for numeric-core failures."""


class ShapeError(AutodiffError):
    """Operands do not conform to the operation's shape contract."""


class NumericalError(AutodiffError):
    """A NaN or Inf appeared where only finite values are allowed."""


class SingularMatrixError(AutodiffError):
    """Matrix inversion was requested for a numerically singular input."""


# Inversion refuses inputs whose determinant magnitude falls below this.
SINGULAR_DET_THRESHOLD = 1e-12
# ... or whose 2-norm condition number exceeds this.
MAX_CONDITION_NUMBER = 1e12

_tape_stack = threading.local()


def _active_tape():
    stack = getattr(_tape_stack, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense array of float64 values.

    ``requires_grad`` marks trainable leaves; results of operations on
    such tensors inherit the flag so the tape knows what to record.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar; scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return subtract(self, as_tensor(other))

    def __rsub__(self, other):
        return subtract(as_tensor(other), self)

    def __mul__(self, other):
        return multiply(self, as_tensor(other))

    def __rmul__(self, other):
        return multiply(as_tensor(other), self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Tape:
    """Ordered record of operations, replayed in reverse for gradients.

    A tape is single-owner while recording: enter it as a context manager,
    run the forward computation, then call :meth:`backward`. Independent
    tapes on separate threads do not interact.
    """

    def __init__(self):
        self._nodes = []       # (out_id, inputs, backward_fn)
        self._produced = set()  # ids of tensors created on this tape
        self._leaves = {}      # id -> Tensor for requires_grad leaf inputs

    def __enter__(self) -> "Tape":
        stack = getattr(_tape_stack, "stack", None)
        if stack is None:
            stack = []
            _tape_stack.stack = stack
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack.stack.pop()
        return False

    def _record(self, out: Tensor, inputs, backward_fn):
        for inp in inputs:
            if inp.requires_grad and id(inp) not in self._produced:
                self._leaves[id(inp)] = inp
        self._nodes.append((id(out), tuple(inputs), backward_fn))
        self._produced.add(id(out))

    def watch(self, tensor: Tensor):
        """Ensure ``tensor`` receives an entry in the gradient map."""
        if not tensor.requires_grad:
            raise ValueError("can only watch tensors with requires_grad")
        self._leaves[id(tensor)] = tensor

    def backward(self, loss: Tensor) -> dict:
        """Accumulate d(loss)/d(leaf) for every watched leaf.

        ``loss`` must be a scalar. Leaves recorded on the tape but not on
        any path to the loss receive zero gradients of matching shape.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        accum = {id(loss): np.ones_like(loss.data)}
        for out_id, inputs, backward_fn in reversed(self._nodes):
            grad_out = accum.pop(out_id, None)
            if grad_out is None:
                continue
            grads_in = backward_fn(grad_out)
            for inp, grad in zip(inputs, grads_in):
                if grad is None:
                    continue
                key = id(inp)
                if key in accum:
                    accum[key] = accum[key] + grad
                else:
                    accum[key] = grad
        result = {}
        for key, leaf in self._leaves.items():
            grad = accum.get(key)
            if grad is None:
                grad = np.zeros_like(leaf.data)
            result[leaf] = grad
        return result


def _finite_or_raise(op_name: str, value: np.ndarray):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"{op_name} produced non-finite values")


def _make(op_name: str, value: np.ndarray, inputs, backward_fn) -> Tensor:
    _finite_or_raise(op_name, value)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=requires)
    tape = _active_tape()
    if tape is not None and requires:
        tape._record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along broadcast dimensions."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.data.shape} @ {b.data.shape}")
    value = a.data @ b.data
    needs = (a.requires_grad, b.requires_grad)

    def backward(g):
        ga = g @ b.data.T if needs[0] else None
        gb = a.data.T @ g if needs[1] else None
        return ga, gb

    return _make("matmul", value, (a, b), backward)


def _broadcast_check(op_name, a, b):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError as exc:
        raise ShapeError(f"{op_name} mismatch: {a.data.shape} vs {b.data.shape}") from exc


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a, b)
    value = a.data + b.data
    needs = (a.requires_grad, b.requires_grad)

    def backward(g):
        ga = _unbroadcast(g, a.data.shape) if needs[0] else None
        gb = _unbroadcast(g, b.data.shape) if needs[1] else None
        return ga, gb

    return _make("add", value, (a, b), backward)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("subtract", a, b)
    value = a.data - b.data
    needs = (a.requires_grad, b.requires_grad)

    def backward(g):
        ga = _unbroadcast(g, a.data.shape) if needs[0] else None
        gb = _unbroadcast(-g, b.data.shape) if needs[1] else None
        return ga, gb

    return _make("subtract", value, (a, b), backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("multiply", a, b)
    value = a.data * b.data
    needs = (a.requires_grad, b.requires_grad)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if needs[0] else None
        gb = _unbroadcast(g * a.data, b.data.shape) if needs[1] else None
        return ga, gb

    return _make("multiply", value, (a, b), backward)


def negate(x: Tensor) -> Tensor:
    return _make("negate", -x.data, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        value = np.exp(x.data)

    def backward(g):
        return (g * value,)

    return _make("exp", value, (x,), backward)


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return _make("log", value, (x,), backward)


def tensor_sum(x: Tensor, axis=None) -> Tensor:
    value = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    return _make("sum", value, (x,), backward)


def tensor_mean(x: Tensor, axis=None) -> Tensor:
    count = x.data.size if axis is None else x.data.shape[axis]
    value = x.data.mean(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, x.data.shape).copy(),)

    return _make("mean", value, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    value = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.data.shape),)

    return _make("reshape", value, (x,), backward)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    value = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    needs = [p.requires_grad for p in parts]

    def backward(g):
        slices = []
        for i in range(len(parts)):
            if not needs[i]:
                slices.append(None)
                continue
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            slices.append(g[tuple(index)])
        return tuple(slices)

    return _make("concat", value, tuple(parts), backward)


def relu(x: Tensor) -> Tensor:
    value = np.maximum(x.data, 0.0)

    def backward(g):
        return (g * (x.data > 0.0),)

    return _make("relu", value, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    value = np.empty_like(x.data)
    pos = x.data >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    value[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * value * (1.0 - value),)

    return _make("sigmoid", value, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    value = ex / ex.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * value).sum(axis=-1, keepdims=True)
        return (value * (g - dot),)

    return _make("softmax", value, (x,), backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only where unclamped."""
    value = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def backward(g):
        return (g * inside,)

    return _make("clip", value, (x,), backward)


def l1_normalize(x: Tensor) -> Tensor:
    """Scale each row (last axis) to unit L1 norm."""
    norms = np.abs(x.data).sum(axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise NumericalError("l1_normalize received an all-zero row")
    value = x.data / norms
    signs = np.sign(x.data)

    def backward(g):
        dot = (g * value).sum(axis=-1, keepdims=True)
        return ((g - signs * dot) / norms,)

    return _make("l1_normalize", value, (x,), backward)


def pairwise_sq_dists(a: Tensor, b: Tensor) -> Tensor:
    """Squared Euclidean distance between every row of ``a`` and of ``b``.

    Returns a matrix D with D[i, j] = ||a_i - b_j||^2.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(f"pairwise_sq_dists mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    value = np.einsum("ijk,ijk->ij", diff, diff)
    needs = (a.requires_grad, b.requires_grad)

    def backward(g):
        ga = gb = None
        if needs[0]:
            ga = 2.0 * (g.sum(axis=1)[:, None] * a.data - g @ b.data)
        if needs[1]:
            gb = 2.0 * (g.sum(axis=0)[:, None] * b.data - g.T @ a.data)
        return ga, gb

    return _make("pairwise_sq_dists", value, (a, b), backward)


def inverse(a: Tensor) -> Tensor:
    """Inverse of a small square matrix via LU factorisation.

    Raises :class:`SingularMatrixError` when |det| drops below
    ``SINGULAR_DET_THRESHOLD`` or the condition number exceeds
    ``MAX_CONDITION_NUMBER``.
    """
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise ShapeError(f"inverse expects a square matrix, got {a.data.shape}")
    det = np.linalg.det(a.data)
    if not np.isfinite(det) or abs(det) < SINGULAR_DET_THRESHOLD:
        raise SingularMatrixError(f"matrix is singular (|det| = {abs(det):.3e})")
    if np.linalg.cond(a.data) > MAX_CONDITION_NUMBER:
        raise SingularMatrixError("matrix condition number exceeds configured bound")
    value = np.linalg.inv(a.data)

    def backward(g):
        return (-value.T @ g @ value.T,)

    return _make("inverse", value, (a,), backward)


def select_rows(x: Tensor, indices) -> Tensor:
    """Gather rows of ``x`` by index, expressed as a one-hot matrix product."""
    indices = np.asarray(indices, dtype=int)
    selector = np.zeros((len(indices), x.data.shape[0]))
    selector[np.arange(len(indices)), indices] = 1.0
    return matmul(Tensor(selector), x)


def check_gradients(f, point: Tensor, epsilon: float = 1e-5) -> float:
    """Compare tape gradients of ``f`` at ``point`` with central differences.

    ``f`` maps one tensor to a scalar tensor. Returns the maximum over
    coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if not (0.0 < epsilon <= 1e-2):
        raise ValueError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    probe = Tensor(point.data.copy(), requires_grad=True)
    with Tape() as tape:
        tape.watch(probe)
        out = f(probe)
    if out.data.size != 1:
        raise ShapeError("check_gradients needs a scalar-valued function")
    analytic = tape.backward(out)[probe]

    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + epsilon
        hi = float(f(Tensor(probe.data)).data)
        flat[i] = saved - epsilon
        lo = float(f(Tensor(probe.data)).data)
        flat[i] = saved
        num_flat[i] = (hi - lo) / (2.0 * epsilon)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
