"""Dense float64 tensors with taped reverse-mode automatic differentiation.

Every op executed while gradients are enabled appends one node to the
active tape. `backward(loss)` walks that tape once in reverse insertion
order, accumulating gradients into every tensor that requires them, and
then retires the tape: a second backward over the same graph raises
GraphStateError. Graphs are built per training step and never reused.

Execution is single-threaded by contract; nothing here locks.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError, GraphStateError

# tanh-form gelu constants
_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715

_grad_enabled = True
_check_finite = False


def set_check_finite(flag: bool) -> None:
    """Debug switch: verify every op output is finite (off by default)."""
    global _check_finite
    _check_finite = bool(flag)


@contextmanager
def no_grad():
    """Disable taping inside the block (inference / evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class _Tape:
    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False


class _Node:
    __slots__ = ("out", "run", "tape")

    def __init__(self, out, run, tape):
        self.out = out
        self.run = run
        self.tape = tape


_active_tape = _Tape()


class Tensor:
    """Row-major float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars go through scale/add-with-constant
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple[Tensor, ...], run) -> Tensor:
    if _check_finite and not np.all(np.isfinite(out.data)):
        raise ContractError("op produced a non-finite value")
    if _grad_enabled and any(t.requires_grad for t in inputs):
        global _active_tape
        if _active_tape.consumed:
            _active_tape = _Tape()
        out.requires_grad = True
        node = _Node(out, run, _active_tape)
        _active_tape.nodes.append(node)
        out._node = node
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from loss.

    The loss must be a scalar produced by a recorded graph; the graph is
    consumed and cannot be walked twice.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None:
        raise ContractError("loss was not produced by a recorded graph")
    tape = node.tape
    if tape.consumed:
        raise GraphStateError("this graph was already consumed by a previous backward")
    loss.grad = np.ones_like(loss.data)
    for n in reversed(tape.nodes):
        g = n.out.grad
        if g is not None:
            n.run(g)
    tape.consumed = True
    tape.nodes = []


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def run(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _record(out, (a, b), run)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data - b.data)
    except ValueError:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def run(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _record(out, (a, b), run)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    ad, bd = a.data, b.data

    def run(g):
        _accumulate(a, _unbroadcast(g * bd, a.shape))
        _accumulate(b, _unbroadcast(g * ad, b.shape))

    return _record(out, (a, b), run)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)

    def run(g):
        _accumulate(a, g * s)

    return _record(out, (a,), run)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def run(g):
        _accumulate(a, g @ bd.T)
        _accumulate(b, ad.T @ g)

    return _record(out, (a, b), run)


def transpose(a: Tensor, axes=None) -> Tensor:
    nd = a.data.ndim
    if axes is None:
        axes = tuple(reversed(range(nd)))
    else:
        axes = tuple(axes)
        if sorted(axes) != list(range(nd)):
            raise ContractError(f"transpose axes {axes} are not a permutation of 0..{nd - 1}")
    out = Tensor(np.transpose(a.data, axes))
    inv = tuple(np.argsort(axes))

    def run(g):
        _accumulate(a, np.transpose(g, inv))

    return _record(out, (a,), run)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    out = Tensor(a.data.reshape(shape))
    src = a.shape

    def run(g):
        _accumulate(a, g.reshape(src))

    return _record(out, (a,), run)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ContractError("concat needs at least one tensor")
    try:
        out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    except ValueError:
        shapes = [p.shape for p in parts]
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}")
    sizes = [p.shape[axis] for p in parts]
    parts = tuple(parts)

    def run(g):
        start = 0
        for p, n in zip(parts, sizes):
            key = [slice(None)] * g.ndim
            key[axis] = slice(start, start + n)
            _accumulate(p, g[tuple(key)])
            start += n

    return _record(out, parts, run)


def slice_(a: Tensor, key) -> Tensor:
    """Basic slicing only: a slice or tuple of slices (no steps, no ints)."""
    if isinstance(key, slice):
        key = (key,)
    if not isinstance(key, tuple) or not all(isinstance(k, slice) for k in key):
        raise ContractError("slice_ takes a slice or tuple of slices")
    out = Tensor(a.data[key].copy())
    src_shape = a.shape

    def run(g):
        buf = np.zeros(src_shape, dtype=np.float64)
        buf[key] = g
        _accumulate(a, buf)

    return _record(out, (a,), run)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows of a 2-d tensor by integer index (duplicates allowed)."""
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise ContractError(f"gather_rows needs a 2-d tensor and 1-d index, got {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ContractError(f"gather_rows index out of range for {a.shape[0]} rows")
    out = Tensor(a.data[idx])
    src_shape = a.shape

    def run(g):
        buf = np.zeros(src_shape, dtype=np.float64)
        np.add.at(buf, idx, g)
        _accumulate(a, buf)

    return _record(out, (a,), run)


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Tile a 1-row tensor (1, d) into (n, d)."""
    if a.data.ndim != 2 or a.shape[0] != 1:
        raise ContractError(f"repeat_rows needs shape (1, d), got {a.shape}")
    out = Tensor(np.repeat(a.data, n, axis=0))

    def run(g):
        _accumulate(a, g.sum(axis=0, keepdims=True))

    return _record(out, (a,), run)


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))
    src_shape = a.shape

    def run(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, src_shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), src_shape).copy())

    return _record(out, (a,), run)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    out = Tensor(a.data.mean(axis=axis))
    src_shape = a.shape
    inv = 1.0 / count

    def run(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g * inv, src_shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g * inv, axis), src_shape).copy())

    return _record(out, (a,), run)


# ---------------------------------------------------------------------------
# nonlinear ops


def gelu(a: Tensor) -> Tensor:
    """tanh-form gelu: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = a.data
    inner = _GELU_K * (x + _GELU_C * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t))

    def run(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_K * (1.0 + 3.0 * _GELU_C * x**2)
        _accumulate(a, g * d)

    return _record(out, (a,), run)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)

    def run(g):
        _accumulate(a, g * y * (1.0 - y))

    return _record(out, (a,), run)


def log(a: Tensor) -> Tensor:
    x = a.data
    out = Tensor(np.log(x))

    def run(g):
        _accumulate(a, g / x)

    return _record(out, (a,), run)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input is inside."""
    x = a.data
    out = Tensor(np.clip(x, lo, hi))
    inside = (x >= lo) & (x <= hi)

    def run(g):
        _accumulate(a, g * inside)

    return _record(out, (a,), run)


def softmax_lastdim(a: Tensor) -> Tensor:
    """Row softmax over the last axis, max-subtracted for stability."""
    if a.data.ndim == 0 or a.shape[-1] == 0:
        raise ContractError(f"softmax needs a nonempty last dim, got shape {a.shape}")
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def run(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _record(out, (a,), run)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Zero-mean unit-variance affine transform over the last axis."""
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1] if x.data.ndim else 0
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: x last dim {d} vs gamma {gamma.shape}, beta {beta.shape}"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(gamma.data * xhat + beta.data)

    def run(g):
        lead = (-1, d)
        _accumulate(gamma, (g * xhat).reshape(lead).sum(axis=0))
        _accumulate(beta, g.reshape(lead).sum(axis=0))
        gx = g * gamma.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (gx - m1 - xhat * m2))

    return _record(out, (x, gamma, beta), run)
