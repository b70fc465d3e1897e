"""Dense tensors with reverse-mode automatic differentiation.

Every tensor wraps a row-major numpy array (float32 by default, float64
behind ``set_default_dtype`` for oracle runs). Operations record their
inputs on an implicit tape (the DAG of ``_parents`` links); ``backward``
replays it in reverse topological order and accumulates gradients
additively. Broadcasting is supported over leading batch dimensions only.
"""

import math
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when a call violates an operation's precondition."""


_DEFAULT_DTYPE = np.float32


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype):
    """Switch the dtype used by newly constructed tensors.

    float32 is the project-wide default; float64 exists for oracle runs
    where finite-difference noise matters.
    """
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


@contextmanager
def dtype_context(dtype):
    """Temporarily construct tensors in another dtype (oracle runs)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """A dense n-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        """Populate gradients of every tracked tensor reachable from here.

        Repeated calls without zeroing accumulate additively.
        """
        if self.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        order = _toposort(self)
        # interior adjoints are per-pass; only leaves accumulate across calls
        for node in order:
            if node._backward is not None:
                node.grad = None
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    # Iterative: training graphs run to thousands of nodes.
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(tensor, grad):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=tensor.data.dtype)
    else:
        tensor.grad = tensor.grad + grad


def _node(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    tracked = tuple(p for p in parents if p.requires_grad)
    out.requires_grad = bool(tracked)
    out._parents = tracked
    out._backward = backward if tracked else None
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy's leading-dim broadcast)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# element-wise ---------------------------------------------------------


def add(a, b):
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), backward)


def sub(a, b):
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(data, (a, b), backward)


def mul(a, b):
    """Element-wise (Hadamard) product."""
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), backward)


def div(a, b):
    data = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(data, (a, b), backward)


def exp(x):
    data = np.exp(x.data)

    def backward(g):
        _accumulate(x, g * data)

    return _node(data, (x,), backward)


def log(x):
    data = np.log(x.data)

    def backward(g):
        _accumulate(x, g / x.data)

    return _node(data, (x,), backward)


def sqrt(x):
    data = np.sqrt(x.data)

    def backward(g):
        _accumulate(x, g * 0.5 / data)

    return _node(data, (x,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """Smooth nonlinearity (tanh approximation), the project-wide activation."""
    sq = x.data * x.data
    t = np.tanh(_GELU_C * (x.data + 0.044715 * sq * x.data))
    data = 0.5 * x.data * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * sq)
        local = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * d_inner
        _accumulate(x, g * local)

    return _node(data, (x,), backward)


# shape ----------------------------------------------------------------


def reshape(x, shape):
    old = x.shape
    data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(old))

    return _node(data, (x,), backward)


def transpose(x):
    """Swap the two trailing axes (matrix transpose)."""
    if x.ndim < 2:
        raise ShapeError(f"transpose needs >=2 dims, got shape {x.shape}")
    data = np.swapaxes(x.data, -1, -2)

    def backward(g):
        _accumulate(x, np.swapaxes(g, -1, -2))

    return _node(data, (x,), backward)


def permute(x, axes):
    inverse = np.argsort(axes)
    data = np.transpose(x.data, axes)

    def backward(g):
        _accumulate(x, np.transpose(g, inverse))

    return _node(data, (x,), backward)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _node(data, tuple(tensors), backward)


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        _accumulate(x, full)

    return _node(data, (x,), backward)


def gather_rows(x, indices):
    """Select rows of `x` (axis 0) in the given order."""
    indices = np.asarray(indices, dtype=np.int64)
    data = x.data[indices]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, indices, g)
        _accumulate(x, full)

    return _node(data, (x,), backward)


# reductions -----------------------------------------------------------


def tensor_sum(x, axis=None, keepdims=False):
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return _node(data, (x,), backward)


def mean(x, axis=None, keepdims=False):
    count = x.size if axis is None else x.shape[axis]
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), _as_tensor(1.0 / count))


def l2_norm(x):
    """Euclidean norm of all entries, as a scalar tensor."""
    return sqrt(tensor_sum(mul(x, x)))


# linear algebra and neural primitives ---------------------------------


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _node(data, (a, b), backward)


def softmax(x, axis=-1):
    """Max-subtracted softmax along `axis`; rows sum to 1."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of bounds for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(x, data * (g - dot))

    return _node(data, (x,), backward)


def scaled_dot_attention(q, k, v):
    """softmax(Q Kᵀ / sqrt(d_k)) V, with attention rows summing to 1."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(
            f"query/key feature dims differ: Q {q.shape} vs K {k.shape}"
        )
    scale = _as_tensor(1.0 / math.sqrt(q.shape[-1]))
    scores = mul(matmul(q, transpose(k)), scale)
    return matmul(softmax(scores, axis=-1), v)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    data = normed * gain.data + bias.data

    def backward(g):
        d_normed = g * gain.data
        mean_dn = d_normed.mean(axis=-1, keepdims=True)
        mean_dn_x = (d_normed * normed).mean(axis=-1, keepdims=True)
        _accumulate(x, inv_std * (d_normed - mean_dn - normed * mean_dn_x))
        axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * normed).sum(axis=axes))
        _accumulate(bias, g.sum(axis=axes))

    return _node(data, (x, gain, bias), backward)


def embedding_lookup(table, ids):
    """Rows of `table` for integer `ids`; gradients scatter-add back."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"id out of range for table with {table.shape[0]} rows"
        )
    data = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accumulate(table, full)

    return _node(data, (table,), backward)


def cross_entropy_with_logits(logits, targets):
    """Per-position negative log-likelihood, shape (T,) for logits (T, V)."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (positions, vocab), got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"targets shape {targets.shape} does not match logits {logits.shape}"
        )
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(targets.shape[0])
    data = -np.log(probs[rows, targets])

    def backward(g):
        local = probs.copy()
        local[rows, targets] -= 1.0
        _accumulate(logits, local * g[:, None])

    return _node(data, (logits,), backward)


# verification ----------------------------------------------------------


def grad_check(f, x, epsilon=1e-3):
    """Max relative error between analytic and central-difference gradients.

    `f` must be deterministic and scalar-valued. The error at each
    coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = np.array(x.grad, dtype=np.float64)

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = f(x).item()
        flat[i] = orig - epsilon
        lo = f(x).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * epsilon)

    a = analytic.reshape(-1)
    rel = np.abs(a - numeric) / np.maximum(1.0, np.abs(a))
    return float(rel.max())
