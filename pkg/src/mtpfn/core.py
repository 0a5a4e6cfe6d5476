"""Dense float64 arrays with tape-based reverse-mode differentiation.

Every primitive below produces a new :class:`Tensor`.  When a :class:`Tape`
is active and at least one operand requires a gradient, the primitive also
appends a node holding its vector-Jacobian product.  :func:`backward` walks
that record in exact reverse order.

Each primitive charges a fixed, shape-determined number of floating point
operations to the active :class:`FlopCounter` (see :data:`ELEMENTWISE_COST`).
The analytic accounting in :mod:`mtpfn.bench` mirrors these charges.
"""

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor", "Tape", "FlopCounter", "NonFiniteError",
    "matmul", "add", "sub", "mul", "scale", "reshape", "transpose", "rows",
    "gelu", "softmax", "layer_norm", "sliced_cross_entropy", "total",
    "backward", "count_flops", "add_flops",
]

LN_EPS = 1e-5

# (forward, backward) flops charged per output element.
ELEMENTWISE_COST = {
    "gelu": (8, 12),
    "softmax": (5, 4),
    "layer_norm": (8, 13),
    "cross_entropy": (5, 3),
}

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or infinity."""


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "out", "inputs", "vjp", "bwd_flops")

    def __init__(self, op, out, inputs, vjp, bwd_flops):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.bwd_flops = bwd_flops


class Tape:
    """Ordered record of differentiable primitives.

    Use as a context manager; tapes may nest, the innermost one records.
    """

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False


class FlopCounter:
    def __init__(self):
        self.total = 0
        self.by_op = {}

    def charge(self, op, n):
        n = int(n)
        self.total += n
        self.by_op[op] = self.by_op.get(op, 0) + n


_TAPES = []
_COUNTERS = []


@contextmanager
def count_flops():
    """Collect flops charged by every primitive executed inside the block."""
    counter = FlopCounter()
    _COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _COUNTERS.remove(counter)


def add_flops(op, n):
    """Charge work done outside the primitives (optimizer updates, clipping)."""
    for c in _COUNTERS:
        c.charge(op, n)


def _emit(op, data, inputs, vjp, fwd_flops, bwd_flops):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    add_flops(op, fwd_flops)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if out.requires_grad and _TAPES:
        _TAPES[-1].nodes.append(_Node(op, out, inputs, vjp, bwd_flops))
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b):
    """Matrix product over the last two axes, leading axes batched."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    m, k = a.shape[-2:]
    n = b.shape[-1]
    batch = out.size // (m * n)
    cost = 2 * batch * m * k * n

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _emit("matmul", out, (a, b), vjp, cost, cost * (a.requires_grad + b.requires_grad))


def add(a, b):
    out = a.data + b.data

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _emit("add", out, (a, b), vjp, out.size, out.size * (a.requires_grad + b.requires_grad))


def sub(a, b):
    out = a.data - b.data

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _emit("sub", out, (a, b), vjp, out.size, out.size * (a.requires_grad + b.requires_grad))


def mul(a, b):
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _emit("mul", out, (a, b), vjp, out.size, out.size * (a.requires_grad + b.requires_grad))


def scale(a, c):
    c = float(c)
    out = a.data * c
    return _emit("scale", out, (a,), lambda g: (g * c,), out.size, out.size)


def reshape(a, shape):
    out = a.data.reshape(shape)
    return _emit("reshape", out, (a,), lambda g: (g.reshape(a.shape),), 0, 0)


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)
    return _emit("transpose", out, (a,), lambda g: (np.transpose(g, inverse),), 0, 0)


def rows(a, start, stop=None):
    """Slice ``a[start:stop]`` along the first axis."""
    out = a.data[start:stop]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _emit("rows", out, (a,), vjp, 0, 0)


def total(a):
    """Sum of all entries as a 0-d tensor."""
    out = np.asarray(a.data.sum())
    return _emit("total", out, (a,), lambda g: (np.full(a.shape, float(g)),), a.size, a.size)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF via erf."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf
    fwd, bwd = ELEMENTWISE_COST["gelu"]

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _emit("gelu", out, (x,), vjp, fwd * out.size, bwd * out.size)


def softmax(x, axis=-1, mask=None):
    """Numerically stable softmax; ``mask`` (bool, True = keep) adds -inf to blocked entries.

    Every slice must keep at least one entry.
    """
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    fwd, bwd = ELEMENTWISE_COST["softmax"]

    def vjp(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", p, (x,), vjp, fwd * p.size, bwd * p.size)


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalize over the last axis then apply ``gain`` and ``bias``."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    fwd, bwd = ELEMENTWISE_COST["layer_norm"]

    def vjp(g):
        gx = gg = gb = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            gg = _unbroadcast(g * xhat, gain.shape)
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.shape)
        return gx, gg, gb

    return _emit("layer_norm", out, (x, gain, bias), vjp, fwd * out.size, bwd * out.size)


def sliced_cross_entropy(logits, labels, n_tasks, slice_width):
    """Mean over rows of the task-averaged cross-entropy of per-task logit slices.

    Task ``t`` reads columns ``[t*slice_width, (t+1)*slice_width)``; columns past
    ``n_tasks*slice_width`` are ignored.  ``labels`` is an int array (rows, n_tasks).
    """
    labels = np.asarray(labels)
    n_rows = logits.shape[0]
    if labels.shape != (n_rows, n_tasks):
        raise ValueError(f"labels shape {labels.shape} != ({n_rows}, {n_tasks})")
    if labels.size and (labels.min() < 0 or labels.max() >= slice_width):
        raise ValueError("label out of range for logit slice")
    used = logits.data[:, :n_tasks * slice_width].reshape(n_rows, n_tasks, slice_width)
    z = used - used.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=-1, keepdims=True)
    logp = z - np.log(s)
    r = np.arange(n_rows)[:, None]
    t = np.arange(n_tasks)[None, :]
    picked = logp[r, t, labels]
    norm = n_rows * n_tasks
    out = np.asarray(-picked.sum() / norm)
    fwd, bwd = ELEMENTWISE_COST["cross_entropy"]

    def vjp(g):
        grad = e / s
        grad[r, t, labels] -= 1.0
        full = np.zeros_like(logits.data)
        full[:, :n_tasks * slice_width] = grad.reshape(n_rows, -1) * (float(g) / norm)
        return (full,)

    return _emit("cross_entropy", out, (logits,), vjp, fwd * used.size, bwd * used.size)


def backward(loss, tape, wrt=()):
    """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

    Returns a dict keyed by tensor; tensors the loss does not reach get zeros.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        add_flops(node.op + "_bwd", node.bwd_flops)
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
    # leaves are never node outputs, so their entries survive the pops above
    return {t: grads.get(id(t), np.zeros_like(t.data)) for t in wrt}
