"""Differentiable operations over tensor.Tensor values.

Each function computes its result with numpy (matrix products go through the
pinned-order kernels), then records a backward rule on whichever tape the
inputs live on. Inputs that are plain arrays or python scalars are treated
as constants. Backward rules are pure closures over captured forward values:
they allocate fresh arrays and never mutate their argument, so a tape can be
replayed any number of times.

Losses (cross entropy, binary cross entropy, distillation) are fused ops
with hand-derived gradients rather than compositions; that keeps them stable
at saturation and keeps the tape short.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import errors, kernels
from .tensor import Tensor, tape_of

_GELU_K0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_K1 = 0.044715


def _wrap(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is not None:
        return Tensor(np.asarray(x, dtype=dtype))
    return Tensor(x)


def _emit(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    tape = tape_of(*inputs)
    out = Tensor(out_data)
    if tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape an operand had before broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- arithmetic ---

def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    try:
        out = np.add(a.data, b.data)
    except ValueError as exc:
        raise errors.ShapeMismatch(str(exc)) from None
    ash, bsh = a.data.shape, b.data.shape
    return _emit(out, (a, b),
                 lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)))


def sub(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    try:
        out = np.subtract(a.data, b.data)
    except ValueError as exc:
        raise errors.ShapeMismatch(str(exc)) from None
    ash, bsh = a.data.shape, b.data.shape
    return _emit(out, (a, b),
                 lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)))


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    try:
        out = np.multiply(a.data, b.data)
    except ValueError as exc:
        raise errors.ShapeMismatch(str(exc)) from None
    ad, bd = a.data, b.data
    return _emit(out, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape),
                            _unbroadcast(g * ad, bd.shape)))


def scale(x, c: float) -> Tensor:
    x = _wrap(x)
    cv = x.data.dtype.type(c)
    return _emit(x.data * cv, (x,), lambda g: (g * cv,))


def reciprocal(x) -> Tensor:
    x = _wrap(x)
    out = np.reciprocal(x.data)
    return _emit(out, (x,), lambda g, o=out: (-g * o * o,))


# --- shape manipulation ---

def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise errors.ShapeMismatch(str(exc)) from None
    orig = x.data.shape
    return _emit(out, (x,), lambda g: (g.reshape(orig),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _wrap(x)
    if sorted(axes) != list(range(x.data.ndim)):
        raise errors.ShapeMismatch(
            f"axes {tuple(axes)} is not a permutation for rank {x.data.ndim}")
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inv),))


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = _wrap(x)
    if not 0 <= axis < x.data.ndim:
        raise errors.ShapeMismatch(f"axis {axis} out of rank {x.data.ndim}")
    slicer = (slice(None),) * axis + (slice(start, stop),)
    xd = x.data

    def bw(g):
        gx = np.zeros_like(xd)
        gx[slicer] = g
        return (gx,)

    return _emit(xd[slicer], (x,), bw)


def take(x, index: int, axis: int) -> Tensor:
    """One slice along an axis, with the axis removed. take(x, 0, 1) pulls
    the leading token row out of a (batch, seq, dim) activation."""
    x = _wrap(x)
    if not 0 <= axis < x.data.ndim:
        raise errors.ShapeMismatch(f"axis {axis} out of rank {x.data.ndim}")
    if not 0 <= index < x.data.shape[axis]:
        raise errors.OutOfRange(
            f"index {index} out of size {x.data.shape[axis]} on axis {axis}")
    slicer = (slice(None),) * axis + (index,)
    xd = x.data

    def bw(g):
        gx = np.zeros_like(xd)
        gx[slicer] = g
        return (gx,)

    return _emit(xd[slicer], (x,), bw)


def gather_rows(x, indices) -> Tensor:
    """Rows of x picked by an integer vector, out[i] = x[indices[i]].
    Backward scatter-adds, so repeated indices accumulate."""
    x = _wrap(x)
    idx = np.asarray(indices)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise errors.ShapeMismatch("indices must be a 1-D integer array")
    n = x.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise errors.OutOfRange(f"row index outside [0, {n})")
    xd = x.data

    def bw(g):
        gx = np.zeros_like(xd)
        np.add.at(gx, idx, g)
        return (gx,)

    return _emit(xd[idx], (x,), bw)


def concat(parts: Sequence, axis: int) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise errors.ShapeMismatch("concat of zero tensors")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise errors.ShapeMismatch(str(exc)) from None
    sizes = [p.data.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _emit(out, parts, lambda g: tuple(np.split(g, cuts, axis=axis)))


# --- matrix products ---

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = kernels.matmul(a.data, b.data)
    ad, bd = a.data, b.data
    return _emit(out, (a, b),
                 lambda g: (kernels.matmul(g, bd.T), kernels.matmul(ad.T, g)))


def bmm(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = kernels.bmm(a.data, b.data)
    ad, bd = a.data, b.data
    return _emit(out, (a, b),
                 lambda g: (kernels.bmm(g, bd.transpose(0, 2, 1)),
                            kernels.bmm(ad.transpose(0, 2, 1), g)))


# --- lookup ---

def embedding(table, ids) -> Tensor:
    """Gather rows of an embedding table by (possibly batched) token ids.
    Backward scatter-adds into the table gradient."""
    table = _wrap(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise errors.ConfigError("token ids must be integers")
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise errors.OutOfRange(f"token id outside [0, {vocab})")
    td = table.data

    def bw(g):
        gt = np.zeros_like(td)
        np.add.at(gt, ids, g)
        return (gt,)

    return _emit(td[ids], (table,), bw)


# --- activations and normalization ---

def gelu(x) -> Tensor:
    x = _wrap(x)
    xd = x.data
    dt = xd.dtype.type
    u = dt(_GELU_K0) * (xd + dt(_GELU_K1) * xd * xd * xd)
    t = np.tanh(u)
    out = dt(0.5) * xd * (dt(1) + t)

    def bw(g):
        du = dt(_GELU_K0) * (dt(1) + dt(3 * _GELU_K1) * xd * xd)
        local = dt(0.5) * (dt(1) + t) + dt(0.5) * xd * (dt(1) - t * t) * du
        return (g * local,)

    return _emit(out, (x,), bw)


def softmax(x, axis: int) -> Tensor:
    x = _wrap(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise errors.ShapeMismatch(f"axis {axis} out of rank {x.data.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _emit(s, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise errors.ShapeMismatch(
            f"gamma/beta must have shape ({d},), got "
            f"{gamma.data.shape} and {beta.data.shape}")
    dt = x.data.dtype.type
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = dt(1) / np.sqrt(var + dt(eps))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def bw(g):
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gd
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (dx, dgamma, dbeta)

    return _emit(out, (x, gamma, beta), bw)


def l2_normalize(x, axis: int = -1) -> Tensor:
    """Rows rescaled to unit Euclidean norm (tiny epsilon under the root
    keeps the zero vector finite)."""
    x = _wrap(x)
    dt = x.data.dtype.type
    s = (x.data * x.data).sum(axis=axis, keepdims=True)
    r = dt(1) / np.sqrt(s + dt(1e-12))
    out = x.data * r
    xd = x.data

    def bw(g):
        gx = (g * xd).sum(axis=axis, keepdims=True)
        return (g * r - xd * gx * r * r * r,)

    return _emit(out, (x,), bw)


# --- reductions ---

def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(out, (x,), bw)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    n = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in np.atleast_1d(axis)])
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# --- losses ---

def cross_entropy_logits(logits, targets, ignore_id: Optional[int] = None) -> Tensor:
    """Mean negative log-softmax of the target class over non-ignored rows."""
    logits = _wrap(logits)
    ld = logits.data
    if ld.ndim != 2:
        raise errors.ShapeMismatch(f"logits must be 2-D, got {ld.shape}")
    t = np.asarray(targets)
    if t.shape != (ld.shape[0],) or not np.issubdtype(t.dtype, np.integer):
        raise errors.ShapeMismatch(
            f"targets must be {ld.shape[0]} integer ids, got shape {t.shape}")
    live = np.ones(t.shape, dtype=bool) if ignore_id is None else t != ignore_id
    n_live = int(live.sum())
    if n_live == 0:
        raise errors.AllIgnored("every target row carries the ignore id")
    v = ld.shape[1]
    tl = t[live]
    if tl.min() < 0 or tl.max() >= v:
        raise errors.OutOfRange(f"target id outside [0, {v})")

    m = ld.max(axis=1, keepdims=True)
    shifted = ld - m
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    lse = np.log(z)[:, 0] + m[:, 0]
    picked = ld[np.arange(ld.shape[0]), np.where(live, t, 0)]
    per_row = lse - picked
    loss = np.asarray(per_row[live].mean(), dtype=ld.dtype)
    p = e / z

    def bw(g):
        grad = p.copy()
        grad[np.arange(ld.shape[0]), np.where(live, t, 0)] -= 1
        grad[~live] = 0
        return (grad * (g * ld.dtype.type(1.0 / n_live)),)

    return _emit(loss, (logits,), bw)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on a plain array."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def binary_cross_entropy_logits(logits, targets) -> Tensor:
    """Mean stable BCE: logaddexp(0, x) - t*x, gradient (sigmoid(x) - t)/N."""
    logits = _wrap(logits)
    ld = logits.data
    t = np.asarray(targets, dtype=ld.dtype)
    if ld.shape != t.shape or ld.ndim != 1:
        raise errors.ShapeMismatch(
            f"logits and targets must be matching 1-D, got {ld.shape} "
            f"and {t.shape}")
    n = ld.shape[0]
    loss = np.asarray((np.logaddexp(0, ld) - t * ld).mean(), dtype=ld.dtype)

    def bw(g):
        return ((sigmoid(ld) - t) * (g * ld.dtype.type(1.0 / n)),)

    return _emit(loss, (logits,), bw)


def kd_loss(student_logits, teacher_logits, temperature: float) -> Tensor:
    """Distillation loss: T^2 times the mean KL divergence from the
    temperature-softened teacher distribution to the student's.

    The teacher side is always treated as a constant, even if handed a
    tracked tensor; a teacher is something to mimic, not to train through.
    """
    if temperature <= 0:
        raise errors.ConfigError(
            f"distillation temperature must be positive, got {temperature}")
    student = _wrap(student_logits)
    sd = student.data
    td = teacher_logits.data if isinstance(teacher_logits, Tensor) \
        else np.asarray(teacher_logits, dtype=sd.dtype)
    if sd.shape != td.shape or sd.ndim != 2:
        raise errors.ShapeMismatch(
            f"student and teacher logits must be matching 2-D, got "
            f"{sd.shape} and {td.shape}")
    dt = sd.dtype.type
    tmp = dt(temperature)
    n = sd.shape[0]

    def _soft(logits):
        z = logits / tmp
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        logprobs = z - np.log(e.sum(axis=1, keepdims=True))
        return probs, logprobs

    p, logp = _soft(td)
    q, logq = _soft(sd)
    kl = np.where(p > 0, p * (logp - logq), dt(0)).sum(axis=1)
    loss = np.asarray(kl.mean() * tmp * tmp, dtype=sd.dtype)

    def bw(g):
        return ((q - p) * (g * tmp * dt(1.0 / n)),)

    return _emit(loss, (student,), bw)


# --- operator sugar on Tensor ---

def _mul_dispatch(self, other):
    if isinstance(other, (int, float)):
        return scale(self, other)
    return mul(self, other)


Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(self, other)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(_wrap(other, self.dtype), self)
Tensor.__mul__ = _mul_dispatch
Tensor.__rmul__ = _mul_dispatch
Tensor.__neg__ = lambda self: scale(self, -1.0)
Tensor.__truediv__ = lambda self, other: (
    scale(self, 1.0 / other) if isinstance(other, (int, float))
    else mul(self, reciprocal(other)))
Tensor.__matmul__ = matmul
