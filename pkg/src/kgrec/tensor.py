"""Dense-tensor core with reverse-mode differentiation.

Everything the recommender computes goes through the ops in this module so
that one tape-based backward pass covers the whole model. Tensors are plain
numpy arrays (float32 by default; float64 is used by the gradient-check
oracles) and are treated as immutable once an op has produced them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))

# toggled off only in tight benchmark loops; every forward op checks its
# output for NaN/Inf when enabled
FINITE_CHECKS = True

# incremented whenever log_clamped has to clamp an underflowed probability
underflow_clamps = 0


class NumericError(RuntimeError):
    """A forward op produced or received non-finite values."""


class TapeError(RuntimeError):
    """The tape is malformed (e.g. an op consumes a later output)."""


class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


class Tape:
    """Ordered record of primitive ops; reverse replay yields gradients."""

    def __init__(self):
        # each node: (out, inputs, backward_fn); backward_fn(g) returns one
        # gradient array (or None) per input
        self.nodes = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _finish(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    if FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced by a forward op")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype)
    tape = _active_tape()
    if tape is not None and requires:
        tape.nodes.append((out, inputs, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)
    return _finish(a.data + b.data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _finish(-a.data, (a,), lambda g: (-g,))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))
    return _finish(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    return _finish(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)
    return _finish(np.matmul(a.data, b.data), (a, b), bwd)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = np.argsort(axes)
    return _finish(np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _finish(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def index_select0(a: Tensor, idx: np.ndarray) -> Tensor:
    """Rows a[idx] along axis 0; gradient scatter-adds duplicates."""
    idx = np.asarray(idx)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)
    return _finish(a.data[idx], (a,), bwd)


def scatter_add0(a: Tensor, idx: np.ndarray, size: int) -> Tensor:
    """out[j] = sum of rows a[i] with idx[i] == j; out has `size` rows."""
    idx = np.asarray(idx)
    out = np.zeros((size,) + a.data.shape[1:], dtype=a.data.dtype)
    np.add.at(out, idx, a.data)
    return _finish(out, (a,), lambda g: (g[idx],))


def take_per_row(a: Tensor, idx: np.ndarray) -> Tensor:
    """a is [N, V]; returns [N] with out[i] = a[i, idx[i]]."""
    idx = np.asarray(idx)
    rows = np.arange(a.data.shape[0])

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[rows, idx] = g
        return (ga,)
    return _finish(a.data[rows, idx], (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _finish(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """Exact GELU x * Phi(x) with the Gaussian CDF (erf form)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)
    return _finish(x * cdf, (a,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (biased variance), then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std

    def bwd(g):
        reduce_axes = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=reduce_axes)
        dbeta = g.sum(axis=reduce_axes)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv_std * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta
    return _finish(gamma.data * xhat + beta.data, (x, gamma, beta), bwd)


def masked_softmax(logits: Tensor, valid: np.ndarray) -> Tensor:
    """Softmax over the last axis with blocked positions pinned to 0.

    `valid` is a boolean array broadcastable to logits; a row with no valid
    position is an error (there would be no candidate to normalize over).
    """
    valid = np.broadcast_to(np.asarray(valid, dtype=bool), logits.data.shape)
    if not valid.any(axis=-1).all():
        raise NumericError("masked_softmax: a row has every position blocked")
    neg = np.finfo(logits.data.dtype).min
    z = np.where(valid, logits.data, neg)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(valid, np.exp(z), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)
    return _finish(p, (logits,), bwd)


def softmax_masked(logits: Tensor, blocked=()) -> Tensor:
    """Softmax where the given last-dimension indices get probability 0."""
    n = logits.data.shape[-1]
    valid = np.ones(n, dtype=bool)
    for i in blocked:
        if not 0 <= i < n:
            raise IndexError(f"blocked index {i} outside last dimension {n}")
        valid[i] = False
    return masked_softmax(logits, valid)


def dropout(x: Tensor, p: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted dropout: scales by 1/(1-p) at train time, identity at eval."""
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.data.dtype)
    return _finish(x.data * keep, (x,), lambda g: (g * keep,))


def log_clamped(x: Tensor, floor: float = 1e-12) -> Tensor:
    """log(max(x, floor)); clamping counts towards `underflow_clamps`."""
    global underflow_clamps
    clamped = x.data < floor
    n = int(clamped.sum())
    if n:
        underflow_clamps += n
    safe = np.maximum(x.data, floor)

    def bwd(g):
        return (np.where(clamped, 0.0, g / safe),)
    return _finish(np.log(safe), (x,), bwd)


def sum_last(a: Tensor) -> Tensor:
    n = a.data.shape[-1]
    return _finish(a.data.sum(axis=-1), (a,),
                   lambda g: (np.repeat(g[..., None], n, axis=-1),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 1.0 / (1.0 + np.exp(-x))
    return _finish(out, (a,), lambda g: (g * sig,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _finish(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Replay the tape in reverse from a scalar loss.

    Returns gradients for every tensor reached from the loss; leaves that do
    not influence the loss simply do not appear in the map.
    """
    if loss.data.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    first_produced = {}
    for i, (out, _, _) in enumerate(tape.nodes):
        first_produced.setdefault(id(out), i)
    for i, (_, inputs, _) in enumerate(tape.nodes):
        for t in inputs:
            j = first_produced.get(id(t))
            if j is not None and j > i:
                raise TapeError("tape is cyclic: an op consumes a later output")

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    by_id: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, bwd in reversed(tape.nodes):
        g = grads.get(id(out))
        if g is None:
            continue
        gs = bwd(g)
        for t, gt in zip(inputs, gs):
            if gt is None or not t.requires_grad:
                continue
            key = id(t)
            by_id[key] = t
            if key in grads:
                grads[key] = grads[key] + gt
            else:
                grads[key] = np.asarray(gt, dtype=t.data.dtype)
    return {by_id[k]: v for k, v in grads.items()}


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def clip_global_norm(grads: dict, max_norm: float) -> dict:
    """Scale all gradients by max_norm/g when the global L2 norm g exceeds it."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm <= max_norm:
        return dict(grads)
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}


@dataclass
class AdamState:
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, weight_decay: float = 0.0,
              no_decay: frozenset = frozenset()) -> None:
    """Bias-corrected Adam update, in place.

    L2 regularization enters as weight_decay * theta added to the gradient
    before the moment updates; names in `no_decay` are exempt.
    """
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(param.data)
        g = np.asarray(g, dtype=param.data.dtype)
        if weight_decay and name not in no_decay:
            g = g + weight_decay * param.data
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        param.data = param.data - lr * mhat / (np.sqrt(vhat) + eps)
