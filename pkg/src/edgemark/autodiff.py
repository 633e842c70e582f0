"""Reverse-mode automatic differentiation over dense float64 matrices.

A ``Tape`` records every primitive as it executes; ``Tape.backward`` replays
the records in reverse order exactly once, accumulating gradients into the
tensors that were created through ``Tape.parameter``. Tensors wrap plain
numpy arrays and are treated as immutable values once produced. Tensors
without a tape are constants: operations evaluate through them but no
gradient is accumulated.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .errors import DimensionError, NumericError, UsageError


class Tensor:
    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tape={'yes' if self.tape else 'no'})"


class Tape:
    """Ordered record of primitive operations (a Wengert list)."""

    __slots__ = ("_ops",)

    def __init__(self):
        self._ops = []

    def parameter(self, data) -> Tensor:
        return Tensor(data, self)

    def record(self, backward_fn):
        self._ops.append(backward_fn)

    def backward(self, loss: Tensor):
        """Replay the records in reverse exactly once, then retire the tape.

        The op list is cleared afterwards: the closures hold the only
        references back to intermediate tensors, so dropping them frees
        the forward pass immediately instead of waiting for the cycle
        collector (tensor -> tape -> closure -> tensor).
        """
        if loss.tape is not self:
            raise UsageError("loss was not computed on this tape")
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not np.all(np.isfinite(loss.data)):
            raise NumericError("loss is not finite")
        loss.grad = np.ones_like(loss.data)
        for op in reversed(self._ops):
            op()
        self._ops.clear()


def constant(data) -> Tensor:
    return Tensor(data, None)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, None)


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise UsageError("operands live on different tapes")
    return tape


def _accum(t: Tensor, g: np.ndarray):
    if t.tape is None:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    tape = _tape_of(a, b)
    out = Tensor(a.data + b.data, tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(a, _unbroadcast(out.grad, a.data.shape))
            _accum(b, _unbroadcast(out.grad, b.data.shape))
        tape.record(backward)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    tape = _tape_of(a, b)
    out = Tensor(a.data - b.data, tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(a, _unbroadcast(out.grad, a.data.shape))
            _accum(b, _unbroadcast(-out.grad, b.data.shape))
        tape.record(backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    tape = _tape_of(a, b)
    out = Tensor(a.data * b.data, tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
            _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))
        tape.record(backward)
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    tape = _tape_of(a, b)
    out = Tensor(a.data / b.data, tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(a, _unbroadcast(out.grad / b.data, a.data.shape))
            _accum(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))
        tape.record(backward)
    return out


def neg(a) -> Tensor:
    return scale(a, -1.0)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    tape = a.tape
    out = Tensor(a.data * c, tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad * c)
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# matrix / nonlinearity primitives


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes {a.data.shape} x {b.data.shape}")
    tape = _tape_of(a, b)
    out = Tensor(a.data @ b.data, tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            if a.tape is not None:
                _accum(a, out.grad @ b.data.T)
            if b.tape is not None:
                _accum(b, a.data.T @ out.grad)
        tape.record(backward)
    return out


def elu(x) -> Tensor:
    x = _as_tensor(x)
    tape = x.tape
    expm = np.expm1(np.minimum(x.data, 0.0))
    out = Tensor(np.where(x.data > 0, x.data, expm), tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * np.where(x.data > 0, 1.0, expm + 1.0))
        tape.record(backward)
    return out


def row_softmax(x) -> Tensor:
    """Softmax over each row, stabilized by row-max subtraction."""
    x = _as_tensor(x)
    tape = x.tape
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p, tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            inner = (out.grad * p).sum(axis=1, keepdims=True)
            _accum(x, p * (out.grad - inner))
        tape.record(backward)
    return out


def log_row_softmax(x) -> Tensor:
    x = _as_tensor(x)
    tape = x.tape
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Tensor(shifted - lse, tape)
    if tape is not None:
        p = np.exp(shifted - lse)

        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad - p * out.grad.sum(axis=1, keepdims=True))
        tape.record(backward)
    return out


def log(x) -> Tensor:
    x = _as_tensor(x)
    tape = x.tape
    with np.errstate(invalid="ignore", divide="ignore"):
        out = Tensor(np.log(x.data), tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad / x.data)
        tape.record(backward)
    return out


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    tape = x.tape
    r = np.sqrt(x.data)
    out = Tensor(r, tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * 0.5 / r)
        tape.record(backward)
    return out


def absolute(x) -> Tensor:
    x = _as_tensor(x)
    tape = x.tape
    out = Tensor(np.abs(x.data), tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * np.sign(x.data))
        tape.record(backward)
    return out


def clamp_min(x, c: float) -> Tensor:
    """max(x, c); gradient is zero where the clamp is active."""
    x = _as_tensor(x)
    tape = x.tape
    out = Tensor(np.maximum(x.data, c), tape)
    if tape is not None:
        mask = x.data > c

        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * mask)
        tape.record(backward)
    return out


def clamp_max(x, c: float) -> Tensor:
    x = _as_tensor(x)
    tape = x.tape
    out = Tensor(np.minimum(x.data, c), tape)
    if tape is not None:
        mask = x.data < c

        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * mask)
        tape.record(backward)
    return out


def softplus(x) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    x = _as_tensor(x)
    tape = x.tape
    out = Tensor(np.logaddexp(0.0, x.data), tape)
    if tape is not None:
        sig = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.maximum(x.data, 0))),
                       np.exp(np.minimum(x.data, 0)) / (1.0 + np.exp(np.minimum(x.data, 0))))

        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * sig)
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# reductions and indexing


def row_sum(x) -> Tensor:
    x = _as_tensor(x)
    tape = x.tape
    out = Tensor(x.data.sum(axis=1, keepdims=True), tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, np.broadcast_to(out.grad, x.data.shape))
        tape.record(backward)
    return out


def row_mean(x) -> Tensor:
    return scale(row_sum(x), 1.0 / x.data.shape[1])


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    tape = x.tape
    out = Tensor(x.data.sum(), tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, np.full_like(x.data, float(out.grad)))
        tape.record(backward)
    return out


def mean_all(x) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


def gather_rows(x, idx) -> Tensor:
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise DimensionError("gather index out of range")
    tape = x.tape
    out = Tensor(x.data[idx], tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            if x.tape is not None:
                if x.grad is None:
                    x.grad = np.zeros_like(x.data)
                K.scatter_add_rows(x.grad, idx, np.ascontiguousarray(out.grad))
        tape.record(backward)
    return out


def cross_entropy_logits(logits, labels) -> Tensor:
    """Mean cross entropy of integer labels against logit rows."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} for {n} rows")
    tape = logits.tape
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    out = Tensor(-logp[np.arange(n), labels].mean(), tape)
    if tape is not None:
        p = np.exp(logp)

        def backward():
            if out.grad is None:
                return
            g = p.copy()
            g[np.arange(n), labels] -= 1.0
            _accum(logits, g * (float(out.grad) / n))
        tape.record(backward)
    return out


def soft_cross_entropy(logits, target_probs) -> Tensor:
    """Mean cross entropy of fixed target distributions against logit rows."""
    logits = _as_tensor(logits)
    t = np.asarray(target_probs, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise DimensionError("target shape mismatch")
    n = logits.data.shape[0]
    logp = log_row_softmax(logits)
    return scale(sum_all(mul(constant(t), logp)), -1.0 / n)


# ---------------------------------------------------------------------------
# message-passing primitives (hot kernels live in _kernels)


def neighbor_mean(x, src, dst, inv_deg) -> Tensor:
    """Per-node mean of neighbor rows; nodes without neighbors get zeros.

    src/dst are aligned directed-edge endpoint arrays; inv_deg[v] is
    1/deg(v) with isolated nodes mapped to 0.
    """
    x = _as_tensor(x)
    tape = x.tape
    n = x.data.shape[0]
    sums = K.neighbor_sum(np.ascontiguousarray(x.data), src, dst, n)
    out = Tensor(sums * inv_deg[:, None], tape)
    if tape is not None:
        w_back = inv_deg[dst]

        def backward():
            if out.grad is None:
                return
            g = K.weighted_neighbor_sum(np.ascontiguousarray(out.grad), dst, src, w_back, n)
            _accum(x, g)
        tape.record(backward)
    return out


def normalized_adjacency(x, src, dst, edge_w, self_w) -> Tensor:
    """Apply the symmetric degree-normalized adjacency (with self loops).

    edge_w[e] = 1/sqrt((deg(u)+1)(deg(v)+1)) and self_w[v] = 1/(deg(v)+1).
    The operator is symmetric, so the backward pass reapplies it.
    """
    x = _as_tensor(x)
    tape = x.tape
    n = x.data.shape[0]

    def apply(m):
        agg = K.weighted_neighbor_sum(np.ascontiguousarray(m), src, dst, edge_w, n)
        return agg + m * self_w[:, None]

    out = Tensor(apply(x.data), tape)
    if tape is not None:
        def backward():
            if out.grad is None:
                return
            _accum(x, apply(out.grad))
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(build_loss, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    build_loss receives a list of Tensors mirroring ``params`` and must
    return a scalar Tensor; it is re-evaluated many times and must be
    deterministic. Relative error is |analytic - numeric| / max(1, |numeric|).
    """
    arrays = [np.asarray(p, dtype=np.float64) for p in params]
    tape = Tape()
    wrapped = [tape.parameter(a.copy()) for a in arrays]
    loss = build_loss(wrapped)
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss is not finite")
    tape.backward(loss)
    analytic = [np.zeros_like(a) if w.grad is None else w.grad for a, w in zip(arrays, wrapped)]

    def value_at(arrs):
        out = build_loss([constant(a) for a in arrs])
        v = float(out.data)
        if not np.isfinite(v):
            raise NumericError("loss is not finite during finite differencing")
        return v

    worst = 0.0
    for i, a in enumerate(arrays):
        flat = a.ravel()
        for j in range(flat.size):
            orig = flat[j]
            probe = [arr.copy() for arr in arrays]
            probe[i].ravel()[j] = orig + eps
            up = value_at(probe)
            probe[i].ravel()[j] = orig - eps
            down = value_at(probe)
            numeric = (up - down) / (2.0 * eps)
            err = abs(analytic[i].ravel()[j] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
