"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the EG-CNN encoder and its objective need are provided.
Every op accepts optional leading batch axes in front of the documented
shape, so a minibatch can run through one tape.

Typical use::

    with Tape() as tape:
        loss = mse(dense(x, w, b), 1.0)
    tape.backward(loss)
    adagrad_step(params, lr=0.08)
"""
import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError

_TAPES = []
_CHECK_FINITE = False


def set_check_finite(flag):
    """Trap NaN/Inf in every op output when ``flag`` is true."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


@contextlib.contextmanager
def check_finite(flag=True):
    old = _CHECK_FINITE
    set_check_finite(flag)
    try:
        yield
    finally:
        set_check_finite(old)


class Tensor:
    """An immutable float64 array, optionally tracked for differentiation."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """A trainable leaf with a persistent gradient and AdaGrad accumulator.

    ``frozen_rows`` lists leading-axis rows (e.g. PAD embeddings) that are
    held at their current value and excluded from updates.
    """

    __slots__ = ("name", "accum", "frozen_rows")

    def __init__(self, value, name="", frozen_rows=()):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.accum = np.zeros_like(self.data)
        self.frozen_rows = tuple(frozen_rows)

    @property
    def value(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if isinstance(t, Parameter):
        t.grad += g
    elif t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


@dataclass
class Tape:
    """Ordered record of executed ops.

    With ``track_kinks`` set, relu and max-pool ops also record their
    inputs so a gradient checker can tell when a perturbation crossed a
    non-differentiable point.
    """

    track_kinks: bool = False
    entries: list = field(default_factory=list)
    kinks: list = field(default_factory=list)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, out, backward_fn):
        self.entries.append((out, backward_fn))

    def backward(self, loss):
        """Propagate d(loss)/d(.) to every tracked input, in reverse order."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self.entries):
            if out.grad is not None:
                fn(out.grad)


def current_tape():
    return _TAPES[-1] if _TAPES else None


def backward(loss):
    """Run the adjoint pass for ``loss`` on the innermost active tape."""
    tape = current_tape()
    if tape is None:
        raise ContractError("backward called outside an active Tape")
    tape.backward(loss)


def _result(data, inputs, backward_fn, name):
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {name}")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    tape = current_tape()
    if requires and tape is not None:
        tape.record(out, backward_fn)
    return out


def _kink(kind, payload):
    tape = current_tape()
    if tape is not None and tape.track_kinks:
        tape.kinks.append((kind, payload))


# --- ops ---------------------------------------------------------------------


def embedding_lookup(table, ids):
    """Select rows of ``table`` (V, D) by integer ``ids`` of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    V = table.data.shape[0]
    bad = (ids < 0) | (ids >= V)
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise IndexError(f"id {int(ids[pos])} at position {pos} is outside [0, {V})")
    out = table.data[ids]

    def bw(g):
        if not table.requires_grad:
            return
        D = table.data.shape[1]
        if isinstance(table, Parameter):
            np.add.at(table.grad, ids.ravel(), g.reshape(-1, D))
        else:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.ravel(), g.reshape(-1, D))
            _accumulate(table, gt)

    return _result(out, (table,), bw, "embedding_lookup")


def text_conv(x, filters, bias):
    """Full-width convolution sliding over the second-to-last axis.

    ``x`` is (..., m, D), ``filters`` is (f, D, C), ``bias`` is (C,);
    the result is (..., m - f + 1, C).
    """
    xd, wd, bd = x.data, filters.data, bias.data
    if wd.ndim != 3 or xd.ndim < 2 or wd.shape[1] != xd.shape[-1] or bd.shape != (wd.shape[2],):
        raise ShapeError(
            f"text_conv: input {xd.shape}, filters {wd.shape}, bias {bd.shape} do not agree"
        )
    f = wd.shape[0]
    m = xd.shape[-2]
    if f > m:
        raise ShapeError(f"text_conv: filter width {f} exceeds sequence length {m} (input {xd.shape})")
    lead = xd.shape[:-2]
    x3 = np.ascontiguousarray(xd.reshape((-1,) + xd.shape[-2:]))
    w3 = np.ascontiguousarray(wd)
    out = kernels.conv1d_forward(x3, w3, np.ascontiguousarray(bd))
    out = out.reshape(lead + out.shape[1:])

    def bw(g):
        g3 = np.ascontiguousarray(g.reshape((-1,) + g.shape[-2:]))
        dx, dw, db = kernels.conv1d_backward(x3, w3, g3)
        _accumulate(x, dx.reshape(xd.shape))
        _accumulate(filters, dw)
        _accumulate(bias, db)

    return _result(out, (x, filters, bias), bw, "text_conv")


def max_pool_over_time(x):
    """Max over the second-to-last axis: (..., T, C) -> (..., C).

    The adjoint goes to the first arg-max position.
    """
    xd = x.data
    if xd.ndim < 2 or xd.shape[-2] == 0:
        raise ShapeError(f"max_pool_over_time needs a non-empty time axis, got {xd.shape}")
    lead = xd.shape[:-2]
    T, C = xd.shape[-2:]
    x3 = np.ascontiguousarray(xd.reshape(-1, T, C))
    out, idx = kernels.maxpool_forward(x3)
    if current_tape() is not None and current_tape().track_kinks:
        if T > 1:
            top2 = np.partition(x3, T - 2, axis=1)[:, T - 2:, :]
            gap = top2[:, 1, :] - top2[:, 0, :]
        else:
            gap = np.full(out.shape, np.inf)
        _kink("max", (idx.copy(), out.copy(), gap))

    def bw(g):
        dx = kernels.maxpool_backward(np.ascontiguousarray(g.reshape(-1, C)), idx, T)
        _accumulate(x, dx.reshape(xd.shape))

    return _result(out.reshape(lead + (C,)), (x,), bw, "max_pool_over_time")


def relu(x):
    xd = x.data
    tape = current_tape()
    if tape is not None and tape.track_kinks:
        _kink("relu", xd.copy())
    out = np.maximum(xd, 0.0)

    def bw(g):
        _accumulate(x, g * (xd > 0))

    return _result(out, (x,), bw, "relu")


def _sigmoid(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    s = _sigmoid(x.data)

    def bw(g):
        _accumulate(x, g * s * (1.0 - s))

    return _result(s, (x,), bw, "sigmoid")


def elementwise(kind, x):
    """Apply ``relu`` or ``sigmoid`` by name."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def dense(x, weight, bias):
    """``x @ weight + bias``; a 1-D weight yields one scalar per input row."""
    xd, wd, bd = x.data, weight.data, bias.data
    if xd.shape[-1] != wd.shape[0] or bd.shape != wd.shape[1:]:
        raise ShapeError(f"dense: input {xd.shape}, weight {wd.shape}, bias {bd.shape} do not agree")
    out = xd @ wd + bd

    def bw(g):
        n = xd.shape[-1]
        x2 = xd.reshape(-1, n)
        if wd.ndim == 1:
            _accumulate(x, g[..., None] * wd)
            _accumulate(weight, x2.T @ g.reshape(-1))
            _accumulate(bias, np.asarray(g.sum()))
        else:
            g2 = g.reshape(-1, wd.shape[1])
            _accumulate(x, g @ wd.T)
            _accumulate(weight, x2.T @ g2)
            _accumulate(bias, g2.sum(axis=0))

    return _result(out, (x, weight, bias), bw, "dense")


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: shapes {[d.shape for d in datas]} do not agree") from exc
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(t, part)

    return _result(out, tensors, bw, "concat")


def scale_rows(x, gates):
    """Multiply each row of ``x`` (..., m, D) by its gate in ``gates`` (..., m)."""
    xd, gd = x.data, gates.data
    if xd.shape[:-1] != gd.shape:
        raise ShapeError(f"scale_rows: input {xd.shape} and gates {gd.shape} do not agree")
    out = xd * gd[..., None]

    def bw(g):
        _accumulate(x, g * gd[..., None])
        _accumulate(gates, (g * xd).sum(axis=-1))

    return _result(out, (x, gates), bw, "scale_rows")


def mse(pred, target):
    """Sum of squared errors; ``(pred - target)**2`` for scalars."""
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.data.shape} and target {target.shape} do not agree")
    r = pred.data - target
    out = np.asarray(np.dot(r.ravel(), r.ravel()))

    def bw(g):
        _accumulate(pred, 2.0 * g * r)

    return _result(out, (pred,), bw, "mse")


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not agree")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), bw, "add")


def scale(x, alpha):
    alpha = float(alpha)

    def bw(g):
        _accumulate(x, alpha * g)

    return _result(alpha * x.data, (x,), bw, "scale")


def total(*scalars):
    """Sum of scalar tensors."""
    out = np.asarray(sum(float(s.data) for s in scalars))

    def bw(g):
        for s in scalars:
            _accumulate(s, g.reshape(s.data.shape) * np.ones_like(s.data))

    return _result(out, scalars, bw, "total")


def rowdot(a, b):
    """Inner product over the last axis."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"rowdot: shapes {a.data.shape} and {b.data.shape} do not agree")
    ad, bd = a.data, b.data
    out = np.einsum("...h,...h->...", ad, bd)

    def bw(g):
        _accumulate(a, g[..., None] * bd)
        _accumulate(b, g[..., None] * ad)

    return _result(out, (a, b), bw, "rowdot")


def take_columns(w, idx):
    """Columns ``w[:, idx]`` of an (H, K) matrix, returned as rows (len(idx), H)."""
    idx = np.asarray(idx, dtype=np.int64)
    K = w.data.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise IndexError(f"column index outside [0, {K})")
    out = w.data[:, idx].T

    def bw(g):
        gw = np.zeros_like(w.data)
        np.add.at(gw.T, idx, g)
        _accumulate(w, gw)

    return _result(out, (w,), bw, "take_columns")


def broadcast_rows(v, n):
    """Stack vector ``v`` (H,) ``n`` times into (n, H)."""
    out = np.broadcast_to(v.data, (n,) + v.data.shape).copy()

    def bw(g):
        _accumulate(v, g.sum(axis=0))

    return _result(out, (v,), bw, "broadcast_rows")


def trace_quadratic(w, m):
    """``tr(w @ m @ w.T)`` for a fixed symmetric ``m``; adjoint ``2 w m``."""
    md = np.asarray(m, dtype=np.float64)
    wd = w.data
    if md.shape != (wd.shape[1], wd.shape[1]):
        raise ShapeError(f"trace_quadratic: W {wd.shape} and M {md.shape} do not agree")
    wm = wd @ md
    out = np.asarray(np.einsum("hk,hk->", wm, wd))

    def bw(g):
        _accumulate(w, 2.0 * g * wm)

    return _result(out, (w,), bw, "trace_quadratic")


def sum_squares(x, skip_rows=()):
    """Sum of squared entries, ignoring the listed leading-axis rows."""
    xd = x.data
    mask = np.ones_like(xd)
    if skip_rows:
        mask[list(skip_rows)] = 0.0
    out = np.asarray(np.sum(xd * xd * mask))

    def bw(g):
        _accumulate(x, 2.0 * g * xd * mask)

    return _result(out, (x,), bw, "sum_squares")


# --- optimisation ------------------------------------------------------------


def adagrad_step(params, lr=0.08, eps=1e-8):
    """One AdaGrad update per parameter, then clear the gradients."""
    for p in params:
        g = p.grad
        if p.frozen_rows:
            g[list(p.frozen_rows)] = 0.0
        p.accum += g * g
        p.data -= lr * g / (np.sqrt(p.accum) + eps)
        p.zero_grad()


class AdaGrad:
    def __init__(self, params, lr=0.08, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.eps = eps

    def step(self):
        adagrad_step(self.params, self.lr, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# --- gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    excluded: int
    worst: tuple = None  # (parameter name, flat index)


def _crossed_kink(base, pert, margin):
    for (kind, b), (_, p) in zip(base, pert):
        if kind == "relu":
            if np.any((b > 0) != (p > 0)):
                return True
            near = np.abs(b) <= margin
            if np.any(near & (b != p)):
                return True
        else:
            b_idx, b_top, b_gap = b
            p_idx, p_top, _ = p
            if np.any(b_idx != p_idx):
                return True
            if np.any((b_gap <= margin) & (b_top != p_top)):
                return True
    return False


def grad_check_report(loss_fn, params, eps=1e-5, margin=1e-6, floor=1e-6):
    """Compare tape gradients with central differences for every coordinate.

    ``loss_fn()`` must build a scalar loss from ``params`` on the active
    tape. A coordinate is skipped when perturbing it by ``eps`` changes a
    relu activation pattern or a max-pool arg-max, or moves an input that
    sits within ``margin`` of such a kink. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape(track_kinks=True) as tape:
        loss = loss_fn()
    base_kinks = tape.kinks
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    def evaluate():
        with Tape(track_kinks=True) as t:
            v = float(loss_fn().data)
        return v, t.kinks

    worst = 0.0
    worst_at = None
    checked = excluded = 0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        frozen = set()
        if p.frozen_rows:
            row = int(np.prod(p.data.shape[1:]))
            for r in p.frozen_rows:
                frozen.update(range(r * row, (r + 1) * row))
        for i in range(flat.size):
            if i in frozen:
                continue
            orig = flat[i]
            flat[i] = orig + eps
            fp, kp = evaluate()
            flat[i] = orig - eps
            fm, km = evaluate()
            flat[i] = orig
            if _crossed_kink(base_kinks, kp, margin) or _crossed_kink(base_kinks, km, margin):
                excluded += 1
                continue
            num = (fp - fm) / (2.0 * eps)
            an = a.reshape(-1)[i]
            rel = abs(an - num) / max(abs(an), abs(num), floor)
            checked += 1
            if rel > worst:
                worst = rel
                worst_at = (p.name, i)
    return GradCheckReport(worst, checked, excluded, worst_at)


def grad_check(loss_fn, params, eps=1e-5, margin=1e-6, floor=1e-6):
    """Worst relative error between tape and central-difference gradients."""
    return grad_check_report(loss_fn, params, eps, margin, floor).max_rel_error
