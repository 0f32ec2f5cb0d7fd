"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: each op computes its forward value immediately and, when
any input requires gradients, records a TapeNode holding the inputs and
a backward closure. backward(loss) topologically orders the nodes
reachable from the loss, sweeps them in reverse, accumulates into leaf
.grad buffers, and consumes the tape.

Broadcasting is restricted to leading batch dimensions: two operands
must have equal shapes or one shape must be a trailing suffix of the
other (a scalar counts as the empty suffix). Anything else needs an
explicit reshape. Gradients are sum-reduced over the broadcast leading
axes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_GRAD_ENABLED = True


class no_grad:
    """Context manager that suppresses tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class ShapeMismatch(ValueError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, shapes))}")


class NotScalar(ValueError):
    def __init__(self, shape):
        super().__init__(f"backward needs a scalar loss, got shape {shape}")


class TapeNode:
    """One recorded op: parent tensors and a closure mapping the output
    gradient to per-parent gradients (None for non-differentiable slots)."""

    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents, backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, no history; gradients stop here."""
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; constants are wrapped as grad-free tensors
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, p):
        return pow_const(self, p)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def _from_op(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(tuple(parents), backward_fn)
    return out


def _suffix_ok(sa, sb) -> bool:
    shorter, longer = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    return longer[len(longer) - len(shorter) :] == shorter


def _check_elementwise(op: str, a: Tensor, b: Tensor):
    if not _suffix_ok(a.shape, b.shape):
        raise ShapeMismatch(op, a.shape, b.shape)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


class Tape:
    """Topologically ordered record of the ops reachable from a root;
    every node's parents appear before the node itself."""

    def __init__(self, root: Tensor):
        self.order: list[Tensor] = []
        seen = set()
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.order.append(t)
                continue
            if id(t) in seen or t.node is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t.node.parents:
                stack.append((p, False))


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf under loss; the tape is
    consumed. A constant scalar (no recorded history) is a no-op."""
    if loss.data.shape != ():
        raise NotScalar(loss.data.shape)
    if loss.node is None:
        if loss.requires_grad:  # bare leaf used directly as the loss
            g = np.ones(())
            loss.grad = g if loss.grad is None else loss.grad + g
        return
    tape = Tape(loss)
    grads = {id(loss): np.ones(())}
    for t in reversed(tape.order):
        g = grads.pop(id(t), None)
        node = t.node
        t.node = None
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node is None:
                parent.grad = pg if parent.grad is None else parent.grad + pg
            else:
                held = grads.get(id(parent))
                grads[id(parent)] = pg if held is None else held + pg


# ---------------------------------------------------------------- ops


def add(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("add", a, b)
    return _from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("sub", a, b)
    return _from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _from_op(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("mul", a, b)
    return _from_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_elementwise("div", a, b)
    return _from_op(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def pow_const(a: Tensor, p) -> Tensor:
    p = float(p)
    return _from_op(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _from_op(out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    return _from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def xlogx(a: Tensor) -> Tensor:
    """x*ln(x) with the 0*ln(0)=0 convention (and zero gradient there)."""
    pos = a.data > 0
    safe = np.where(pos, a.data, 1.0)
    out = np.where(pos, a.data * np.log(safe), 0.0)
    return _from_op(out, (a,), lambda g: (g * np.where(pos, np.log(safe) + 1.0, 0.0),))


def clip01(a: Tensor) -> Tensor:
    """Clamp to [0, 1]; the gradient passes through on the closed interval
    so values pinned exactly at a bound keep learning."""
    keep = (a.data >= 0.0) & (a.data <= 1.0)
    return _from_op(np.clip(a.data, 0.0, 1.0), (a,), lambda g: (g * keep,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    if len(sa) < 2 or len(sb) < 2 or sa[-1] != sb[-2]:
        raise ShapeMismatch("matmul", sa, sb)
    if len(sb) == 2 and len(sa) > 2:
        # linear map applied over the last axis of a batched input
        def back(g):
            k, m = sb
            ga = g @ b.data.swapaxes(-1, -2)
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
            return ga, gb

        return _from_op(a.data @ b.data, (a, b), back)
    if sa[:-2] != sb[:-2]:
        raise ShapeMismatch("matmul", sa, sb)

    def back(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return ga, gb

    return _from_op(a.data @ b.data, (a, b), back)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    return _from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(ax) for ax in axes)
    inverse = tuple(np.argsort(axes))
    return _from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def back(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _from_op(a.data[index].copy(), (a,), back)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Index axis 0 with an integer array; output shape idx.shape + a.shape[1:].
    Duplicate indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        ga = np.zeros(a.shape)
        np.add.at(ga, idx.reshape(-1), g.reshape((-1,) + a.shape[1:]))
        return (ga,)

    return _from_op(a.data[idx], (a,), back)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of an (N, d) table selected by integer ids (any shape)."""
    if table.ndim != 2:
        raise ShapeMismatch("embedding_lookup", table.shape)
    return gather_rows(table, ids)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)

    def back(g):
        if axes is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(ge, a.shape).copy(),)

    return _from_op(a.data.sum(axis=axes, keepdims=keepdims), (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    if axes is None:
        count = a.data.size
    else:
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def back(g):
        if axes is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(ge / count, a.shape).copy(),)

    return _from_op(a.data.mean(axis=axes, keepdims=keepdims), (a,), back)


def _norm_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (max-shifted for stability)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - inner),)

    return _from_op(out_data, (a,), back)


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse

    def back(g):
        return (g - np.exp(out_data) * g.sum(axis=-1, keepdims=True),)

    return _from_op(out_data, (a,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (population),
    then scale and shift. gain/bias have the last-axis shape."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def back(g):
        gx_hat = g * gain.data
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gx_hat - m1 - xhat * m2)
        reduce_axes = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=reduce_axes)
        gbias = g.sum(axis=reduce_axes)
        return gx, ggain, gbias

    return _from_op(xhat * gain.data + bias.data, (x, gain, bias), back)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact error-function form: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def back(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _from_op(x.data * cdf, (x,), back)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements."""
    pred, target = _wrap(pred), _wrap(target)
    if pred.shape != target.shape:
        raise ShapeMismatch("mse", pred.shape, target.shape)
    diff = pred.data - target.data
    scale = 2.0 / max(diff.size, 1)

    def back(g):
        gd = g * scale * diff
        return gd, -gd

    return _from_op(np.mean(diff * diff) if diff.size else np.float64(0.0), (pred, target), back)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax.
    logits: (n, K); labels: (n,) ints."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch("cross_entropy", logits.shape, labels.shape)
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse

    def back(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        return (g * grad / n,)

    return _from_op(-logp[np.arange(n), labels].mean(), (logits,), back)


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between backward() gradients and central finite
    differences of the scalar function f at x. Denominator is
    max(|analytic|, |numeric|, 1e-8) per element."""
    x.data = np.ascontiguousarray(x.data)  # the loop below writes through a flat view
    x.grad = None
    backward(f(x))
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(x).data)
            flat[i] = orig - eps
            lo = float(f(x).data)
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max()) if flat.size else 0.0
