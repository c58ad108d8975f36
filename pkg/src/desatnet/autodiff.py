"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a float64 ndarray plus an
optional backward closure, ops build the graph eagerly, and ``backward`` runs
one reverse sweep over an iterative topological order. numpy supplies storage
and BLAS contractions; every vector-Jacobian product here is hand written.

Conventions that the rest of the package relies on:

- all data is float64; integer/bool inputs are coerced on construction
- gradient accumulation never mutates arrays in place (``p.grad = p.grad + g``),
  so VJPs may safely return views
- the graph is freed node by node during the backward sweep; a loss can only
  be backpropagated once
- ``relu`` uses a strict ``x > 0`` mask, so the derivative at exactly 0 is 0
- ``softmax`` and ``log_sum_exp`` subtract the running max before
  exponentiating and are safe for inputs around +-1e3 and for tied maxima
- ``binary_cross_entropy`` clamps probabilities to [1e-7, 1 - 1e-7] and its
  gradient is zero outside the clamp range (the clamp is a real function of
  the input, not a cosmetic fix)
"""

from __future__ import annotations

import contextlib

import numpy as np

BCE_EPS = 1e-7


class ShapeError(ValueError):
    """Operand shapes violate an op contract."""


class GraphError(RuntimeError):
    """Backward called on an unsuitable node or an already-consumed graph."""


_grad_enabled = True
_debug_checks = False


def set_debug_checks(on: bool) -> None:
    """Toggle NaN/Inf assertions on every op output (slow; for debugging)."""
    global _debug_checks
    _debug_checks = bool(on)


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Context manager that disables graph construction."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array, optionally tracking how it was computed."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp = None
        self._consumed = False

    # -- introspection ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    """Build an op result, attaching the graph only when it can matter."""
    if _debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by an op")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- backward sweep ----------------------------------------------------------


def _topo_order(root: Tensor) -> list:
    order: list = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, leaves=()) -> None:
    """Reverse sweep from a scalar loss.

    Gradients accumulate into ``.grad`` of every tensor with
    ``requires_grad``. Tensors listed in ``leaves`` that did not participate
    in the graph get explicit zero gradients instead of None. The graph is
    freed as the sweep proceeds, so a second call on the same loss raises.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar, got shape {loss.data.shape}")
    if loss._consumed:
        raise GraphError("backward already ran on this graph")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad; nothing to differentiate")
    loss._consumed = True

    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None:
            continue
        g = node.grad
        if g is None:
            continue
        parent_grads = node._vjp(g)
        for p, gp in zip(node._parents, parent_grads):
            if gp is None or not p.requires_grad:
                continue
            if _debug_checks and not np.all(np.isfinite(gp)):
                raise FloatingPointError("non-finite gradient")
            p.grad = gp if p.grad is None else p.grad + gp
        node._parents = ()
        node._vjp = None
        if node is not loss:
            node.grad = None

    for t in leaves:
        if t.requires_grad and t.grad is None:
            t.grad = np.zeros_like(t.data)


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _make(out, (a, b), vjp)


def sqrt(x) -> Tensor:
    x = _wrap(x)
    out = np.sqrt(x.data)

    def vjp(g):
        return (g / (2.0 * out),)

    return _make(out, (x,), vjp)


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def vjp(g):
        return (g * mask,)

    return _make(out, (x,), vjp)


# -- shape manipulation -------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    orig = x.data.shape
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(orig),)

    return _make(out, (x,), vjp)


def transpose(x, axes=None) -> Tensor:
    x = _wrap(x)
    out = np.transpose(x.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inv),)

    return _make(out, (x,), vjp)


def getitem(x, key) -> Tensor:
    """Basic (slice/int) indexing. Use take_* ops for array indices."""
    x = _wrap(x)
    keys = key if isinstance(key, tuple) else (key,)
    for k in keys:
        if isinstance(k, (np.ndarray, list, Tensor)):
            raise ShapeError("advanced indexing is not supported; use take_rows/take_along/take_flat")
    out = x.data[key]
    shape = x.data.shape

    def vjp(g):
        gx = np.zeros(shape)
        gx[key] = g
        return (gx,)

    return _make(out, (x,), vjp)


def tile_steps(x, n: int) -> Tensor:
    """Repeat ``x`` along a new trailing axis: (..., F) -> (..., F, n)."""
    x = _wrap(x)
    if n < 1:
        raise ShapeError("tile_steps needs n >= 1")
    out = np.repeat(x.data[..., None], n, axis=-1)

    def vjp(g):
        return (g.sum(axis=-1),)

    return _make(out, (x,), vjp)


# -- gathers ------------------------------------------------------------------


def take_rows(x, idx) -> Tensor:
    """Select rows along axis 0; repeated indices accumulate gradient."""
    x = _wrap(x)
    idx = np.asarray(idx, dtype=np.intp)
    out = x.data[idx]
    shape = x.data.shape

    def vjp(g):
        gx = np.zeros(shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, (x,), vjp)


def take_along(x, idx, axis: int) -> Tensor:
    """``np.take_along_axis`` with gradient accumulation on repeats."""
    x = _wrap(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != x.data.ndim:
        raise ShapeError("take_along index must have the same ndim as the input")
    out = np.take_along_axis(x.data, idx, axis=axis)
    shape = x.data.shape
    ax = axis % x.data.ndim

    def vjp(g):
        gx = np.zeros(shape)
        grids = []
        for d in range(idx.ndim):
            if d == ax:
                grids.append(idx)
            else:
                r = np.arange(idx.shape[d])
                grids.append(r.reshape([-1 if k == d else 1 for k in range(idx.ndim)]))
        np.add.at(gx, tuple(grids), g)
        return (gx,)

    return _make(out, (x,), vjp)


def take_flat(x, idx) -> Tensor:
    """Gather by flat (raveled) index; output has the index's shape."""
    x = _wrap(x)
    idx = np.asarray(idx, dtype=np.intp)
    out = np.take(x.data, idx)
    shape = x.data.shape
    size = x.data.size

    def vjp(g):
        flat = np.bincount(idx.ravel(), weights=g.ravel(), minlength=size)
        return (flat.reshape(shape),)

    return _make(out, (x,), vjp)


# -- reductions ---------------------------------------------------------------


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _make(out, (x,), vjp)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for a in axes:
            count *= x.data.shape[a]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -- contractions -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting on leading axes."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def swap(m):
        return np.swapaxes(m, -1, -2)

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, swap(b.data)), a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(swap(a.data), g), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), vjp)


def conv1d_causal(x, weight, bias=None, dilation: int = 1) -> Tensor:
    """Dilated causal 1-D convolution.

    ``x`` is (B, C, T) or (C, T), ``weight`` is (F, C, K), ``bias`` (F,).
    Output step t sees inputs at t, t-d, ..., t-(K-1)d; earlier-than-start
    taps read zeros, so the output has the same length T and never looks
    ahead.
    """
    if not isinstance(dilation, int) or dilation < 1:
        raise ShapeError(f"dilation must be a positive int, got {dilation!r}")
    x, weight = _wrap(x), _wrap(weight)
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError("conv1d_causal needs x (B,C,T) and weight (F,C,K)")
    B, C, T = xd.shape
    F, Cw, K = weight.data.shape
    if C != Cw:
        raise ShapeError(f"channel mismatch: x has {C}, weight expects {Cw}")
    pad = (K - 1) * dilation
    xp = np.zeros((B, C, T + pad))
    xp[:, :, pad:] = xd
    # windows[b, c, t, k] == x[b, c, t + k*d - pad] with zero fill
    win = np.lib.stride_tricks.sliding_window_view(xp, pad + 1, axis=2)[..., ::dilation]
    out = np.einsum("fck,bctk->bft", weight.data, win, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.data.shape != (F,):
            raise ShapeError(f"bias must be ({F},), got {bias.data.shape}")
        out = out + bias.data[:, None]
        parents.append(bias)

    def vjp(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros((B, C, T + pad))
            for k in range(K):
                off = k * dilation
                gxp[:, :, off:off + T] += np.einsum(
                    "fc,bft->bct", weight.data[:, :, k], g, optimize=True)
            gx = gxp[:, :, pad:]
            if squeeze:
                gx = gx[0]
        gw = np.einsum("bft,bctk->fck", g, win, optimize=True) if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    if squeeze:
        out = out[0]
    return _make(out, tuple(parents), vjp)


# -- nonlinear reductions -----------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (x,), vjp)


def log_sum_exp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    m = x.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    out = lse if keepdims else np.squeeze(lse, axis=axis)

    def vjp(g):
        soft = np.exp(x.data - lse)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (soft * g,)

    return _make(out, (x,), vjp)


# -- losses -------------------------------------------------------------------


def binary_cross_entropy(pred, target) -> Tensor:
    """Elementwise cross-entropy between probabilities in [0, 1].

    Predictions are clamped to [BCE_EPS, 1 - BCE_EPS] before the logs; the
    gradient is exactly zero where the clamp is active. ``target`` is treated
    as a constant and must not require grad.
    """
    pred, target = _wrap(pred), _wrap(target)
    if target.requires_grad:
        raise GraphError("binary_cross_entropy target must be constant")
    t = target.data
    pc = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    out = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
    inside = (pred.data > BCE_EPS) & (pred.data < 1.0 - BCE_EPS)

    def vjp(g):
        gp = g * inside * (-t / pc + (1.0 - t) / (1.0 - pc))
        return (_unbroadcast(gp, pred.data.shape), None)

    return _make(out, (pred, target), vjp)


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over all elements (scalar)."""
    pred, target = _wrap(pred), _wrap(target)
    if target.requires_grad:
        raise GraphError("mse_loss target must be constant")
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = max(pred.data.size, 1)
    out = np.asarray((diff * diff).sum() / n)

    def vjp(g):
        return (g * 2.0 * diff / n, None)

    return _make(out, (pred, target), vjp)
