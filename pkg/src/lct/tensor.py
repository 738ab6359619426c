"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 array (float32 is kept if supplied, so training can
trade precision for speed) together with an optional gradient accumulator and
a frozenset of provenance tags.  Ops record backward closures on their output;
Tensor.backward() replays them in reverse topological order.  Tags propagate
through every op regardless of gradient mode, so a test can prove which input
data ever reached an optimizer update.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import ConfigError, NumericError

_EMPTY_SOURCES: frozenset = frozenset()
_grad_enabled = True


class no_grad:
    """Context manager that suspends graph construction (inference fast path)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == np.float32:
        return arr
    if arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "sources", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, sources: frozenset = _EMPTY_SOURCES):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.sources = sources
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad})")

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad over the recorded graph.

        self must be scalar.  Topological order is built iteratively so deep
        encoder stacks cannot hit the recursion limit.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar tensor, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, children_done = stack.pop()
            if children_done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # --- operator sugar -------------------------------------------------
    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return sub(self._coerce(other), self)

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self._coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, self._coerce(other))

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _merged_sources(parents) -> frozenset:
    out = _EMPTY_SOURCES
    for p in parents:
        if p.sources:
            out = out | p.sources if out else p.sources
    return out


def _node(data, parents: tuple, backward) -> Tensor:
    """Wrap an op result; record the closure only when the graph is live."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, sources=_merged_sources(parents))
    if track:
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


# --- elementwise arithmetic ----------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def neg(x) -> Tensor:
    x = _t(x)

    def backward(g):
        _accum(x, -g)

    return _node(-x.data, (x,), backward)


# --- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes; leading axes broadcast."""
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _node(data, (a, b), backward)


# --- shape manipulation ----------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _t(x)
    orig = x.data.shape
    data = x.data.reshape(shape)

    def backward(g):
        _accum(x, g.reshape(orig))

    return _node(data, (x,), backward)


def transpose(x, axes) -> Tensor:
    x = _t(x)
    axes = tuple(axes)
    data = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accum(x, np.transpose(g, inverse))

    return _node(data, (x,), backward)


def getitem(x, key) -> Tensor:
    """Basic slicing/indexing; gradient scatters back into the sliced region."""
    x = _t(x)
    data = x.data[key].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[key] = g
        _accum(x, full)

    return _node(data, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_t(t) for t in tensors]
    if not ts:
        raise ValueError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(lo), int(hi))
            _accum(t, g[tuple(index)])

    return _node(data, tuple(ts), backward)


def broadcast_to(x, shape) -> Tensor:
    x = _t(x)
    data = np.broadcast_to(x.data, shape).copy()

    def backward(g):
        _accum(x, _unbroadcast(g, x.data.shape))

    return _node(data, (x,), backward)


# --- reductions -------------------------------------------------------------

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(gg, x.data.shape).copy())

    return _node(data, (x,), backward)


def mean_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else int(np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]))

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(gg, x.data.shape) / count)

    return _node(data, (x,), backward)


# --- nonlinearities ----------------------------------------------------------

def relu(x) -> Tensor:
    x = _t(x)
    data = np.maximum(x.data, 0.0)

    def backward(g):
        _accum(x, g * (x.data > 0.0))

    return _node(data, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along one axis (max is subtracted first)."""
    x = _t(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} out of range for shape {x.shape}")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    data = exp / exp.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accum(x, data * (g - inner))

    return _node(data, (x,), backward)


def dropout(x, rate: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: kept entries scale by 1/(1-rate); identity when not training."""
    x = _t(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    mask = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    mask /= x.data.dtype.type(1.0 - rate)
    data = x.data * mask

    def backward(g):
        _accum(x, g * mask)

    return _node(data, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} "
                         f"do not match feature width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        _accum(gamma, (g * xhat).sum(axis=lead))
        _accum(beta, g.sum(axis=lead))
        gx = g * gamma.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (gx - m1 - xhat * m2))

    return _node(data, (x, gamma, beta), backward)


def dense(x, w, b=None) -> Tensor:
    """Affine map on the last axis: x @ w (+ b)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


# --- convolution and pooling -------------------------------------------------

def conv2d_valid(x, filters) -> Tensor:
    """2-D cross-correlation with valid padding and stride 1.

    x: [H, W, C_in] or [B, H, W, C_in]; filters: [kh, kw, C_in, C_out].
    Lowered to one GEMM over an im2col matrix, which is kept for the filter
    gradient so a single BLAS core does all the heavy work.
    """
    x, filters = _t(x), _t(filters)
    if filters.ndim != 4:
        raise ValueError(f"filters must be [kh, kw, C_in, C_out], got {filters.shape}")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"input must be 3-D or 4-D, got {x.shape}")
    b, h, w, c_in = xd.shape
    kh, kw, fc_in, c_out = filters.data.shape
    if fc_in != c_in:
        raise ValueError(f"filter expects {fc_in} input channels, input has {c_in}")
    if h < kh or w < kw:
        raise ValueError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
    ho, wo = h - kh + 1, w - kw + 1
    width = kh * kw * c_in
    cols = np.empty((b, ho, wo, width), dtype=xd.dtype)
    for dh in range(kh):
        for dw in range(kw):
            lane = (dh * kw + dw) * c_in
            cols[..., lane:lane + c_in] = xd[:, dh:dh + ho, dw:dw + wo, :]
    cols = cols.reshape(-1, width)
    # [kh, kw, C_in, C_out] flattens row-major to exactly the im2col lane order
    w_flat = filters.data.reshape(width, c_out)
    data = (cols @ w_flat).reshape(b, ho, wo, c_out)
    if squeeze:
        data = data[0]

    def backward(g):
        gflat = (g[None] if squeeze else g).reshape(-1, c_out)
        if filters.requires_grad:
            _accum(filters, (cols.T @ gflat).reshape(kh, kw, c_in, c_out))
        if x.requires_grad:
            gcols = (gflat @ w_flat.T).reshape(b, ho, wo, width)
            gx = np.zeros_like(xd)
            for dh in range(kh):
                for dw in range(kw):
                    lane = (dh * kw + dw) * c_in
                    gx[:, dh:dh + ho, dw:dw + wo, :] += gcols[..., lane:lane + c_in]
            _accum(x, gx[0] if squeeze else gx)

    return _node(data, (x, filters), backward)


def maxpool_same(x, kernel: tuple[int, int] = (3, 3), stride: tuple[int, int] = (2, 2)) -> Tensor:
    """Max pooling with 'same' padding: output extent is ceil(input / stride).

    Padding uses a -inf sentinel and lands on the bottom/right when the total
    is odd.  Ties route the gradient to the first maximum in row-major window
    order (strictly-greater comparisons keep the earliest winner).
    """
    x = _t(x)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"input must be 3-D or 4-D, got {x.shape}")
    b, h, w, c = xd.shape
    kh, kw = kernel
    sh, sw = stride
    oh, ow = -(-h // sh), -(-w // sw)
    pad_h = max((oh - 1) * sh + kh - h, 0)
    pad_w = max((ow - 1) * sw + kw - w, 0)
    top, left = pad_h // 2, pad_w // 2
    padded = np.full((b, h + pad_h, w + pad_w, c), -np.inf, dtype=xd.dtype)
    padded[:, top:top + h, left:left + w, :] = xd

    best = None
    for dh in range(kh):
        for dw in range(kw):
            cand = padded[:, dh:dh + oh * sh:sh, dw:dw + ow * sw:sw, :]
            if best is None:
                best = cand.copy()
            else:
                np.maximum(best, cand, out=best)
    data = best[0] if squeeze else best

    def backward(g):
        # First-winner masks are rebuilt here instead of stored at forward
        # time; plain ufuncs beat masked copyto by an order of magnitude.
        gb = g[None] if squeeze else g
        gpad = np.zeros_like(padded)
        unclaimed = np.ones(best.shape, dtype=xd.dtype)
        win = np.empty(best.shape, dtype=xd.dtype)
        last = kh * kw - 1
        k = 0
        for dh in range(kh):
            for dw in range(kw):
                cand = padded[:, dh:dh + oh * sh:sh, dw:dw + ow * sw:sw, :]
                np.equal(cand, best, out=win)
                np.multiply(win, unclaimed, out=win)
                if k < last:
                    unclaimed -= win
                np.multiply(win, gb, out=win)
                gpad[:, dh:dh + oh * sh:sh, dw:dw + ow * sw:sw, :] += win
                k += 1
        gx = gpad[:, top:top + h, left:left + w, :]
        _accum(x, gx[0] if squeeze else gx)

    return _node(data, (x,), backward)


# --- losses --------------------------------------------------------------------

def cross_entropy_loss(logits, labels) -> Tensor:
    """Mean softmax cross-entropy; labels are integer class indices."""
    logits = _t(logits)
    y = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"logits must be [batch, classes], got {logits.shape}")
    b, c = logits.shape
    if y.shape != (b,):
        raise ValueError(f"labels shape {y.shape} does not match batch {b}")
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range [{y.min()}, {y.max()}]")
    if not np.isfinite(logits.data).all():
        raise NumericError("cross_entropy_loss received non-finite logits")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(b)
    data = np.asarray(-log_p[rows, y].mean())
    probs = np.exp(log_p)

    def backward(g):
        gl = probs.copy()
        gl[rows, y] -= 1.0
        _accum(logits, gl * (g / b))

    return _node(data, (logits,), backward)


def sqrt_scale(x, d: int) -> Tensor:
    """x / sqrt(d) with the divisor folded in as a constant multiply."""
    x = _t(x)
    factor = x.data.dtype.type(1.0 / math.sqrt(d))
    data = x.data * factor

    def backward(g):
        _accum(x, g * factor)

    return _node(data, (x,), backward)
