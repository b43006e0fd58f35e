"""Dense float tensors with reverse-mode automatic differentiation.

Deliberately minimal: only the operations the two-view pipeline needs,
each with a hand-written backward rule.  Data lives in numpy arrays
(float64 by default, float32 possible for training); the graph is a
plain DAG of Tensor nodes with per-node VJP closures, walked in
reverse topological order by ``backward``.

Gradients accumulate: ``grad`` buffers are only ever zeroed by the
optimizer (or explicitly), so calling ``backward`` twice sums the two
contributions.  That behaviour is load-bearing for the shared-weight
tests.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "no_grad",
    "set_debug_checks",
    "tensor",
    "constant",
    "add",
    "multiply",
    "matmul",
    "linear",
    "conv2d",
    "max_pool2x2",
    "global_avg_pool",
    "relu",
    "softmax",
    "log",
    "exp",
    "concat",
    "split",
    "reshape",
    "transpose",
    "l2_normalize",
    "tsum",
    "tmean",
    "logsumexp",
    "scaled_dot_product_attention",
    "softmax_cross_entropy",
]

_grad_enabled = True
_debug_checks = False


class ShapeError(ValueError):
    """Raised when operand shapes do not conform; records op and shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {self.shapes}")


class no_grad:
    """Context manager that disables graph recording (forward-only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def set_debug_checks(flag: bool) -> None:
    """Enable per-op finiteness assertions (debug mode)."""
    global _debug_checks
    _debug_checks = bool(flag)


class Tensor:
    """N-d float array plus optional gradient buffer and graph linkage."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._prev: tuple = ()
        self._vjp = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    # -- autodiff ----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable grad buffer.

        ``self`` must hold exactly one element.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        if self.grad is None:
            self.grad = np.ones_like(self.data)
        else:
            self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    def __radd__(self, other):
        return add(_coerce(other, self.dtype), self)

    def __sub__(self, other):
        other = _coerce(other, self.dtype)
        return add(self, multiply(other, constant(-1.0, dtype=other.dtype)))

    def __rsub__(self, other):
        return _coerce(other, self.dtype).__sub__(self)

    def __neg__(self):
        return multiply(self, constant(-1.0, dtype=self.dtype))

    def __mul__(self, other):
        return multiply(self, _coerce(other, self.dtype))

    def __rmul__(self, other):
        return multiply(_coerce(other, self.dtype), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division not supported; multiply by a reciprocal constant")
        return multiply(self, constant(1.0 / float(other), dtype=self.dtype))

    def __matmul__(self, other):
        return matmul(self, _coerce(other, self.dtype))


class Parameter(Tensor):
    """A named trainable tensor; names must be unique within a model."""

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return constant(np.asarray(x, dtype=dtype))


def _from_op(op: str, data: np.ndarray, parents: tuple, vjp) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: non-finite values in forward output")
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data)
    if needs:
        # lazy grad buffer: allocated on first accumulation during backward
        out.requires_grad = True
        out.grad = None
        out._prev = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.array(g)  # private copy: g may be shared or a view
        else:
            t.grad += g


# -- elementwise / linear ops ------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def vjp(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _from_op("add", data, (a, b), vjp)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("multiply", a.shape, b.shape) from None

    def vjp(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op("multiply", data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dims broadcast (used for batched attention)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _from_op("matmul", data, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b with the bias folded into one graph node; x may carry
    leading batch axes."""
    if x.ndim < 1 or w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError("linear", x.shape, w.shape)
    data = np.matmul(x.data, w.data)
    if b is not None:
        data = data + b.data
    parents = (x, w) if b is None else (x, w, b)
    lead = tuple(range(x.ndim - 1))

    def vjp(g):
        if b is not None:
            _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))
        if w.requires_grad:
            _accum(w, np.tensordot(x.data, g, axes=(lead, lead)))
        if x.requires_grad:
            _accum(x, np.matmul(g, w.data.T))

    return _from_op("linear", data, parents, vjp)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def vjp(g):
        _accum(x, g * (x.data > 0))

    return _from_op("relu", data, (x,), vjp)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def vjp(g):
        _accum(x, g / x.data)

    return _from_op("log", data, (x,), vjp)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def vjp(g):
        _accum(x, g * data)

    return _from_op("exp", data, (x,), vjp)


# -- reductions ---------------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(x, np.broadcast_to(gg, x.data.shape).copy())

    return _from_op("sum", data, (x,), vjp)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def softmax(x: Tensor, axis: int) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accum(x, data * (g - inner))

    return _from_op("softmax", data, (x,), vjp)


def logsumexp(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Numerically stable log-sum-exp (max-subtraction form).

    Equals the naive form exactly in value; no overflow for |x| up to ~1e4,
    which the contrastive loss needs at temperature 0.01.
    """
    m = x.data.max(axis=axis, keepdims=True)
    data = np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True)) + m
    soft = np.exp(x.data - data)  # softmax along axis
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(x, gg * soft)

    return _from_op("logsumexp", data, (x,), vjp)


# -- shape ops ----------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None

    def vjp(g):
        _accum(x, g.reshape(x.data.shape))

    return _from_op("reshape", data, (x,), vjp)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def vjp(g):
        _accum(x, np.transpose(g, inv))

    return _from_op("transpose", data, (x,), vjp)


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[p.shape for p in parts]) from None
    sizes = [p.data.shape[axis] for p in parts]

    def vjp(g):
        offset = 0
        for p, s in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + s)
            _accum(p, g[tuple(sl)])
            offset += s

    return _from_op("concat", data, tuple(parts), vjp)


def split(x: Tensor, sizes, axis: int) -> list[Tensor]:
    """Inverse of concat: slices of the given sizes along ``axis``."""
    sizes = list(sizes)
    if sum(sizes) != x.data.shape[axis]:
        raise ShapeError("split", x.shape, (sum(sizes),))
    outs = []
    offset = 0
    for s in sizes:
        sl = [slice(None)] * x.data.ndim
        sl[axis] = slice(offset, offset + s)
        sl = tuple(sl)
        data = x.data[sl].copy()

        def vjp(g, _sl=sl):
            full = np.zeros_like(x.data)
            full[_sl] = g
            _accum(x, full)

        outs.append(_from_op("split", data, (x,), vjp))
        offset += s
    return outs


# -- normalization ------------------------------------------------------------


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale slices along ``axis`` to unit L2 norm.

    Near-zero slices (norm < eps) become exactly zero and are flagged on
    the output as ``zero_rows`` so callers can reject degenerate features
    instead of silently propagating NaN.
    """
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    degenerate = norm < eps
    safe = np.where(degenerate, 1.0, norm)
    data = np.where(degenerate, 0.0, x.data / safe)

    def vjp(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        gx = (g - data * inner) / safe
        _accum(x, np.where(degenerate, 0.0, gx))

    out = _from_op("l2_normalize", data, (x,), vjp)
    out.zero_rows = np.squeeze(degenerate, axis=axis)
    return out


# -- spatial ops ---------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, c, _, _ = xp.shape
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation), NCHW layout."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    bs, cin, h, width = x.data.shape
    cout, _, kh, kw = w.data.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (width + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", x.shape, w.shape)
    if padding > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)  # (B, C*kh*kw, L)
    wf = w.data.reshape(cout, -1)
    out = np.matmul(wf, cols).reshape(bs, cout, ho, wo)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gf = g.reshape(bs, cout, ho * wo)
        if b is not None:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            gw = np.tensordot(gf, cols, axes=([0, 2], [0, 2])).reshape(w.data.shape)
            _accum(w, gw)
        if x.requires_grad:
            dcols = np.matmul(wf.T, gf)  # (B, C*kh*kw, L)
            dcols = dcols.reshape(bs, cin, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
            if padding > 0:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            _accum(x, dxp)

    return _from_op("conv2d", out, parents, vjp)


def max_pool2x2(x: Tensor) -> Tensor:
    """2x2 stride-2 max pooling; ties route gradient to the first maximal
    element in row-major window order."""
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError("max_pool2x2", x.shape)
    bs, c, h, w = x.data.shape
    win = (
        x.data.reshape(bs, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(bs, c, h // 2, w // 2, 4)
    )
    idx = win.argmax(axis=-1)  # argmax picks the first max: row-major tie-break
    data = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = (
            gwin.reshape(bs, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(bs, c, h, w)
        )
        _accum(x, gx)

    return _from_op("max_pool2x2", data, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C) spatial mean."""
    if x.ndim != 4:
        raise ShapeError("global_avg_pool", x.shape)
    bs, c, h, w = x.data.shape
    data = x.data.mean(axis=(2, 3))

    def vjp(g):
        _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy())

    return _from_op("global_avg_pool", data, (x,), vjp)


# -- composites ----------------------------------------------------------------


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes; leading axes batch."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError("attention", q.shape, k.shape)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = matmul(q, transpose(k, (*range(k.ndim - 2), k.ndim - 1, k.ndim - 2))) * scale
    return matmul(softmax(scores, axis=-1), v)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    lse = logsumexp(logits, axis=1)
    picked = tsum(multiply(logits, constant(onehot)), axis=1)
    return tmean(add(lse, multiply(picked, constant(-1.0, dtype=logits.dtype))))
