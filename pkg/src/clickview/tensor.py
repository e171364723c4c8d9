"""Dense float64 tensors with reverse-mode automatic differentiation.

Covers exactly the operators the viewpoint network needs: conv2d, max
pooling, linear maps, relu, (log-)softmax, concatenation, the weighted
column sum used by the attention head, plus the elementwise/reduction
glue required to assemble a scalar loss. Every op also accepts a leading
batch axis so a whole training batch runs as one graph.

The graph is dynamic: each op records its parents and a backward closure,
and ``backward()`` replays the closures in reverse topological order.
Graphs are per-forward-pass and garbage-collected with the loss tensor.
"""

from __future__ import annotations

import itertools

import numpy as np

# Finite checks on every forward/backward output. NaN/Inf anywhere is a
# hard error; disable only for profiling.
CHECK_FINITE = True

_node_counter = itertools.count()


class NonFiniteError(ValueError):
    """Raised when a forward or backward pass produces NaN or Inf."""


def _check_finite(arr: np.ndarray, where: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {where}")


class Tensor:
    """A dense float64 array, optionally tracked for differentiation.

    ``grad`` is allocated lazily on the first backward pass and has the
    same shape as ``data``. Repeated backward passes accumulate into the
    grads of leaf tensors until ``zero_grad`` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_counter)
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Only valid on a scalar that is attached to a recorded graph.
        Interior-node grads are reset at the start of each call, so
        calling backward twice accumulates exactly twice into leaves.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        if self._bwd is None and not self.requires_grad:
            raise ValueError("backward on a tensor detached from any graph")

        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        for node in topo:
            if node._bwd is not None:  # interior node: clear stale grad
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)
        if CHECK_FINITE:
            for node in topo:
                if node.requires_grad and node.grad is not None:
                    _check_finite(node.grad, "backward pass")

    # -- operator sugar used by loss assembly ---------------------------

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return sum_all(self)

    def reshape(self, *shape):
        return reshape(self, shape)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bwd, where: str) -> Tensor:
    """Wrap an op result, recording the graph edge when any parent is tracked."""
    _check_finite(data, where)
    out = Tensor(data)
    if any(p.requires_grad or p._bwd is not None for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    return out


def _grad_into(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad or t._bwd is not None:
        t._ensure_grad()
        t.grad += g


# -- elementwise / reduction glue ---------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _grad_into(a, g)
        _grad_into(b, g)

    return _make(a.data + b.data, (a, b), bwd, "add")


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a same-shape Tensor, ndarray constant, or scalar."""
    if isinstance(b, Tensor):
        if a.data.shape != b.data.shape:
            raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")

        def bwd(g):
            _grad_into(a, g * b.data)
            _grad_into(b, g * a.data)

        return _make(a.data * b.data, (a, b), bwd, "mul")

    const = np.asarray(b, dtype=np.float64)

    def bwd_const(g):
        _grad_into(a, g * const)

    return _make(a.data * const, (a,), bwd_const, "mul")


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        _grad_into(a, np.full_like(a.data, float(g)))

    return _make(np.sum(a.data), (a,), bwd, "sum")


def reshape(a: Tensor, shape) -> Tensor:
    def bwd(g):
        _grad_into(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd, "reshape")


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the vector (last) axis."""
    if a.data.ndim != b.data.ndim:
        raise ValueError(f"concat rank mismatch: {a.data.shape} vs {b.data.shape}")
    n = a.data.shape[-1]

    def bwd(g):
        _grad_into(a, g[..., :n])
        _grad_into(b, g[..., n:])

    return _make(np.concatenate([a.data, b.data], axis=-1), (a, b), bwd, "concat")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        _grad_into(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), bwd, "relu")


# -- softmax family ------------------------------------------------------


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction."""
    _check_finite(a.data, "softmax input")
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=-1, keepdims=True)

    def bwd(g):
        dot = np.sum(g * s, axis=-1, keepdims=True)
        _grad_into(a, s * (g - dot))

    return _make(s, (a,), bwd, "softmax")


def log_softmax(a: Tensor) -> Tensor:
    _check_finite(a.data, "log_softmax input")
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def bwd(g):
        dot = np.sum(g, axis=-1, keepdims=True)
        _grad_into(a, g - s * dot)

    return _make(out, (a,), bwd, "log_softmax")


# -- linear / conv / pooling ---------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``w @ x (+ b)`` for x of shape (n,) or batched (B, n); w is (m, n)."""
    if w.data.ndim != 2 or w.data.shape[1] != x.data.shape[-1]:
        raise ValueError(f"linear shape mismatch: w {w.data.shape}, x {x.data.shape}")
    if b is not None and b.data.shape != (w.data.shape[0],):
        raise ValueError(f"linear bias shape {b.data.shape} != ({w.data.shape[0]},)")

    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data

    def bwd(g):
        if x.data.ndim == 1:
            _grad_into(w, np.outer(g, x.data))
            if b is not None:
                _grad_into(b, g)
        else:
            _grad_into(w, g.T @ x.data)
            if b is not None:
                _grad_into(b, np.sum(g, axis=0))
        _grad_into(x, g @ w.data)

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, bwd, "linear")


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C,H,W) or (B,C,H,W), got {x.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation. x: (C,H,W) or (B,C,H,W); w: (C_out,C_in,k,k)."""
    xb, squeeze = _as_batched(x.data)
    B, C, H, W = xb.shape
    if w.data.ndim != 4 or w.data.shape[1] != C:
        raise ValueError(f"conv2d kernel {w.data.shape} incompatible with input {x.data.shape}")
    co, _, kh, kw = w.data.shape
    if kh != kw:
        raise ValueError("conv2d supports square kernels only")
    k = kh
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if k > H + 2 * pad or k > W + 2 * pad:
        raise ValueError(f"kernel {k} larger than padded input {(H + 2 * pad, W + 2 * pad)}")
    if b is not None and b.data.shape != (co,):
        raise ValueError(f"conv2d bias shape {b.data.shape} != ({co},)")

    ho = (H + 2 * pad - k) // stride + 1
    wo = (W + 2 * pad - k) // stride + 1
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xb
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, ho, wo, k, k)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * k * k, ho * wo)
    w2 = w.data.reshape(co, C * k * k)
    y = np.matmul(w2[None], cols).reshape(B, co, ho, wo)
    if b is not None:
        y = y + b.data[None, :, None, None]

    def bwd(g):
        gb = g[None] if squeeze else g
        gcols = gb.reshape(B, co, ho * wo)
        _grad_into(w, np.einsum("bol,bkl->ok", gcols, cols).reshape(w.data.shape))
        if b is not None:
            _grad_into(b, np.sum(gb, axis=(0, 2, 3)))
        if x.requires_grad or x._bwd is not None:
            dcols = np.matmul(w2.T[None], gcols)  # (B, C*k*k, ho*wo)
            dcols = dcols.reshape(B, C, k, k, ho, wo)
            dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
            for ki in range(k):
                for kj in range(k):
                    dxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += dcols[:, :, ki, kj]
            dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
            _grad_into(x, dx[0] if squeeze else dx)

    parents = (x, w) if b is None else (x, w, b)
    return _make(y[0] if squeeze else y, parents, bwd, "conv2d")


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Max pooling; backward routes each window's gradient to the first
    (row-major) occurrence of the maximum."""
    xb, squeeze = _as_batched(x.data)
    B, C, H, W = xb.shape
    if k > H or k > W:
        raise ValueError(f"pool window {k} larger than input {(H, W)}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ho = (H - k) // stride + 1
    wo = (W - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xb, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride].reshape(B, C, ho, wo, k * k)
    arg = np.argmax(win, axis=-1)  # first max in row-major window order
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        gb = g[None] if squeeze else g
        dx = np.zeros((B, C, H, W))
        oi, oj = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
        ii = oi * stride + arg // k  # (B,C,ho,wo) row offsets
        jj = oj * stride + arg % k
        bidx = np.arange(B)[:, None, None, None]
        cidx = np.arange(C)[None, :, None, None]
        np.add.at(dx, (np.broadcast_to(bidx, arg.shape), np.broadcast_to(cidx, arg.shape), ii, jj), gb)
        _grad_into(x, dx[0] if squeeze else dx)

    return _make(y[0] if squeeze else y, (x,), bwd, "maxpool2d")


def scale_sum(columns: Tensor, weights: Tensor) -> Tensor:
    """Weighted sum of activation depth columns.

    columns (d, h, w) with weights (h, w) -> (d,); a leading batch axis on
    both gives (B, d).
    """
    c, w = columns.data, weights.data
    if c.ndim == 3 and w.ndim == 2:
        if c.shape[1:] != w.shape:
            raise ValueError(f"scale_sum grids differ: {c.shape[1:]} vs {w.shape}")
        out = np.einsum("dhw,hw->d", c, w)

        def bwd(g):
            _grad_into(columns, g[:, None, None] * w)
            _grad_into(weights, np.einsum("dhw,d->hw", c, g))

        return _make(out, (columns, weights), bwd, "scale_sum")

    if c.ndim == 4 and w.ndim == 3:
        if c.shape[0] != w.shape[0] or c.shape[2:] != w.shape[1:]:
            raise ValueError(f"scale_sum grids differ: {c.shape} vs {w.shape}")
        out = np.einsum("bdhw,bhw->bd", c, w)

        def bwd_b(g):
            _grad_into(columns, g[:, :, None, None] * w[:, None])
            _grad_into(weights, np.einsum("bdhw,bd->bhw", c, g))

        return _make(out, (columns, weights), bwd_b, "scale_sum")

    raise ValueError(f"scale_sum expects (d,h,w)+(h,w) or batched, got {c.shape}+{w.shape}")


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1
