"""Dense tensors with tape-based reverse-mode differentiation.

Values live in numpy arrays. Every primitive records its parents and a
closure mapping the output gradient to parent gradients; :meth:`Tensor.backward`
replays that tape in reverse topological order.

Elementwise binary ops require equal shapes. The only implicit broadcast is a
Python scalar combined with a tensor; anything else needs an explicit
:func:`expand` or :func:`reshape`.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonScalarLoss, ShapeMismatch

_state = {"dtype": np.float32, "grad": True}


def default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype of newly created tensors (e.g. float64 for grad checks)."""
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def grad_enabled() -> bool:
    return _state["grad"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        self.data = arr.astype(dtype or _state["dtype"], copy=False)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # --- basic properties -------------------------------------------------
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    # --- differentiation --------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        Intermediate gradients are local to one call, so calling backward
        twice on fresh graphs sums into the leaves.
        """
        if self.data.size != 1:
            raise NonScalarLoss(f"backward() needs a scalar, got shape {self.shape}")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # --- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def expand(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return expand(self, shape)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def apply_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap a forward result as a graph node.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out.name = None
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


# --- elementwise arithmetic -----------------------------------------------
def add(a, b) -> Tensor:
    if _is_scalar(b):
        b = float(b)
        return apply_op(a.data + b, (a,), lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    _same_shape("add", a, b)
    return apply_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    _same_shape("sub", a, b)
    return apply_op(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return apply_op(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        b = float(b)
        return apply_op(a.data * b, (a,), lambda g: (g * b,))
    if _is_scalar(a):
        return mul(b, a)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return apply_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    if _is_scalar(b):
        return mul(a, 1.0 / b)
    if _is_scalar(a):
        a = float(a)
        bd = b.data
        out = a / bd
        return apply_op(out, (b,), lambda g: (-g * out / bd,))
    _same_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return apply_op(out, (a, b), lambda g: (g / bd, -g * out / bd))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return apply_op(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


# --- nonlinearities -------------------------------------------------------
def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return apply_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return apply_op(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return apply_op(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return apply_op(out, (a,), lambda g: (g * out * (1 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return apply_op(out, (a,), lambda g: (g * (1 - out * out),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return apply_op(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return apply_op(out, (a,), backward)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance normalization along ``axis`` (no affine part)."""
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = (g * y).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return apply_op(y, (a,), backward)


# --- reductions and shape ops --------------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return apply_op(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return apply_op(out, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None or len(axes) == 0:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return apply_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def expand(a: Tensor, shape) -> Tensor:
    """Repeat size-1 axes up to ``shape`` (same rank required)."""
    shape = tuple(shape)
    if len(shape) != a.ndim or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise ShapeMismatch(f"expand: cannot expand {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)
    out = np.broadcast_to(a.data, shape)
    return apply_op(out, (a,), lambda g: (g.sum(axis=axes, keepdims=True),))


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape
    out = a.data[idx]
    fancy = _has_array_index(idx)

    def backward(g):
        gz = np.zeros(shape, dtype=g.dtype)
        if fancy:
            np.add.at(gz, idx, g)
        else:
            gz[idx] += g
        return (gz,)

    return apply_op(np.array(out), (a,), backward)


def _has_array_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrays = [t.data for t in tensors]
    ref = arrays[0]
    ax = axis % ref.ndim
    for t in arrays[1:]:
        if t.ndim != ref.ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape)) if i != ax
        ):
            raise ShapeMismatch(f"concat: shapes {ref.shape} and {t.shape} differ off axis {axis}")
    out = np.concatenate(arrays, axis=ax)
    bounds = np.cumsum([0] + [a.shape[ax] for a in arrays])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(arrays))
        )

    return apply_op(out, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis)


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant (no gradient there)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeMismatch(f"masked_fill: mask {mask.shape} vs tensor {a.shape}")
    keep = ~mask
    out = np.where(mask, np.asarray(value, dtype=a.dtype), a.data)
    return apply_op(out, (a,), lambda g: (g * keep,))


def take_last(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick ``a[..., index[...]]`` along the last axis."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape != a.shape[:-1]:
        raise ShapeMismatch(f"take_last: index {index.shape} vs leading dims {a.shape[:-1]}")
    shape = a.shape
    out = np.take_along_axis(a.data, index[..., None], axis=-1)[..., 0]

    def backward(g):
        gz = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gz, index[..., None], g[..., None], axis=-1)
        return (gz,)

    return apply_op(out, (a,), backward)


# --- linear algebra -------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(m,k)@(k,n), (..., m,k)@(k,n) with a shared right factor, or batched (B,m,k)@(B,k,n)."""
    A, B = a.data, b.data
    if A.ndim < 2 or B.ndim < 2 or A.shape[-1] != B.shape[-2]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    if B.ndim == 2:
        out = A @ B
        k = A.shape[-1]

        def backward(g):
            ga = g @ B.T
            gb = A.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

        return apply_op(out, (a, b), backward)
    if A.shape[:-2] != B.shape[:-2]:
        raise ShapeMismatch(f"matmul: batch dims {a.shape[:-2]} and {b.shape[:-2]} differ")
    out = A @ B

    def backward(g):
        return g @ np.swapaxes(B, -1, -2), np.swapaxes(A, -1, -2) @ g

    return apply_op(out, (a, b), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= shape[0]):
        raise ShapeMismatch(f"embedding: ids outside [0, {shape[0]})")
    out = table.data[ids]

    def backward(g):
        gz = np.zeros(shape, dtype=g.dtype)
        np.add.at(gz, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (gz,)

    return apply_op(out, (table,), backward)


# --- convolution and pooling ---------------------------------------------
def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N, C, H, W) input with (O, C, kh, kw) kernels."""
    X, Wt = x.data, w.data
    if X.ndim != 4 or Wt.ndim != 4 or X.shape[1] != Wt.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape} and kernel {w.shape} are incompatible")
    if b is not None and b.shape != (Wt.shape[0],):
        raise ShapeMismatch(f"conv2d: bias {b.shape} for {Wt.shape[0]} output channels")
    kh, kw = Wt.shape[2:]
    if X.shape[2] + 2 * padding < kh or X.shape[3] + 2 * padding < kw:
        raise ShapeMismatch(f"conv2d: padded input smaller than kernel {kh}x{kw}")
    if stride == 1:
        out, backward = _conv_shifted(X, Wt, padding, x.requires_grad)
    else:
        out, backward = _conv_im2col(X, Wt, stride, padding, x.requires_grad)
    if b is None:
        return apply_op(out, (x, w), backward)
    out += b.data[None, :, None, None]

    def with_bias(g):
        gx, gw = backward(g)
        return gx, gw, g.sum(axis=(0, 2, 3))

    return apply_op(out, (x, w, b), with_bias)


def _conv_shifted(X, Wt, p, need_gx):
    """Stride-1 convolution as kh*kw matmuls over shifted views of the flat padded input.

    Output position (h, w) reads flat index h*Wp + w + (i*Wp + j); computing
    every column of a padded-width row and dropping the last kw-1 afterwards
    keeps each shifted view contiguous.
    """
    N, C, H, W = X.shape
    O, _, kh, kw = Wt.shape
    Hp, Wp = H + 2 * p, W + 2 * p
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    extra = 1 if kw > 1 else 0  # spare row so the last shifted view stays in bounds
    Xp = np.zeros((N, C, Hp + extra, Wp), dtype=X.dtype)
    Xp[:, :, p : p + H, p : p + W] = X
    flat = Xp.reshape(N, C, -1)
    Q = Ho * Wp
    offsets = [(i, j, i * Wp + j) for i in range(kh) for j in range(kw)]
    # contiguous per-offset kernels keep matmul on the BLAS path
    Wk = np.ascontiguousarray(Wt.transpose(2, 3, 0, 1))
    WkT = np.ascontiguousarray(Wt.transpose(2, 3, 1, 0)) if need_gx else None
    Y = np.zeros((N, O, Q), dtype=X.dtype)
    for i, j, off in offsets:
        Y += np.matmul(Wk[i, j], flat[:, :, off : off + Q])
    out = np.ascontiguousarray(Y.reshape(N, O, Ho, Wp)[:, :, :, :Wo])

    def backward(g):
        G = np.zeros((N, O, Ho, Wp), dtype=g.dtype)
        G[:, :, :, :Wo] = g
        G = G.reshape(N, O, Q)
        gw = np.empty((kh, kw, O, C), dtype=g.dtype)
        gflat = np.zeros_like(flat) if need_gx else None
        for i, j, off in offsets:
            view = flat[:, :, off : off + Q]
            acc = np.zeros((O, C), dtype=g.dtype)
            for n in range(N):
                acc += G[n] @ view[n].T
            gw[i, j] = acc
            if need_gx:
                gflat[:, :, off : off + Q] += np.matmul(WkT[i, j], G)
        gw = np.ascontiguousarray(gw.transpose(2, 3, 0, 1))
        if not need_gx:
            return None, gw
        gx = gflat.reshape(N, C, Hp + extra, Wp)[:, :, p : p + H, p : p + W]
        return np.ascontiguousarray(gx), gw

    return out, backward


def _conv_im2col(X, Wt, s, p, need_gx):
    N, C, H, W = X.shape
    O, _, kh, kw = Wt.shape
    Xp = np.pad(X, ((0, 0), (0, 0), (p, p), (p, p))) if p else X
    Hp, Wp = Xp.shape[2], Xp.shape[3]
    Ho = (Hp - kh) // s + 1
    Wo = (Wp - kw) // s + 1
    win = sliding_window_view(Xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * kh * kw)
    Wm = Wt.reshape(O, -1)
    out = np.ascontiguousarray((cols @ Wm.T).reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2))

    def backward(g):
        gf = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (gf.T @ cols).reshape(Wt.shape)
        if not need_gx:
            return None, gw
        gcols = (gf @ Wm).reshape(N, Ho, Wo, C, kh, kw)
        gxp = np.zeros(Xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += gcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        return np.ascontiguousarray(gx), gw

    return out, backward


def _pool(x: Tensor, kernel: int | None, average: bool) -> Tensor:
    X = x.data
    if X.ndim != 4:
        raise ShapeMismatch(f"pool2d expects (N, C, H, W), got {x.shape}")
    N, C, H, W = X.shape
    if kernel is None:
        out = X.sum(axis=(2, 3))
        scale = 1.0 / (H * W) if average else 1.0
        out = out * scale

        def backward(g):
            return (np.broadcast_to((g * scale)[:, :, None, None], X.shape).copy(),)

        return apply_op(out, (x,), backward)
    k = kernel
    Ho, Wo = -(-H // k), -(-W // k)
    ph, pw = Ho * k - H, Wo * k - W
    Xp = np.pad(X, ((0, 0), (0, 0), (0, ph), (0, pw))) if (ph or pw) else X
    out = Xp.reshape(N, C, Ho, k, Wo, k).sum(axis=(3, 5))
    if average:
        # ceil mode: edge windows average only their in-bounds cells
        rows = np.minimum(k, H - np.arange(Ho) * k)
        colsn = np.minimum(k, W - np.arange(Wo) * k)
        counts = (rows[:, None] * colsn[None, :]).astype(X.dtype)
        out = out / counts
    else:
        counts = None

    def backward(g):
        gg = g / counts if average else g
        full = np.broadcast_to(gg[:, :, :, None, :, None], (N, C, Ho, k, Wo, k)).reshape(N, C, Ho * k, Wo * k)
        return (np.ascontiguousarray(full[:, :, :H, :W]),)

    return apply_op(out, (x,), backward)


def sum_pool2d(x: Tensor, kernel: int | None = None) -> Tensor:
    """Sum over non-overlapping k x k windows; ``kernel=None`` sums the whole map to (N, C)."""
    return _pool(x, kernel, average=False)


def avg_pool2d(x: Tensor, kernel: int | None = None) -> Tensor:
    """Mean over non-overlapping k x k windows (ceil mode); ``kernel=None`` is global."""
    return _pool(x, kernel, average=True)


# --- recurrent cell ---------------------------------------------------------
def gru_cell(x: Tensor, h: Tensor, w_z: Tensor, w_r: Tensor, w_h: Tensor,
             b_z: Tensor, b_r: Tensor, b_h: Tensor) -> Tensor:
    """One GRU step on (N, in) input and (N, hidden) state.

    Weights act on the concatenation [x, h] (or [x, r*h] for the candidate),
    each of shape (in + hidden, hidden).
    """
    if x.ndim != 2 or h.ndim != 2 or x.shape[0] != h.shape[0]:
        raise ShapeMismatch(f"gru_cell: input {x.shape} and state {h.shape} are incompatible")
    hid = h.shape[1]
    for name, wt in (("w_z", w_z), ("w_r", w_r), ("w_h", w_h)):
        if wt.shape != (x.shape[1] + hid, hid):
            raise ShapeMismatch(f"gru_cell: {name} {wt.shape}, expected {(x.shape[1] + hid, hid)}")
    n = x.shape[0]
    xh = concat([x, h], axis=1)
    z = sigmoid(matmul(xh, w_z) + expand(reshape(b_z, (1, hid)), (n, hid)))
    r = sigmoid(matmul(xh, w_r) + expand(reshape(b_r, (1, hid)), (n, hid)))
    cand = tanh(matmul(concat([x, r * h], axis=1), w_h) + expand(reshape(b_h, (1, hid)), (n, hid)))
    return (1.0 - z) * h + z * cand
