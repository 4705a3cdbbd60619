"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap contiguous float64 numpy arrays and record the operations that
produced them, so that calling :meth:`Tensor.backward` on a scalar loss
populates the ``grad`` buffer of every reachable tensor.  The operation set is
exactly what the CNN-GRU affect models and their losses require: dense/conv
linear algebra, pooling, the usual pointwise nonlinearities, concatenation,
slicing and dropout.

Everything runs in double precision.  Speed is a non-goal; gradient
correctness against central finite differences is the contract.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """A node in a computation graph.

    ``data`` is the forward value, ``grad`` the accumulated gradient of the
    most recent backward pass (same shape as ``data``).  Non-leaf tensors keep
    references to their parents and a closure that pushes the output gradient
    back to them.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # ------------------------------------------------------------------ basics

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ---------------------------------------------------------------- backward

    def backward(self) -> None:
        """Reverse-mode sweep seeding d(self)/d(self) = 1.

        ``self`` must be scalar.  Gradient buffers of every reachable node are
        zeroed first, then filled in exact reverse topological order.
        """
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar loss tensor")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
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
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # --------------------------------------------------------------- operators

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ------------------------------------------------------------------ arithmetic

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(out_data, _parents=(a, b), _backward=backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        a._accumulate(-g)

    return Tensor(-a.data, _parents=(a,), _backward=backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, _parents=(a, b), _backward=backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data ** 2), b.shape))

    return Tensor(out_data, _parents=(a, b), _backward=backward)


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    exponent = float(exponent)
    out_data = a.data ** exponent

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return Tensor(out_data, _parents=(a,), _backward=backward)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor(out_data, _parents=(a, b), _backward=backward)


# ------------------------------------------------------------------ reductions

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return Tensor(out_data, _parents=(a,), _backward=backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# ---------------------------------------------------------------- shape moves

def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return Tensor(out_data, _parents=(a,), _backward=backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = _wrap(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = a.data[idx].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return Tensor(out_data, _parents=(a,), _backward=backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return Tensor(out_data, _parents=tuple(tensors), _backward=backward)


def gather_rows(a, indices) -> Tensor:
    """Pick one entry per row of a 2-D tensor; returns a 1-D tensor."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError("gather_rows expects a 2-D tensor")
    indices = np.asarray(indices, dtype=np.intp)
    rows = np.arange(a.data.shape[0])
    out_data = a.data[rows, indices]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, indices), g)
        a._accumulate(full)

    return Tensor(out_data, _parents=(a,), _backward=backward)


# -------------------------------------------------------------- nonlinearities

def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return Tensor(np.where(mask, a.data, 0.0), _parents=(a,), _backward=backward)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return Tensor(s, _parents=(a,), _backward=backward)


def tanh(a) -> Tensor:
    a = _wrap(a)
    t = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - t * t))

    return Tensor(t, _parents=(a,), _backward=backward)


def exp(a) -> Tensor:
    a = _wrap(a)
    e = np.exp(a.data)

    def backward(g):
        a._accumulate(g * e)

    return Tensor(e, _parents=(a,), _backward=backward)


def log(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        a._accumulate(g / a.data)

    return Tensor(np.log(a.data), _parents=(a,), _backward=backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax; rows along ``axis`` sum to 1."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        a._accumulate(s * (g - dot))

    return Tensor(s, _parents=(a,), _backward=backward)


def dropout(a, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-rate) at train time,
    identity at inference."""
    a = _wrap(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        def backward_id(g):
            a._accumulate(g)
        return Tensor(a.data.copy(), _parents=(a,), _backward=backward_id)

    if rng is None:
        rng = np.random.default_rng()
    keep = rng.random(a.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    mask = keep * scale

    def backward(g):
        a._accumulate(g * mask)

    return Tensor(a.data * mask, _parents=(a,), _backward=backward)


# ----------------------------------------------------------------- conv / pool

def _norm_pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    vh, vw = v
    return (int(vh), int(vw))


def _conv_geometry(h: int, w: int, kh: int, kw: int, sh: int, sw: int, padding: str):
    """Output extents plus top/left padding for 'same' / 'valid' modes."""
    if padding == "valid":
        if kh > h or kw > w:
            raise ShapeError(f"kernel {kh}x{kw} larger than input {h}x{w} with valid padding")
        oh = (h - kh) // sh + 1
        ow = (w - kw) // sw + 1
        return oh, ow, 0, 0, 0, 0
    if padding == "same":
        oh = -(-h // sh)
        ow = -(-w // sw)
        pad_h = max((oh - 1) * sh + kh - h, 0)
        pad_w = max((ow - 1) * sw + kw - w, 0)
        return oh, ow, pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """N x oh x ow x (kh*kw*C) patches, kernel offsets in row-major order."""
    n, _, _, c = xp.shape
    cols = np.empty((n, oh, ow, kh * kw, c), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i * kw + j, :] = xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :]
    return cols.reshape(n, oh, ow, kh * kw * c)


def _col2im(gcols: np.ndarray, xp_shape: tuple, kh: int, kw: int, sh: int, sw: int,
            oh: int, ow: int) -> np.ndarray:
    n, hp, wp, c = xp_shape
    out = np.zeros(xp_shape, dtype=np.float64)
    g = gcols.reshape(n, oh, ow, kh * kw, c)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += g[:, :, :, i * kw + j, :]
    return out


def conv2d(x, w, stride=1, padding: str = "valid") -> Tensor:
    """2-D cross-correlation, NHWC input and (kh, kw, C, F) filters."""
    x, w = _wrap(x), _wrap(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input and 4-D filters, got {x.shape}, {w.shape}")
    n, h, wd, c = x.shape
    kh, kw, cin, f = w.shape
    if cin != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, filter expects {cin}")
    sh, sw = _norm_pair(stride)
    oh, ow, pt, pb, pl, pr = _conv_geometry(h, wd, kh, kw, sh, sw, padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    out_data = (cols.reshape(-1, kh * kw * c) @ w.data.reshape(-1, f)).reshape(n, oh, ow, f)

    def backward(g):
        gm = g.reshape(-1, f)
        w._accumulate((cols.reshape(-1, kh * kw * c).T @ gm).reshape(w.shape))
        gcols = gm @ w.data.reshape(-1, f).T
        gxp = _col2im(gcols.reshape(n, oh, ow, -1), xp.shape, kh, kw, sh, sw, oh, ow)
        x._accumulate(gxp[:, pt:pt + h, pl:pl + wd, :])

    return Tensor(out_data, _parents=(x, w), _backward=backward)


def maxpool2d(x, ksize=2, stride=None, padding: str = "valid") -> Tensor:
    """Windowed maximum over NHWC input; gradient routes to the argmax,
    ties broken to the first position in row-major window order."""
    x = _wrap(x)
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d expects NHWC input, got {x.shape}")
    n, h, wd, c = x.shape
    kh, kw = _norm_pair(ksize)
    sh, sw = _norm_pair(stride if stride is not None else ksize)
    oh, ow, pt, pb, pl, pr = _conv_geometry(h, wd, kh, kw, sh, sw, padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    wins = np.empty((n, oh, ow, kh * kw, c), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            wins[:, :, :, i * kw + j, :] = xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :]
    arg = wins.argmax(axis=3)
    out_data = np.take_along_axis(wins, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(g):
        gw = np.zeros_like(wins)
        np.put_along_axis(gw, arg[:, :, :, None, :], g[:, :, :, None, :], axis=3)
        gxp = np.zeros(xp.shape, dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += gw[:, :, :, i * kw + j, :]
        x._accumulate(gxp[:, pt:pt + h, pl:pl + wd, :])

    return Tensor(out_data, _parents=(x,), _backward=backward)


# ------------------------------------------------------------------------- GRU

def gru_cell(x: Tensor, h: Tensor, params: dict) -> Tensor:
    """One GRU step.

    r = sigmoid(x Wr + h Ur + br)
    z = sigmoid(x Wz + h Uz + bz)
    cand = tanh(x Wh + (r * h) Uh + bh)
    h' = (1 - z) * h + z * cand

    ``params`` maps the keys wr, ur, br, wz, uz, bz, wh, uh, bh to tensors
    shaped (I, U), (U, U) and (U,) respectively.
    """
    r = sigmoid(matmul(x, params["wr"]) + matmul(h, params["ur"]) + params["br"])
    z = sigmoid(matmul(x, params["wz"]) + matmul(h, params["uz"]) + params["bz"])
    cand = tanh(matmul(x, params["wh"]) + matmul(mul(r, h), params["uh"]) + params["bh"])
    return add(mul(1.0 - z, h), mul(z, cand))
