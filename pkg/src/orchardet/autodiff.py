"""Dense rank-4 tensors with reverse-mode automatic differentiation.

Every tensor is a (batch, channel, height, width) grid of float32 or
float64 values backed by a numpy array.  Ops build a computation record
(a DAG of parent links plus backward closures); calling ``backward`` on
a scalar walks that record in reverse topological order and accumulates
gradients into every leaf that requires them.

Accumulation for pooling and normalization statistics happens in double
precision regardless of storage dtype, so finite-difference checks stay
meaningful at float32 storage.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A rank-4 value grid, optionally carrying a gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim != 4:
            raise ValueError(f"tensor data must be rank-4 (n,c,h,w), got shape {arr.shape}")
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's values, cut from the record."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar. Repeated calls accumulate."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        seed: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = seed.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, contrib in node._backward(g):
                if not (parent.requires_grad or parent._backward is not None):
                    continue
                prev = seed.get(id(parent))
                if prev is None:
                    seed[id(parent)] = contrib.astype(parent.data.dtype, copy=True)
                else:
                    prev += contrib

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # small sugar used throughout the blocks
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative DFS; recursion would overflow on deep training graphs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, idx = stack.pop()
        if idx == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        if idx < len(node._parents):
            stack.append((node, idx + 1))
            child = node._parents[idx]
            if id(child) not in seen:
                stack.append((child, 0))
        else:
            order.append(node)
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], list[tuple[Tensor, np.ndarray]]] | None) -> Tensor:
    """Wrap an op result, recording parents only while grads are enabled."""
    out = Tensor(data)
    if _GRAD_ENABLED and backward is not None and any(
            p.requires_grad or p._backward is not None for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=np.float64, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float64, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def _broadcast_ok(sa, sb) -> bool:
    """Binary broadcast is allowed only on size-1 h or w axes."""
    if sa[0] != sb[0] or sa[1] != sb[1]:
        return False
    for da, db in zip(sa[2:], sb[2:]):
        if da != db and da != 1 and db != 1:
            return False
    return True


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes the forward broadcast expanded."""
    axes = tuple(i for i in range(4) if shape[i] == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a: Tensor, b: Tensor, op: str, fwd, bwd) -> Tensor:
    _check_same_dtype(a, b, op)
    if not _broadcast_ok(a.shape, b.shape):
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast "
                         "(only size-1 h/w axes may broadcast)")
    out = fwd(a.data, b.data)

    def backward(g: np.ndarray):
        ga, gb = bwd(g, a.data, b.data, out)
        return [(a, _reduce_to(ga, a.shape)), (b, _reduce_to(gb, b.shape))]

    return _make(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y, o: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "sub", lambda x, y: x - y,
                   lambda g, x, y, o: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y, o: (g * y, g * x))


def div(a: Tensor, b: Tensor) -> Tensor:
    if np.any(b.data == 0):
        raise FloatingPointError("div: zero element in denominator")
    return _binary(a, b, "div", lambda x, y: x / y,
                   lambda g, x, y, o: (g / y, -g * x / (y * y)))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; at ties the gradient routes to the first operand."""
    def bwd(g, x, y, o):
        take_a = x <= y
        return g * take_a, g * ~take_a
    return _binary(a, b, "minimum", np.minimum, bwd)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g, x, y, o):
        take_a = x >= y
        return g * take_a, g * ~take_a
    return _binary(a, b, "maximum", np.maximum, bwd)


def _unary(x: Tensor, fwd, bwd) -> Tensor:
    out = fwd(x.data)

    def backward(g: np.ndarray):
        return [(x, bwd(g, x.data, out))]

    return _make(out, (x,), backward)


def neg(x: Tensor) -> Tensor:
    return _unary(x, lambda v: -v, lambda g, v, o: -g)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python constant."""
    c = float(c)
    return _unary(x, lambda v: v * np.asarray(c, dtype=v.dtype),
                  lambda g, v, o: g * c)


def add_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _unary(x, lambda v: v + np.asarray(c, dtype=v.dtype),
                  lambda g, v, o: g)


def scale_by(x: Tensor, s: Tensor) -> Tensor:
    """Multiply a map by a learnable scalar tensor of shape (1,1,1,1)."""
    if s.shape != (1, 1, 1, 1):
        raise ValueError(f"scale_by: scalar operand must have shape (1,1,1,1), got {s.shape}")
    _check_same_dtype(x, s, "scale_by")
    out = x.data * s.data

    def backward(g: np.ndarray):
        gs = np.sum(g * x.data, dtype=np.float64).astype(x.dtype).reshape(1, 1, 1, 1)
        return [(x, g * s.data), (s, gs)]

    return _make(out, (x, s), backward)


def relu(x: Tensor) -> Tensor:
    def bwd(g, v, o):
        return g * (v > 0)
    return _unary(x, lambda v: np.maximum(v, 0), bwd)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # piecewise form never overflows exp
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Logistic; output strictly inside (0,1) for finite input."""
    return _unary(x, _sigmoid, lambda g, v, o: g * o * (1.0 - o))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x); smooth activation used network-wide."""
    def fwd(v):
        return v * _sigmoid(v)

    def bwd(g, v, o):
        s = _sigmoid(v)
        return g * (s + v * s * (1.0 - s))

    return _unary(x, fwd, bwd)


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; subgradient 0 at exactly zero inputs."""
    if np.any(x.data < 0):
        raise FloatingPointError("sqrt: negative input element")

    def bwd(g, v, o):
        out = np.zeros_like(g)
        nz = o > 0
        out[nz] = g[nz] * 0.5 / o[nz]
        return out

    return _unary(x, np.sqrt, bwd)


def arctan(x: Tensor) -> Tensor:
    return _unary(x, np.arctan, lambda g, v, o: g / (1.0 + v * v))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient zero outside the window."""
    def bwd(g, v, o):
        return g * ((v >= lo) & (v <= hi))
    return _unary(x, lambda v: np.clip(v, lo, hi), bwd)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a (1,1,1,1) scalar (double accumulation)."""
    val = np.sum(x.data, dtype=np.float64).astype(x.dtype).reshape(1, 1, 1, 1)

    def backward(g: np.ndarray):
        return [(x, np.broadcast_to(g, x.shape).astype(x.dtype))]

    return _make(val, (x,), backward)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    val = (np.sum(x.data, dtype=np.float64) / n).astype(x.dtype).reshape(1, 1, 1, 1)

    def backward(g: np.ndarray):
        return [(x, np.broadcast_to(g / n, x.shape).astype(x.dtype))]

    return _make(val, (x,), backward)


def avg_pool(x: Tensor, axis: str) -> Tensor:
    """Directional global average: collapse 'height' or 'width' to size 1."""
    if axis == "width":
        np_axis = 3
    elif axis == "height":
        np_axis = 2
    else:
        raise ValueError(f"avg_pool: axis must be 'height' or 'width', got {axis!r}")
    extent = x.shape[np_axis]
    val = (np.sum(x.data, axis=np_axis, keepdims=True, dtype=np.float64)
           / extent).astype(x.dtype)

    def backward(g: np.ndarray):
        return [(x, np.broadcast_to(g / extent, x.shape).astype(x.dtype))]

    return _make(val, (x,), backward)


def swap_hw(x: Tensor) -> Tensor:
    """Transpose the two spatial axes."""
    val = np.ascontiguousarray(x.data.transpose(0, 1, 3, 2))

    def backward(g: np.ndarray):
        return [(x, np.ascontiguousarray(g.transpose(0, 1, 3, 2)))]

    return _make(val, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ValueError(f"reshape target must be rank-4, got {shape}")
    val = np.ascontiguousarray(x.data).reshape(shape)

    def backward(g: np.ndarray):
        return [(x, g.reshape(x.shape))]

    return _make(val, (x,), backward)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along channels (axis=1) or rows (axis=2)."""
    if axis not in (1, 2):
        raise ValueError(f"concat: axis must be 1 (channels) or 2 (rows), got {axis}")
    if len(parts) < 2:
        raise ValueError("concat: need at least two tensors")
    ref = parts[0]
    for p in parts[1:]:
        _check_same_dtype(ref, p, "concat")
        sa = list(ref.shape)
        sb = list(p.shape)
        sa[axis] = sb[axis] = 0
        if sa != sb:
            raise ValueError(f"concat: incompatible shapes {ref.shape} and {p.shape} on axis {axis}")
    val = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def backward(g: np.ndarray):
        out = []
        off = 0
        for p, s in zip(parts, sizes):
            sl = [slice(None)] * 4
            sl[axis] = slice(off, off + s)
            out.append((p, g[tuple(sl)]))
            off += s
        return out

    return _make(val, tuple(parts), backward)


def _axis_slice(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * 4
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    val = np.ascontiguousarray(x.data[sl])

    def backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[sl] = g
        return [(x, full)]

    return _make(val, (x,), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.shape[1]):
        raise ValueError(f"slice_channels: [{start},{stop}) outside 0..{x.shape[1]}")
    return _axis_slice(x, 1, start, stop)


def split_spatial(x: Tensor, rows_first: int) -> tuple[Tensor, Tensor]:
    """Split a (n,c,h+w,1) stack back into (n,c,h,1) and (n,c,w,1) parts."""
    n, c, hw, w = x.shape
    if w != 1:
        raise ValueError(f"split_spatial: expected trailing width 1, got shape {x.shape}")
    if not (0 < rows_first < hw):
        raise ValueError(f"split_spatial: split point {rows_first} outside (0,{hw})")
    return _axis_slice(x, 2, 0, rows_first), _axis_slice(x, 2, rows_first, hw)


def gather_cells(x: Tensor, n_idx: np.ndarray, h_idx: np.ndarray, w_idx: np.ndarray) -> Tensor:
    """Pick per-cell channel vectors; result shape (1, c, len(idx), 1)."""
    n_idx = np.asarray(n_idx, dtype=np.intp)
    h_idx = np.asarray(h_idx, dtype=np.intp)
    w_idx = np.asarray(w_idx, dtype=np.intp)
    if not (len(n_idx) == len(h_idx) == len(w_idx)):
        raise ValueError("gather_cells: index arrays must have equal length")
    picked = x.data[n_idx, :, h_idx, w_idx]          # (M, c)
    val = np.ascontiguousarray(picked.T)[None, :, :, None]

    def backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        gm = g[0, :, :, 0].T                          # (M, c)
        for ch in range(x.shape[1]):
            np.add.at(full[:, ch], (n_idx, h_idx, w_idx), gm[:, ch])
        return [(x, full)]

    return _make(val, (x,), backward)


def upsample2_nearest(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling."""
    val = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g: np.ndarray):
        n, c, h2, w2 = g.shape
        return [(x, g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))]

    return _make(val, (x,), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 stride-2 max pooling; requires even spatial dims."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    return maxpool(x, 2, 2, 0)


def maxpool(x: Tensor, k: int, stride: int, pad: int) -> Tensor:
    """General max pooling; ties route the gradient to the first maximum."""
    n, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"maxpool: kernel {k} too large for input {h}x{w} with pad {pad}")
    if pad:
        lowest = np.finfo(x.dtype).min
        xp = np.full((n, c, h + 2 * pad, w + 2 * pad), lowest, dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x.data
    else:
        xp = x.data
    windows = np.empty((n, c, k * k, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            windows[:, :, i * k + j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    arg = np.argmax(windows, axis=2)
    val = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]

    def backward(g: np.ndarray):
        gp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                m = arg == (i * k + j)
                if m.any():
                    gp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += g * m
        if pad:
            gp = gp[:, :, pad:pad + h, pad:pad + w]
        return [(x, gp)]

    return _make(val, (x,), backward)


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(n, c * k * k, oh * ow)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with square kernels, im2col + GEMM inside.

    weight: (c_out, c_in, k, k); bias: (1, c_out, 1, 1) or None.
    """
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: stride must be >=1 and pad >=0, got {stride}, {pad}")
    n, c_in, h, w = x.shape
    c_out, wc_in, k, k2 = weight.shape
    if k != k2:
        raise ValueError(f"conv2d: kernels must be square, got {weight.shape}")
    if wc_in != c_in:
        raise ValueError(f"conv2d: input has {c_in} channels but weight {weight.shape} expects {wc_in}")
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ValueError(f"conv2d: kernel {k} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    _check_same_dtype(x, weight, "conv2d")
    if bias is not None:
        _check_same_dtype(x, bias, "conv2d")
        if bias.shape != (1, c_out, 1, 1):
            raise ValueError(f"conv2d: bias shape {bias.shape} != (1,{c_out},1,1)")
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, k, stride, oh, ow)                     # (n, ckk, oh*ow)
    w2 = weight.data.reshape(c_out, c_in * k * k)
    out = np.matmul(w2, cols).reshape(n, c_out, oh, ow)
    if bias is not None:
        out += bias.data

    def backward(g: np.ndarray):
        gflat = g.reshape(n, c_out, oh * ow)
        gw = np.tensordot(gflat, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gcols = np.matmul(w2.T, gflat)                        # (n, ckk, oh*ow)
        gp = np.zeros_like(xp)
        gc = gcols.reshape(n, c_in, k, k, oh, ow)
        for i in range(k):
            for j in range(k):
                gp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gc[:, :, i, j]
        gx = gp[:, :, pad:pad + h, pad:pad + w] if pad else gp
        contribs = [(x, gx), (weight, gw)]
        if bias is not None:
            contribs.append((bias, g.sum(axis=(0, 2, 3), keepdims=True).reshape(1, c_out, 1, 1)))
        return contribs

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor,
              running_mean: np.ndarray, running_var: np.ndarray,
              training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (n,h,w).

    ``running_mean``/``running_var`` are plain arrays owned by the caller;
    train mode updates them in place with the given momentum. Statistics
    accumulate in float64.
    """
    n, c, h, w = x.shape
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ValueError(f"batchnorm: affine params must be (1,{c},1,1), got {gamma.shape}, {beta.shape}")
    if training:
        count = n * h * w
        if count < 2:
            raise ValueError(f"batchnorm: train mode needs >=2 elements per channel, got {count}")
        mean64 = np.mean(x.data, axis=(0, 2, 3), dtype=np.float64)
        var64 = np.mean(x.data.astype(np.float64) ** 2, axis=(0, 2, 3)) - mean64 ** 2
        var64 = np.maximum(var64, 0.0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean64.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * var64.astype(running_var.dtype)
        mean = mean64.astype(x.dtype).reshape(1, c, 1, 1)
        invstd = (1.0 / np.sqrt(var64 + eps)).astype(x.dtype).reshape(1, c, 1, 1)
        xhat = (x.data - mean) * invstd
        out = xhat * gamma.data + beta.data

        def backward_train(g: np.ndarray):
            m = n * h * w
            gxhat = g * gamma.data
            sum_g = gxhat.sum(axis=(0, 2, 3), keepdims=True)
            sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = (invstd / m) * (m * gxhat - sum_g - xhat * sum_gx)
            ggamma = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gbeta = g.sum(axis=(0, 2, 3), keepdims=True)
            return [(x, gx.astype(x.dtype)), (gamma, ggamma), (beta, gbeta)]

        return _make(out, (x, gamma, beta), backward_train)

    mean = running_mean.astype(x.dtype).reshape(1, c, 1, 1)
    invstd = (1.0 / np.sqrt(running_var.astype(np.float64) + eps)).astype(x.dtype).reshape(1, c, 1, 1)
    xhat = (x.data - mean) * invstd
    out = xhat * gamma.data + beta.data

    def backward_eval(g: np.ndarray):
        gx = g * gamma.data * invstd
        ggamma = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
        gbeta = g.sum(axis=(0, 2, 3), keepdims=True)
        return [(x, gx), (gamma, ggamma), (beta, gbeta)]

    return _make(out, (x, gamma, beta), backward_eval)


def bce_with_logits(logits: Tensor, targets: np.ndarray, clamp_at: float = 30.0) -> Tensor:
    """Elementwise binary cross entropy on logits, numerically stable.

    Logits are clamped to [-clamp_at, clamp_at] (gradient zero outside);
    targets are constants in [0,1].
    """
    t = np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ValueError(f"bce_with_logits: target shape {t.shape} != logits shape {logits.shape}")
    inside = (logits.data >= -clamp_at) & (logits.data <= clamp_at)
    z = np.clip(logits.data, -clamp_at, clamp_at)
    out = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def backward(g: np.ndarray):
        return [(logits, g * (_sigmoid(z) - t) * inside)]

    return _make(out, (logits,), backward)


def check_finite(x: Tensor, label: str) -> Tensor:
    """Pass-through guard that rejects NaN/Inf with a named diagnostic."""
    if not np.all(np.isfinite(x.data)):
        bad = int(np.flatnonzero(~np.isfinite(x.data))[0])
        raise FloatingPointError(f"{label}: non-finite value at flat index {bad}")
    return x


class Parameter:
    """A trainable tensor plus its optimizer momentum buffer.

    ``name`` is the dotted path inside a network (assigned at build time,
    unique per network).
    """

    __slots__ = ("tensor", "name", "momentum")

    def __init__(self, data, name: str = ""):
        self.tensor = data if isinstance(data, Tensor) else Tensor(data)
        self.tensor.requires_grad = True
        self.name = name
        self.momentum = np.zeros_like(self.tensor.data)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = value

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name or '<unnamed>'}, shape={self.tensor.shape})"
