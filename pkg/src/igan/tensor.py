"""Dense float64 tensors with reverse-mode automatic differentiation.

Each operation records its inputs and a backward closure on the output
tensor. Tensors carry a monotonically increasing sequence number, so the
implicit graph is append-ordered and ``backward`` can visit nodes in
strictly decreasing creation order, which is always a valid reverse
topological order.

Only the primitives the coupled-network training needs are provided; there
is no general broadcasting beyond bias addition and the per-channel affine
of batchnorm.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

from .errors import ConfigError, ContractError, DegenerateBatchError, ShapeError

_seq_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """n-dimensional float64 array, optionally tracked for differentiation.

    Leaf tensors created with ``requires_grad=True`` hold a zeroed ``grad``
    buffer from birth and accumulate gradients additively across every use.
    """

    __slots__ = ("data", "grad", "requires_grad", "_seq", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._seq = next(_seq_counter)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Leaf view of the same values, cut off from the graph."""
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar; scalars are lifted
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _tracked(*parents: Tensor) -> bool:
    return _grad_enabled and any(p.requires_grad for p in parents)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = True
    out._parents = parents
    out._backward = backward
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient produced under broadcasting back to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor):
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    Leaves that do not feed the loss keep their zero buffers.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    visited = set()
    nodes = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in visited:
            continue
        visited.add(id(t))
        if t._backward is not None:
            nodes.append(t)
            stack.extend(p for p in t._parents if p.requires_grad and id(p) not in visited)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    loss.grad = np.ones_like(loss.data)
    for t in nodes:
        t._backward()


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data
    if not _tracked(a, b):
        return Tensor(data)

    def bw():
        if a.requires_grad:
            a._accum(_sum_to_shape(out.grad, a.data.shape))
        if b.requires_grad:
            b._accum(_sum_to_shape(out.grad, b.data.shape))

    out = _node(data, (a, b), bw)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data - b.data
    if not _tracked(a, b):
        return Tensor(data)

    def bw():
        if a.requires_grad:
            a._accum(_sum_to_shape(out.grad, a.data.shape))
        if b.requires_grad:
            b._accum(_sum_to_shape(-out.grad, b.data.shape))

    out = _node(data, (a, b), bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data
    if not _tracked(a, b):
        return Tensor(data)

    def bw():
        if a.requires_grad:
            a._accum(_sum_to_shape(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_sum_to_shape(out.grad * a.data, b.data.shape))

    out = _node(data, (a, b), bw)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    data = x.data * c
    if not _tracked(x):
        return Tensor(data)

    def bw():
        if x.requires_grad:
            x._accum(out.grad * c)

    out = _node(data, (x,), bw)
    return out


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)
    if not _tracked(x):
        return Tensor(data)

    def bw():
        # subgradient 0 at exactly 0
        if x.requires_grad:
            x._accum(out.grad * (x.data > 0.0))

    out = _node(data, (x,), bw)
    return out


def sigmoid(x: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-x.data))
    if not _tracked(x):
        return Tensor(data)

    def bw():
        if x.requires_grad:
            x._accum(out.grad * data * (1.0 - data))

    out = _node(data, (x,), bw)
    return out


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)
    if not _tracked(x):
        return Tensor(data)

    def bw():
        if x.requires_grad:
            x._accum(out.grad * (1.0 - data * data))

    out = _node(data, (x,), bw)
    return out


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)
    if not _tracked(x):
        return Tensor(data)

    def bw():
        if x.requires_grad:
            x._accum(out.grad / x.data)

    out = _node(data, (x,), bw)
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient is zero where the clip is active."""
    data = np.clip(x.data, lo, hi)
    if not _tracked(x):
        return Tensor(data)

    def bw():
        if x.requires_grad:
            x._accum(out.grad * ((x.data >= lo) & (x.data <= hi)))

    out = _node(data, (x,), bw)
    return out


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat rank mismatch: {a.data.shape} vs {b.data.shape}")
    for ax in range(a.data.ndim):
        if ax != axis % a.data.ndim and a.data.shape[ax] != b.data.shape[ax]:
            raise ShapeError(
                f"concat extent mismatch off axis {axis}: {a.data.shape} vs {b.data.shape}"
            )
    data = np.concatenate([a.data, b.data], axis=axis)
    if not _tracked(a, b):
        return Tensor(data)

    split = a.data.shape[axis % a.data.ndim]

    def bw():
        sl = [slice(None)] * data.ndim
        if a.requires_grad:
            sl[axis] = slice(0, split)
            a._accum(out.grad[tuple(sl)])
        if b.requires_grad:
            sl[axis] = slice(split, None)
            b._accum(out.grad[tuple(sl)])

    out = _node(data, (a, b), bw)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)
    if not _tracked(x):
        return Tensor(data)

    def bw():
        if x.requires_grad:
            x._accum(out.grad.reshape(x.data.shape))

    out = _node(data, (x,), bw)
    return out


def sum_axis(x: Tensor, axis: int) -> Tensor:
    data = x.data.sum(axis=axis)
    if not _tracked(x):
        return Tensor(data)

    def bw():
        if x.requires_grad:
            x._accum(np.broadcast_to(np.expand_dims(out.grad, axis), x.data.shape).copy())

    out = _node(data, (x,), bw)
    return out


def mean(x: Tensor) -> Tensor:
    """Mean over all elements, as a scalar tensor."""
    n = x.data.size
    data = np.asarray(x.data.mean())
    if not _tracked(x):
        return Tensor(data)

    def bw():
        if x.requires_grad:
            x._accum(np.full_like(x.data, float(out.grad) / n))

    out = _node(data, (x,), bw)
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size
    data = np.asarray((diff * diff).mean())
    if not _tracked(a, b):
        return Tensor(data)

    def bw():
        g = (2.0 / n) * float(out.grad) * diff
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(-g)

    out = _node(data, (a, b), bw)
    return out


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} vs {b.data.shape}")
    data = a.data @ b.data
    if not _tracked(a, b):
        return Tensor(data)

    def bw():
        if a.requires_grad:
            a._accum(out.grad @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ out.grad)

    out = _node(data, (a, b), bw)
    return out


def _conv_out_extent(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ConfigError(
            f"convolution extent {size} with kernel {k}, stride {stride}, pad {pad} "
            "does not produce an integer output size"
        )
    return span // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(b, c, H, W) padded input -> (b, c*kh*kw, oh*ow) patch matrix."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(b, c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, b: int, c: int, hp: int, wp: int, kh: int, kw: int,
            stride: int, oh: int, ow: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back onto a (b, c, hp, wp) canvas."""
    xp = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    return xp


def _pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _unpad2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return x[:, :, pad:-pad, pad:-pad]


def conv2d(x: Tensor, k: Tensor, stride: int, pad: int) -> Tensor:
    """Batched 2-d cross-correlation (no kernel flip).

    x: (b, c_in, h, w), k: (c_out, c_in, kh, kw) -> (b, c_out, h', w').
    """
    if x.data.ndim != 4 or k.data.ndim != 4 or x.data.shape[1] != k.data.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.data.shape}, kernel {k.data.shape}")
    b, ci, h, w = x.data.shape
    co, _, kh, kw = k.data.shape
    oh = _conv_out_extent(h, kh, stride, pad)
    ow = _conv_out_extent(w, kw, stride, pad)

    xp = _pad2d(x.data, pad)
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    w2d = k.data.reshape(co, ci * kh * kw)
    data = np.einsum("ok,bkl->bol", w2d, cols, optimize=True).reshape(b, co, oh, ow)
    if not _tracked(x, k):
        return Tensor(data)

    def bw():
        g = out.grad.reshape(b, co, oh * ow)
        if k.requires_grad:
            k._accum(np.einsum("bol,bkl->ok", g, cols, optimize=True).reshape(k.data.shape))
        if x.requires_grad:
            dcols = np.einsum("ok,bol->bkl", w2d, g, optimize=True)
            dxp = _col2im(dcols, b, ci, xp.shape[2], xp.shape[3], kh, kw, stride, oh, ow)
            x._accum(_unpad2d(dxp, pad))

    out = _node(data, (x, k), bw)
    return out


def conv2d_transposed(x: Tensor, k: Tensor, stride: int, pad: int) -> Tensor:
    """Adjoint of conv2d's input map (fractionally strided convolution).

    x: (b, c_in, h, w), k: (c_in, c_out, kh, kw) -> (b, c_out, h'', w'')
    with h'' = (h - 1) * stride - 2 * pad + kh.
    """
    if x.data.ndim != 4 or k.data.ndim != 4 or x.data.shape[1] != k.data.shape[0]:
        raise ShapeError(
            f"conv2d_transposed shape mismatch: input {x.data.shape}, kernel {k.data.shape}"
        )
    b, c1, h, w = x.data.shape
    _, c2, kh, kw = k.data.shape
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (w - 1) * stride - 2 * pad + kw
    if ho <= 0 or wo <= 0:
        raise ConfigError(
            f"transposed convolution of {h}x{w} with kernel {kh}x{kw}, stride {stride}, "
            f"pad {pad} yields non-positive output extent"
        )

    # scatter through the adjoint of _im2col onto the padded canvas, then crop
    w2d = k.data.reshape(c1, c2 * kh * kw)
    xf = x.data.reshape(b, c1, h * w)
    cols = np.einsum("ok,bol->bkl", w2d, xf, optimize=True)
    yp = _col2im(cols, b, c2, ho + 2 * pad, wo + 2 * pad, kh, kw, stride, h, w)
    data = _unpad2d(yp, pad)
    if not _tracked(x, k):
        return Tensor(data)

    def bw():
        gp = _pad2d(out.grad, pad)
        gcols = _im2col(gp, kh, kw, stride, h, w)
        if x.requires_grad:
            x._accum(np.einsum("ok,bkl->bol", w2d, gcols, optimize=True).reshape(x.data.shape))
        if k.requires_grad:
            k._accum(np.einsum("bol,bkl->ok", xf, gcols, optimize=True).reshape(k.data.shape))

    out = _node(data, (x, k), bw)
    return out


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def _bn_axes(x: np.ndarray) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Reduction axes and parameter broadcast shape for 2-d or 4-d inputs."""
    if x.ndim == 2:
        return (0,), (1, x.shape[1])
    if x.ndim == 4:
        return (0, 2, 3), (1, x.shape[1], 1, 1)
    raise ShapeError(f"batchnorm expects rank 2 or 4 input, got shape {x.shape}")


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor,
              running_var: Tensor, mode: str, momentum: float = 0.1,
              eps: float = 1e-5) -> Tensor:
    """Per-feature (rank 2) or per-channel (rank 4) batch normalization.

    Train mode normalizes by batch statistics and folds them into the
    running buffers in place (momentum 0.1, unbiased variance); eval mode
    normalizes by the running buffers. The backward pass implements the
    full batch-statistics gradient.
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    axes, pshape = _bn_axes(x.data)
    nfeat = x.data.shape[1]
    if gamma.data.shape != (nfeat,) or beta.data.shape != (nfeat,):
        raise ShapeError(
            f"batchnorm affine shape {gamma.data.shape}/{beta.data.shape} does not match "
            f"{nfeat} channels"
        )

    if mode == "train":
        if x.data.shape[0] < 2:
            raise DegenerateBatchError("train-mode batchnorm needs batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.data.size // nfeat
        running_mean.data *= 1.0 - momentum
        running_mean.data += momentum * mu
        running_var.data *= 1.0 - momentum
        running_var.data += momentum * var * (n / (n - 1))
    else:
        mu = running_mean.data
        var = running_var.data

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(pshape)) * inv_std.reshape(pshape)
    data = xhat * gamma.data.reshape(pshape) + beta.data.reshape(pshape)
    if not _tracked(x, gamma, beta):
        return Tensor(data)

    train = mode == "train"
    n = x.data.size // nfeat

    def bw():
        g = out.grad
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes))
        if x.requires_grad:
            scale_ = (gamma.data * inv_std).reshape(pshape)
            if train:
                gm = g.mean(axis=axes).reshape(pshape)
                gxm = (g * xhat).mean(axis=axes).reshape(pshape)
                x._accum(scale_ * (g - gm - xhat * gxm))
            else:
                x._accum(scale_ * g)

    out = _node(data, (x, gamma, beta), bw)
    return out
