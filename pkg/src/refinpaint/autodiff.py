"""Dense tensor with reverse-mode automatic differentiation.

Values are numpy arrays (float32 for training, float64 for gradient
checking; ops preserve the input dtype). Each differentiable op records
a closure that propagates the upstream gradient to its inputs; calling
``backward()`` on a scalar walks the recorded graph once in reverse
topological order, accumulating into ``.grad`` of every leaf that has
``requires_grad`` set.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _np_erf

__all__ = [
    "Tensor",
    "concat",
    "matmul",
    "conv2d",
    "grid_sample",
    "nearest_upsample2",
    "softmax",
    "gelu",
    "layer_norm",
    "bilinear_sample",
]

_SQRT2 = np.sqrt(2.0)


def _as_array(data):
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_prev", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._prev = ()
        self._backward = None
        self.name = name

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, prev, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in prev):
            out.requires_grad = True
            out._prev = tuple(prev)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    # ---- autograd driver -------------------------------------------------

    def backward(self):
        if self.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        # iterative topological sort; graphs can be deep
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    @staticmethod
    def _accum(t: "Tensor", g: np.ndarray):
        if not t.requires_grad:
            return
        t.grad = g if t.grad is None else t.grad + g

    # ---- elementwise arithmetic -----------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        out_data = self.data + other.data

        def backward(g):
            Tensor._accum(self, _unbroadcast(g, self.shape))
            Tensor._accum(other, _unbroadcast(g, other.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = self._coerce(other)
        out_data = self.data * other.data

        def backward(g):
            Tensor._accum(self, _unbroadcast(g * other.data, self.shape))
            Tensor._accum(other, _unbroadcast(g * self.data, other.shape))

        return Tensor._from_op(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        def backward(g):
            Tensor._accum(self, -g)

        return Tensor._from_op(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __truediv__(self, other):
        other = self._coerce(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return self._coerce(other) * self ** -1.0

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported")
        out_data = self.data ** exponent

        def backward(g):
            Tensor._accum(self, g * exponent * self.data ** (exponent - 1.0))

        return Tensor._from_op(out_data, (self,), backward)

    def __matmul__(self, other):
        return matmul(self, other)

    # ---- elementwise nonlinearities -------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            Tensor._accum(self, g * out_data)

        return Tensor._from_op(out_data, (self,), backward)

    def log(self):
        def backward(g):
            Tensor._accum(self, g / self.data)

        return Tensor._from_op(np.log(self.data), (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            Tensor._accum(self, g * (1.0 - out_data ** 2))

        return Tensor._from_op(out_data, (self,), backward)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g):
            Tensor._accum(self, g * out_data * (1.0 - out_data))

        return Tensor._from_op(out_data, (self,), backward)

    def erf(self):
        def backward(g):
            Tensor._accum(self, g * (2.0 / np.sqrt(np.pi)) * np.exp(-self.data ** 2))

        return Tensor._from_op(_np_erf(self.data), (self,), backward)

    def abs(self):
        # subgradient 0 at the kink
        def backward(g):
            Tensor._accum(self, g * np.sign(self.data))

        return Tensor._from_op(np.abs(self.data), (self,), backward)

    def relu(self):
        mask = self.data > 0

        def backward(g):
            Tensor._accum(self, g * mask)

        return Tensor._from_op(self.data * mask, (self,), backward)

    # ---- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            Tensor._accum(self, np.broadcast_to(gg, self.shape).astype(self.dtype, copy=True))

        return Tensor._from_op(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ---- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        out_data = self.data.reshape(shape)

        def backward(g):
            Tensor._accum(self, g.reshape(orig))

        return Tensor._from_op(out_data, (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def backward(g):
            Tensor._accum(self, g.transpose(inv))

        return Tensor._from_op(self.data.transpose(axes), (self,), backward)

    def __getitem__(self, idx):
        out_data = self.data[idx]
        shape = self.shape

        def backward(g):
            full = np.zeros(shape, dtype=g.dtype)
            full[idx] = g
            Tensor._accum(self, full)

        return Tensor._from_op(out_data, (self,), backward)


# ---- free functions ------------------------------------------------------


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; backward splits the gradient."""
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            Tensor._accum(t, g[tuple(sl)])

    return Tensor._from_op(out_data, tensors, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def backward(g):
        if b.ndim >= 2:
            da = g @ np.swapaxes(b.data, -1, -2)
        else:
            da = np.expand_dims(g, -1) * b.data
        if a.ndim >= 2:
            db = np.swapaxes(a.data, -1, -2) @ g
        else:
            db = np.expand_dims(a.data, -1) * np.expand_dims(g, -2)
        Tensor._accum(a, _unbroadcast(da, a.shape))
        Tensor._accum(b, _unbroadcast(db, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride=1, padding=0, dilation=1) -> Tensor:
    """Cross-correlation of NCHW input with FCkk weights (im2col)."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw_ = _pair(dilation)
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {cw}")
    if sh < 1 or sw < 1:
        raise ValueError("conv2d stride must be >= 1")
    ekh = (kh - 1) * dh + 1
    ekw = (kw - 1) * dw_ + 1
    ho = (h + 2 * ph - ekh) // sh + 1
    wo = (wd + 2 * pw - ekw) // sw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d kernel {ekh}x{ekw} does not fit padded input {h + 2 * ph}x{wd + 2 * pw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (ekh, ekw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw, ::dh, ::dw_]         # [N,C,Ho,Wo,kh,kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    wmat = w.data.reshape(f, c * kh * kw)
    y = cols @ wmat.T                                # [N,L,F]
    if b is not None:
        y = y + b.data
    out_data = y.transpose(0, 2, 1).reshape(n, f, ho, wo)

    def backward(g):
        gmat = g.reshape(n, f, ho * wo).transpose(0, 2, 1)      # [N,L,F]
        if w.requires_grad:
            dw = np.einsum("nlf,nlk->fk", gmat, cols).reshape(w.shape)
            Tensor._accum(w, dw)
        if b is not None and b.requires_grad:
            Tensor._accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i * dh:i * dh + ho * sh:sh, j * dw_:j * dw_ + wo * sw:sw] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, ph:ph + h, pw:pw + wd]
            Tensor._accum(x, dx)

    prev = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out_data, prev, backward)


def nearest_upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of an NCHW tensor."""
    n, c, h, w = x.shape
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        Tensor._accum(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return Tensor._from_op(out_data, (x,), backward)


def grid_sample(x: Tensor, ys: Tensor, xs: Tensor) -> Tensor:
    """Bilinear sampling of NCHW ``x`` at per-pixel coordinates.

    ``ys``/``xs`` have shape [N,Ho,Wo] in pixel units. Samples more than
    one pixel outside the grid contribute zero; gradients flow to the
    input values and to the coordinates.
    """
    n, c, h, w = x.shape
    y0 = np.floor(ys.data)
    x0 = np.floor(xs.data)
    wy = ys.data - y0
    wx = xs.data - x0
    y0i = y0.astype(np.int64)
    x0i = x0.astype(np.int64)
    nI = np.arange(n).reshape(n, 1, 1)

    corners = []
    for dy, dx_ in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yc = y0i + dy
        xc = x0i + dx_
        valid = ((yc >= 0) & (yc < h) & (xc >= 0) & (xc < w)).astype(x.dtype)
        ycc = np.clip(yc, 0, h - 1)
        xcc = np.clip(xc, 0, w - 1)
        v = x.data[nI, :, ycc, xcc] * valid[..., None]          # [N,Ho,Wo,C]
        wgt = (wy if dy else 1.0 - wy) * (wx if dx_ else 1.0 - wx)
        corners.append((ycc, xcc, valid, v, wgt))

    out_nhwc = sum(v * wgt[..., None] for _, _, _, v, wgt in corners)
    out_data = out_nhwc.transpose(0, 3, 1, 2)

    def backward(g):
        g_nhwc = g.transpose(0, 2, 3, 1)                         # [N,Ho,Wo,C]
        if x.requires_grad:
            dx_acc = np.zeros((n, h, w, c), dtype=g.dtype)
            for ycc, xcc, valid, _, wgt in corners:
                np.add.at(dx_acc, (np.broadcast_to(nI, ycc.shape), ycc, xcc),
                          g_nhwc * (wgt * valid)[..., None])
            Tensor._accum(x, dx_acc.transpose(0, 3, 1, 2))
        if ys.requires_grad or xs.requires_grad:
            (_, _, _, v00, _), (_, _, _, v01, _), (_, _, _, v10, _), (_, _, _, v11, _) = corners
            d_wy = (-(1.0 - wx)[..., None] * v00 - wx[..., None] * v01
                    + (1.0 - wx)[..., None] * v10 + wx[..., None] * v11)
            d_wx = (-(1.0 - wy)[..., None] * v00 + (1.0 - wy)[..., None] * v01
                    - wy[..., None] * v10 + wy[..., None] * v11)
            Tensor._accum(ys, (g_nhwc * d_wy).sum(axis=-1))
            Tensor._accum(xs, (g_nhwc * d_wx).sum(axis=-1))

    return Tensor._from_op(out_data, (x, ys, xs), backward)


def bilinear_sample(image, y: float, x: float) -> np.ndarray:
    """Sample a CHW array at one fractional position (zero padding).

    Reference-path helper for the sampling math in :func:`grid_sample`;
    returns a plain length-C vector, no gradient tracking.
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    c, h, w = data.shape
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    wy, wx = y - y0, x - x0
    out = np.zeros(c, dtype=data.dtype)
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yy, xx = y0 + dy, x0 + dx
        if 0 <= yy < h and 0 <= xx < w:
            wgt = (wy if dy else 1.0 - wy) * (wx if dx else 1.0 - wx)
            out += wgt * data[:, yy, xx]
    return out


# ---- composite ops -------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    # max subtraction for stability; softmax is shift-invariant so the
    # detached max does not change the gradient
    shifted = x + Tensor(-x.data.max(axis=axis, keepdims=True))
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact normal CDF."""
    return x * ((x * (1.0 / _SQRT2)).erf() + 1.0) * 0.5


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1,
               eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=axis, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    normed = centered * (var + eps) ** -0.5
    return normed * gamma + beta
