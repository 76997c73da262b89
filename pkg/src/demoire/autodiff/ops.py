"""Differentiable primitives.

Every function takes :class:`Tensor` operands (python scalars are promoted to
the dtype of the tensor operand) and returns a new :class:`Tensor`.  When any
operand lives on a tape the op records a backward closure there.

Broadcasting follows numpy: shapes are aligned on their trailing dimensions
and extents of 1 stretch to match.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, apply, as_tensor


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def cast(x: Tensor, dtype) -> Tensor:
    src = x.dtype
    return apply((x,), x.data.astype(dtype), lambda g: (g.astype(src),))


# --- elementwise binary ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return apply((a, b), a.data + b.data, lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return apply((a, b), a.data - b.data, lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    return apply(
        (a, b),
        ad * bd,
        lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise ZeroDivisionError(f"division by exact zero (divisor shape {bd.shape})")
    out = ad / bd

    def backward(g):
        ga = g / bd
        return unbroadcast(ga, ad.shape), unbroadcast(-ga * out, bd.shape)

    return apply((a, b), out, backward)


def maximum(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    take_a = ad >= bd

    def backward(g):
        return (
            unbroadcast(np.where(take_a, g, 0), ad.shape),
            unbroadcast(np.where(take_a, 0, g), bd.shape),
        )

    return apply((a, b), np.maximum(ad, bd), backward)


def elementwise(a, b, kind: str) -> Tensor:
    """Dispatch one of ``add | sub | mul | div | max``."""
    table = {"add": add, "sub": sub, "mul": mul, "div": div, "max": maximum}
    if kind not in table:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return table[kind](a, b)


# --- elementwise unary -------------------------------------------------------


def neg(x: Tensor) -> Tensor:
    return apply((x,), -x.data, lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return apply((x,), out, lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log of a non-positive value")
    xd = x.data
    return apply((x,), np.log(xd), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise ValueError("sqrt of a negative value")
    out = np.sqrt(x.data)
    return apply((x,), out, lambda g: (g / (2 * out),))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    xd = x.data
    return apply((x,), np.abs(xd), lambda g: (g * np.sign(xd),))


def power(x: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise TypeError("power supports scalar exponents only")
    xd = x.data
    p = exponent
    return apply((x,), xd**p, lambda g: (g * p * xd ** (p - 1),))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return apply((x,), xd * xd, lambda g: (2 * g * xd,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return apply((x,), out, lambda g: (g * (1 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1 + np.tanh(0.5 * x.data))
    return apply((x,), out, lambda g: (g * out * (1 - out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply((x,), np.where(mask, x.data, 0), lambda g: (np.where(mask, g, 0),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    th = np.tanh(inner)
    out = 0.5 * xd * (1 + th)

    def backward(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1 + th) + 0.5 * xd * (1 - th * th) * dinner),)

    return apply((x,), out, backward)


# --- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return apply((a, b), ad @ bd, backward)


# --- reductions --------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return apply((x,), np.asarray(out, dtype=x.dtype), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


# --- shape manipulation ------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {src} into {tuple(shape)}") from None
    return apply((x,), out, lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return apply((x,), x.data.transpose(axes), lambda g: (g.transpose(inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def index(x: Tensor, idx) -> Tensor:
    """``x[idx]`` with numpy semantics; gradients scatter back (summing repeats)."""
    out = x.data[idx]
    shape, dtype = x.shape, x.dtype
    advanced = _is_advanced(idx)

    def backward(g):
        z = np.zeros(shape, dtype=dtype)
        if advanced:
            np.add.at(z, idx, g)
        else:
            z[idx] = g
        return (z,)

    return apply((x,), np.array(out, dtype=dtype), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot concat shapes {[t.shape for t in tensors]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return apply(tensors, out, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot stack shapes {[t.shape for t in tensors]}") from None

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return apply(tensors, out, backward)


def split(x: Tensor, sections, axis: int = 0) -> list[Tensor]:
    """Split into equal ``sections`` (int) or at the given indices (list)."""
    n = x.shape[axis]
    if isinstance(sections, int):
        if n % sections:
            raise ShapeError(f"axis of size {n} does not split into {sections} equal parts")
        step = n // sections
        cuts = list(range(step, n, step))
    else:
        cuts = list(sections)
    edges = [0, *cuts, n]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(lo, hi)
        out.append(index(x, tuple(sl)))
    return out


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r), depth-to-space."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"channel count {c} not divisible by {r * r}")
    c_out = c // (r * r)
    y = reshape(x, (n, c_out, r, r, h, w))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (n, c_out, h * r, w * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(N, C, H*r, W*r) -> (N, C*r*r, H, W), the inverse of :func:`pixel_shuffle`."""
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ShapeError(f"spatial dims {(hr, wr)} not divisible by {r}")
    h, w = hr // r, wr // r
    y = reshape(x, (n, c, h, r, w, r))
    y = transpose(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (n, c * r * r, h, w))


# --- normalisation / attention helpers -------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return apply((x,), out, backward)


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply optional affine parameters."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    out = apply((x,), xhat.astype(x.dtype), backward)
    if weight is not None:
        out = mul(out, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# --- convolution -------------------------------------------------------------


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input and OIHW kernel, zero padding.

    Output spatial extent is ``floor((H + 2p - kh) / s) + 1``.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if c != ck:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ck}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid conv geometry stride={stride} padding={padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"kernel {(kh, kw)} larger than padded input {(h + 2 * padding, w + 2 * padding)}")
    p, s = padding, stride
    ho, wo = conv_output_size(h, kh, s, p), conv_output_size(w, kw, s, p)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wm = kernel.data.reshape(o, c * kh * kw)
    out = (cols @ wm.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (gm.T @ cols).reshape(kernel.shape)
        dcols = (gm @ wm).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros(xp.shape, dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dcols[..., i, j]
        gx = dxp[:, :, p : p + h, p : p + w] if p else dxp
        return gx, gw

    y = apply((x, kernel), out, backward)
    if bias is not None:
        y = add(y, reshape(bias, (1, o, 1, 1)))
    return y


# --- resampling --------------------------------------------------------------

RESIZE_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the bilinear weights for output sample i.

    Half-pixel (align_corners=False) convention: the source coordinate of
    output index i is ``(i + 0.5) * n_in / n_out - 0.5``, clamped at 0; the
    upper neighbour is clamped to the last input sample.
    """
    m = np.zeros((n_out, n_in), dtype=np.float64)
    ratio = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * ratio - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m.setflags(write=False)
    return m


def bilinear_resize(x: Tensor, scale: float) -> Tensor:
    """Bilinear resampling of the last two axes by ``scale`` (see :func:`_interp_matrix`)."""
    if scale not in RESIZE_SCALES:
        raise ValueError(f"scale {scale} not in {RESIZE_SCALES}")
    if x.ndim < 2:
        raise ShapeError(f"bilinear_resize needs rank >= 2, got {x.shape}")
    h, w = x.shape[-2:]
    ho, wo = h * scale, w * scale
    if ho < 1 or wo < 1 or ho != int(ho) or wo != int(wo):
        raise ShapeError(f"scale {scale} on {(h, w)} gives degenerate output {(ho, wo)}")
    if scale == 1.0:
        return apply((x,), x.data.copy(), lambda g: (g,))
    mh = _interp_matrix(h, int(ho)).astype(x.dtype)
    mw = _interp_matrix(w, int(wo)).astype(x.dtype)
    out = mh @ x.data @ mw.T
    return apply((x,), out, lambda g: (mh.T @ g @ mw,))
