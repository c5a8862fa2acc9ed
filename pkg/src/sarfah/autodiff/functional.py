"""Differentiable operations on :class:`Tensor`.

Every op computes its forward value with NumPy and registers a closure that
maps the output gradient to input gradients.  Heavier layers (convolution,
deformable convolution, normalisation, the selective scan) are fused into a
single node with a hand-written backward pass.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .tensor import ShapeError, Tensor, as_tensor

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return Tensor._from_op(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    x = a.data
    return Tensor._from_op(x**p, (a,), lambda g: (g * p * x ** (p - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return Tensor._from_op(np.log(x), (a,), lambda g: (g / x,))


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    x = a.data
    return Tensor._from_op(np.abs(x), (a,), lambda g: (g * np.sign(x),))


# ---------------------------------------------------------------------------
# activations


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    s = expit(x)
    return Tensor._from_op(x * s, (a,), lambda g: (g * s * (1.0 + x * (1.0 - s)),))


def gelu(a) -> Tensor:
    """Exact (erf) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return Tensor._from_op(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return Tensor._from_op(np.logaddexp(0.0, x), (a,), lambda g: (g * expit(x),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum(a, axes, keepdims) * (1.0 / n)


def amax(a, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum; the gradient is split evenly between tied maxima."""
    a = as_tensor(a)
    x = a.data
    axes = _norm_axes(axis, a.ndim)
    m = x.max(axis=axes, keepdims=True)
    mask = x == m
    share = mask / mask.sum(axis=axes, keepdims=True)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * share,)

    out = m if keepdims else np.squeeze(m, axis=axes)
    return Tensor._from_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return Tensor._from_op(np.broadcast_to(a.data, shape), (a,), lambda g: (_unbroadcast(g, old),))


def flip(a, axis) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(np.flip(a.data, axis), (a,), lambda g: (np.flip(g, axis),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(idx)

    def backward(g):
        out = np.zeros(shape)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return Tensor._from_op(a.data[idx], (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return Tensor._from_op(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def split(a, sections: int, axis: int = 0) -> list[Tensor]:
    a = as_tensor(a)
    n = a.shape[axis]
    if n % sections:
        raise ShapeError(f"cannot split axis of length {n} into {sections}")
    step = n // sections
    out = []
    for i in range(sections):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(i * step, (i + 1) * step)
        out.append(getitem(a, tuple(idx)))
    return out


# ---------------------------------------------------------------------------
# products


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError("matmul needs operands of rank >= 2")

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(ad @ bd, (a, b), backward)


def _einsum_grad(g, g_sub, other, other_sub, target_sub, target_shape):
    avail = set(g_sub) | set(other_sub)
    kept = "".join(c for c in target_sub if c in avail)
    r = np.einsum(f"{g_sub},{other_sub}->{kept}", g, other, optimize=True)
    if kept != target_sub:
        missing = [i for i, c in enumerate(target_sub) if c not in avail]
        r = np.expand_dims(r, missing)
        r = np.broadcast_to(r, target_shape).copy()
    return r


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum with explicit output (``'ij,jk->ik'``)."""
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    if len(set(sa)) != len(sa) or len(set(sb)) != len(sb):
        raise ShapeError("repeated indices within an operand are not supported")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _einsum_grad(g, out_sub, bd, sb, sa, ad.shape) if a.requires_grad else None
        gb = _einsum_grad(g, out_sub, ad, sa, sb, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(np.einsum(subscripts, ad, bd, optimize=True), (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` on the last axis; ``weight`` is (out, in)."""
    out = matmul(x, transpose(weight))
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------------------
# convolution


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else tuple(v)


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> strided view (N, C, Ho, Wo, kh, kw)."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def _col2im(dcols: np.ndarray, hp: int, wp: int, sh: int, sw: int) -> np.ndarray:
    """Adjoint of :func:`_im2col` for a (N, C, Ho, Wo, kh, kw) gradient."""
    n, c, ho, wo, kh, kw = dcols.shape
    out = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += dcols[:, :, :, :, i, j]
    return out


def conv2d(x, weight, bias=None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """2D cross-correlation with zero padding.

    ``weight`` is (O, C/groups, kh, kw), or (N, O, C, kh, kw) for per-sample
    kernels (``groups`` must then be 1; ``bias`` is then (N, O)).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    xd, wd = x.data, weight.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d input must be (N, C, H, W), got {xd.shape}")
    per_sample = wd.ndim == 5
    if per_sample:
        if groups != 1 or wd.shape[0] != xd.shape[0] or wd.shape[2] != xd.shape[1]:
            raise ShapeError(f"per-sample kernels {wd.shape} incompatible with input {xd.shape}")
    elif wd.ndim != 4 or xd.shape[1] != wd.shape[1] * groups or wd.shape[0] % groups:
        raise ShapeError(f"kernel {wd.shape} incompatible with input {xd.shape} (groups={groups})")
    n, c, h, w = xd.shape
    kh, kw = wd.shape[-2:]
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    hp, wp = xp.shape[2:]
    if hp < kh or wp < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    cols = _im2col(xp, kh, kw, sh, sw)
    ho, wo = cols.shape[2:4]

    if per_sample:
        out = np.einsum("nchwij,nocij->nohw", cols, wd, optimize=True)
    elif groups == 1:
        out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    else:
        g_cols = cols.reshape(n, groups, c // groups, ho, wo, kh, kw)
        g_w = wd.reshape(groups, wd.shape[0] // groups, c // groups, kh, kw)
        out = np.einsum("ngchwij,gocij->ngohw", g_cols, g_w, optimize=True).reshape(n, -1, ho, wo)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out = out + (bias.data[:, :, None, None] if per_sample else bias.data[None, :, None, None])

    def backward(g):
        gx = gw = gb = None
        if per_sample:
            if weight.requires_grad:
                gw = np.einsum("nohw,nchwij->nocij", g, cols, optimize=True)
            if x.requires_grad:
                dcols = np.einsum("nohw,nocij->nchwij", g, wd, optimize=True)
        elif groups == 1:
            if weight.requires_grad:
                gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
            if x.requires_grad:
                dcols = np.tensordot(g, wd, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        else:
            gg = g.reshape(n, groups, -1, ho, wo)
            g_cols = cols.reshape(n, groups, c // groups, ho, wo, kh, kw)
            g_w = wd.reshape(groups, wd.shape[0] // groups, c // groups, kh, kw)
            if weight.requires_grad:
                gw = np.einsum("ngohw,ngchwij->gocij", gg, g_cols, optimize=True).reshape(wd.shape)
            if x.requires_grad:
                dcols = np.einsum("ngohw,gocij->ngchwij", gg, g_w, optimize=True).reshape(n, c, ho, wo, kh, kw)
        if x.requires_grad:
            gxp = _col2im(dcols, hp, wp, sh, sw)
            gx = gxp[:, :, ph : ph + h, pw : pw + w]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(2, 3)) if per_sample else g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


def _bilinear_taps(py: np.ndarray, px: np.ndarray, h: int, w: int):
    """Corner indices, weights and position-derivatives of bilinear sampling.

    Yields ``(flat_index, weight, dweight_dy, dweight_dx)`` for the four
    corners; taps outside the image carry zero weight.
    """
    y0 = np.floor(py)
    x0 = np.floor(px)
    ly = py - y0
    lx = px - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    hy, hx = 1.0 - ly, 1.0 - lx
    corners = (
        (y0, x0, hy * hx, -hx, -hy),
        (y0, x0 + 1, hy * lx, -lx, hy),
        (y0 + 1, x0, ly * hx, hx, -ly),
        (y0 + 1, x0 + 1, ly * lx, lx, ly),
    )
    for yc, xc, wgt, dwy, dwx in corners:
        valid = (yc >= 0) & (yc < h) & (xc >= 0) & (xc < w)
        flat = np.where(valid, np.clip(yc, 0, h - 1) * w + np.clip(xc, 0, w - 1), 0)
        yield flat, wgt * valid, dwy * valid, dwx * valid


def deform_conv2d(x, offsets, weight, bias=None, stride=1, padding=None) -> Tensor:
    """Deformable convolution with bilinear sampling.

    ``offsets`` is (N, 2*kh*kw, Ho, Wo) with channel ``2k`` the row and
    ``2k + 1`` the column displacement of kernel tap ``k`` (row-major taps).
    Samples falling outside the image read zero.
    """
    x, offsets, weight = as_tensor(x), as_tensor(offsets), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    xd, od, wd = x.data, offsets.data, weight.data
    n, c, h, w = xd.shape
    o, ci, kh, kw = wd.shape
    if ci != c:
        raise ShapeError(f"kernel {wd.shape} incompatible with input {xd.shape}")
    k = kh * kw
    sh, sw = _pair(stride)
    ph, pw = _pair((kh // 2, kw // 2) if padding is None else padding)
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if od.shape != (n, 2 * k, ho, wo):
        raise ShapeError(f"offsets must have shape {(n, 2 * k, ho, wo)}, got {od.shape}")

    ki, kj = np.divmod(np.arange(k), kw)
    base_y = (np.arange(ho) * sh - ph)[None, None, :, None] + ki[None, :, None, None]
    base_x = (np.arange(wo) * sw - pw)[None, None, None, :] + kj[None, :, None, None]
    py = base_y + od[:, 0::2]  # (N, K, Ho, Wo)
    px = base_x + od[:, 1::2]
    m = k * ho * wo
    x_flat = xd.reshape(n, c, h * w)
    taps = []
    cols = np.zeros((n, c, m))
    for flat, wgt, dwy, dwx in _bilinear_taps(py, px, h, w):
        flat = flat.reshape(n, m)
        vals = np.take_along_axis(x_flat, np.broadcast_to(flat[:, None, :], (n, c, m)), axis=2)
        cols += vals * wgt.reshape(n, 1, m)
        taps.append((flat, wgt.reshape(n, 1, m), dwy.reshape(n, 1, m), dwx.reshape(n, 1, m), vals))
    cols5 = cols.reshape(n, c, k, ho, wo)
    w3 = wd.reshape(o, c, k)
    out = np.einsum("nckhw,ock->nohw", cols5, w3, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gw = np.einsum("nohw,nckhw->ock", g, cols5, optimize=True).reshape(wd.shape) if weight.requires_grad else None
        gx = goff = gb = None
        if x.requires_grad or offsets.requires_grad:
            dcols = np.einsum("nohw,ock->nckhw", g, w3, optimize=True).reshape(n, c, m)
            if x.requires_grad:
                acc = np.zeros(n * c * h * w)
                base = (np.arange(n * c) * (h * w)).reshape(n, c, 1)
                for flat, wgt, _, _, _ in taps:
                    idx = (base + flat[:, None, :]).ravel()
                    acc += np.bincount(idx, weights=(dcols * wgt).ravel(), minlength=n * c * h * w)
                gx = acc.reshape(n, c, h, w)
            if offsets.requires_grad:
                gy = np.zeros((n, m))
                gxo = np.zeros((n, m))
                for _, _, dwy, dwx, vals in taps:
                    dv = (dcols * vals).sum(axis=1)
                    gy += dv * dwy[:, 0]
                    gxo += dv * dwx[:, 0]
                goff = np.empty_like(od)
                goff[:, 0::2] = gy.reshape(n, k, ho, wo)
                goff[:, 1::2] = gxo.reshape(n, k, ho, wo)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        grads = (gx, goff, gw)
        return grads if bias is None else grads + (gb,)

    parents = (x, offsets, weight) if bias is None else (x, offsets, weight, bias)
    return Tensor._from_op(out, parents, backward)


def max_pool2d(x, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling (stride = kernel); trailing rows/cols that
    do not fill a window are dropped."""
    x = as_tensor(x)
    xd = x.data
    n, c, h, w = xd.shape
    ho, wo = h // kernel, w // kernel
    if ho == 0 or wo == 0:
        raise ShapeError(f"pool window {kernel} larger than input {h}x{w}")
    crop = xd[:, :, : ho * kernel, : wo * kernel]
    win = crop.reshape(n, c, ho, kernel, wo, kernel).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, -1)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gw = gw.reshape(n, c, ho, wo, kernel, kernel).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * kernel, wo * kernel)
        gx = np.zeros_like(xd)
        gx[:, :, : ho * kernel, : wo * kernel] = gw
        return (gx,)

    return Tensor._from_op(out, (x,), backward)


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-centred linear interpolation weights (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def resize_bilinear(x, size) -> Tensor:
    """Bilinear resampling of the last two axes to ``size`` (half-pixel centres)."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    ho, wo = _pair(size)
    if (ho, wo) == (h, w):
        return x
    my = _bilinear_matrix(h, ho)
    mx = _bilinear_matrix(w, wo)
    out = np.einsum("oh,...hw,pw->...op", my, x.data, mx, optimize=True)
    return Tensor._from_op(out, (x,), lambda g: (np.einsum("oh,...op,pw->...hw", my, g, mx, optimize=True),))


def upsample2x(x) -> Tensor:
    h, w = x.shape[-2:]
    return resize_bilinear(x, (2 * h, 2 * w))


def global_avg_pool(x) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    return mean(x, axis=(2, 3))


# ---------------------------------------------------------------------------
# normalisation


def batch_norm(x, gamma, beta, running_mean, running_var, training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalisation of (N, C, H, W).

    In training mode the batch statistics (biased variance) normalise the
    input and update the running buffers in place (unbiased variance).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    axes = (0, 2, 3)
    cnt = xd.shape[0] * xd.shape[2] * xd.shape[3]
    shape = (1, -1, 1, 1)
    if training:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if running_mean is not None:
            unbiased = var * cnt / max(cnt - 1, 1)
            running_mean[...] = (1 - momentum) * running_mean + momentum * mu
            running_var[...] = (1 - momentum) * running_var + momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(shape)) * inv.reshape(shape)
    gd = gamma.data.reshape(shape)
    out = gd * xhat + beta.data.reshape(shape)

    def backward(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            if training:
                gx = (inv.reshape(shape) / cnt) * (
                    cnt * dxhat
                    - dxhat.sum(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
                )
            else:
                gx = dxhat * inv.reshape(shape)
        return gx, gg, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward)


def layer_norm(x, gamma, beta, axis: int = 1, eps: float = 1e-5) -> Tensor:
    """Normalise over a single axis (channels for NCHW maps) with an affine map."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    axis = axis % xd.ndim
    c = xd.shape[axis]
    shape = [1] * xd.ndim
    shape[axis] = c
    mu = xd.mean(axis=axis, keepdims=True)
    var = xd.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    gd = gamma.data.reshape(shape)
    out = gd * xhat + beta.data.reshape(shape)
    other = tuple(i for i in range(xd.ndim) if i != axis)

    def backward(g):
        gg = (g * xhat).sum(axis=other) if gamma.requires_grad else None
        gbeta = g.sum(axis=other) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            gx = (inv / c) * (
                c * dxhat - dxhat.sum(axis=axis, keepdims=True) - xhat * (dxhat * xhat).sum(axis=axis, keepdims=True)
            )
        return gx, gg, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# losses


def l1_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    return mean(abs(sub(pred, target)))


def custom_op(fn_forward, fn_backward, *inputs) -> Tensor:
    """Wrap a NumPy function pair as a graph node.

    ``fn_backward(g, *input_arrays)`` returns one gradient per input.
    """
    inputs = tuple(as_tensor(t) for t in inputs)
    arrays = [t.data for t in inputs]
    out = fn_forward(*arrays)
    return Tensor._from_op(out, inputs, lambda g: tuple(fn_backward(g, *arrays)))
