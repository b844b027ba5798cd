"""Differentiable primitives.

Each function takes :class:`Tensor` (or array-like) operands and returns a new
tensor whose backward closure maps the output gradient to one gradient per
parent.  Convolutions and pooling work on channel-first layouts
``[B, C, *spatial]``.
"""

from __future__ import annotations

import itertools
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor, as_tensor, make_result

IntOrTuple = Union[int, Sequence[int]]
_COLS_BUDGET = 48 * 2 ** 20


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_prob(p: float, what: str) -> None:
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"{what} must lie in [0, 1], got {p}")


# --------------------------------------------------------------- arithmetic
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape))

    return make_result(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(ad ** exponent, (a,),
                       lambda g: (g * exponent * ad ** (exponent - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 1 or bd.ndim < 1 or ad.shape[-1] != (bd.shape[-2] if bd.ndim > 1 else bd.shape[0]):
        raise DimensionError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    if ad.ndim == 1 or bd.ndim == 1:
        raise DimensionError(f"matmul expects at least 2-D operands, got {ad.shape} and {bd.shape}")

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))

    return make_result(ad @ bd, (a, b), backward)


# -------------------------------------------------------------- activations
def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (a,), backward)


# --------------------------------------------------------------- reductions
def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.data.size // max(out.size, 1)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make_result(out, (a,), backward)


# ------------------------------------------------------------ shape helpers
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(index)

    def backward(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make_result(np.array(a.data[index]), (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


def split(a, sizes: Sequence[int], axis: int = 0) -> List[Tensor]:
    a = as_tensor(a)
    if int(np.sum(sizes)) != a.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover axis of length {a.shape[axis]}")
    out = []
    start = 0
    for n in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + n)
        out.append(getitem(a, tuple(idx)))
        start += n
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make_result(np.stack([t.data for t in ts], axis=axis), ts, backward)


def pad(a, widths: Sequence[Tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` has one (before, after) pair per axis."""
    a = as_tensor(a)
    widths = [tuple(w) for w in widths]
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return make_result(np.pad(a.data, widths), (a,), lambda g: (g[index],))


def repeat(a, repeats: int, axis: int) -> Tensor:
    """Nearest-neighbour upsampling along ``axis``."""
    a = as_tensor(a)
    shape = a.shape
    ax = axis % a.ndim

    def backward(g):
        new_shape = shape[:ax] + (shape[ax], repeats) + shape[ax + 1:]
        return (g.reshape(new_shape).sum(axis=ax + 1),)

    return make_result(np.repeat(a.data, repeats, axis=ax), (a,), backward)


def zero_stuff(a, factor: int, axis: int = -1) -> Tensor:
    """Place input samples at multiples of ``factor`` with zeros in between.

    Length grows from L to L*factor; this is the input dilation step of a
    fractionally-strided (transposed) convolution.
    """
    a = as_tensor(a)
    ax = axis % a.ndim
    shape = list(a.shape)
    shape[ax] *= factor
    out = np.zeros(shape)
    index = [slice(None)] * a.ndim
    index[ax] = slice(0, None, factor)
    index = tuple(index)
    out[index] = a.data
    return make_result(out, (a,), lambda g: (g[index],))


# ------------------------------------------------------------- convolution
def _ntuple(value: IntOrTuple, n: int) -> Tuple[int, ...]:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ConfigurationError(f"expected {n} values, got {value}")
    return value


def conv(x, w, b=None, stride: IntOrTuple = 1, dilation: IntOrTuple = 1,
         padding: Union[int, Sequence] = 0, groups: int = 1) -> Tensor:
    """N-d cross-correlation on ``x[B, C_in, *S]`` with ``w[C_out, C_in/groups, *K]``.

    ``padding`` is an int, a per-axis int, or a per-axis ``(before, after)`` pair.
    Patches are gathered into column matrices (in batch chunks of bounded
    memory) so each chunk is a single batched matrix product.
    """
    x, w = as_tensor(x), as_tensor(w)
    nd = w.ndim - 2
    if x.ndim != nd + 2:
        raise DimensionError(f"conv: input {x.shape} does not match kernel {w.shape}")
    c_out, cin_g = w.shape[:2]
    if groups < 1 or x.shape[1] != cin_g * groups or c_out % groups:
        raise DimensionError(f"conv: input channels {x.shape[1]} incompatible with kernel {w.shape}, groups={groups}")
    stride = _ntuple(stride, nd)
    dilation = _ntuple(dilation, nd)
    if min(stride) < 1 or min(dilation) < 1:
        raise ConfigurationError("stride and dilation must be >= 1")
    if isinstance(padding, (int, np.integer)):
        pads = [(int(padding), int(padding))] * nd
    else:
        pads = [(p, p) if isinstance(p, (int, np.integer)) else tuple(p) for p in padding]
    kernel = w.shape[2:]
    in_sp = x.shape[2:]
    out_sp = []
    for n, k, s, d, (lo, hi) in zip(in_sp, kernel, stride, dilation, pads):
        eff = (k - 1) * d + 1
        if n + lo + hi < eff:
            raise DimensionError(
                f"conv: padded length {n + lo + hi} shorter than effective kernel {eff}")
        out_sp.append((n + lo + hi - eff) // s + 1)
    out_sp = tuple(out_sp)

    B = x.shape[0]
    xd = x.data
    if any(lo or hi for lo, hi in pads):
        xd = np.pad(xd, [(0, 0), (0, 0)] + [tuple(p) for p in pads])
    padded_shape = xd.shape
    G = groups
    cout_g = c_out // G
    P = int(np.prod(out_sp)) if out_sp else 1
    offsets = list(itertools.product(*[range(k) for k in kernel]))
    n_off = len(offsets)
    wmat = w.data.reshape(G, cout_g, cin_g * n_off)
    # im2col in batch chunks of bounded memory
    chunk = max(1, int(_COLS_BUDGET // max(G * cin_g * n_off * P * 8, 1)))

    def window(o):
        return (slice(None), slice(None)) + tuple(
            slice(oi * d, oi * d + (n - 1) * s + 1, s)
            for oi, d, s, n in zip(o, dilation, stride, out_sp))

    def columns(lo, hi):
        xc = xd[lo:hi]
        cols = np.empty((hi - lo, G, cin_g, n_off, P))
        for k, o in enumerate(offsets):
            cols[:, :, :, k] = xc[window(o)].reshape(hi - lo, G, cin_g, P)
        return cols.reshape(hi - lo, G, cin_g * n_off, P)

    out = np.empty((B, G, cout_g, P))
    for lo in range(0, B, chunk):
        hi = min(B, lo + chunk)
        out[lo:hi] = wmat @ columns(lo, hi)
    out = out.reshape((B, c_out) + out_sp)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out += b.data.reshape((1, c_out) + (1,) * nd)
        parents.append(b)

    def backward(g):
        gr = g.reshape(B, G, cout_g, P)
        gx = np.zeros(padded_shape) if x.requires_grad else None
        gw = np.zeros_like(wmat) if w.requires_grad else None
        if gw is not None:
            for lo in range(0, B, chunk):
                hi = min(B, lo + chunk)
                gw += (gr[lo:hi] @ np.swapaxes(columns(lo, hi), -1, -2)).sum(axis=0)
        if gx is not None:
            dcols = (np.swapaxes(wmat, -1, -2) @ gr).reshape(B, G, cin_g, n_off, P)
            for k, o in enumerate(offsets):
                gx[window(o)] += dcols[:, :, :, k].reshape((B, G * cin_g) + out_sp)
        grads = []
        if gx is not None:
            unpad = (slice(None), slice(None)) + tuple(
                slice(lo, lo + n) for (lo, _), n in zip(pads, in_sp))
            grads.append(gx[unpad])
        else:
            grads.append(None)
        grads.append(gw.reshape(w.shape) if gw is not None else None)
        if b is not None:
            grads.append(g.sum(axis=(0,) + tuple(range(2, 2 + nd))))
        return grads

    return make_result(out, parents, backward)


def conv1d(x, w, b=None, stride: int = 1, dilation: int = 1, padding=0,
           causal_pad: bool = False, transposed: bool = False, groups: int = 1) -> Tensor:
    """1-D convolution on ``[C, L]`` or ``[B, C, L]`` inputs.

    ``causal_pad`` left-pads by ``(K-1)*dilation`` so output ``t`` only reads
    inputs ``<= t``.  ``transposed`` treats ``stride`` as an upsampling factor:
    inputs are spread onto a grid of length ``L*stride`` and convolved at unit
    stride, so with causal or ``"same"`` padding the output length is
    ``L*stride``.  ``padding="same"`` pads symmetrically (extra sample on the right).
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if w.ndim != 3:
        raise DimensionError(f"conv1d kernel must be [C_out, C_in, K], got {w.shape}")
    if stride < 1 or dilation < 1 or w.shape[2] < 1:
        raise ConfigurationError("conv1d needs K >= 1, stride >= 1, dilation >= 1")
    conv_stride = stride
    if transposed:
        if stride > 1:
            x = zero_stuff(x, stride, axis=-1)
        conv_stride = 1
    span = (w.shape[2] - 1) * dilation
    if causal_pad:
        pads = [(span, 0)]
    elif padding == "same":
        pads = [(span // 2, span - span // 2)]
    else:
        pads = [(padding, padding)] if isinstance(padding, (int, np.integer)) else [tuple(padding)]
    out = conv(x, w, b, stride=conv_stride, dilation=dilation, padding=pads, groups=groups)
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def conv3d(x, w, b=None, stride: IntOrTuple = 1, padding="same", dilation: IntOrTuple = 1,
           groups: int = 1) -> Tensor:
    """3-D convolution on ``[C, T, H, W]`` or ``[B, C, T, H, W]``.

    ``padding="same"`` applies symmetric zero padding of ``(K-1)//2`` per axis,
    which preserves extents at unit stride for odd kernels.
    """
    x, w = as_tensor(x), as_tensor(w)
    squeeze = x.ndim == 4
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if padding == "same":
        padding = tuple((k - 1) // 2 for k in w.shape[2:])
    out = conv(x, w, b, stride=stride, padding=padding, dilation=dilation, groups=groups)
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def conv3d_factored(x, w_spatial, w_temporal, mode: str) -> Tensor:
    """Pseudo-3D factorisation of a 3x3x3 convolution.

    ``w_spatial`` has kernel 1x3x3 and ``w_temporal`` 3x1x1, both same-padded.
    Mode ``"A"`` chains spatial then temporal, ``"B"`` sums the two applied in
    parallel, ``"C"`` adds the temporal response of the spatial output back onto
    the spatial output.
    """
    ws, wt = as_tensor(w_spatial), as_tensor(w_temporal)
    if ws.shape[2:] != (1, 3, 3) or wt.shape[2:] != (3, 1, 1):
        raise DimensionError(f"factored kernels must be 1x3x3 and 3x1x1, got {ws.shape} and {wt.shape}")
    if mode == "A":
        return conv3d(conv3d(x, ws), wt)
    if mode == "B":
        return add(conv3d(x, ws), conv3d(x, wt))
    if mode == "C":
        s = conv3d(x, ws)
        return add(s, conv3d(s, wt))
    raise ConfigurationError(f"unknown P3D mode {mode!r}; expected 'A', 'B' or 'C'")


def max_pool(x, kernel: IntOrTuple, stride: IntOrTuple, padding: IntOrTuple = 0) -> Tensor:
    """Max pooling over the trailing spatial axes of ``[B, C, *S]`` (ties go to the first offset)."""
    x = as_tensor(x)
    nd = x.ndim - 2
    kernel, stride, padding = _ntuple(kernel, nd), _ntuple(stride, nd), _ntuple(padding, nd)
    xd = x.data
    if any(padding):
        xd = np.pad(xd, [(0, 0), (0, 0)] + [(p, p) for p in padding], constant_values=-np.inf)
    out_sp = tuple((n - k) // s + 1 for n, k, s in zip(xd.shape[2:], kernel, stride))
    offsets = list(itertools.product(*[range(k) for k in kernel]))

    def window(o):
        return (slice(None), slice(None)) + tuple(
            slice(oi, oi + (n - 1) * s + 1, s) for oi, s, n in zip(o, stride, out_sp))

    best = np.full(x.shape[:2] + out_sp, -np.inf)
    arg = np.zeros(best.shape, dtype=np.int64)
    for k, o in enumerate(offsets):
        vals = xd[window(o)]
        better = vals > best
        best = np.where(better, vals, best)
        arg[better] = k
    padded_shape = xd.shape
    in_index = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(padding, x.shape[2:]))

    def backward(g):
        gx = np.zeros(padded_shape)
        for k, o in enumerate(offsets):
            gx[window(o)] += g * (arg == k)
        return (gx[in_index],)

    return make_result(best, (x,), backward)


def avg_pool1d(x, factor: int) -> Tensor:
    """Non-overlapping average pooling over the last axis (edge-replicated if ragged)."""
    x = as_tensor(x)
    L = x.shape[-1]
    rem = (-L) % factor
    if rem:
        x = concat([x] + [x[..., -1:]] * rem, axis=-1)
    shape = x.shape[:-1] + (x.shape[-1] // factor, factor)
    return mean(reshape(x, shape), axis=-1)


# ----------------------------------------------------------- normalisation
def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalisation of ``[B, C, *S]``.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); in eval mode the running buffers are
    used and the op is affine in ``x``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    C = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)
    xd = x.data
    gd = gamma.data.reshape(bshape)
    if training:
        mu = xd.mean(axis=axes, keepdims=True)
        var = xd.var(axis=axes, keepdims=True)
        n = xd.size // C
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(C)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(C) * (n / max(n - 1, 1))
    else:
        n = xd.size // C
        mu = running_mean.reshape(bshape)
        var = running_var.reshape(bshape)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    out = xhat * gd + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        dxhat = g * gd
        if training:
            gx = inv_std * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                            - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = dxhat * inv_std
        return (gx, ggamma, gbeta)

    return make_result(out, (x, gamma, beta), backward)


def weight_norm(v, g) -> Tensor:
    """Reparameterised weight ``g * v / ||v||`` with one norm per output channel (axis 0)."""
    v, g = as_tensor(v), as_tensor(g)
    axes = tuple(range(1, v.ndim))
    norm = sqrt(sum(mul(v, v), axis=axes, keepdims=True))
    scale = div(reshape(g, (v.shape[0],) + (1,) * (v.ndim - 1)), norm)
    return mul(v, scale)


# ------------------------------------------------------------ regularisers
def dropout(x, p: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    """Inverted dropout; identity at eval time or when ``p == 0``."""
    _check_prob(p, "dropout probability")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if p == 1.0:
        return mul(x, np.zeros(x.shape))
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, mask)


def spatial_dropout(x, p: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    """Drop whole channels of ``[B, C, *S]`` (one Bernoulli draw per sample and channel)."""
    _check_prob(p, "spatial dropout probability")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    shape = x.shape[:2] + (1,) * (x.ndim - 2)
    if p == 1.0:
        return mul(x, np.zeros(shape))
    mask = (rng.random(shape) >= p) / (1.0 - p)
    return mul(x, mask)


# ------------------------------------------------------------------ losses
def length_mask(x, lengths, axis: int = 1) -> Tensor:
    """Zero every position of ``x`` at or beyond ``lengths[b]`` along ``axis`` (batch on axis 0)."""
    x = as_tensor(x)
    lengths = np.asarray(lengths)
    L = x.shape[axis]
    keep = (np.arange(L)[None, :] < lengths[:, None]).astype(np.float64)
    shape = [1] * x.ndim
    shape[0], shape[axis] = x.shape[0], L
    return mul(x, keep.reshape(shape))


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error."""
    pred, target = as_tensor(pred), as_tensor(target)
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        s = np.sign(diff) * (g / n)
        return (s, -s)

    return make_result(np.asarray(np.abs(diff).mean()), (pred, target), backward)


def cross_entropy(logits, targets, label_smoothing: float = 0.0,
                  ignore_index: Optional[int] = None) -> Tensor:
    """Mean cross entropy of ``logits[N, V]`` against integer ``targets[N]``.

    With smoothing ``eps`` the target distribution is ``(1-eps)*onehot + eps/V``.
    Positions whose target equals ``ignore_index`` contribute nothing and are
    excluded from the mean.
    """
    _check_prob(label_smoothing, "label smoothing")
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [N, V] logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    N, V = logits.shape
    if targets.shape[0] != N:
        raise DimensionError(f"{N} logit rows but {targets.shape[0]} targets")
    valid = np.ones(N, dtype=bool) if ignore_index is None else targets != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ContractError("cross_entropy: every target is ignored")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    q = np.full((N, V), label_smoothing / V)
    q[np.arange(N), np.where(valid, targets, 0)] += 1.0 - label_smoothing
    q[~valid] = 0.0
    loss = -(q * logp).sum() / n_valid

    def backward(g):
        grad = (np.exp(logp) * valid[:, None] - q) * (g / n_valid)
        return (grad,)

    return make_result(np.asarray(loss), (logits,), backward)
