"""
Differentiable operations on Tensors.

Each op computes its forward value with NumPy and hands `record()` a backward
rule that maps the output gradient to one gradient per input. Binary ops need
identical shapes or a Python scalar operand; broadcasting only happens through
the explicit `expand` op so gradient reductions stay visible.
"""

from __future__ import annotations

import math

from numbers import Number
from typing import Literal, Sequence

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view

from app.engine.autodiff import Parameter, is_grad_enabled, record
from app.engine.tensor import Tensor, as_tensor
from app.utils.exceptions import InvalidParameterError, ShapeMismatchError


ElementwiseOp = Literal['add', 'sub', 'mul', 'sigmoid', 'silu', 'gelu', 'exp']
ReduceOp = Literal['mean', 'sum', 'max', 'argmax']

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _is_scalar(value) -> bool:
    return isinstance(value, Number) and not isinstance(value, bool)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(op, a.shape, b.shape, 'binary ops need identical shapes; use expand() to broadcast')


# ---------------------------------------------------------------- arithmetic


def add(a: Tensor, b: Tensor | float) -> Tensor:
    if _is_scalar(b):
        return record('add_scalar', (a,), a.data + b, lambda g: (g,))
    _same_shape('add', a, b)
    return record('add', (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor | float) -> Tensor:
    if _is_scalar(b):
        return record('sub_scalar', (a,), a.data - b, lambda g: (g,))
    _same_shape('sub', a, b)
    return record('sub', (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor | float) -> Tensor:
    if _is_scalar(b):
        return record('mul_scalar', (a,), a.data * b, lambda g: (g * b,))
    _same_shape('mul', a, b)
    a_data, b_data = a.data, b.data
    return record('mul', (a, b), a_data * b_data, lambda g: (g * b_data, g * a_data))


def neg(a: Tensor) -> Tensor:
    return record('neg', (a,), -a.data, lambda g: (-g,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and exactly 0.5 at 0
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return record('sigmoid', (a,), y, lambda g: (g * y * (1.0 - y),))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return record('silu', (a,), x * s, lambda g: (g * (s + x * s * (1.0 - s)),))


def gelu(a: Tensor) -> Tensor:
    """GeLU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def rule(g):
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner),)

    return record('gelu', (a,), y, rule)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return record('exp', (a,), y, lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return record('log', (a,), np.log(x), lambda g: (g / x,))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    y = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    return record('softplus', (a,), y, lambda g: (g * _sigmoid(x),))


def clamp_min(a: Tensor, low: float) -> Tensor:
    x = a.data
    mask = x >= low
    return record('clamp_min', (a,), np.maximum(x, low), lambda g: (g * mask,))


def elementwise(op: ElementwiseOp, a: Tensor, b: Tensor | float | None = None) -> Tensor:
    """
    Dispatch one of the elementwise primitives by name.

    Args:
        op: add, sub, mul (binary) or sigmoid, silu, gelu, exp (unary).
        a: First operand.
        b: Second operand for binary ops: a Tensor of identical shape or a scalar.

    Returns:
        Tensor: Result with the shape of `a`.
    """
    binary = {'add': add, 'sub': sub, 'mul': mul}
    unary = {'sigmoid': sigmoid, 'silu': silu, 'gelu': gelu, 'exp': exp}
    if op in binary:
        if b is None:
            raise InvalidParameterError('b', b, f'{op} needs a second operand')
        return binary[op](a, b)
    if op in unary:
        return unary[op](a)
    raise InvalidParameterError('op', op, f'expected one of {sorted(binary) + sorted(unary)}')


# ---------------------------------------------------------------- shaping


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    return record('reshape', (a,), a.data.reshape(tuple(shape)), lambda g: (g.reshape(original),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return record('transpose', (a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(d1 != d2 for i, (d1, d2) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeMismatchError('concat', ref, t.shape, f'all dims except axis {axis} must agree')
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=ax))

    return record('concat', tuple(tensors), np.concatenate([t.data for t in tensors], axis=ax), rule)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    ax = axis % a.ndim
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)

    def rule(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return record('slice', (a,), a.data[index], rule)


def split(a: Tensor, sections: int | Sequence[int], axis: int = -1) -> list[Tensor]:
    """Split along `axis` into equal parts (int) or parts of the given sizes."""
    length = a.shape[axis]
    if isinstance(sections, int):
        if length % sections:
            raise ShapeMismatchError('split', a.shape, (sections,), f'axis {axis} of size {length} is not divisible')
        sizes = [length // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != length:
            raise ShapeMismatchError('split', a.shape, tuple(sizes), 'section sizes must sum to the axis length')
    parts, start = [], 0
    for size in sizes:
        parts.append(slice_axis(a, start, start + size, axis))
        start += size
    return parts


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of size-1 axes to `shape` (same rank required)."""
    shape = tuple(shape)
    if a.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise ShapeMismatchError('expand', a.shape, shape, 'only size-1 axes can be expanded')
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)
    return record('expand', (a,), np.broadcast_to(a.data, shape), lambda g: (g.sum(axis=axes, keepdims=True),))


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data)


# ---------------------------------------------------------------- reductions


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(sorted(ax % ndim for ax in axis))


def reduce(op: ReduceOp, x: Tensor, axis: int | Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
    """
    Reduce over `axis` (all axes when None).

    argmax returns indices (stored in the tensor's float dtype) of the first
    maximal entry, i.e. ties resolve to the lowest index; it is not differentiable.
    max routes its gradient to that same entry.
    """
    axes = _normalize_axes(axis, x.ndim)
    data = x.data

    def restore(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return g

    if op == 'sum':
        out = data.sum(axis=axes, keepdims=keepdims)
        return record('sum', (x,), out, lambda g: (np.broadcast_to(restore(g), x.shape).copy(),))
    if op == 'mean':
        count = int(np.prod([x.shape[ax] for ax in axes])) if axes else 1
        out = data.mean(axis=axes, keepdims=keepdims)
        return record('mean', (x,), out, lambda g: (np.broadcast_to(restore(g) / count, x.shape).copy(),))
    if op in ('max', 'argmax'):
        tail = list(range(-len(axes), 0))
        if len(axes) != 1:
            moved = np.moveaxis(data, axes, tail)
            flat = moved.reshape(moved.shape[: data.ndim - len(axes)] + (-1,))
        else:
            flat = np.moveaxis(data, axes[0], -1)
        index = np.asarray(np.argmax(flat, axis=-1))
        if op == 'argmax':
            out = index.astype(data.dtype)
            if keepdims:
                out = np.expand_dims(out, axes)
            return Tensor(out)
        out = np.take_along_axis(flat, index[..., None], axis=-1)[..., 0]
        if keepdims:
            out = np.expand_dims(out, axes)

        def rule(g):
            g_flat = np.zeros(flat.shape, dtype=data.dtype)
            g_core = g if not keepdims else np.squeeze(g, axis=axes)
            np.put_along_axis(g_flat, index[..., None], g_core[..., None], axis=-1)
            if len(axes) != 1:
                g_moved = g_flat.reshape(moved.shape)
                return (np.moveaxis(g_moved, tail, axes),)
            return (np.moveaxis(g_flat, -1, axes[0]),)

        return record('max', (x,), out, rule)
    raise InvalidParameterError('op', op, "expected one of 'mean', 'sum', 'max', 'argmax'")


def argmax_indices(x: Tensor | np.ndarray, axis: int = -1) -> np.ndarray:
    """Integer argmax with lowest-index tie-break."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.argmax(data, axis=axis)


# ---------------------------------------------------------------- linear algebra


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last dimension: x @ W + b."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeMismatchError('linear', x.shape, W.shape, 'last dim of x must equal the rows of W')
    cin, cout = W.shape
    if b is not None and b.shape != (cout,):
        raise ShapeMismatchError('linear', W.shape, b.shape, f'bias must have shape ({cout},)')
    x_data, w_data = x.data, W.data
    out = x_data @ w_data
    if b is not None:
        out = out + b.data

    def rule(g):
        g2 = g.reshape(-1, cout)
        gx = g @ w_data.T
        gw = x_data.reshape(-1, cin).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, W) if b is None else (x, W, b)
    return record('linear', inputs, out, rule)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return record('softmax', (x,), y, lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    probs = np.exp(y)
    return record('log_softmax', (x,), y, lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def one_hot(indices: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    out = np.zeros(indices.shape + (num_classes,), dtype=dtype)
    np.put_along_axis(out, indices[..., None].astype(np.int64), 1.0, axis=-1)
    return out


def straight_through(soft: Tensor, axis: int = -1) -> Tensor:
    """Forward: one-hot of argmax(soft) (lowest index on ties). Backward: identity to `soft`."""
    ax = axis % soft.ndim
    index = np.argmax(soft.data, axis=ax)
    hard = np.moveaxis(one_hot(index, soft.shape[ax], soft.data.dtype), -1, ax)
    return record('straight_through', (soft,), hard, lambda g: (g,))


# ---------------------------------------------------------------- normalization


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dimension, then apply gamma/beta."""
    if eps <= 0:
        raise InvalidParameterError('eps', eps, 'must be > 0')
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError('layernorm', x.shape, gamma.shape, f'gamma/beta must have shape ({c},)')
    data = x.data
    mu = data.mean(axis=-1, keepdims=True)
    centered = data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    g_data = gamma.data
    out = xhat * g_data + beta.data

    def rule(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * g_data
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return record('layernorm', (x, gamma, beta), out, rule)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Parameter,
    running_var: Parameter,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of [B, C, H, W]; batch statistics in training mode."""
    if x.ndim != 4:
        raise ShapeMismatchError('batchnorm2d', x.shape, gamma.shape, 'expected [B, C, H, W]')
    if eps <= 0:
        raise InvalidParameterError('eps', eps, 'must be > 0')
    data = x.data
    shape = (1, -1, 1, 1)
    g_data = gamma.data.reshape(shape)
    if training:
        axes = (0, 2, 3)
        n = data.shape[0] * data.shape[2] * data.shape[3]
        mu = data.mean(axis=axes, keepdims=True)
        centered = data - mu
        var = (centered**2).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        if is_grad_enabled():
            unbiased = var.reshape(-1) * (n / max(n - 1, 1))
            running_mean.assign((1 - momentum) * running_mean.data + momentum * mu.reshape(-1))
            running_var.assign((1 - momentum) * running_var.data + momentum * unbiased)

        def rule(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * g_data
            dx = inv_std * (
                dxhat - dxhat.mean(axis=axes, keepdims=True) - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            )
            return dx, dgamma, dbeta
    else:
        inv_std = 1.0 / np.sqrt(running_var.data.reshape(shape) + eps)
        xhat = (data - running_mean.data.reshape(shape)) * inv_std

        def rule(g):
            axes = (0, 2, 3)
            return g * g_data * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = xhat * g_data + beta.data.reshape(shape)
    return record('batchnorm2d', (x, gamma, beta), out, rule)


# ---------------------------------------------------------------- convolution


def _pad_hw(data: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return data
    return np.pad(data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _out_size(padded: int, k: int, stride: int) -> int:
    return (padded - k) // stride + 1


def _check_window(op: str, x: Tensor, kh: int, kw: int, ph: int, pw: int) -> tuple[int, int]:
    hp, wp = x.shape[2] + 2 * ph, x.shape[3] + 2 * pw
    if kh > hp or kw > wp:
        raise ShapeMismatchError(op, x.shape, (kh, kw), f'kernel larger than padded input {hp}x{wp}')
    return hp, wp


def depthwise_conv2d(
    x: Tensor,
    k: Tensor,
    stride: int = 1,
    padding: int | None = None,
    bias: Tensor | None = None,
) -> Tensor:
    """
    Per-channel 2D cross-correlation of x [B, C, H, W] with k [C, kh, kw].

    padding=None selects 'same' padding (kh // 2), which preserves H, W at stride 1.
    """
    if x.ndim != 4 or k.ndim != 3 or k.shape[0] != x.shape[1]:
        raise ShapeMismatchError('depthwise_conv2d', x.shape, k.shape, 'expected x [B,C,H,W] and k [C,kh,kw]')
    _, kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidParameterError('kernel', (kh, kw), 'kernel sizes must be odd')
    if stride < 1:
        raise InvalidParameterError('stride', stride, 'must be >= 1')
    ph = kh // 2 if padding is None else padding
    pw = kw // 2 if padding is None else padding
    hp, wp = _check_window('depthwise_conv2d', x, kh, kw, ph, pw)
    ho, wo = _out_size(hp, kh, stride), _out_size(wp, kw, stride)
    xp = _pad_hw(x.data, ph, pw)
    k_data = k.data
    b, c = x.shape[:2]
    out = np.zeros((b, c, ho, wo), dtype=np.result_type(xp, k_data))
    views = {}
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
            views[i, j] = patch
            out += patch * k_data[:, i, j][None, :, None, None]
    if bias is not None:
        out += bias.data[None, :, None, None]

    def rule(g):
        gxp = np.zeros_like(xp, dtype=g.dtype)
        gk = np.empty_like(k_data)
        for (i, j), patch in views.items():
            gk[:, i, j] = np.einsum('bchw,bchw->c', patch, g)
            gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                g * k_data[:, i, j][None, :, None, None]
            )
        gx = gxp[:, :, ph : ph + x.shape[2], pw : pw + x.shape[3]]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    inputs = (x, k) if bias is None else (x, k, bias)
    return record('depthwise_conv2d', inputs, out, rule)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Dense 2D cross-correlation of x [B, Cin, H, W] with w [Cout, Cin, kh, kw] (im2col + GEMM)."""
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != x.shape[1]:
        raise ShapeMismatchError('conv2d', x.shape, w.shape, 'expected x [B,Cin,H,W] and w [Cout,Cin,kh,kw]')
    cout, cin, kh, kw = w.shape
    hp, wp = _check_window('conv2d', x, kh, kw, padding, padding)
    ho, wo = _out_size(hp, kh, stride), _out_size(wp, kw, stride)
    xp = _pad_hw(x.data, padding, padding)
    bsz = x.shape[0]
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, cin * kh * kw)
    w_mat = w.data.reshape(cout, -1)
    out = cols @ w_mat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)

    def rule(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ w_mat).reshape(bsz, ho, wo, cin, kh, kw)
        gxp = np.zeros_like(xp, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + x.shape[2], padding : padding + x.shape[3]]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return record('conv2d', inputs, out, rule)


def to_tensor(value, like: Tensor | None = None) -> Tensor:
    """Wrap a constant, matching the precision of `like` when given."""
    return as_tensor(value, dtype=like.dtype if like is not None else None)
