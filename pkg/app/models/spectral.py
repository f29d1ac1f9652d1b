"""
Orthonormal 2D DCT, frequency grids, decay matrices and the heat-conduction operator.

The transform is applied separably over the last two axes with dense DCT-II
matrices, so dct2(x) = D_H @ x @ D_W^T and idct2(X) = D_H^T @ X @ D_W. With the
orthonormal scaling each transform is the other's transpose, which is also
what the backward rules use.

A feature map U0 diffused for time t with per-frequency diffusivity k is

    U_t = idct2(dct2(U0) * exp(-k * (omega_x^2 + omega_y^2) * t))

on the DCT-native grid omega = pi * index / size (reflective boundaries).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from app.engine import functional as F
from app.engine.autodiff import record
from app.engine.tensor import Tensor, as_tensor
from app.utils.exceptions import InvalidParameterError, ShapeMismatchError


DIFFUSION_TIME = 1.0


@lru_cache(maxsize=64)
def _dct_matrix(n: int, dtype: str, scale: float) -> np.ndarray:
    matrix = scipy.fft.dct(np.eye(n), type=2, norm='ortho', axis=0) * scale
    matrix.setflags(write=False)
    return matrix.astype(dtype)


def dct_matrix(n: int, dtype: np.dtype | str = np.float64, scale: float = 1.0) -> np.ndarray:
    """
    Orthonormal DCT-II matrix D with D[k, i] = s_k * cos(pi * (2i + 1) * k / (2n)).

    `scale` multiplies the whole matrix; anything other than 1.0 breaks
    orthonormality and is only meant for fault-injection checks.
    """
    if n < 1:
        raise InvalidParameterError('n', n, 'must be >= 1')
    return _dct_matrix(int(n), np.dtype(dtype).name, float(scale))


def _apply(x: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    # left @ x @ right over the last two axes
    return np.matmul(np.matmul(left, x), right)


def dct2(x: Tensor, scale: float = 1.0) -> Tensor:
    """Orthonormal type-II DCT over the last two axes of x [..., H, W]."""
    if x.ndim < 2:
        raise ShapeMismatchError('dct2', x.shape, (), 'need at least two axes [..., H, W]')
    h, w = x.shape[-2:]
    d_h = dct_matrix(h, x.data.dtype, scale)
    d_w = dct_matrix(w, x.data.dtype, scale)
    out = _apply(x.data, d_h, d_w.T)
    return record('dct2', (x,), out, lambda g: (_apply(g, d_h.T, d_w),))


def idct2(x: Tensor, scale: float = 1.0) -> Tensor:
    """Inverse of dct2 (orthonormal type-III DCT) over the last two axes."""
    if x.ndim < 2:
        raise ShapeMismatchError('idct2', x.shape, (), 'need at least two axes [..., H, W]')
    h, w = x.shape[-2:]
    d_h = dct_matrix(h, x.data.dtype, scale)
    d_w = dct_matrix(w, x.data.dtype, scale)
    out = _apply(x.data, d_h.T, d_w)
    return record('idct2', (x,), out, lambda g: (_apply(g, d_h, d_w.T),))


@dataclass(frozen=True)
class FrequencyGrid:
    """DCT-native angular frequencies: omega_x[h] = pi*h/H, omega_y[w] = pi*w/W."""

    H: int
    W: int
    omega_x: np.ndarray
    omega_y: np.ndarray

    @classmethod
    def build(cls, H: int, W: int) -> FrequencyGrid:
        if H < 1 or W < 1:
            raise InvalidParameterError('grid', (H, W), 'H and W must be >= 1')
        return cls(H=H, W=W, omega_x=np.pi * np.arange(H) / H, omega_y=np.pi * np.arange(W) / W)

    def squared_norm(self) -> np.ndarray:
        """omega_x^2 + omega_y^2 as an [H, W] array."""
        return self.omega_x[:, None] ** 2 + self.omega_y[None, :] ** 2


@dataclass(frozen=True)
class DecayMatrix:
    values: Tensor
    k: Tensor
    t: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


def build_decay(grid: FrequencyGrid, k: Tensor, t: float = DIFFUSION_TIME) -> DecayMatrix:
    """
    exp(-k * (omega_x^2 + omega_y^2) * t) for k [C, H, W]; differentiable in k.

    Raises:
        InvalidParameterError: If any k is negative or t <= 0.
    """
    k = as_tensor(k)
    if t <= 0:
        raise InvalidParameterError('t', t, 'diffusion time must be > 0')
    if k.ndim != 3 or k.shape[1:] != (grid.H, grid.W):
        raise ShapeMismatchError('build_decay', k.shape, (grid.H, grid.W), 'k must be [C, H, W] on the grid')
    if k.size and float(k.data.min()) < 0:
        raise InvalidParameterError('k', float(k.data.min()), 'thermal diffusivity must be >= 0')
    rate = np.broadcast_to(-grid.squared_norm() * t, k.shape).astype(k.data.dtype)
    values = F.exp(F.mul(k, Tensor(rate)))
    return DecayMatrix(values=values, k=k, t=t)


def hco_forward(u0: Tensor, decay: DecayMatrix | Tensor, scale: float = 1.0) -> Tensor:
    """
    Heat-conduction operator: idct2(dct2(u0) * decay) for u0 [B, C, H, W].

    Args:
        u0: Initial temperature field per channel.
        decay: Decay matrix of shape [C, H, W] (a DecayMatrix or its values).
        scale: DCT matrix scale, 1.0 outside fault-injection checks.
    """
    values = decay.values if isinstance(decay, DecayMatrix) else decay
    if u0.ndim != 4 or u0.shape[1:] != values.shape:
        raise ShapeMismatchError('hco_forward', u0.shape, values.shape, 'decay must match (C, H, W) of u0')
    coeffs = dct2(u0, scale)
    damped = F.mul(coeffs, F.expand(F.reshape(values, (1,) + values.shape), u0.shape))
    return idct2(damped, scale)


def diffuse(u0: Tensor, k: Tensor, t: float = DIFFUSION_TIME) -> Tensor:
    """Shortcut for hco_forward(u0, build_decay(grid of u0, k, t))."""
    grid = FrequencyGrid.build(u0.shape[-2], u0.shape[-1])
    return hco_forward(u0, build_decay(grid, k, t))
