"""
Fusion of the RGB and event features and the policy router choosing between strategies.

Strategies (all map F_R, F_E [B, C] to [B, 2C]):
    mcf: concat(F_R, F_E)
    mdf: concat(F_R - F_R*F_E, F_E - F_R*F_E)
    msf: concat(w_R*F_R, w_E*F_E) with (w_R, w_E) = sigmoid(conv1x1(concat(F_R, F_E)))

The router scores the three strategies with a small MLP. While training it
draws a straight-through Gumbel-Softmax sample, so all three strategies are
computed and combined with the one-hot mask; at inference it takes the argmax
and only the selected strategies are evaluated.
"""

from __future__ import annotations

import logging

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from app.engine import functional as F
from app.engine.tensor import DType, Tensor
from app.models.layers import Conv2d, Linear, Module
from app.utils.exceptions import InvalidParameterError, ShapeMismatchError


logger = logging.getLogger(__name__)

FusionMode = Literal['route', 'mcf', 'mdf', 'msf', 'random', 'add']
STRATEGIES: tuple[str, str, str] = ('mcf', 'mdf', 'msf')
FUSION_MODES: tuple[str, ...] = ('route', 'mcf', 'mdf', 'msf', 'random', 'add')


@dataclass
class FusionBundle:
    F_R: Tensor
    F_E: Tensor
    fused: Tensor
    route: Tensor
    route_logits: Tensor

    def selected(self) -> np.ndarray:
        """Index of the chosen strategy per sample (-1 where nothing was routed)."""
        route = self.route.data
        return np.where(route.sum(axis=-1) > 0, np.argmax(route, axis=-1), -1)


def _check_pair(op: str, f_r: Tensor, f_e: Tensor) -> None:
    if f_r.shape != f_e.shape:
        raise ShapeMismatchError(op, f_r.shape, f_e.shape, 'modality features must have equal shapes')


def mcf(f_r: Tensor, f_e: Tensor) -> Tensor:
    """Complementary fusion: plain channel concatenation."""
    _check_pair('mcf', f_r, f_e)
    return F.concat([f_r, f_e], axis=-1)


def mdf(f_r: Tensor, f_e: Tensor) -> Tensor:
    """Discriminative fusion: remove the shared component F_R*F_E from both halves."""
    _check_pair('mdf', f_r, f_e)
    common = F.mul(f_r, f_e)
    return F.concat([F.sub(f_r, common), F.sub(f_e, common)], axis=-1)


def add_fusion(f_r: Tensor, f_e: Tensor) -> Tensor:
    _check_pair('add', f_r, f_e)
    return F.add(f_r, f_e)


class MSF(Module):
    """
    Self-adaptive fusion weights from a 1x1 conv over the concatenated features.

    One weight per modality per sample, or one per channel when `per_channel`.
    """

    def __init__(self, channels: int, rng: np.random.Generator, dtype: DType = DType.F32, per_channel: bool = False):
        self.channels = channels
        self.per_channel = per_channel
        out = 2 * channels if per_channel else 2
        self.conv = Conv2d(2 * channels, out, 1, rng, dtype)

    def weights(self, f_r: Tensor, f_e: Tensor) -> tuple[Tensor, Tensor]:
        _check_pair('msf', f_r, f_e)
        b, c = f_r.shape
        x = F.reshape(F.concat([f_r, f_e], axis=-1), (b, 2 * c, 1, 1))
        logits = self.conv(x)
        w = F.sigmoid(F.reshape(logits, (b, logits.shape[1])))
        w_r, w_e = F.split(w, 2, axis=-1)
        if not self.per_channel:
            w_r, w_e = F.expand(w_r, (b, c)), F.expand(w_e, (b, c))
        return w_r, w_e

    def forward(self, f_r: Tensor, f_e: Tensor) -> Tensor:
        w_r, w_e = self.weights(f_r, f_e)
        return F.concat([F.mul(w_r, f_r), F.mul(w_e, f_e)], axis=-1)


def msf(f_r: Tensor, f_e: Tensor, module: MSF) -> Tensor:
    return module(f_r, f_e)


def sample_gumbel(shape: tuple[int, ...], rng: np.random.Generator, eps: float = 1e-20) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(u + eps) + eps)


def gumbel_softmax(logits: Tensor, tau: float, rng: np.random.Generator, hard: bool = True) -> Tensor:
    """
    Gumbel-Softmax sample over the last axis.

    With `hard` the forward value is the one-hot argmax of the soft sample and
    the gradient is that of the soft sample (straight-through).
    """
    if tau <= 0:
        raise InvalidParameterError('tau', tau, 'temperature must be > 0')
    noise = Tensor(sample_gumbel(logits.shape, rng).astype(logits.data.dtype))
    soft = F.softmax(F.mul(F.add(logits, noise), 1.0 / tau), axis=-1)
    return F.straight_through(soft, axis=-1) if hard else soft


def one_hot_route(indices: np.ndarray, dtype: np.dtype) -> Tensor:
    return Tensor(F.one_hot(np.asarray(indices), len(STRATEGIES), dtype))


class PolicyRouter(Module):
    """
    Policy network plus the three fusion strategies.

    `mode` fixes a strategy ('mcf', 'mdf', 'msf'), picks one uniformly at random
    per sample ('random'), sums the features ('add', width C) or routes ('route').
    """

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator,
        dtype: DType = DType.F32,
        mode: FusionMode = 'route',
        tau: float = 1.0,
        msf_per_channel: bool = False,
    ):
        if mode not in FUSION_MODES:
            raise InvalidParameterError('mode', mode, f'expected one of {FUSION_MODES}')
        if tau <= 0:
            raise InvalidParameterError('tau', tau, 'temperature must be > 0')
        self.channels = channels
        self.mode = mode
        self.tau = tau
        self.fc1 = Linear(2 * channels, 2 * channels, rng, dtype)
        self.fc2 = Linear(2 * channels, len(STRATEGIES), rng, dtype)
        self.msf = MSF(channels, rng, dtype, msf_per_channel)
        # draws for random routing and Gumbel noise when the caller passes no generator
        self.noise_rng = np.random.default_rng(rng.integers(2**32))

    @property
    def out_width(self) -> int:
        return self.channels if self.mode == 'add' else 2 * self.channels

    def policy_logits(self, f_r: Tensor, f_e: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(mcf(f_r, f_e))))

    def strategy(self, name: str, f_r: Tensor, f_e: Tensor) -> Tensor:
        if name == 'mcf':
            return mcf(f_r, f_e)
        if name == 'mdf':
            return mdf(f_r, f_e)
        return self.msf(f_r, f_e)

    def _route(self, logits: Tensor, rng: np.random.Generator | None, tau: float) -> Tensor:
        b = logits.shape[0]
        dtype = logits.data.dtype
        if self.mode in STRATEGIES:
            return one_hot_route(np.full(b, STRATEGIES.index(self.mode)), dtype)
        if self.mode == 'random':
            return one_hot_route((rng or self.noise_rng).integers(0, len(STRATEGIES), size=b), dtype)
        if self.training:
            return gumbel_softmax(logits, tau, rng or self.noise_rng)
        return one_hot_route(F.argmax_indices(logits, axis=-1), dtype)

    def forward(
        self,
        f_r: Tensor,
        f_e: Tensor,
        rng: np.random.Generator | None = None,
        tau: float | None = None,
    ) -> FusionBundle:
        """
        Route the modality features through the fusion strategies.

        Args:
            f_r: RGB features [B, C].
            f_e: Event features [B, C].
            rng: Source of Gumbel noise (training) or random selections.
            tau: Gumbel temperature; defaults to the router's.

        Returns:
            FusionBundle: Fused features [B, out_width], route [B, 3] and policy logits.
        """
        _check_pair('route', f_r, f_e)
        tau = self.tau if tau is None else tau
        if tau <= 0:
            raise InvalidParameterError('tau', tau, 'temperature must be > 0')
        logits = self.policy_logits(f_r, f_e)
        b = f_r.shape[0]

        if self.mode == 'add':
            route = Tensor(np.zeros((b, len(STRATEGIES)), dtype=logits.data.dtype))
            return FusionBundle(f_r, f_e, add_fusion(f_r, f_e), route, logits)

        route = self._route(logits, rng, tau)
        if route.requires_grad:
            names = list(STRATEGIES)
        else:
            present = set(np.argmax(route.data, axis=-1).tolist())
            names = [name for i, name in enumerate(STRATEGIES) if i in present]

        width = 2 * self.channels
        fused = None
        for name in names:
            mask = F.expand(F.slice_axis(route, STRATEGIES.index(name), STRATEGIES.index(name) + 1, axis=-1), (b, width))
            term = F.mul(mask, self.strategy(name, f_r, f_e))
            fused = term if fused is None else F.add(fused, term)
        return FusionBundle(f_r, f_e, fused, route, logits)


def route_histogram(routes: Iterable[np.ndarray] | np.ndarray) -> dict[str, int]:
    """Count how often each strategy was selected over one or more [N, 3] route arrays."""
    counts: Counter[str] = Counter({name: 0 for name in STRATEGIES})
    arrays = [routes] if isinstance(routes, np.ndarray) else list(routes)
    for route in arrays:
        route = np.asarray(route)
        if route.size == 0:
            continue
        routed = route.sum(axis=-1) > 0
        for index in np.argmax(route[routed], axis=-1):
            counts[STRATEGIES[int(index)]] += 1
    return dict(counts)
