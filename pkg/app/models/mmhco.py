"""
Two-stream heat-conduction backbone.

Each modality (RGB frames and stacked event frames) runs through its own
convolutional stem, then through four stages of multi-modal HCO blocks with
strided downsampling in between. Thermal diffusivity for every block is
predicted from a modality-specific frequency value embedding (FVE). The
stage-1 FVE tables are the only free embeddings: later stages receive them
through a strided depthwise projection computed on every forward pass, so
the embeddings stay a deterministic function of stage 1.

Block layout per modality (activations [B, C, H, W]):

    depthwise conv (shared between modalities)
    -> linear C -> 2C -> split into X (heat path) and Z (gate path)
    -> X' = LN(HCO(X; k = softplus(linear(FVE))))
    -> out = linear(X' * SiLU(linear(Z)))   (+ block input when residual)
"""

from __future__ import annotations

import logging

from dataclasses import dataclass
from typing import Literal

import numpy as np

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.engine import functional as F
from app.engine.autodiff import Parameter
from app.engine.tensor import DType, Tensor
from app.models.layers import (
    BatchNorm2d,
    ChannelLayerNorm,
    Conv2d,
    DepthwiseConv2d,
    LayerNorm,
    Linear,
    Module,
    trunc_normal,
)
from app.models.spectral import DIFFUSION_TIME, FrequencyGrid, build_decay, hco_forward
from app.utils.exceptions import InvalidParameterError, ShapeMismatchError


logger = logging.getLogger(__name__)

Modality = Literal['rgb', 'event']
MODALITIES: tuple[Modality, Modality] = ('rgb', 'event')

STEM_FACTOR = 4


class BackboneConfig(BaseModel):
    """Architecture of the two-stream backbone."""

    model_config = ConfigDict(extra='forbid', frozen=True)

    stage_depths: tuple[int, ...] = Field(default=(1, 1, 2, 1), min_length=1)
    base_channels: int = Field(default=32, ge=2)
    embed_dim: int = Field(default=32, ge=1)
    in_channels: int = Field(default=3, ge=1)
    resolution: int = Field(default=64, ge=4)
    residual: bool = True
    continuous_fve: bool = True
    layernorm_eps: float = Field(default=1e-5, gt=0)
    precision: DType = DType.F32

    @field_validator('stage_depths')
    @classmethod
    def validate_depths(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if any(d < 1 for d in v):
            raise ValueError('every stage needs at least one block')
        return v

    @model_validator(mode='after')
    def validate_resolution(self) -> BackboneConfig:
        if self.resolution % STEM_FACTOR:
            raise ValueError(f'resolution {self.resolution} must be divisible by {STEM_FACTOR}')
        return self

    @property
    def stage_channels(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(len(self.stage_depths))]

    @property
    def stage_resolutions(self) -> list[int]:
        sizes = [self.resolution // STEM_FACTOR]
        for _ in self.stage_depths[1:]:
            sizes.append((sizes[-1] + 1) // 2)
        return sizes

    @property
    def out_channels(self) -> int:
        return self.stage_channels[-1]

    @classmethod
    def full(cls, **overrides) -> BackboneConfig:
        """Full-size layout: 24 blocks, C1 = 128, 224x224 input."""
        values = dict(stage_depths=(2, 2, 18, 2), base_channels=128, resolution=224)
        values.update(overrides)
        return cls(**values)


@dataclass
class BlockState:
    """Heat path X and gate path Z of one modality, both [B, C, H, W]."""

    X: Tensor
    Z: Tensor

    def __post_init__(self):
        if self.X.shape != self.Z.shape:
            raise ShapeMismatchError('BlockState', self.X.shape, self.Z.shape, 'X and Z must have identical shapes')


def _to_channels_last(x: Tensor) -> Tensor:
    return F.transpose(x, (0, 2, 3, 1))


def _to_channels_first(x: Tensor) -> Tensor:
    return F.transpose(x, (0, 3, 1, 2))


class FVE(Module):
    """
    Frequency value embedding of one modality.

    With continuous propagation there is one free table [H1, W1, D]; stage s+1
    gets stride-2 depthwise projection of stage s. Otherwise every stage owns
    an independent table.
    """

    def __init__(self, modality: Modality, config: BackboneConfig, rng: np.random.Generator, dtype: DType):
        self.modality = modality
        self.continuous = config.continuous_fve
        d = config.embed_dim
        resolutions = config.stage_resolutions
        if self.continuous:
            self.tables = [Parameter(trunc_normal((resolutions[0], resolutions[0], d), rng), dtype=dtype)]
            self.projections = [DepthwiseConv2d(d, 3, rng, dtype, stride=2) for _ in resolutions[1:]]
        else:
            self.tables = [Parameter(trunc_normal((r, r, d), rng), dtype=dtype) for r in resolutions]
            self.projections = []

    @property
    def table(self) -> Parameter:
        return self.tables[0]

    @staticmethod
    def project(embedding: Tensor, projection: DepthwiseConv2d) -> Tensor:
        h, w, d = embedding.shape
        x = F.reshape(F.transpose(embedding, (2, 0, 1)), (1, d, h, w))
        y = projection(x)
        _, _, ho, wo = y.shape
        return F.transpose(F.reshape(y, (d, ho, wo)), (1, 2, 0))

    def embeddings(self) -> list[Tensor]:
        """Per-stage embeddings [H_s, W_s, D]."""
        if not self.continuous:
            return list(self.tables)
        current: Tensor = self.tables[0]
        stages = [current]
        for projection in self.projections:
            current = self.project(current, projection)
            stages.append(current)
        return stages


class Stem(Module):
    """Two stride-2 conv + BatchNorm + GeLU stages: [B, Cin, H, W] -> [B, C1, H/4, W/4]."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype: DType):
        hidden = max(out_channels // 2, 1)
        self.conv1 = Conv2d(in_channels, hidden, 3, rng, dtype, stride=2, padding=1, bias=False)
        self.norm1 = BatchNorm2d(hidden, dtype)
        self.conv2 = Conv2d(hidden, out_channels, 3, rng, dtype, stride=2, padding=1, bias=False)
        self.norm2 = BatchNorm2d(out_channels, dtype)

    def forward(self, frames: Tensor) -> Tensor:
        if frames.ndim != 4:
            raise ShapeMismatchError('stem', frames.shape, (), 'expected [B, C, H, W]')
        h, w = frames.shape[2:]
        if h % STEM_FACTOR or w % STEM_FACTOR:
            raise InvalidParameterError('frames', (h, w), f'spatial size must be divisible by {STEM_FACTOR}')
        x = F.gelu(self.norm1(self.conv1(frames)))
        return F.gelu(self.norm2(self.conv2(x)))


class MMHCOLayer(Module):
    """Heat conduction for both modalities with per-modality diffusivity."""

    def __init__(self, channels: int, embed_dim: int, rng: np.random.Generator, dtype: DType):
        self.to_k = {m: Linear(embed_dim, channels, rng, dtype) for m in MODALITIES}

    def diffusivity(self, modality: Modality, embedding: Tensor) -> Tensor:
        """k = softplus(linear(FVE)) as [C, H, W]."""
        k = F.softplus(self.to_k[modality](embedding))
        return F.transpose(k, (2, 0, 1))

    def diffuse(self, modality: Modality, x: Tensor, embedding: Tensor) -> Tensor:
        h, w = x.shape[2:]
        if embedding.shape[:2] != (h, w):
            raise ShapeMismatchError('mmhco_layer', x.shape, embedding.shape, 'FVE resolution must match the features')
        decay = build_decay(FrequencyGrid.build(h, w), self.diffusivity(modality, embedding), DIFFUSION_TIME)
        return hco_forward(x, decay)

    def forward(self, x_r: Tensor, x_e: Tensor, fve_r: Tensor, fve_e: Tensor) -> tuple[Tensor, Tensor]:
        if x_r.shape != x_e.shape:
            raise ShapeMismatchError('mmhco_layer', x_r.shape, x_e.shape, 'modalities must have equal shapes')
        return self.diffuse('rgb', x_r, fve_r), self.diffuse('event', x_e, fve_e)


class ModalityBranch(Module):
    """Per-modality projections of an MMHCO block."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype: DType, eps: float):
        self.in_proj = Linear(channels, 2 * channels, rng, dtype)
        self.norm = LayerNorm(channels, dtype, eps)
        self.z_proj = Linear(channels, channels, rng, dtype)
        self.out_proj = Linear(channels, channels, rng, dtype)

    def split(self, x: Tensor) -> BlockState:
        x_part, z_part = F.split(self.in_proj(_to_channels_last(x)), 2, axis=-1)
        return BlockState(X=_to_channels_first(x_part), Z=_to_channels_first(z_part))

    def merge(self, heated: Tensor, state: BlockState) -> Tensor:
        x_prime = self.norm(_to_channels_last(heated))
        gate = F.silu(self.z_proj(_to_channels_last(state.Z)))
        return _to_channels_first(self.out_proj(F.mul(x_prime, gate)))


class MMHCOBlock(Module):
    def __init__(
        self,
        channels: int,
        embed_dim: int,
        rng: np.random.Generator,
        dtype: DType,
        residual: bool = True,
        eps: float = 1e-5,
    ):
        self.residual = residual
        self.dwconv = DepthwiseConv2d(channels, 3, rng, dtype)
        self.branches = {m: ModalityBranch(channels, rng, dtype, eps) for m in MODALITIES}
        self.hco = MMHCOLayer(channels, embed_dim, rng, dtype)

    def forward(self, in_r: Tensor, in_e: Tensor, fve_r: Tensor, fve_e: Tensor) -> tuple[Tensor, Tensor]:
        if in_r.shape != in_e.shape:
            raise ShapeMismatchError('mmhco_block', in_r.shape, in_e.shape, 'modalities must have equal shapes')
        state_r = self.branches['rgb'].split(self.dwconv(in_r))
        state_e = self.branches['event'].split(self.dwconv(in_e))
        heated_r, heated_e = self.hco(state_r.X, state_e.X, fve_r, fve_e)
        out_r = self.branches['rgb'].merge(heated_r, state_r)
        out_e = self.branches['event'].merge(heated_e, state_e)
        if self.residual:
            out_r, out_e = F.add(out_r, in_r), F.add(out_e, in_e)
        return out_r, out_e


class Downsample(Module):
    """3x3 stride-2 conv to twice the channels, then channel LayerNorm."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype: DType, eps: float = 1e-5):
        self.conv = Conv2d(channels, 2 * channels, 3, rng, dtype, stride=2, padding=1)
        self.norm = ChannelLayerNorm(2 * channels, dtype, eps)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(self.conv(x))


class Backbone(Module):
    """
    Two-stream backbone: clips [B, T, C, H, W] -> per-modality features [B, C_out].

    Frames are processed independently with shared weights, average-pooled
    over space, then averaged over T.
    """

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        self.config = config
        dtype = config.precision
        channels = config.stage_channels
        self.stems = {m: Stem(config.in_channels, channels[0], rng, dtype) for m in MODALITIES}
        self.fves = {m: FVE(m, config, rng, dtype) for m in MODALITIES}
        self.stages = [
            [
                MMHCOBlock(c, config.embed_dim, rng, dtype, config.residual, config.layernorm_eps)
                for _ in range(depth)
            ]
            for c, depth in zip(channels, config.stage_depths)
        ]
        self.downsamples = [
            {m: Downsample(c, rng, dtype, config.layernorm_eps) for m in MODALITIES} for c in channels[:-1]
        ]

    @property
    def out_channels(self) -> int:
        return self.config.out_channels

    def _check_clip(self, rgb: Tensor, evt: Tensor) -> tuple[int, int]:
        if rgb.shape != evt.shape:
            raise ShapeMismatchError('backbone', rgb.shape, evt.shape, 'RGB and event clips must have equal shapes')
        if rgb.ndim != 5:
            raise ShapeMismatchError('backbone', rgb.shape, (), 'expected [B, T, C, H, W]')
        b, t = rgb.shape[:2]
        if t < 1:
            raise InvalidParameterError('T', t, 'need at least one frame')
        return b, t

    def forward(self, rgb: Tensor, evt: Tensor) -> tuple[Tensor, Tensor]:
        b, t = self._check_clip(rgb, evt)
        frames = (b * t,) + rgb.shape[2:]
        x_r = self.stems['rgb'](F.reshape(rgb, frames))
        x_e = self.stems['event'](F.reshape(evt, frames))
        emb_r = self.fves['rgb'].embeddings()
        emb_e = self.fves['event'].embeddings()

        for s, blocks in enumerate(self.stages):
            if s > 0:
                x_r = self.downsamples[s - 1]['rgb'](x_r)
                x_e = self.downsamples[s - 1]['event'](x_e)
            for block in blocks:
                x_r, x_e = block(x_r, x_e, emb_r[s], emb_e[s])

        return self._pool(x_r, b, t), self._pool(x_e, b, t)

    @staticmethod
    def _pool(x: Tensor, b: int, t: int) -> Tensor:
        per_frame = F.reduce('mean', x, axis=(2, 3))
        return F.reduce('mean', F.reshape(per_frame, (b, t, per_frame.shape[-1])), axis=1)

    def tie_streams(self) -> None:
        """Copy every RGB-stream parameter onto its event-stream counterpart."""
        params = dict(self.named_parameters())
        for name, param in params.items():
            parts = name.split('.')
            if 'rgb' in parts:
                twin = '.'.join('event' if part == 'rgb' else part for part in parts)
                params[twin].assign(param.data)


def count_parameters(model: Module, trainable_only: bool = True) -> int:
    """Number of scalar parameters in `model`, logged for reference."""
    total = model.num_parameters(trainable_only)
    logger.info(f'{type(model).__name__}: {total:,} parameters ({total / 1e6:.2f}M)')
    return total
