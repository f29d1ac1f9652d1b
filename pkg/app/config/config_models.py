from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


FusionModeName = Literal['route', 'mcf', 'mdf', 'msf', 'random', 'add']


def default_classes_factory() -> list[str]:
    return ['left', 'right', 'up', 'down']


class BaseConfigModel(BaseModel):
    model_config = {
        'extra': 'forbid',
    }


class AppSettings(BaseConfigModel):
    name: str = Field('mmhco-har')
    env: Literal['dev', 'prod', 'test', 'full'] = Field('dev')
    version: str = Field('0.1.0')


class RunConfig(BaseConfigModel):
    frames: int = Field(4, ge=1, description='Frames per modality (T).')
    resolution: int = Field(64, ge=4, description='Square input resolution; must be divisible by 4.')
    stage_depths: list[int] = Field(default_factory=lambda: [1, 1, 2, 1], min_length=1, description='Blocks per stage.')
    channels: int = Field(32, ge=2, description='Stage-1 channel width C1; doubles every stage.')
    embed_dim: int = Field(32, ge=1, description='Width D of the frequency value embeddings.')
    in_channels: int = Field(3, ge=1)
    num_classes: Optional[int] = Field(None, ge=2, description='Class count; taken from the dataset when unset.')
    lr: float = Field(0.001, gt=0.0, description='SGD learning rate.')
    weight_decay: float = Field(0.0001, ge=0.0, description='L2 weight decay.')
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(8, ge=1)
    seed: int = Field(0, ge=0)
    loss: Literal['ce', 'literal'] = Field('ce', description='Softmax cross-entropy or the per-class binary form.')
    fusion: FusionModeName = Field('route')
    precision: Literal['f32', 'f64'] = Field('f32')
    residual: bool = Field(True, description='Residual connection around every block.')
    continuous_fve: bool = Field(True, description='Propagate stage-1 FVEs to later stages.')
    msf_per_channel: bool = Field(False)
    gumbel_tau: float = Field(1.0, gt=0.0)
    modality: Literal['both', 'rgb', 'event'] = Field('both', description='Zero out the other stream when not both.')
    num_workers: int = Field(0, ge=0, description='Background threads prefetching samples.')
    layernorm_eps: float = Field(1e-5, gt=0.0)
    data_root: str = Field('data/synth')
    out_dir: str = Field('runs/latest')

    @field_validator('stage_depths')
    @classmethod
    def validate_depths(cls, v: list[int]) -> list[int]:
        if any(d < 1 for d in v):
            raise ValueError('every stage needs at least one block')
        return v

    @model_validator(mode='after')
    def validate_resolution(self) -> RunConfig:
        if self.resolution % 4:
            raise ValueError(f'resolution {self.resolution} must be divisible by 4')
        return self


class SynthSettings(BaseConfigModel):
    classes: list[str] = Field(default_factory=default_classes_factory, min_length=2)
    frames: int = Field(4, ge=1)
    height: int = Field(64, ge=8)
    width: int = Field(64, ge=8)
    samples_per_class: int = Field(200, ge=1)
    frame_interval_us: int = Field(10000, gt=0, description='Microseconds between RGB frames.')
    rgb_noise: float = Field(0.0, ge=0.0, description='Std of Gaussian noise added to RGB frames.')
    event_noise_rate: float = Field(0.0, ge=0.0, description='Background events per pixel per frame.')
    event_dropout: float = Field(0.0, ge=0.0, lt=1.0, description='Probability of dropping each event.')
    contrast_threshold: float = Field(0.15, gt=0.0, description='Luminance change that triggers an event.')
    split_fractions: tuple[float, float, float] = Field((0.6, 0.1, 0.3))

    @field_validator('classes')
    @classmethod
    def validate_classes(cls, v: list[str]) -> list[str]:
        allowed = {'left', 'right', 'up', 'down'}
        unknown = [c for c in v if c not in allowed]
        if unknown:
            raise ValueError(f'unknown bar directions {unknown}; choose from {sorted(allowed)}')
        if len(set(v)) != len(v):
            raise ValueError('class names must be unique')
        return v

    @field_validator('split_fractions')
    @classmethod
    def validate_fractions(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(f < 0 for f in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError('split fractions must be non-negative and sum to 1')
        return v


class BenchSettings(BaseConfigModel):
    resolutions: list[int] = Field(default_factory=lambda: [32, 64, 128], min_length=3)
    channels: int = Field(16, ge=1)
    runs: int = Field(10, ge=1)
    warmup: int = Field(2, ge=0)
    attention: bool = Field(True, description='Also time the dense attention baseline.')
    attention_block: int = Field(512, ge=1, description='Query rows per attention block.')
    parallel: bool = Field(False, description='Allow multi-threaded BLAS while timing.')
    variance_threshold: float = Field(0.2, gt=0.0, description='Spread above this fraction of the median advises a rerun.')


class Settings(BaseConfigModel):
    app: AppSettings = Field(default_factory=AppSettings)
    run: RunConfig = Field(default_factory=RunConfig)
    synth: SynthSettings = Field(default_factory=SynthSettings)
    bench: BenchSettings = Field(default_factory=BenchSettings)
