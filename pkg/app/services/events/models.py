from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


Split = Literal['train', 'val', 'test']
SPLITS: tuple[Split, Split, Split] = ('train', 'val', 'test')


class EventPoint(BaseModel):
    """A single camera event (x, y, t, p)."""

    model_config = ConfigDict(frozen=True)

    x: int = Field(..., ge=0, description='Pixel column')
    y: int = Field(..., ge=0, description='Pixel row')
    t: int = Field(..., ge=0, description='Timestamp in microseconds')
    p: int = Field(..., description='Polarity, +1 or -1')

    @field_validator('p')
    @classmethod
    def validate_polarity(cls, v):
        if v not in (1, -1):
            raise ValueError('polarity must be +1 or -1')
        return v


@dataclass
class EventStream:
    """
    Events stored column-wise, sorted by non-decreasing t.

    t is int64 microseconds, x/y int32 pixel coordinates and p int8 in {+1, -1}.
    """

    t: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int32)
        self.y = np.asarray(self.y, dtype=np.int32)
        self.p = np.asarray(self.p, dtype=np.int8)
        if not (len(self.t) == len(self.x) == len(self.y) == len(self.p)):
            raise ValueError('event columns must have equal lengths')

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[EventPoint]:
        for t, x, y, p in zip(self.t, self.x, self.y, self.p):
            yield EventPoint(x=int(x), y=int(y), t=int(t), p=int(p))

    @property
    def count(self) -> int:
        return len(self)

    @classmethod
    def from_points(cls, points: list[EventPoint]) -> EventStream:
        return cls(
            t=[e.t for e in points],
            x=[e.x for e in points],
            y=[e.y for e in points],
            p=[e.p for e in points],
        )

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))

    def sorted(self) -> EventStream:
        order = np.argsort(self.t, kind='stable')
        return EventStream(self.t[order], self.x[order], self.y[order], self.p[order])

    def take(self, index: np.ndarray) -> EventStream:
        return EventStream(self.t[index], self.x[index], self.y[index], self.p[index])


class SampleMeta(BaseModel):
    """Contents of a sample's meta.txt (key=value lines)."""

    model_config = ConfigDict(extra='ignore')

    label: int = Field(..., ge=0)
    class_name: str | None = None
    T: int = Field(..., ge=1)
    H: int = Field(..., ge=1)
    W: int = Field(..., ge=1)
    rgb_timestamps: list[int]

    @field_validator('rgb_timestamps', mode='before')
    @classmethod
    def parse_timestamps(cls, v):
        if isinstance(v, str):
            return [int(part) for part in v.split(',') if part.strip()]
        return v

    @model_validator(mode='after')
    def validate_timestamps(self) -> SampleMeta:
        if len(self.rgb_timestamps) != self.T:
            raise ValueError(f'expected {self.T} rgb_timestamps, got {len(self.rgb_timestamps)}')
        if any(b < a for a, b in zip(self.rgb_timestamps, self.rgb_timestamps[1:])):
            raise ValueError('rgb_timestamps must be non-decreasing')
        return self

    def to_lines(self) -> list[str]:
        lines = [f'label={self.label}']
        if self.class_name is not None:
            lines.append(f'class_name={self.class_name}')
        lines += [f'T={self.T}', f'H={self.H}', f'W={self.W}']
        lines.append('rgb_timestamps=' + ','.join(str(ts) for ts in self.rgb_timestamps))
        return lines


@dataclass(frozen=True)
class PairedSample:
    """
    One clip: RGB frames [T, 3, H, W] in [0, 1] and event frames [T, 3, H, W].
    """

    sample_id: str
    rgb: np.ndarray
    event_frames: np.ndarray
    label: int
    rgb_timestamps: tuple[int, ...]
    class_name: str = ''

    def __post_init__(self):
        if self.rgb.shape[0] != self.event_frames.shape[0]:
            raise ValueError(f'RGB has {self.rgb.shape[0]} frames but events have {self.event_frames.shape[0]}')
