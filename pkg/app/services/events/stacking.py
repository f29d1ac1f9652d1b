"""
Event stacking: accumulate an event stream into frames aligned with RGB timestamps.

Frame i collects the events with ts[i-1] < t <= ts[i]. The first frame uses a
window of the same length as the first RGB interval, (ts[0] - (ts[1] - ts[0]), ts[0]],
or (-inf, ts[0]] for single-frame clips. Channel 0 counts positive events,
channel 1 negative events and channel 2 their total; each channel of each frame
is then divided by its own maximum.
"""

import logging

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.services.events.models import EventStream
from app.utils.exceptions import InvalidParameterError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EventCounts:
    """Raw per-polarity counts [T, 2, H, W] (positive, negative) plus bookkeeping."""

    counts: np.ndarray
    in_window: int
    dropped: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def frame_windows(rgb_timestamps: Sequence[int]) -> list[tuple[float, float]]:
    """(low, high] accumulation window for every frame."""
    ts = [float(v) for v in rgb_timestamps]
    if not ts:
        raise InvalidParameterError('rgb_timestamps', rgb_timestamps, 'need at least one timestamp')
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise InvalidParameterError('rgb_timestamps', rgb_timestamps, 'must be non-decreasing')
    first_low = ts[0] - (ts[1] - ts[0]) if len(ts) > 1 else -np.inf
    return [(first_low, ts[0])] + list(zip(ts[:-1], ts[1:]))


def count_events(stream: EventStream, rgb_timestamps: Sequence[int], height: int, width: int) -> EventCounts:
    """
    Accumulate raw event counts per frame window, polarity and pixel.

    Events outside every window or outside the H x W grid are dropped and counted.
    """
    windows = frame_windows(rgb_timestamps)
    ts = np.asarray(rgb_timestamps, dtype=np.int64)
    counts = np.zeros((len(ts), 2, height, width), dtype=np.int64)
    if len(stream) == 0:
        return EventCounts(counts=counts, in_window=0, dropped=0)

    frame = np.searchsorted(ts, stream.t, side='left')
    keep = (frame < len(ts)) & (stream.t > windows[0][0])
    keep &= (stream.x >= 0) & (stream.x < width) & (stream.y >= 0) & (stream.y < height)
    channel = np.where(stream.p > 0, 0, 1)
    np.add.at(counts, (frame[keep], channel[keep], stream.y[keep], stream.x[keep]), 1)

    in_window = int(keep.sum())
    dropped = len(stream) - in_window
    if dropped:
        logger.warning(f'Dropped {dropped} of {len(stream)} events outside the frame windows or sensor grid')
    return EventCounts(counts=counts, in_window=in_window, dropped=dropped)


def normalize_counts(counts: np.ndarray, dtype: np.dtype = np.float32) -> np.ndarray:
    """[T, 2, H, W] counts -> [T, 3, H, W] frames in [0, 1] (pos, neg, total; per-frame max scaling)."""
    frames = np.concatenate([counts, counts.sum(axis=1, keepdims=True)], axis=1).astype(np.float64)
    peak = frames.max(axis=(2, 3), keepdims=True)
    frames = np.divide(frames, peak, out=np.zeros_like(frames), where=peak > 0)
    return frames.astype(dtype)


def stack_events(
    stream: EventStream,
    rgb_timestamps: Sequence[int],
    height: int,
    width: int,
    frames: Optional[int] = None,
    dtype: np.dtype = np.float32,
) -> np.ndarray:
    """
    Stack a stream into T event frames [T, 3, H, W] aligned with the RGB timestamps.

    Raises:
        InvalidParameterError: If `frames` disagrees with the number of timestamps.
    """
    if frames is not None and frames != len(rgb_timestamps):
        raise InvalidParameterError('frames', frames, f'expected {len(rgb_timestamps)} to match rgb_timestamps')
    return normalize_counts(count_events(stream, rgb_timestamps, height, width).counts, dtype)
