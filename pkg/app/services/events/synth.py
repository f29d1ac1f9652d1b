"""
Synthetic moving-bar dataset.

Every class is a bar direction (left, right, up, down). A clip renders a
bright bar on a dark background at T+1 positions; the first position only
serves as the reference for frame 0's events. Events fire on pixels whose
luminance changed by more than the contrast threshold, with polarity given by
the sign of the change and a timestamp drawn inside the frame's window.

Positions of a left-moving bar are the horizontal mirror of a right-moving bar
with the same parameters (and likewise up/down), so their event frames are
mirror images of each other.
"""

import logging
import math

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from PIL import Image

from app.config.config_models import SynthSettings
from app.services.events.models import SPLITS, EventStream, SampleMeta
from app.services.events.readers import write_events_csv
from app.utils.file_utils import ensure_directory_exists, save_text_file


logger = logging.getLogger(__name__)

CLASSES_FILE = 'classes.txt'
HORIZONTAL = ('left', 'right')


@dataclass(frozen=True)
class BarParams:
    start: int
    thickness: int
    speed: int
    foreground: tuple[float, float, float]
    background: tuple[float, float, float]


@dataclass
class SynthSummary:
    root: Path
    classes: list[str]
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def bar_geometry(size: int, frames: int) -> tuple[int, int]:
    """(thickness, speed) so that T+1 positions of the bar fit on an axis of `size` pixels."""
    thickness = max(1, size // 8)
    speed = max(1, (size - thickness) // (2 * frames))
    return thickness, speed


def sample_bar(direction: str, settings: SynthSettings, rng: np.random.Generator) -> BarParams:
    size = settings.width if direction in HORIZONTAL else settings.height
    thickness, speed = bar_geometry(size, settings.frames)
    travel = thickness + settings.frames * speed
    start = int(rng.integers(0, max(size - travel, 0) + 1))
    foreground = tuple(float(v) for v in rng.uniform(0.7, 1.0, size=3))
    background = tuple(float(v) for v in rng.uniform(0.0, 0.25, size=3))
    return BarParams(start=start, thickness=thickness, speed=speed, foreground=foreground, background=background)


def render_bar_frames(direction: str, params: BarParams, frames: int, height: int, width: int) -> np.ndarray:
    """
    Clean RGB frames [T+1, 3, H, W] in [0, 1]; index 0 is the reference position.
    """
    out = np.empty((frames + 1, 3, height, width), dtype=np.float64)
    out[:] = np.asarray(params.background)[None, :, None, None]
    size = width if direction in HORIZONTAL else height
    for k in range(frames + 1):
        low = params.start + k * params.speed
        high = min(low + params.thickness, size)
        if direction in ('left', 'up'):
            low, high = size - high, size - low
        color = np.asarray(params.foreground)[:, None, None]
        if direction in HORIZONTAL:
            out[k, :, :, low:high] = color
        else:
            out[k, :, low:high, :] = color
    return out


def luminance(frames: np.ndarray) -> np.ndarray:
    """Mean over the channel axis of [N, 3, H, W] frames."""
    return frames.mean(axis=1)


def events_from_frames(
    frames: np.ndarray,
    timestamps: list[int],
    threshold: float,
    rng: np.random.Generator,
) -> EventStream:
    """
    Emit one event per pixel whose luminance changed by more than `threshold`.

    Args:
        frames: [T+1, 3, H, W] clean frames including the reference frame.
        timestamps: T+1 frame times; events of transition k-1 -> k get t in (ts[k-1], ts[k]].
        threshold: Minimum absolute luminance change.
        rng: Source of event timestamps.
    """
    lum = luminance(frames)
    columns: list[list[np.ndarray]] = [[], [], [], []]
    for k in range(1, len(lum)):
        diff = lum[k] - lum[k - 1]
        ys, xs = np.nonzero(np.abs(diff) > threshold)
        ts = rng.integers(timestamps[k - 1] + 1, timestamps[k] + 1, size=len(ys))
        columns[0].append(ts)
        columns[1].append(xs)
        columns[2].append(ys)
        columns[3].append(np.where(diff[ys, xs] > 0, 1, -1))
    if not columns[0]:
        return EventStream()
    stream = EventStream(*(np.concatenate(col) for col in columns))
    return stream.sorted()


def add_event_noise(
    stream: EventStream,
    timestamps: list[int],
    height: int,
    width: int,
    rate: float,
    dropout: float,
    rng: np.random.Generator,
) -> EventStream:
    """Drop each event with probability `dropout`, then add `rate` random events per pixel per frame."""
    if dropout > 0 and len(stream):
        stream = stream.take(rng.random(len(stream)) >= dropout)
    if rate <= 0:
        return stream
    extra: list[EventStream] = [stream]
    for k in range(1, len(timestamps)):
        n = int(rng.poisson(rate * height * width))
        extra.append(
            EventStream(
                t=rng.integers(timestamps[k - 1] + 1, timestamps[k] + 1, size=n),
                x=rng.integers(0, width, size=n),
                y=rng.integers(0, height, size=n),
                p=rng.choice(np.array([-1, 1]), size=n),
            )
        )
    merged = EventStream(*(np.concatenate([getattr(s, col) for s in extra]) for col in ('t', 'x', 'y', 'p')))
    return merged.sorted()


def split_counts(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Per-class train/val/test sizes; rounding remainder goes to test."""
    train = int(math.floor(n * fractions[0] + 0.5))
    val = min(int(math.floor(n * fractions[1] + 0.5)), n - train)
    return train, val, n - train - val


def write_sample(
    sample_dir: Path,
    rgb: np.ndarray,
    stream: EventStream,
    meta: SampleMeta,
    image_ext: str = '.png',
) -> None:
    ensure_directory_exists(str(sample_dir))
    for i, frame in enumerate(rgb):
        pixels = np.clip(np.rint(frame.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(pixels).save(sample_dir / f'frame_{i:03d}{image_ext}')
    write_events_csv(stream, sample_dir / 'events.csv')
    save_text_file('\n'.join(meta.to_lines()) + '\n', sample_dir / 'meta.txt')


def generate_clip(
    direction: str, settings: SynthSettings, rng: np.random.Generator
) -> tuple[np.ndarray, EventStream, list[int]]:
    """One clip: noisy RGB frames [T, 3, H, W], its event stream and the T RGB timestamps."""
    params = sample_bar(direction, settings, rng)
    clean = render_bar_frames(direction, params, settings.frames, settings.height, settings.width)
    timestamps = [k * settings.frame_interval_us for k in range(settings.frames + 1)]
    stream = events_from_frames(clean, timestamps, settings.contrast_threshold, rng)
    stream = add_event_noise(
        stream, timestamps, settings.height, settings.width, settings.event_noise_rate, settings.event_dropout, rng
    )
    rgb = clean[1:]
    if settings.rgb_noise > 0:
        rgb = np.clip(rgb + rng.normal(0.0, settings.rgb_noise, size=rgb.shape), 0.0, 1.0)
    return rgb, stream, timestamps[1:]


def synth_generate(settings: SynthSettings, root: Path, seed: int = 0) -> SynthSummary:
    """
    Write a stratified moving-bar dataset under root/{train,val,test}/class/sample_id.

    Every sample draws from its own generator derived from (seed, class, index),
    so a fixed seed reproduces byte-identical files.
    """
    root = ensure_directory_exists(str(root))
    summary = SynthSummary(root=root, classes=list(settings.classes), counts={split: 0 for split in SPLITS})
    save_text_file('\n'.join(settings.classes) + '\n', root / CLASSES_FILE)

    for label, class_name in enumerate(settings.classes):
        order = np.random.default_rng([seed, label]).permutation(settings.samples_per_class)
        sizes = split_counts(settings.samples_per_class, settings.split_fractions)
        bounds = np.cumsum((0,) + sizes)
        for split, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
            for index in order[lo:hi]:
                rng = np.random.default_rng([seed, label, int(index)])
                rgb, stream, timestamps = generate_clip(class_name, settings, rng)
                meta = SampleMeta(
                    label=label,
                    class_name=class_name,
                    T=settings.frames,
                    H=settings.height,
                    W=settings.width,
                    rgb_timestamps=timestamps,
                )
                sample_id = f'{class_name}_{int(index):04d}'
                write_sample(root / split / class_name / sample_id, rgb, stream, meta)
                summary.counts[split] += 1
    logger.info(f'Synthetic dataset written to {root}: {summary.counts}')
    return summary
