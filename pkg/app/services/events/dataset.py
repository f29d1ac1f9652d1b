"""
Paired RGB/event dataset on disk.

Layout: root/split/class_name/sample_id/ with frame_000.<ext> ... frame_{T-1}.<ext>,
events.csv and meta.txt (key=value: label, T, H, W, rgb_timestamps).
"""

import logging

from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from PIL import Image
from pydantic import ValidationError

from app.services.events.models import SPLITS, EventStream, PairedSample, SampleMeta, Split
from app.services.events.readers import parse_events
from app.services.events.stacking import stack_events
from app.services.events.synth import CLASSES_FILE
from app.utils.exceptions import DatasetError
from app.utils.file_utils import read_key_value_file


logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.bmp')


@dataclass(frozen=True)
class SampleRef:
    path: Path
    class_name: str

    @property
    def sample_id(self) -> str:
        return self.path.name


@dataclass
class SplitArrays:
    """A whole split materialised as arrays: rgb/events [N, T, 3, H, W], labels [N]."""

    rgb: np.ndarray
    events: np.ndarray
    labels: np.ndarray
    sample_ids: list[str]

    def __len__(self) -> int:
        return len(self.labels)


def read_class_names(root: Path) -> list[str]:
    """Class names in label order from root/classes.txt, else sorted directory names of all splits."""
    root = Path(root)
    listing = root / CLASSES_FILE
    if listing.is_file():
        return [line.strip() for line in listing.read_text(encoding='utf-8').splitlines() if line.strip()]
    names = {d.name for split in SPLITS if (root / split).is_dir() for d in (root / split).iterdir() if d.is_dir()}
    return sorted(names)


def discover_samples(root: Path, split: Split) -> list[SampleRef]:
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        return []
    refs = []
    for class_dir in sorted(d for d in split_dir.iterdir() if d.is_dir()):
        refs.extend(SampleRef(sample_dir, class_dir.name) for sample_dir in sorted(class_dir.iterdir()) if sample_dir.is_dir())
    return refs


def read_meta(path: Path) -> SampleMeta:
    try:
        return SampleMeta(**read_key_value_file(path))
    except (ValidationError, ValueError) as e:
        raise DatasetError(f'{path}: invalid meta file: {e}') from e


def _frame_path(sample_dir: Path, index: int) -> Optional[Path]:
    for ext in IMAGE_EXTENSIONS:
        candidate = sample_dir / f'frame_{index:03d}{ext}'
        if candidate.is_file():
            return candidate
    return None


def read_frames(sample_dir: Path, frames: int, size: Optional[int] = None) -> np.ndarray:
    """RGB frames [T, 3, H, W] scaled to [0, 1], optionally resized to size x size."""
    out = []
    for i in range(frames):
        path = _frame_path(sample_dir, i)
        if path is None:
            raise DatasetError(f'{sample_dir}: missing RGB frame {i}')
        with Image.open(path) as image:
            image = image.convert('RGB')
            if size is not None and image.size != (size, size):
                image = image.resize((size, size), Image.Resampling.BILINEAR)
            out.append(np.asarray(image, dtype=np.float32).transpose(2, 0, 1) / 255.0)
    return np.stack(out)


def rescale_events(stream: EventStream, height: int, width: int, size: int) -> EventStream:
    """Map pixel coordinates of an H x W sensor onto a size x size grid."""
    if (height, width) == (size, size):
        return stream
    return EventStream(
        t=stream.t,
        x=(stream.x.astype(np.int64) * size) // width,
        y=(stream.y.astype(np.int64) * size) // height,
        p=stream.p,
    )


def load_sample(ref: SampleRef, size: Optional[int] = None) -> PairedSample:
    """
    Read one sample directory into a PairedSample.

    Raises:
        DatasetError: If a modality file is missing or the meta file is invalid.
    """
    meta_path = ref.path / 'meta.txt'
    events_path = ref.path / 'events.csv'
    for required in (meta_path, events_path):
        if not required.is_file():
            raise DatasetError(f'{ref.path}: missing {required.name}')
    meta = read_meta(meta_path)
    rgb = read_frames(ref.path, meta.T, size)
    stream = parse_events(events_path, meta.W, meta.H)
    height, width = (size, size) if size is not None else (meta.H, meta.W)
    if size is not None:
        stream = rescale_events(stream, meta.H, meta.W, size)
    event_frames = stack_events(stream, meta.rgb_timestamps, height, width, meta.T)
    return PairedSample(
        sample_id=ref.sample_id,
        rgb=rgb,
        event_frames=event_frames,
        label=meta.label,
        rgb_timestamps=tuple(meta.rgb_timestamps),
        class_name=meta.class_name or ref.class_name,
    )


def _try_load(ref: SampleRef, size: Optional[int]) -> Optional[PairedSample]:
    try:
        return load_sample(ref, size)
    except DatasetError as e:
        logger.warning(f'Skipping sample: {e.detail}')
        return None


def load_dataset(
    root: Path,
    split: Split,
    seed: int = 0,
    shuffle: bool = True,
    num_workers: int = 0,
    size: Optional[int] = None,
) -> Iterator[PairedSample]:
    """
    Iterate over the samples of one split.

    Order is the sorted directory order, permuted by `seed` when `shuffle` is set;
    background prefetch with `num_workers` threads yields in that same order.
    Samples with missing or invalid files are skipped with a logged path.
    """
    if split not in SPLITS:
        raise DatasetError(f'unknown split {split!r}; expected one of {SPLITS}')
    refs = discover_samples(Path(root), split)
    if shuffle and refs:
        refs = [refs[i] for i in np.random.default_rng(seed).permutation(len(refs))]
    logger.info(f'{split}: {len(refs)} samples under {root}')
    if not refs:
        return

    if num_workers <= 0:
        for ref in refs:
            sample = _try_load(ref, size)
            if sample is not None:
                yield sample
        return

    with ThreadPoolExecutor(max_workers=num_workers, thread_name_prefix='prefetch') as pool:
        pending: deque[Future] = deque()
        queue = iter(refs)
        for ref in queue:
            pending.append(pool.submit(_try_load, ref, size))
            if len(pending) >= 2 * num_workers:
                break
        while pending:
            sample = pending.popleft().result()
            next_ref = next(queue, None)
            if next_ref is not None:
                pending.append(pool.submit(_try_load, next_ref, size))
            if sample is not None:
                yield sample


def load_split_arrays(
    root: Path,
    split: Split,
    seed: int = 0,
    shuffle: bool = False,
    num_workers: int = 0,
    size: Optional[int] = None,
    dtype: np.dtype = np.float32,
) -> SplitArrays:
    """Materialise a split; raises DatasetError if samples disagree on T or resolution."""
    samples = list(load_dataset(root, split, seed, shuffle, num_workers, size))
    if not samples:
        return SplitArrays(np.zeros((0,)), np.zeros((0,)), np.zeros(0, dtype=np.int64), [])
    shapes = {s.rgb.shape for s in samples} | {s.event_frames.shape for s in samples}
    if len(shapes) != 1:
        raise DatasetError(f'{root}/{split}: samples have differing shapes {sorted(shapes)}; pass a common size')
    return SplitArrays(
        rgb=np.stack([s.rgb for s in samples]).astype(dtype),
        events=np.stack([s.event_frames for s in samples]).astype(dtype),
        labels=np.asarray([s.label for s in samples], dtype=np.int64),
        sample_ids=[s.sample_id for s in samples],
    )
