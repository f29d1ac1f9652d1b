"""
Offline ingestion: turn every sample's raw event stream into stacked frames on disk.

For a sample `split/class/sample_id` the output is `out/split/class/sample_id.npy`
([T, 3, H, W] float32) and a PNG preview strip of the total-count channel.
"""

import logging

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from PIL import Image
from tqdm import tqdm

from app.services.events.dataset import SampleRef, discover_samples, load_sample
from app.services.events.models import SPLITS
from app.utils.exceptions import DatasetError
from app.utils.file_utils import ensure_directory_exists


logger = logging.getLogger(__name__)


@dataclass
class IngestSummary:
    written: int = 0
    skipped: int = 0


def preview_strip(event_frames: np.ndarray) -> np.ndarray:
    """Total-count channel of [T, 3, H, W] frames side by side as uint8 [H, T*W]."""
    total = event_frames[:, 2]
    return np.clip(np.rint(np.concatenate(list(total), axis=1) * 255.0), 0, 255).astype(np.uint8)


def _refs(root: Path) -> list[tuple[str, SampleRef]]:
    if (root / 'meta.txt').is_file():
        return [('', SampleRef(root, root.parent.name))]
    return [(split, ref) for split in SPLITS for ref in discover_samples(root, split)]


def ingest_dataset(root: Path, out_dir: Path, size: Optional[int] = None) -> IngestSummary:
    """
    Stack the events of a dataset root (or a single sample directory) into .npy frames.

    Samples that fail to load are skipped with a logged reason.
    """
    root, out_dir = Path(root), Path(out_dir)
    refs = _refs(root)
    if not refs:
        raise DatasetError(f'no samples found under {root}')
    summary = IngestSummary()
    for split, ref in tqdm(refs, desc='Ingesting', unit='sample'):
        try:
            sample = load_sample(ref, size)
        except DatasetError as e:
            logger.warning(f'Skipping sample: {e.detail}')
            summary.skipped += 1
            continue
        target = ensure_directory_exists(str(out_dir / split / ref.class_name)) if split else ensure_directory_exists(str(out_dir))
        np.save(target / f'{ref.sample_id}.npy', sample.event_frames.astype(np.float32))
        Image.fromarray(preview_strip(sample.event_frames)).save(target / f'{ref.sample_id}.png')
        summary.written += 1
    logger.info(f'Ingested {summary.written} samples into {out_dir} ({summary.skipped} skipped)')
    return summary
