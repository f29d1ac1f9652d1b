import shutil

import numpy as np
import pytest

from app.services.events.dataset import (
    SampleRef,
    discover_samples,
    load_dataset,
    load_sample,
    load_split_arrays,
    read_class_names,
    read_meta,
    rescale_events,
)
from app.services.events.models import SPLITS, EventStream
from app.utils.exceptions import DatasetError


def test_discover_samples_sorted_by_class_then_id(synth_root):
    refs = discover_samples(synth_root, 'train')
    assert len(refs) == 24
    keys = [(ref.class_name, ref.sample_id) for ref in refs]
    assert keys == sorted(keys)
    assert discover_samples(synth_root / 'missing', 'train') == []


def test_class_names_fall_back_to_directories(tmp_path):
    (tmp_path / 'train' / 'wave').mkdir(parents=True)
    (tmp_path / 'test' / 'clap').mkdir(parents=True)
    assert read_class_names(tmp_path) == ['clap', 'wave']


def test_load_sample_pairs_modalities(synth_root):
    ref = discover_samples(synth_root, 'val')[0]
    sample = load_sample(ref)
    assert sample.rgb.shape == sample.event_frames.shape == (2, 3, 16, 16)
    assert 0.0 <= sample.rgb.min() and sample.rgb.max() <= 1.0
    assert sample.event_frames.max() == pytest.approx(1.0)
    assert sample.class_name == ref.class_name
    assert sample.label == ['left', 'right', 'up', 'down'].index(ref.class_name)


def test_load_sample_resizes(synth_root):
    sample = load_sample(discover_samples(synth_root, 'val')[0], size=8)
    assert sample.rgb.shape == sample.event_frames.shape == (2, 3, 8, 8)


def test_rescale_events_maps_coordinates():
    stream = EventStream(t=[1, 2], x=[0, 15], y=[15, 8], p=[1, -1])
    scaled = rescale_events(stream, 16, 16, 8)
    assert scaled.x.tolist() == [0, 7]
    assert scaled.y.tolist() == [7, 4]


def test_missing_modality_is_an_error(tmp_path, synth_root):
    source = discover_samples(synth_root, 'test')[0]
    broken = tmp_path / 'left' / 'broken'
    shutil.copytree(source.path, broken)
    (broken / 'events.csv').unlink()
    with pytest.raises(DatasetError):
        load_sample(SampleRef(broken, 'left'))


def test_invalid_meta_is_an_error(tmp_path):
    meta = tmp_path / 'meta.txt'
    meta.write_text('label=0\nT=2\nH=4\nW=4\nrgb_timestamps=10\n')
    with pytest.raises(DatasetError):
        read_meta(meta)


def test_broken_samples_are_skipped(tmp_path, synth_root):
    root = tmp_path / 'data'
    shutil.copytree(synth_root, root)
    victim = discover_samples(root, 'val')[0].path
    (victim / 'frame_001.png').unlink()
    samples = list(load_dataset(root, 'val', shuffle=False))
    assert len(samples) == 3
    assert victim.name not in {s.sample_id for s in samples}


def test_unknown_split_is_rejected(synth_root):
    with pytest.raises(DatasetError):
        list(load_dataset(synth_root, 'holdout'))


def test_shuffle_is_seeded(synth_root):
    first = [s.sample_id for s in load_dataset(synth_root, 'test', seed=3)]
    second = [s.sample_id for s in load_dataset(synth_root, 'test', seed=3)]
    ordered = [s.sample_id for s in load_dataset(synth_root, 'test', shuffle=False)]
    assert first == second
    assert sorted(first) == sorted(ordered)


def test_prefetch_keeps_order(synth_root):
    serial = [s.sample_id for s in load_dataset(synth_root, 'train', seed=1)]
    threaded = [s.sample_id for s in load_dataset(synth_root, 'train', seed=1, num_workers=3)]
    assert threaded == serial


def test_split_arrays(synth_root):
    arrays = load_split_arrays(synth_root, 'test', dtype=np.float64)
    assert len(arrays) == 12
    assert arrays.rgb.shape == (12, 2, 3, 16, 16)
    assert arrays.events.dtype == np.float64
    assert sorted(set(arrays.labels.tolist())) == [0, 1, 2, 3]


def test_empty_split_arrays(tmp_path):
    assert len(load_split_arrays(tmp_path, 'val')) == 0


def test_splits_are_disjoint(synth_root):
    ids = {split: [s.sample_id for s in load_dataset(synth_root, split, shuffle=False)] for split in SPLITS}
    assert set(ids['train']).isdisjoint(ids['test'])
    assert set(ids['train']).isdisjoint(ids['val'])
    assert set(ids['val']).isdisjoint(ids['test'])
    assert len(set().union(*ids.values())) == sum(len(v) for v in ids.values()) == 40
