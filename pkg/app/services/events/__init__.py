"""
Event-camera ingestion: raw stream parsing, stacking into frames, paired datasets and the synthetic generator.
"""

from .dataset import load_dataset, load_split_arrays, read_class_names
from .models import EventPoint, EventStream, PairedSample, SampleMeta
from .readers import CsvEventReader, EventReader, parse_events, register_reader
from .stacking import count_events, stack_events
from .synth import synth_generate

__all__ = [
    'CsvEventReader',
    'EventPoint',
    'EventReader',
    'EventStream',
    'PairedSample',
    'SampleMeta',
    'count_events',
    'load_dataset',
    'load_split_arrays',
    'parse_events',
    'read_class_names',
    'register_reader',
    'stack_events',
    'synth_generate',
]
