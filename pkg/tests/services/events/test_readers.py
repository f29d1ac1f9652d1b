import numpy as np
import pytest

from app.services.events.models import EventPoint, EventStream
from app.services.events.readers import (
    CsvEventReader,
    EventReader,
    get_reader,
    parse_events,
    register_reader,
    write_events_csv,
)
from app.utils.exceptions import EventParseError


def _write(tmp_path, text, name='events.csv'):
    path = tmp_path / name
    path.write_text(text, encoding='utf-8')
    return path


def test_parse_maps_polarity_and_skips_header(tmp_path):
    path = _write(tmp_path, 't,x,y,p\n10,1,2,1\n20,0,0,0\n')
    stream = parse_events(path, width=4, height=4)
    assert stream.t.tolist() == [10, 20]
    assert stream.p.tolist() == [1, -1]
    assert stream.x.dtype == np.int32


def test_parse_without_header_and_blank_lines(tmp_path):
    path = _write(tmp_path, '5,0,0,1\n\n6,1,1,0\n')
    assert len(parse_events(path)) == 2


def test_parse_sorts_unordered_timestamps(tmp_path):
    stream = parse_events(_write(tmp_path, '30,0,0,1\n10,1,0,1\n20,2,0,0\n'))
    assert stream.t.tolist() == [10, 20, 30]
    assert stream.x.tolist() == [1, 2, 0]


@pytest.mark.parametrize('line, reason', [
    ('1,2,3', 'expected 4 fields'),
    ('1,a,3,1', 'non-integer'),
    ('-1,0,0,1', 'negative timestamp'),
    ('1,0,0,2', 'polarity'),
    ('1,4,0,1', 'x=4'),
    ('1,0,9,1', 'y=9'),
])
def test_parse_reports_line_and_reason(tmp_path, line, reason):
    path = _write(tmp_path, f'0,0,0,1\n{line}\n')
    with pytest.raises(EventParseError) as exc_info:
        parse_events(path, width=4, height=4)
    assert exc_info.value.line_number == 2
    assert reason in exc_info.value.reason


def test_unknown_suffix_has_no_reader(tmp_path):
    with pytest.raises(EventParseError):
        get_reader(tmp_path / 'events.aedat')


def test_custom_reader_registration(tmp_path):
    class NpyEventReader(EventReader):
        suffixes = ('.npy',)

        def read(self, path, width=None, height=None):
            t, x, y, p = np.load(path)
            return EventStream(t, x, y, p)

    register_reader(NpyEventReader())
    path = tmp_path / 'events.npy'
    np.save(path, np.array([[1, 2], [0, 1], [0, 1], [1, -1]]))
    assert parse_events(path).t.tolist() == [1, 2]


def test_write_then_parse_keeps_events(tmp_path):
    stream = EventStream(t=[1, 2, 2], x=[0, 3, 1], y=[1, 1, 0], p=[1, -1, 1])
    path = write_events_csv(stream, tmp_path / 'out.csv')
    assert path.read_text().splitlines()[0] == 't,x,y,p'
    parsed = CsvEventReader().read(path, 4, 4)
    assert parsed.t.tolist() == [1, 2, 2]
    assert parsed.p.tolist() == [1, -1, 1]


def test_event_point_validation():
    assert EventPoint(x=0, y=0, t=0, p=-1).p == -1
    with pytest.raises(ValueError):
        EventPoint(x=0, y=0, t=0, p=0)


def test_stream_helpers():
    stream = EventStream.from_points([EventPoint(x=1, y=0, t=5, p=1), EventPoint(x=0, y=0, t=3, p=-1)])
    assert not stream.is_sorted()
    assert stream.sorted().t.tolist() == [3, 5]
    assert [e.t for e in stream] == [5, 3]
    with pytest.raises(ValueError):
        EventStream(t=[1, 2], x=[0], y=[0], p=[1])
