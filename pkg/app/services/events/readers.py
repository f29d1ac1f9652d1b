import csv
import logging

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional

import numpy as np

from app.services.events.models import EventStream
from app.utils.exceptions import EventParseError


logger = logging.getLogger(__name__)

CSV_HEADER = ('t', 'x', 'y', 'p')


class EventReader(ABC):
    """
    Abstract base class for raw event readers.

    A reader turns one recording on disk into a validated EventStream. The
    canonical format is CSV; readers for other formats plug in by subclassing
    and registering a file suffix with `register_reader`.
    """

    suffixes: tuple[str, ...] = ()

    @abstractmethod
    def read(self, path: Path, width: Optional[int] = None, height: Optional[int] = None) -> EventStream:
        """
        Read and validate the events stored at `path`.

        Args:
            path: Recording file.
            width: Sensor width; x must lie in [0, width) when given.
            height: Sensor height; y must lie in [0, height) when given.

        Returns:
            EventStream sorted by non-decreasing timestamp.

        Raises:
            EventParseError: On malformed records or out-of-bounds coordinates.
        """


class CsvEventReader(EventReader):
    """Reads UTF-8 "t,x,y,p" lines; p in {0, 1} maps to {-1, +1}; an initial header line is optional."""

    suffixes = ('.csv', '.txt')

    def read(self, path: Path, width: Optional[int] = None, height: Optional[int] = None) -> EventStream:
        path = Path(path)
        columns: list[list[int]] = [[], [], [], []]
        with open(path, encoding='utf-8', newline='') as handle:
            for line_number, row in enumerate(csv.reader(handle), start=1):
                if not row or all(not field.strip() for field in row):
                    continue
                if line_number == 1 and tuple(field.strip().lower() for field in row) == CSV_HEADER:
                    continue
                t, x, y, p = self._parse_row(path, line_number, row, width, height)
                columns[0].append(t)
                columns[1].append(x)
                columns[2].append(y)
                columns[3].append(p)

        stream = EventStream(*columns)
        if not stream.is_sorted():
            logger.warning(f'{path}: timestamps are not monotone, sorting {len(stream)} events')
            stream = stream.sorted()
        logger.debug(f'Parsed {len(stream)} events from {path}')
        return stream

    @staticmethod
    def _parse_row(
        path: Path, line_number: int, row: list[str], width: Optional[int], height: Optional[int]
    ) -> tuple[int, int, int, int]:
        if len(row) != 4:
            raise EventParseError(str(path), line_number, f'expected 4 fields "t,x,y,p", got {len(row)}: {",".join(row)!r}')
        try:
            t, x, y, p = (int(field.strip()) for field in row)
        except ValueError:
            raise EventParseError(str(path), line_number, f'non-integer field in {",".join(row)!r}') from None
        if t < 0:
            raise EventParseError(str(path), line_number, f'negative timestamp {t}')
        if p not in (0, 1):
            raise EventParseError(str(path), line_number, f'polarity must be 0 or 1, got {p}')
        if x < 0 or (width is not None and x >= width):
            raise EventParseError(str(path), line_number, f'x={x} outside [0, {width})')
        if y < 0 or (height is not None and y >= height):
            raise EventParseError(str(path), line_number, f'y={y} outside [0, {height})')
        return t, x, y, 1 if p == 1 else -1


_READERS: dict[str, EventReader] = {}


def register_reader(reader: EventReader) -> None:
    for suffix in reader.suffixes:
        _READERS[suffix.lower()] = reader


def get_reader(path: Path) -> EventReader:
    suffix = Path(path).suffix.lower()
    if suffix not in _READERS:
        raise EventParseError(str(path), 0, f'no event reader registered for {suffix!r} files')
    return _READERS[suffix]


register_reader(CsvEventReader())


def parse_events(path: Path, width: Optional[int] = None, height: Optional[int] = None) -> EventStream:
    """Parse a raw event file with the reader registered for its suffix."""
    return get_reader(path).read(Path(path), width, height)


def write_events_csv(stream: EventStream, path: Path, header: bool = True) -> Path:
    """Write `stream` as "t,x,y,p" lines with p in {0, 1}."""
    path = Path(path)
    polarity = np.where(stream.p > 0, 1, 0)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        if header:
            writer.writerow(CSV_HEADER)
        writer.writerows(zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), polarity.tolist()))
    return path
