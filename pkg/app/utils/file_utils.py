"""
File utility functions for directory creation, discovery and small text formats.
"""

import json
import logging
import os

from collections.abc import Iterator
from pathlib import Path
from typing import Any


logger = logging.getLogger(__name__)


def ensure_directory_exists(directory_path: str) -> Path:
    """
    Ensure a directory exists, creating it if necessary.

    Args:
        directory_path: Path to the directory to ensure exists

    Returns:
        Path: Path object for the directory
    """
    path = Path(directory_path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def discover_input_files(input_dir: Path, supported_extensions: set) -> Iterator[Path]:
    """
    Recursively scan the input directory for files with supported extensions.

    Args:
        input_dir (Path): The root directory to search for files.
        supported_extensions (set): A set of allowed file extensions (e.g., {".csv", ".txt"}).

    Yields:
        Path objects for each matching file, in sorted depth-first order.
    """
    for root, dirs, files in os.walk(input_dir):
        dirs.sort()
        for f in sorted(files):
            p = Path(root) / f
            if p.suffix.lower() in supported_extensions:
                yield p


def save_text_file(content: str, file_path: Path, encoding: str = 'utf-8') -> bool:
    """
    Save text content to a file.

    Args:
        content: Text content to save
        file_path: Path object for the output file
        encoding: File encoding (default: utf-8)

    Returns:
        bool: True if successful, False otherwise
    """
    try:
        with open(file_path, 'w', encoding=encoding, newline='\n') as file:
            file.write(content)
        return True
    except Exception as e:
        logger.error(f'Error saving file {file_path}: {e}')
        return False


def read_key_value_file(path: Path) -> dict[str, str]:
    """
    Parse `key=value` lines. Blank lines and lines starting with '#' are ignored.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If a line has no '=' or an empty key.
    """
    values: dict[str, str] = {}
    with open(path, encoding='utf-8') as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith('#'):
                continue
            key, sep, value = line.partition('=')
            if not sep or not key.strip():
                raise ValueError(f'{path}: line {line_number}: expected key=value, got {line!r}')
            values[key.strip()] = value.strip()
    return values


def write_key_value_file(values: dict[str, Any], path: Path) -> bool:
    """Write a flat mapping as sorted `key=value` lines."""
    lines = [f'{key}={value}' for key, value in sorted(values.items())]
    return save_text_file('\n'.join(lines) + '\n', path)


def save_json(data: Any, path: Path) -> bool:
    try:
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(data, handle, indent=2, sort_keys=True, default=str)
        return True
    except (OSError, TypeError) as e:
        logger.error(f'Error saving JSON {path}: {e}')
        return False
