"""
Utility modules for the MMHCO-HAR package.
"""

from .file_utils import ensure_directory_exists, read_key_value_file, save_json, save_text_file

__all__ = [
    'ensure_directory_exists',
    'read_key_value_file',
    'save_json',
    'save_text_file',
]
