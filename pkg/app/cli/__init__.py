"""
Command-line interface for the MMHCO-HAR pipeline.
"""

from .mmhco_cli import create_argument_parser, main, validate_arguments

__all__ = ['main', 'create_argument_parser', 'validate_arguments']
