"""
This module sets up a unified logging configuration using Python's built-in
logging module, reading from a YAML config file.

Configuration:
--------------
- The logger loads its configuration from a YAML file (default: logger.yaml).
- The path can be overridden by setting the environment variable LOGGING_CONFIG_FILE.
- The default logging level is 'INFO', but can be overridden via LOG_LEVEL env var.

Environment Variables:
----------------------
- LOGGING_CONFIG_FILE: Path to the YAML configuration file.
- LOG_LEVEL: Override the default log level (e.g., DEBUG, INFO, WARNING).
- LOG_DIR: Directory of the file handler's output.
- SERVICE_NAME: Used in logs to identify the process emitting the logs.

Usage:
------
1. **Entry-point files (the `mmhco` CLI):**

       from app.config.logger.logger import setup_logger
       setup_logger()

2. **All other modules:**

       import logging
       logger = logging.getLogger(__name__)

Every record carries a `run_id`; `train`, `eval` and `verify` set it with
`new_run_id()` so the lines of one invocation can be grepped together.
"""

import logging
import uuid

from contextvars import ContextVar
from logging.config import dictConfig
from pathlib import Path
from typing import Optional

import yaml

from app.config.config import settings


run_id_ctx_var: ContextVar[Optional[str]] = ContextVar('run_id', default=None)
formatter_str = '%(asctime)s %(levelname)s %(name)s %(message)s %(service)s %(run_id)s'


class ServiceFilter(logging.Filter):
    """
    Logging filter that injects `service` and `run_id` into each log record.
    """

    def filter(self, record: logging.LogRecord) -> bool:
        record.service = settings.service_name
        record.run_id = run_id_ctx_var.get() or '-'
        return True


def new_run_id(prefix: str = 'run') -> str:
    """Generate a run id, bind it to the current context and return it."""
    run_id = f'{prefix}-{uuid.uuid4().hex[:8]}'
    run_id_ctx_var.set(run_id)
    return run_id


def get_run_id(default: str = '-') -> str:
    return run_id_ctx_var.get() or default


def _fallback(log_level: str, log_dir: Path) -> None:
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, log_level, logging.INFO))
    for handler in (logging.StreamHandler(), logging.FileHandler(str(log_dir / 'mmhco.log'))):
        handler.setLevel(getattr(logging, log_level, logging.INFO))
        handler.setFormatter(logging.Formatter(formatter_str))
        handler.addFilter(ServiceFilter())
        root_logger.addHandler(handler)


def setup_logger(config_file: Optional[str] = None) -> None:
    """
    Initializes the application logger using a YAML configuration file.
    Robust to a missing YAML: falls back to a minimal file+console config.
    """
    base_dir = Path(__file__).parent
    config_path = Path(config_file) if config_file else base_dir / settings.logging_config_file

    log_level = settings.log_level.upper()
    log_dir = Path(settings.log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)

    if not config_path.is_file():
        _fallback(log_level, log_dir)
        return

    with open(config_path) as f:
        config = yaml.safe_load(f)

    if 'root' in config:
        config['root']['level'] = log_level

    # the file handler always writes inside LOG_DIR
    handlers = config.get('handlers', {})
    if 'file' in handlers:
        filename = handlers['file'].get('filename', 'mmhco.log')
        handlers['file']['filename'] = str(log_dir / Path(filename).name)

    dictConfig(config)
