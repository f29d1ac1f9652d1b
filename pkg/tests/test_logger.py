import logging

from app.config.config import settings
from app.config.logger.logger import setup_logger


def test_setup_logger_reads_configured_file(tmp_path, monkeypatch):
    config_file = tmp_path / 'quiet.yaml'
    config_file.write_text(
        'version: 1\n'
        'disable_existing_loggers: False\n'
        'handlers:\n'
        '  sink:\n'
        '    class: logging.NullHandler\n'
        'root:\n'
        '  level: INFO\n'
        '  handlers: [sink]\n'
    )
    monkeypatch.setattr(settings, 'logging_config_file', str(config_file))
    monkeypatch.setattr(settings, 'log_dir', str(tmp_path / 'logs'))
    monkeypatch.setattr(settings, 'log_level', 'warning')

    try:
        setup_logger()
        root = logging.getLogger()
        assert [type(h) for h in root.handlers] == [logging.NullHandler]
        assert root.level == logging.WARNING
    finally:
        monkeypatch.undo()
        setup_logger()
