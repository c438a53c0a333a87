"""
This module contains the base implementation of a logger and special method
in ``Logger`` class for creating configuration for uvicorn, which serves the
client API inside the node daemon.
"""
import logging
import os
from datetime import datetime
import logging.handlers
from typing import Union

__all__ = ['Logger']

DEFAULT_LOG_DIR = 'logs'
DEFAULT_LOG_NAME = datetime.now().strftime('%Y-%m-%d__%H-%M-%S%z') + '.log'
DEFAULT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DEFAULT_DATE_FORMAT = '%Y-%m-%d %H-%M-%S%z'
UVICORN_LOGGERS = ('uvicorn', 'uvicorn.access', 'uvicorn.error')


class Logger:
    def __init__(
            self,
            logger_name: str = 'rpmesh',
            save_logs: bool = False,
            log_max_size_mb: int = 5,
            log_max_backup_count: int = 5,
            logs_dir: str = DEFAULT_LOG_DIR,
            log_filename: str = DEFAULT_LOG_NAME,
            level: Union[int, str] = logging.INFO
    ):
        """
        Initializes logging for console and for file output
        if ``save_logs`` is True.
        """
        self._logger_name = logger_name or 'rpmesh'
        self._save_logs = bool(save_logs)
        self._logs_dir = logs_dir or DEFAULT_LOG_DIR
        self._log_filename = log_filename or DEFAULT_LOG_NAME
        if isinstance(level, str):
            level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            raise ValueError(f'unknown log level {level!r}')
        self._level = level
        log_max_size_mb = log_max_size_mb or 5
        log_max_backup_count = log_max_backup_count or 5

        formatter = logging.Formatter(
            DEFAULT_FORMAT, datefmt=DEFAULT_DATE_FORMAT
        )
        self._logger = logging.getLogger(self._logger_name)
        self._logger.setLevel(level)
        self._logger.propagate = False

        if not any(type(h) is logging.StreamHandler
                   for h in self._logger.handlers):
            stream_handler = logging.StreamHandler()
            stream_handler.setLevel(level)
            stream_handler.setFormatter(formatter)
            self._logger.addHandler(stream_handler)

        if self._save_logs:
            os.makedirs(self._logs_dir, exist_ok=True)
            file_handler = logging.handlers.RotatingFileHandler(
                self.log_path,
                maxBytes=log_max_size_mb * 1024 * 1024,
                backupCount=log_max_backup_count,
                encoding='utf-8'
            )
            file_handler.setLevel(level)
            file_handler.setFormatter(formatter)
            self._logger.addHandler(file_handler)

    @property
    def logger(self):
        return self._logger

    @property
    def log_path(self) -> str:
        return os.path.join(self._logs_dir, self._log_filename)

    def get_logger(self):
        return self._logger

    def logging_config(self) -> dict:
        """Creating configuration for uvicorn logging."""
        level = logging.getLevelName(self._level)
        cfg = {
            'version': 1,
            'disable_existing_loggers': False,
            'formatters': {
                'default': {
                    'format': DEFAULT_FORMAT,
                    'datefmt': DEFAULT_DATE_FORMAT
                }
            },
            'handlers': {
                'console': {
                    'class': 'logging.StreamHandler',
                    'level': level,
                    'formatter': 'default',
                }
            },
            'loggers': {
                name: {
                    'handlers': ['console'],
                    'level': level,
                    'propagate': False,
                }
                for name in UVICORN_LOGGERS
            }
        }
        if self._save_logs:
            cfg['handlers']['file'] = {
                'class': 'logging.FileHandler',
                'level': level,
                'formatter': 'default',
                'filename': self.log_path,
            }
            for name in UVICORN_LOGGERS:
                cfg['loggers'][name]['handlers'].append('file')
        return cfg
