"""
This module contains the base implementation of a configurator for this
project. It loads every possible setting from a key=value config file,
the environment (``RPMESH_`` prefix) and explicit overrides, in that order
of increasing precedence.
"""

import os
from typing import Any, Dict, Optional

from dotenv import dotenv_values, load_dotenv

__all__ = ['ENV_PREFIX', 'MainConfigurator']

ENV_PREFIX = 'RPMESH_'

# name -> (type, default)
DEFAULTS: Dict[str, tuple] = {
    'api_name': (str, 'rpmesh'),
    'save_logs': (bool, False),
    'log_max_size_mb': (int, 5),
    'log_max_backup_count': (int, 5),
    'logs_dir': (str, 'logs'),
    'log_filename': (str, None),
    'log_level': (str, 'INFO'),
    'main_api_address': (str, '/api'),
    'listen': (str, '127.0.0.1:7400'),
    'http_host': (str, '127.0.0.1'),
    'http_port': (int, 8400),
    'geo': (str, '0,0'),
    'bootstrap': (str, ''),
    'data': (str, 'rpmesh-data'),
    'rules': (str, None),
    'd': (int, 3),
    'b': (int, 16),
    'capacity': (int, 16),
    'replicas': (int, 3),
    'keepalive_ms': (int, 2000),
    'miss_threshold': (int, 3),
    'join_timeout_ms': (int, 3000),
    'rpc_timeout_ms': (int, 1500),
    'bucket_size': (int, 20),
    'alpha': (int, 3),
    'max_segments': (int, 32),
    'hot_capacity_bytes': (int, 64 * 1024 * 1024),
    'segment_size': (int, 64 * 1024 * 1024),
    'max_record_size': (int, 16 * 1024 * 1024),
    'max_frame_bytes': (int, 32 * 1024 * 1024),
    'retain_segments': (int, 0),
    'sync_interval_ms': (int, 0),
    'workers': (int, 4),
    'executor_allow': (str, ''),
}


def _cast(kind: type, raw: Any) -> Any:
    if raw is None or isinstance(raw, kind):
        return raw
    if kind is bool:
        return str(raw).strip().lower() in ('1', 'true', 'yes', 'on')
    if kind is int:
        return int(str(raw).strip())
    return str(raw)


class MainConfigurator:
    def __init__(self, env_path='.env', config_file: Optional[str] = None):
        """
        Loads configuration from a config file, environment variables
        or defaults.
        """
        self._env_path = env_path
        self._config_file = config_file
        self.cfg = {}
        dev = bool(int(os.getenv('START_DEV', '0')))
        if dev:
            self._env_path = '.env.dev'
        self.load_env(self._env_path)

    def __repr__(self):
        return (f'MainConfigurator(env_path={self._env_path}, '
                f'config_file={self._config_file})')

    def load_env(self, env_path: str):
        self._env_path = env_path
        load_dotenv(self._env_path)
        config_file = (self._config_file
                       or os.getenv(f'{ENV_PREFIX}CONFIG_FILE'))
        file_values = {}
        if config_file and os.path.exists(config_file):
            file_values = {
                key.lower(): value
                for key, value in dotenv_values(config_file).items()
            }
        self.cfg = {'dev': bool(int(os.getenv('START_DEV', '0')))}
        for name, (kind, default) in DEFAULTS.items():
            raw = os.getenv(f'{ENV_PREFIX}{name.upper()}')
            if raw is None:
                raw = file_values.get(name, default)
            self.cfg[name] = _cast(kind, raw)
        if not self.cfg['main_api_address'].startswith('/'):
            self.cfg['main_api_address'] = f'/{self.cfg["main_api_address"]}'

    def use_config_file(self, path: str):
        """Reloads with ``path`` as the key=value config file."""
        if not os.path.exists(path):
            raise FileNotFoundError(f'config file {path} not found')
        self._config_file = path
        self.load_env(self._env_path)
        return self

    def override(self, **values):
        """Applies CLI-level overrides; ``None`` values are ignored."""
        for name, value in values.items():
            if value is None:
                continue
            kind = DEFAULTS[name][0] if name in DEFAULTS else type(value)
            self.cfg[name] = _cast(kind, value)
        return self

    def node_config(self, **overrides):
        """Builds a validated ``NodeConfig`` from the loaded settings."""
        from .node import NodeConfig

        self.override(**overrides)
        lat, lon = (float(part) for part in self.cfg['geo'].split(','))
        bootstrap = [
            item.strip() for item in self.cfg['bootstrap'].split(',')
            if item.strip()
        ]
        allow = [
            item.strip() for item in self.cfg['executor_allow'].split(',')
            if item.strip()
        ]
        return NodeConfig(
            listen=self.cfg['listen'],
            lat=lat,
            lon=lon,
            bootstrap=bootstrap,
            data_dir=self.cfg['data'],
            rule_file=self.cfg['rules'],
            dimensions=self.cfg['d'],
            order=self.cfg['b'],
            capacity=self.cfg['capacity'],
            replicas=self.cfg['replicas'],
            keepalive_ms=self.cfg['keepalive_ms'],
            miss_threshold=self.cfg['miss_threshold'],
            join_timeout_ms=self.cfg['join_timeout_ms'],
            rpc_timeout_ms=self.cfg['rpc_timeout_ms'],
            bucket_size=self.cfg['bucket_size'],
            alpha=self.cfg['alpha'],
            max_segments=self.cfg['max_segments'],
            hot_capacity_bytes=self.cfg['hot_capacity_bytes'],
            segment_size=self.cfg['segment_size'],
            max_record_size=self.cfg['max_record_size'],
            max_frame_bytes=self.cfg['max_frame_bytes'],
            retain_segments=self.cfg['retain_segments'],
            sync_interval_ms=self.cfg['sync_interval_ms'],
            workers=self.cfg['workers'],
            executor_allow=allow,
            http_host=self.cfg['http_host'],
            http_port=self.cfg['http_port'],
        )

    def get_config(self):
        return self.cfg

    def set_config(self, config):
        self.cfg = config

    @property
    def config(self):
        return self.cfg

    @config.setter
    def config(self, config):
        self.cfg = config

    @property
    def env_path(self):
        return self._env_path

    @env_path.setter
    def env_path(self, env_path: str):
        self._env_path = env_path
        self.load_env(self._env_path)

    @property
    def dev(self):
        return self.config['dev']

    @property
    def save_logs(self):
        return self.config['save_logs']

    @property
    def log_max_size_mb(self):
        return self.config['log_max_size_mb']

    @property
    def log_max_backup_count(self):
        return self.config['log_max_backup_count']

    @property
    def logs_dir(self):
        return self.config['logs_dir']

    @property
    def log_filename(self):
        return self.config['log_filename']

    @property
    def api_name(self):
        return self.config['api_name']

    @property
    def main_api_address(self):
        return self.config['main_api_address']

    @property
    def dimensions(self):
        return self.config['d']

    @property
    def order(self):
        return self.config['b']

    @property
    def http_host(self):
        return self.config['http_host']

    @property
    def http_port(self):
        return self.config['http_port']

    @property
    def log_level(self):
        return self.config['log_level'].upper()
