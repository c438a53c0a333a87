"""
Long-running node process: the peer listener, the overlay and the client
API share one asyncio loop.

SIGTERM and SIGINT stop the API server, flush the queues and close the
stores; SIGHUP reloads the rule file.
"""
import asyncio
import logging
import signal
from typing import Optional

import uvicorn

from .api_versions import API_LATEST
from .constants import API_NAME
from .errors import EXIT_NETWORK, EXIT_OK, RpmeshError
from .logger import Logger
from .main import app
from .node import Node, NodeConfig
from .runtime import AsyncioRuntime

__all__ = ['run_daemon']

logger = logging.getLogger(API_NAME)


class _Daemon:
    def __init__(self, config: NodeConfig, log: Optional[Logger] = None):
        self.config = config
        self.log = log or Logger(logger_name=API_NAME)
        self.runtime: Optional[AsyncioRuntime] = None
        self.node: Optional[Node] = None
        self.server: Optional[uvicorn.Server] = None
        self.exit_code = EXIT_OK

    def _joined(self, member, error):
        if error is None:
            logger.info(f'Joined as {member} in region '
                        f'{self.node.overlay.region!r}')
            return
        logger.error(f'Bootstrap failed: {error}')
        self.exit_code = getattr(error, 'exit_code', EXIT_NETWORK)
        if self.server is not None:
            self.server.should_exit = True

    def _reload_rules(self):
        if self.node is None or self.node.rules is None:
            logger.info('SIGHUP ignored: no rule file configured')
            return
        try:
            self.node.rules.reload()
        except RpmeshError as e:
            logger.error(f'Rule reload failed, keeping old rules: {e}')

    async def serve(self) -> int:
        config = self.config
        self.runtime = AsyncioRuntime(config.listen, config.digest,
                                      config.max_frame_bytes, config.workers)
        self.node = Node(config, self.runtime)
        try:
            await self.runtime.start()
        except OSError as e:
            logger.error(f'Cannot listen on {config.listen}: {e}')
            self.node.stop()
            return EXIT_NETWORK
        self.server = uvicorn.Server(uvicorn.Config(
            app, host=config.http_host, port=config.http_port,
            log_config=self.log.logging_config(),
        ))
        API_LATEST.gateway.attach(self.node)
        loop = asyncio.get_running_loop()
        loop.add_signal_handler(signal.SIGHUP, self._reload_rules)
        self.node.start(self._joined)
        try:
            await self.server.serve()
        except SystemExit:
            logger.error(f'Client API could not bind '
                         f'{config.http_host}:{config.http_port}')
            self.exit_code = EXIT_NETWORK
        finally:
            API_LATEST.gateway.detach()
            self.node.stop()
            await self.runtime.close()
        return self.exit_code


def run_daemon(config: NodeConfig, log: Optional[Logger] = None) -> int:
    """Runs one rendezvous point until it is told to stop."""
    logger.info(f'Starting {API_NAME} node on {config.listen} '
                f'(d={config.dimensions}, b={config.order}, '
                f'replicas={config.replicas})')
    try:
        return asyncio.run(_Daemon(config, log).serve())
    except RpmeshError as e:
        logger.error(f'{type(e).__name__}: {e}')
        return e.exit_code
