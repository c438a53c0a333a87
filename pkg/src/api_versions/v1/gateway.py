"""
Bridge between async route handlers and the callback-driven node.

The daemon attaches its node before serving; tests attach a simulated one.
"""
import asyncio
import logging
from typing import Any, Callable, Optional

from ...errors import PostFailed
from ...node import Node
from .version_constants import API_NAME, DEFAULT_TIMEOUT_S

__all__ = ['Gateway', 'NodeUnavailable', 'gateway']

logger = logging.getLogger(API_NAME)


class NodeUnavailable(PostFailed):
    """No node attached, or it has not finished joining."""


class Gateway:
    def __init__(self, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.timeout_s = timeout_s
        self.node: Optional[Node] = None

    def __repr__(self):
        return f'Gateway(node={self.node!r})'

    def attach(self, node: Node):
        self.node = node
        logger.info(f'Client API serving node {node.endpoint}')

    def detach(self):
        self.node = None

    def require(self, joined: bool = True) -> Node:
        node = self.node
        if node is None or node.closed:
            raise NodeUnavailable('no node is running behind this API')
        if joined and not node.overlay.joined:
            raise NodeUnavailable(f'node {node.endpoint} has not joined yet '
                                  f'({node.overlay.state})')
        return node

    async def call(self, start: Callable[[Node, Callable], None]) -> Any:
        """
        Runs ``start(node, on_done)`` and awaits its ``on_done(result,
        error)``. A virtual runtime is stepped until the answer arrives.
        """
        node = self.require()
        future = asyncio.get_running_loop().create_future()

        def done(result, error):
            if future.done():
                return
            if error is not None:
                future.set_exception(error)
            else:
                future.set_result(result)
        start(node, done)
        node.runtime.drive(future.done)
        return await asyncio.wait_for(future, self.timeout_s)


gateway = Gateway()
