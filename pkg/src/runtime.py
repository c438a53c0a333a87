"""
Clock, transport and worker-pool seam injected into every node.

Node logic is written as event handlers; a runtime feeds it frames and
timer callbacks on one logical loop. ``AsyncioRuntime`` serves real TCP
peers; the simulator provides a virtual one with the same interface.
"""
import asyncio
import logging
import random
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, Optional, Tuple

from .constants import API_NAME
from .errors import IncompatibleNetwork, ProtocolError
from .wire import Frame, FrameDecoder, FrameType

__all__ = ['AsyncioRuntime', 'Requests', 'Runtime', 'split_endpoint']

logger = logging.getLogger(API_NAME)

DoneFn = Callable[[Any, Optional[BaseException]], None]


def split_endpoint(endpoint: str) -> Tuple[str, int]:
    host, _, port = endpoint.rpartition(':')
    if not host or not port.isdigit():
        raise ValueError(f'endpoint must be HOST:PORT, got {endpoint!r}')
    return host, int(port)


class Runtime(ABC):
    endpoint: str
    rng: random.Random

    @abstractmethod
    def now(self) -> int:
        """Milliseconds on this runtime's clock."""

    @abstractmethod
    def call_later(self, delay_ms: int, callback: Callable, *args):
        """Schedules ``callback``; the returned handle has ``cancel()``."""

    @abstractmethod
    def send(self, endpoint: str, data: bytes) -> None:
        """Fire-and-forget delivery of one encoded frame."""

    @abstractmethod
    def submit(self, fn: Callable, *args, on_done: Optional[DoneFn] = None):
        """Runs ``fn`` off the loop; ``on_done`` comes back on the loop."""

    def bind(self, node) -> None:
        self.node = node

    def record(self, event: str, **details) -> None:
        """State-transition hook; the simulator keeps these in its trace."""

    def drive(self, until: Callable[[], bool]) -> None:
        """Advances a virtual clock until ``until()``; real loops run alone."""


class Requests:
    """Correlates replies with pending requests by operation id."""

    def __init__(self, runtime: Runtime):
        self._runtime = runtime
        self._pending: Dict[int, Tuple[Callable, Any, Optional[Callable]]] = {}

    def new_op(self) -> int:
        while True:
            op = self._runtime.rng.getrandbits(63) or 1
            if op not in self._pending:
                return op

    def expect(self, op: int, timeout_ms: int, on_reply: Callable[[Frame],
               None], on_timeout: Optional[Callable[[], None]] = None):
        timer = self._runtime.call_later(timeout_ms, self._expire, op)
        self._pending[op] = (on_reply, timer, on_timeout)

    def _expire(self, op: int):
        entry = self._pending.pop(op, None)
        if entry is not None and entry[2] is not None:
            entry[2]()

    def resolve(self, frame: Frame) -> bool:
        entry = self._pending.pop(frame.op, None)
        if entry is None:
            return False
        on_reply, timer, _ = entry
        timer.cancel()
        on_reply(frame)
        return True

    def cancel_all(self):
        for _, timer, _ in self._pending.values():
            timer.cancel()
        self._pending.clear()

    def __len__(self):
        return len(self._pending)


class _Peer:
    """One outbound connection with its own writer task."""

    def __init__(self, runtime: 'AsyncioRuntime', endpoint: str):
        self.runtime = runtime
        self.endpoint = endpoint
        self.queue: asyncio.Queue = asyncio.Queue()
        self.task = asyncio.ensure_future(self._run())

    async def _run(self):
        host, port = split_endpoint(self.endpoint)
        writer = None
        try:
            reader, writer = await asyncio.wait_for(
                asyncio.open_connection(host, port),
                self.runtime.connect_timeout,
            )
            listener = asyncio.ensure_future(self._listen(reader))
            try:
                while True:
                    data = await self.queue.get()
                    if data is None:
                        break
                    writer.write(data)
                    await writer.drain()
            finally:
                listener.cancel()
        except (OSError, asyncio.TimeoutError) as e:
            logger.debug(f'Connection to {self.endpoint} failed: {e}')
        finally:
            if writer is not None:
                writer.close()
            self.runtime.forget(self)

    async def _listen(self, reader: asyncio.StreamReader):
        decoder = FrameDecoder(self.runtime.digest, self.runtime.max_bytes)
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    return
                for frame in decoder.feed(data):
                    self.runtime.dispatch(frame)
        except IncompatibleNetwork as e:
            self.runtime.incompatible(self.endpoint, e)
        except ProtocolError as e:
            logger.warning(f'Bad frame from {self.endpoint}: {e}')

    def close(self):
        self.queue.put_nowait(None)


class AsyncioRuntime(Runtime):
    def __init__(self, endpoint: str, digest: bytes, max_bytes: int,
                 workers: int = 4, seed: Optional[int] = None,
                 connect_timeout: float = 3.0):
        self.endpoint = endpoint
        self.digest = digest
        self.max_bytes = max_bytes
        self.connect_timeout = connect_timeout
        self.rng = random.Random(seed)
        self.node = None
        self._pool = ThreadPoolExecutor(max_workers=max(1, workers))
        self._peers: Dict[str, _Peer] = {}
        self._server: Optional[asyncio.AbstractServer] = None
        self._loop: Optional[asyncio.AbstractEventLoop] = None

    @property
    def loop(self) -> asyncio.AbstractEventLoop:
        if self._loop is None:
            self._loop = asyncio.get_event_loop()
        return self._loop

    async def start(self):
        self._loop = asyncio.get_running_loop()
        host, port = split_endpoint(self.endpoint)
        self._server = await asyncio.start_server(self._on_client, host, port)
        logger.info(f'Peer listener on {self.endpoint}')

    async def close(self):
        for peer in list(self._peers.values()):
            peer.close()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        self._pool.shutdown(wait=False)

    def now(self) -> int:
        return int(self.loop.time() * 1000)

    def call_later(self, delay_ms: int, callback: Callable, *args):
        return self.loop.call_later(
            max(delay_ms, 0) / 1000, self._guard, callback, args
        )

    def _guard(self, callback: Callable, args: tuple):
        try:
            callback(*args)
        except Exception as e:
            logger.error(f'Timer callback failed: {e}', exc_info=True)

    def send(self, endpoint: str, data: bytes) -> None:
        peer = self._peers.get(endpoint)
        if peer is None:
            peer = self._peers[endpoint] = _Peer(self, endpoint)
        peer.queue.put_nowait(data)

    def forget(self, peer: _Peer):
        if self._peers.get(peer.endpoint) is peer:
            del self._peers[peer.endpoint]

    def submit(self, fn: Callable, *args, on_done: Optional[DoneFn] = None):
        future = self.loop.run_in_executor(self._pool, fn, *args)

        def finished(fut):
            if on_done is None:
                return
            error = fut.exception()
            self._guard(on_done, (None if error else fut.result(), error))
        future.add_done_callback(finished)
        return future

    def dispatch(self, frame: Frame):
        try:
            self.node.handle_frame(frame)
        except Exception as e:
            logger.error(f'Handler for {frame!r} failed: {e}', exc_info=True)

    def incompatible(self, endpoint: str, error: IncompatibleNetwork):
        logger.error(f'Peer {endpoint} is incompatible: {error}')
        if self.node is not None:
            self.node.handle_incompatible(endpoint, error)

    async def _on_client(self, reader: asyncio.StreamReader,
                         writer: asyncio.StreamWriter):
        decoder = FrameDecoder(self.digest, self.max_bytes)
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                for frame in decoder.feed(data):
                    self.dispatch(frame)
        except IncompatibleNetwork as e:
            logger.warning(f'Rejected incompatible peer: {e}')
            refusal = Frame(FrameType.JOIN_ACK, error='incompatible network')
            writer.write(refusal.encode(self.digest))
            await writer.drain()
        except ProtocolError as e:
            logger.warning(f'Dropping connection after bad frame: {e}')
        except ConnectionError:
            pass
        finally:
            writer.close()
