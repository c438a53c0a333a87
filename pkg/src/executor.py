"""
Function execution hooks for START_FUNCTION / STOP_FUNCTION.

Each executor serves one ``runtime_tag``. Every start and stop is appended
to the executor log (one JSON object per line) when a log path is set.
"""
import json
import logging
import os
import subprocess
import threading
import time
from abc import ABC, abstractmethod
from collections import Counter, deque
from dataclasses import asdict, dataclass
from typing import Callable, Deque, Dict, Iterable, List, Optional

from .ar.message import ARMessage, FunctionRef
from .constants import API_NAME
from .errors import FunctionStartFailed

__all__ = [
    'RECENT_RECORDS',
    'CallbackExecutor',
    'ExecutionResult',
    'Executor',
    'Executors',
    'SubprocessExecutor',
    'read_executor_log',
    'result_dict',
]

logger = logging.getLogger(API_NAME)

RECENT_RECORDS = 256


@dataclass(frozen=True)
class ExecutionResult:
    name: str
    status: str
    msg_id: int = 0
    returncode: int = 0
    output: bytes = b''


class Executor(ABC):
    runtime_tag = ''

    def __init__(self, log_path: Optional[str] = None):
        self.log_path = log_path
        self.recent: Deque[dict] = deque(maxlen=RECENT_RECORDS)
        self._started: Counter = Counter()
        self._lock = threading.Lock()

    def _record(self, ref: FunctionRef, message: ARMessage, status: str,
                returncode: int = 0):
        entry = {
            'time': int(time.time() * 1000),
            'name': ref.name,
            'digest': ref.digest,
            'runtime': ref.runtime_tag,
            'msg_id': message.msg_id,
            'status': status,
            'returncode': returncode,
        }
        with self._lock:
            self.recent.append(entry)
            if status == 'started':
                self._started[ref.name] += 1
            if self.log_path:
                directory = os.path.dirname(self.log_path)
                if directory:
                    os.makedirs(directory, exist_ok=True)
                with open(self.log_path, 'a') as f:
                    f.write(json.dumps(entry, sort_keys=True) + '\n')

    def started(self, name: Optional[str] = None) -> int:
        with self._lock:
            if name is None:
                return sum(self._started.values())
            return self._started[name]

    def admits(self, ref: FunctionRef) -> bool:
        """Whether ``start`` would accept ``ref``."""
        return True

    @abstractmethod
    def start(self, ref: FunctionRef,
              message: ARMessage) -> ExecutionResult:
        """Runs the function to completion; called off the event loop."""

    @abstractmethod
    def stop(self, name: str) -> int:
        """Terminates running instances of ``name``; returns how many."""


class CallbackExecutor(Executor):
    """In-process functions registered by name."""
    runtime_tag = 'callback'

    def __init__(self, log_path: Optional[str] = None):
        super().__init__(log_path)
        self.callbacks: Dict[str, Callable[[ARMessage], Optional[bytes]]] = {}

    def register(self, name: str,
                 fn: Callable[[ARMessage], Optional[bytes]]):
        self.callbacks[name] = fn

    def admits(self, ref: FunctionRef) -> bool:
        return ref.name in self.callbacks

    def start(self, ref: FunctionRef,
              message: ARMessage) -> ExecutionResult:
        fn = self.callbacks.get(ref.name)
        if fn is None:
            raise FunctionStartFailed(f'no callback named {ref.name}')
        self._record(ref, message, 'started')
        output = fn(message) or b''
        return ExecutionResult(ref.name, 'ok', message.msg_id, 0, output)

    def stop(self, name: str) -> int:
        return 0


class SubprocessExecutor(Executor):
    """
    Runs a blob holding a JSON descriptor ``{"argv": [...], "stdin":
    "data" | "none", "timeout": seconds}`` as a child process. Only blobs
    whose sha256 digest is allow-listed may run.
    """
    runtime_tag = 'subprocess'

    def __init__(self, allow: Iterable[str] = (),
                 log_path: Optional[str] = None,
                 default_timeout: float = 60.0):
        super().__init__(log_path)
        self.allow = set(allow)
        self.default_timeout = default_timeout
        self._running: Dict[str, List[subprocess.Popen]] = {}

    def admits(self, ref: FunctionRef) -> bool:
        return ref.digest in self.allow

    @staticmethod
    def descriptor(argv: List[str], stdin: str = 'data',
                   timeout: Optional[float] = None) -> bytes:
        body = {'argv': list(argv), 'stdin': stdin}
        if timeout is not None:
            body['timeout'] = timeout
        return json.dumps(body, sort_keys=True).encode()

    def _parse(self, ref: FunctionRef) -> dict:
        try:
            body = json.loads(ref.blob)
        except (ValueError, UnicodeDecodeError):
            raise FunctionStartFailed(f'{ref.name}: blob is not a descriptor')
        argv = body.get('argv') if isinstance(body, dict) else None
        if not argv or not all(isinstance(a, str) for a in argv):
            raise FunctionStartFailed(f'{ref.name}: descriptor has no argv')
        return body

    def start(self, ref: FunctionRef,
              message: ARMessage) -> ExecutionResult:
        if not self.admits(ref):
            self._record(ref, message, 'denied')
            raise FunctionStartFailed(
                f'{ref.name}: digest {ref.digest[:12]} is not allow-listed'
            )
        body = self._parse(ref)
        timeout = float(body.get('timeout', self.default_timeout))
        feed = message.data if body.get('stdin', 'data') == 'data' else b''
        try:
            process = subprocess.Popen(
                body['argv'], stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, stderr=subprocess.PIPE,
            )
        except OSError as e:
            raise FunctionStartFailed(f'{ref.name}: {e}')
        self._record(ref, message, 'started')
        with self._lock:
            self._running.setdefault(ref.name, []).append(process)
        try:
            output, errors = process.communicate(feed, timeout=timeout)
        except subprocess.TimeoutExpired:
            process.kill()
            output, errors = process.communicate()
            logger.warning(f'Function {ref.name} timed out after {timeout}s')
        finally:
            with self._lock:
                self._running.get(ref.name, []).remove(process)
        status = 'ok' if process.returncode == 0 else 'failed'
        if errors:
            logger.debug(f'Function {ref.name} stderr: {errors[:200]!r}')
        self._record(ref, message, status, process.returncode)
        return ExecutionResult(ref.name, status, message.msg_id,
                               process.returncode, output)

    def stop(self, name: str) -> int:
        with self._lock:
            processes = list(self._running.get(name, []))
        for process in processes:
            process.terminate()
        return len(processes)


class Executors:
    """Executor registry keyed by runtime tag."""

    def __init__(self, *executors: Executor):
        self._by_tag: Dict[str, Executor] = {}
        for executor in executors:
            self.add(executor)

    def add(self, executor: Executor):
        self._by_tag[executor.runtime_tag] = executor

    def get(self, runtime_tag: str) -> Executor:
        executor = self._by_tag.get(runtime_tag)
        if executor is None:
            raise FunctionStartFailed(
                f'no executor for runtime {runtime_tag!r}'
            )
        return executor

    def start(self, ref: FunctionRef, message: ARMessage) -> ExecutionResult:
        return self.get(ref.runtime_tag).start(ref, message)

    def stop(self, name: str) -> int:
        return sum(e.stop(name) for e in self._by_tag.values())

    def status(self) -> dict:
        return {tag: e.started() for tag, e in self._by_tag.items()}


def read_executor_log(path: str) -> List[dict]:
    if not os.path.exists(path):
        return []
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def result_dict(result: ExecutionResult) -> dict:
    out = asdict(result)
    out['output'] = result.output.decode('utf-8', 'replace')
    return out
