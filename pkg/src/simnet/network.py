"""
Virtual transport and clock for simulated nodes.

Frames travel as the same encoded bytes the TCP runtime sends. The network
alone decides latency, loss and partitions, and every send, delivery, drop
and node state transition lands in the trace.
"""
import csv
import hashlib
import io
import logging
import random
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Set

from ..constants import API_NAME
from ..errors import IncompatibleNetwork, ProtocolError
from ..runtime import Runtime
from ..wire import HEADER, Frame, FrameType
from .scheduler import Scheduler

__all__ = [
    'LinkModel',
    'OperationRecord',
    'SimTrace',
    'TRACE_COLUMNS',
    'TraceEvent',
    'VirtualNetwork',
    'VirtualRuntime',
]

logger = logging.getLogger(API_NAME)

TRACE_COLUMNS = ('time', 'event', 'src', 'dst', 'frame', 'hops')


class TraceEvent(NamedTuple):
    time: int
    event: str
    src: str
    dst: str
    frame: str
    hops: int


@dataclass
class OperationRecord:
    op_id: int
    kind: str
    node: str
    profile: str
    started: int
    finished: Optional[int] = None
    hops: int = 0
    master_hops: int = 0
    targets: List[str] = field(default_factory=list)
    result: object = None
    error: str = ''

    @property
    def latency(self) -> Optional[int]:
        if self.finished is None:
            return None
        return self.finished - self.started

    @property
    def done(self) -> bool:
        return self.finished is not None


class SimTrace:
    def __init__(self):
        self.events: List[TraceEvent] = []
        self.operations: List[OperationRecord] = []

    def __len__(self):
        return len(self.events)

    def add(self, time: int, event: str, src: str = '', dst: str = '',
            frame: str = '', hops: int = 0):
        self.events.append(TraceEvent(time, event, src, dst, frame, hops))

    def of(self, event: str) -> List[TraceEvent]:
        return [e for e in self.events if e.event == event]

    def to_csv(self, out: Optional[io.TextIOBase] = None) -> str:
        buffer = out or io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(self.events)
        return buffer.getvalue() if out is None else ''

    def save(self, path: str):
        with open(path, 'w', newline='') as f:
            self.to_csv(f)

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode('utf-8')).hexdigest()


@dataclass
class LinkModel:
    latency_min_ms: int = 1
    latency_max_ms: int = 5
    loss: float = 0.0

    def __post_init__(self):
        if not 0 <= self.latency_min_ms <= self.latency_max_ms:
            raise ValueError('latency range must satisfy 0 <= min <= max')
        if not 0.0 <= self.loss < 1.0:
            raise ValueError('loss probability must be in [0, 1)')


def _frame_name(data: bytes) -> str:
    try:
        return FrameType(HEADER.unpack_from(data)[3]).name
    except (ValueError, struct.error):
        return '?'


class VirtualNetwork:
    def __init__(self, scheduler: Scheduler, rng: random.Random,
                 model: Optional[LinkModel] = None,
                 trace: Optional[SimTrace] = None):
        self.scheduler = scheduler
        self.rng = rng
        self.model = model or LinkModel()
        self.trace = trace if trace is not None else SimTrace()
        self.runtimes: Dict[str, 'VirtualRuntime'] = {}
        self.groups: List[Set[str]] = []
        self.counters = {'sent': 0, 'delivered': 0, 'dropped': 0}

    def __repr__(self):
        return (f'VirtualNetwork(nodes={len(self.runtimes)}, '
                f'groups={len(self.groups)})')

    def attach(self, runtime: 'VirtualRuntime'):
        self.runtimes[runtime.endpoint] = runtime

    def partition(self, groups: Iterable[Iterable[str]]):
        self.groups = [set(g) for g in groups]
        self.trace.add(self.scheduler.now, 'partition', frame=' | '.join(
            ','.join(sorted(g)) for g in self.groups))

    def heal(self):
        self.groups = []
        self.trace.add(self.scheduler.now, 'heal')

    def _side(self, endpoint: str) -> int:
        for i, group in enumerate(self.groups):
            if endpoint in group:
                return i
        return -1

    def reachable(self, src: str, dst: str) -> bool:
        target = self.runtimes.get(dst)
        if target is None or not target.alive:
            return False
        a, b = self._side(src), self._side(dst)
        return a < 0 or b < 0 or a == b

    def transmit(self, src: str, dst: str, data: bytes):
        now = self.scheduler.now
        name = _frame_name(data)
        self.counters['sent'] += 1
        self.trace.add(now, 'send', src, dst, name)
        if not self.reachable(src, dst) or (
                self.model.loss and self.rng.random() < self.model.loss):
            self.counters['dropped'] += 1
            self.trace.add(now, 'drop', src, dst, name)
            return
        latency = self.rng.randint(self.model.latency_min_ms,
                                   self.model.latency_max_ms)
        self.scheduler.call_later(latency, self._deliver, src, dst, data)

    def _deliver(self, src: str, dst: str, data: bytes):
        target = self.runtimes.get(dst)
        name = _frame_name(data)
        if target is None or not self.reachable(src, dst):
            self.counters['dropped'] += 1
            self.trace.add(self.scheduler.now, 'drop', src, dst, name)
            return
        try:
            frame = Frame.decode(data, target.digest)
        except IncompatibleNetwork as e:
            self.trace.add(self.scheduler.now, 'reject', src, dst, name)
            sender = self.runtimes.get(src)
            if sender is not None and sender.alive and sender.node:
                sender.node.handle_incompatible(dst, e)
            return
        except ProtocolError as e:
            logger.warning(f'Simulated peer {src} sent a bad frame: {e}')
            return
        self.counters['delivered'] += 1
        self.trace.add(self.scheduler.now, 'deliver', src, dst, name,
                       frame.hops)
        target.node.handle_frame(frame)


class VirtualRuntime(Runtime):
    def __init__(self, network: VirtualNetwork, endpoint: str,
                 digest: bytes, seed: int):
        self.network = network
        self.endpoint = endpoint
        self.digest = digest
        self.rng = random.Random(seed)
        self.node = None
        self.alive = True
        network.attach(self)

    def __repr__(self):
        return f'VirtualRuntime({self.endpoint}, alive={self.alive})'

    @property
    def scheduler(self) -> Scheduler:
        return self.network.scheduler

    def now(self) -> int:
        return self.scheduler.now

    def call_later(self, delay_ms: int, callback: Callable, *args):
        return self.scheduler.call_later(delay_ms, self._fire, callback, args)

    def _fire(self, callback: Callable, args: tuple):
        if self.alive:
            callback(*args)

    def send(self, endpoint: str, data: bytes) -> None:
        if self.alive:
            self.network.transmit(self.endpoint, endpoint, data)

    def submit(self, fn: Callable, *args, on_done=None):
        try:
            result, error = fn(*args), None
        except Exception as e:
            result, error = None, e
        if on_done is not None:
            self.call_later(0, on_done, result, error)

    def record(self, event: str, **details) -> None:
        src = details.pop('node', self.endpoint)
        dst = str(details.pop('peer', '') or '')
        hops = int(details.pop('hops', 0) or 0)
        extra = ';'.join(f'{k}={details[k]}' for k in sorted(details))
        self.network.trace.add(self.now(), event, src, dst, extra, hops)

    def drive(self, until: Callable[[], bool]) -> None:
        self.scheduler.run_until(until)

    def kill(self):
        self.alive = False
        self.network.trace.add(self.now(), 'kill', self.endpoint)
