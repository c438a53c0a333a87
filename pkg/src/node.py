"""
One rendezvous point: configuration, persistent state and frame dispatch.

A ``Node`` owns its stores, queues, overlay membership and rendezvous
service and is driven entirely by its runtime, so the same object runs
behind real sockets or inside the simulator.
"""
import logging
import os
from typing import Callable, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from .ar.actions import RendezvousPoint
from .ar.message import ARMessage
from .ar.profile import Profile
from .ar.service import Rendezvous
from .constants import API_NAME, ID_BITS, constants_digest
from .errors import IncompatibleNetwork, PayloadTooLarge
from .executor import CallbackExecutor, Executors, SubprocessExecutor
from .mmq import CollectionQueues
from .overlay.geo import GeoPoint
from .overlay.service import Overlay
from .rules import RuleEngine
from .runtime import Requests, Runtime, split_endpoint
from .store import Store
from .wire import Frame, FrameType, Tag

__all__ = ['Node', 'NodeConfig']

logger = logging.getLogger(API_NAME)

_REPLIES = frozenset({
    FrameType.JOIN_ACK, FrameType.LOOKUP_ACK, FrameType.STORE_ACK,
    FrameType.DELIVER_ACK, FrameType.FORWARD_ACK, FrameType.QUERY_ACK,
    FrameType.PUSH_ACK, FrameType.PULL_ACK,
})


class NodeConfig(BaseModel):
    listen: str = '127.0.0.1:7400'
    lat: float = Field(0.0, ge=-90, le=90)
    lon: float = Field(0.0, ge=-180, le=180)
    bootstrap: List[str] = []
    data_dir: str = 'rpmesh-data'
    rule_file: Optional[str] = None
    dimensions: int = Field(3, ge=1, le=8)
    order: int = Field(16, ge=1)
    capacity: int = Field(16, ge=1)
    replicas: int = Field(3, ge=1)
    keepalive_ms: int = Field(2000, ge=1)
    miss_threshold: int = Field(3, ge=1)
    join_timeout_ms: int = Field(3000, ge=1)
    rpc_timeout_ms: int = Field(1500, ge=1)
    bucket_size: int = Field(20, ge=1)
    alpha: int = Field(3, ge=1)
    max_segments: int = Field(32, ge=1)
    hot_capacity_bytes: int = Field(64 * 1024 * 1024, ge=0)
    segment_size: int = Field(64 * 1024 * 1024, ge=4096)
    max_record_size: int = Field(16 * 1024 * 1024, ge=1)
    max_frame_bytes: int = Field(32 * 1024 * 1024, ge=1024)
    retain_segments: int = Field(0, ge=0)
    sync_interval_ms: int = Field(0, ge=0)
    workers: int = Field(4, ge=1)
    executor_allow: List[str] = []
    http_host: str = '127.0.0.1'
    http_port: int = Field(8400, ge=0, le=65535)

    @field_validator('listen')
    @classmethod
    def check_listen(cls, value: str) -> str:
        split_endpoint(value)
        return value

    @field_validator('bootstrap')
    @classmethod
    def check_bootstrap(cls, value: List[str]) -> List[str]:
        for endpoint in value:
            split_endpoint(endpoint)
        return value

    @model_validator(mode='after')
    def check_key_space(self) -> 'NodeConfig':
        if self.dimensions * self.order > ID_BITS:
            raise ValueError(
                f'd*b = {self.dimensions * self.order} exceeds {ID_BITS} bits'
            )
        return self

    @property
    def geo(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)

    @property
    def digest(self) -> bytes:
        return constants_digest(self.dimensions, self.order)


class Node:
    def __init__(self, config: NodeConfig, runtime: Runtime,
                 executors: Optional[Executors] = None,
                 rules: Optional[RuleEngine] = None):
        self.config = config
        self.runtime = runtime
        self.endpoint = config.listen
        self.digest = config.digest
        self.requests = Requests(runtime)
        data = config.data_dir
        self.store = Store(os.path.join(data, 'store'), config.dimensions,
                           config.order, config.hot_capacity_bytes)
        self.functions = Store(os.path.join(data, 'functions'),
                               config.dimensions, config.order)
        self.queues = CollectionQueues(
            os.path.join(data, 'queues'),
            segment_size=config.segment_size,
            max_record_size=config.max_record_size,
            retain_segments=config.retain_segments,
            sync_interval_ms=config.sync_interval_ms,
        )
        if executors is None:
            log_path = os.path.join(data, 'executor.log')
            executors = Executors(
                CallbackExecutor(log_path),
                SubprocessExecutor(config.executor_allow, log_path),
            )
        self.executors = executors
        self.overlay = Overlay(self)
        self.rendezvous = Rendezvous(self)
        self.rp = RendezvousPoint(
            self.store, self.functions, self.executors,
            node_id=self.overlay.node_id, clock=runtime.now,
            is_leader=self.rendezvous.is_leader, status=self._status,
        )
        if rules is None and config.rule_file:
            rules = RuleEngine(path=config.rule_file)
        self.rules = rules
        if self.rules is not None and self.rules.post is None:
            self.rules.post = self._rule_post
        self._handlers: Dict[FrameType, Callable[[Frame], None]] = {
            FrameType.JOIN: self.overlay.on_join,
            FrameType.PING: self.overlay.on_ping,
            FrameType.PONG: self.overlay.on_pong,
            FrameType.LOOKUP: self.overlay.on_lookup,
            FrameType.ELECT_PROBE: self.overlay.on_elect_probe,
            FrameType.ELECT_REPLY: self.overlay.on_elect_reply,
            FrameType.ELECT_WIN: self.overlay.on_elect_win,
            FrameType.SNAPSHOT: self.overlay.on_snapshot,
            FrameType.FORWARD: self._on_forward,
            FrameType.STORE: self.rendezvous.on_store,
            FrameType.DELIVER: self.rendezvous.on_deliver,
            FrameType.NOTIFY: self.rendezvous.on_notify,
            FrameType.QUERY: self.rendezvous.on_query,
            FrameType.PUSH: self.rendezvous.on_push,
            FrameType.PULL: self.rendezvous.on_pull,
        }
        runtime.bind(self)
        self.closed = False

    def __repr__(self):
        return f'Node({self.endpoint}, {self.overlay.state})'

    @property
    def node_id(self) -> int:
        return self.overlay.node_id

    # lifecycle
    def start(self, on_joined: Optional[Callable] = None):
        """Bootstrap phase; ``on_joined(member, error)`` once placed."""
        logger.info(f'Node {self.endpoint} starting at {self.config.geo}')

        def joined(member, error):
            if member is not None:
                self.rp.node_id = member.node_id
            if on_joined is not None:
                on_joined(member, error)
        self.overlay.start(joined)

    def stop(self):
        if self.closed:
            return
        self.closed = True
        self.overlay.stop()
        self.requests.cancel_all()
        self.queues.flush()
        self.queues.close()
        self.store.close()
        self.functions.close()
        logger.info(f'Node {self.endpoint} stopped')

    # transport
    def send(self, endpoint: str, frame: Frame):
        if self.closed:
            return
        if endpoint == self.endpoint:
            self.runtime.call_later(0, self.handle_frame, frame)
            return
        try:
            data = frame.encode(self.digest, self.config.max_frame_bytes)
        except PayloadTooLarge as e:
            logger.error(f'Not sending {frame!r} to {endpoint}: {e}')
            return
        self.runtime.send(endpoint, data)

    def handle_frame(self, frame: Frame):
        if self.closed:
            return
        if frame.type in _REPLIES or frame.type is FrameType.PONG:
            if self.requests.resolve(frame):
                return
            if frame.type is not FrameType.PONG:
                logger.debug(f'Late {frame.type.name} from {frame.sender}')
                return
        if frame.type is FrameType.SNAPSHOT \
                and not frame.flag(Tag.REQUEST) \
                and self.requests.resolve(frame):
            return
        handler = self._handlers.get(frame.type)
        if handler is None:
            logger.warning(f'No handler for {frame!r}')
            return
        handler(frame)

    def handle_incompatible(self, endpoint: str, error: IncompatibleNetwork):
        self.overlay.on_incompatible(endpoint, error)

    def ring_changed(self, old_ids):
        self.rendezvous.on_ring_change(set(old_ids))

    def record(self, event: str, **details):
        self.runtime.record(event, node=self.endpoint, **details)

    def _on_forward(self, frame: Frame):
        self.overlay.on_forward(frame, self.rendezvous.serve_forward)

    def _rule_post(self, msg: ARMessage):
        def done(receipt, error):
            if error is not None:
                logger.warning(f'Rule-triggered {msg.action.label} '
                               f'failed: {error}')
        self.rendezvous.post(msg, done)

    # user mode
    def post(self, msg: ARMessage, on_done: Callable):
        self.rendezvous.post(msg, on_done)

    def query(self, profile: Profile, on_done: Callable,
              location: Optional[GeoPoint] = None):
        self.rendezvous.query(profile, on_done, location)

    def push(self, peer: str, msg: ARMessage, records: List[bytes],
             on_done: Callable, start: int = 0):
        self.rendezvous.push(peer, msg, records, on_done, start)

    def pull(self, peer: str, msg: ARMessage, consumer: str,
             on_done: Callable, offset: Optional[int] = None,
             limit: int = 100):
        self.rendezvous.pull(peer, msg, consumer, on_done, offset, limit)

    def _status(self) -> dict:
        return {
            'endpoint': self.endpoint,
            'overlay': self.overlay.status(),
            'queues': self.queues.status(),
            'rules': dict(self.rules.stats) if self.rules else None,
            'pending': len(self.requests),
        }

    def status(self) -> dict:
        return self.rp.status()
