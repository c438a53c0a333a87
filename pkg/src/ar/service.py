"""
User-mode primitives of a node: post, query, push and pull, plus the
handlers that serve them for other peers and the replica hand-off that runs
after every membership change.

Everything here runs on the node's event loop and reports through
``on_done(result, error)`` callbacks.
"""
import dataclasses
import hashlib
import json
import logging
from collections import OrderedDict, deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple

from ..constants import API_NAME
from ..errors import (
    CursorRegression,
    OffsetTrimmed,
    PayloadTooLarge,
    PostFailed,
    RpmeshError,
    StreamBroken,
)
from ..executor import result_dict
from ..overlay.geo import GeoPoint, Member
from ..overlay.routing import closest, responsible_for_target
from ..rules import DataTuple
from ..sfc import (
    KeywordSpacePoint,
    hilbert_encode,
    index_to_key,
    target_for_profile,
)
from ..store import StoredEntry
from ..wire import Fields, Frame, FrameType, Tag
from .actions import ActionOutcome, Notification
from .message import (
    Action,
    ARMessage,
    FunctionRef,
    decode_profile,
    encode_profile,
)
from .profile import Profile

__all__ = [
    'KIND_POST',
    'KIND_QUERY',
    'PushResult',
    'Receipt',
    'Rendezvous',
    'ReplicationResult',
    'stream_key',
]

logger = logging.getLogger(API_NAME)

KIND_POST = 1
KIND_QUERY = 2
PUSH_BATCH = 32
NOTICE_LIMIT = 1024

DoneFn = Callable[[object, Optional[BaseException]], None]


def stream_key(profile: Profile) -> str:
    digest = hashlib.sha1(str(profile).encode('utf-8')).hexdigest()
    return f'stream-{digest[:16]}'


def quorum(replicas: int) -> int:
    return (replicas + 2) // 2


@dataclass
class Receipt:
    reached: int = 0
    targets: List[str] = field(default_factory=list)
    hops: int = 0
    master_hops: int = 0
    degraded: bool = False
    results: List[dict] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, body: dict) -> 'Receipt':
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in body.items() if k in names})


@dataclass
class ReplicationResult:
    acks: List[str]
    targets: List[str]
    required: int

    @property
    def degraded(self) -> bool:
        return len(self.acks) < self.required


@dataclass
class PushResult:
    stream: str
    acked: int
    head: int = 0


class _Gather:
    """Counts outstanding replies and fires ``on_done`` after the last."""

    def __init__(self, expected: int, on_done: Callable[[], None]):
        self.pending = expected
        self.on_done = on_done
        if expected == 0:
            on_done()

    def one(self):
        self.pending -= 1
        if self.pending == 0:
            self.on_done()


class Rendezvous:
    def __init__(self, node):
        self.node = node
        self.config = node.config
        self.notifications: deque = deque(maxlen=NOTICE_LIMIT)
        self.function_results: deque = deque(maxlen=NOTICE_LIMIT)
        self.listeners: List[Callable[[Notification], None]] = []
        self._notices: 'OrderedDict[str, None]' = OrderedDict()
        self._sessions: Dict[Tuple[str, str], int] = {}

    def __repr__(self):
        return (f'Rendezvous({self.node.endpoint}, '
                f'notifications={len(self.notifications)})')

    @property
    def overlay(self):
        return self.node.overlay

    def _request(self, endpoint: str, frame: Frame,
                 on_reply: Callable[[Frame], None],
                 on_timeout: Callable[[], None]):
        op = self.node.requests.new_op()
        self.node.requests.expect(op, self.config.rpc_timeout_ms,
                                  on_reply, on_timeout)
        frame.put(Tag.OP, op)
        self.node.send(endpoint, frame)

    # responsibility
    def responsible_ids(self, profile: Profile,
                        ring_ids: Optional[List[int]] = None) -> Set[int]:
        cfg = self.config
        target = target_for_profile(profile, cfg.dimensions, cfg.order)
        ids = self.overlay.ring_ids if ring_ids is None else ring_ids
        return responsible_for_target(target, ids, cfg.replicas)

    def is_leader(self, entry: StoredEntry, msg: ARMessage) -> bool:
        """
        The one holder of ``entry`` among the RPs receiving ``msg`` that is
        closest to the entry's curve key starts the function.
        """
        holders = self.responsible_ids(entry.key_profile) \
            & self.responsible_ids(msg.matching_profile)
        if not holders:
            return True
        cfg = self.config
        key = index_to_key(entry.sfc_index, cfg.dimensions, cfg.order)
        return closest(holders, key, 1)[0] == self.overlay.node_id

    def resolve(self, profile: Profile,
                on_done: Callable[[List[Member], int, Optional[
                    BaseException]], None]):
        """Members of this ring responsible for ``profile``, with hops."""
        cfg = self.config
        target = target_for_profile(profile, cfg.dimensions, cfg.order)
        overlay = self.overlay
        if isinstance(target, KeywordSpacePoint):
            key = index_to_key(hilbert_encode(target), cfg.dimensions,
                               cfg.order)

            def found(result, error):
                if error is not None:
                    logger.warning(f'Lookup for {profile} partial: {error}')
                on_done(result.members, result.hops, None)
            overlay.lookup(key, cfg.replicas, found)
            return
        ids = responsible_for_target(target, overlay.ring_ids, cfg.replicas)
        members = [overlay.ring[i] for i in sorted(ids)]
        remote = any(i != overlay.node_id for i in ids)
        on_done(members, 1 if remote else 0, None)

    # post
    def post(self, msg: ARMessage, on_done: DoneFn):
        """Routes ``msg`` to every responsible RP; ``on_done(Receipt)``."""
        if msg.action is Action.START_FUNCTION and not msg.msg_id:
            msg = dataclasses.replace(
                msg, msg_id=self.node.runtime.rng.getrandbits(63) or 1
            )
        size = len(msg.to_bytes())
        if size > self.config.max_frame_bytes:
            on_done(None, PayloadTooLarge(size, self.config.max_frame_bytes))
            return
        overlay = self.overlay
        geo = msg.location or overlay.me.geo
        if overlay.is_local(geo):
            self.deliver_local(msg, self.node.endpoint, overlay.node_id,
                               on_done)
            return

        def forwarded(frame: Frame, error):
            if error is not None:
                on_done(None, error)
                return
            if frame.get_str(Tag.ERROR):
                on_done(None, PostFailed(frame.get_str(Tag.ERROR)))
                return
            receipt = Receipt.from_dict(json.loads(frame.get_str(
                Tag.RECEIPT)))
            receipt.master_hops = frame.hops
            on_done(receipt, None)
        overlay.route_cross_region(
            KIND_POST, msg.to_fields(), geo, self.node.endpoint,
            self._forward_timeout(), forwarded,
        )

    def _forward_timeout(self) -> int:
        return 4 * self.config.rpc_timeout_ms

    def deliver_local(self, msg: ARMessage, origin: str, origin_id: int,
                      on_done: DoneFn, master_hops: int = 0):
        def targets_found(members: List[Member], hops: int, error):
            if error is not None:
                on_done(None, error)
                return
            self._deliver(members, msg, origin, origin_id, hops,
                          master_hops, on_done)
        self.resolve(msg.matching_profile, targets_found)

    def _deliver(self, members: List[Member], msg: ARMessage, origin: str,
                 origin_id: int, hops: int, master_hops: int,
                 on_done: DoneFn):
        receipt = Receipt(hops=hops, master_hops=master_hops)

        def collect(endpoint: str, status: str, results: List[dict],
                    error: str):
            if status == 'unreachable':
                receipt.errors.append(f'{endpoint}: unreachable')
            else:
                receipt.reached += 1
                receipt.targets.append(endpoint)
                receipt.results.extend(results)
                if error:
                    receipt.errors.append(f'{endpoint}: {error}')
            gather.one()

        def finished():
            receipt.targets.sort()
            if receipt.reached == 0:
                on_done(None, PostFailed(
                    f'no RP reachable for {msg.action.label} {msg.profile}'
                ))
                return
            if msg.action is Action.STORE \
                    and receipt.reached < quorum(self.config.replicas):
                receipt.degraded = True
                logger.warning(f'STORE {msg.profile} reached '
                               f'{receipt.reached} of '
                               f'{self.config.replicas} replicas')
            self.node.record('post', action=msg.action.label,
                             hops=hops + master_hops,
                             peer=','.join(receipt.targets))
            on_done(receipt, None)

        gather = _Gather(len(members), finished)
        for member in members:
            if member.endpoint == self.node.endpoint:
                outcome = self.execute(msg, origin, origin_id)
                collect(member.endpoint, outcome.status, outcome.results,
                        outcome.error)
                continue
            self._request(
                member.endpoint,
                Frame(FrameType.DELIVER, sender=self.node.endpoint,
                      message=msg.to_fields(), origin=origin,
                      node_id=origin_id),
                lambda f, m=member: collect(
                    m.endpoint, f.get_str(Tag.STATUS, 'ok'),
                    [json.loads(r) for r in f.get_all(Tag.RECORD)],
                    f.get_str(Tag.ERROR)),
                lambda m=member: collect(m.endpoint, 'unreachable', [], ''),
            )

    def on_deliver(self, frame: Frame):
        msg = ARMessage.from_fields(frame.get_nested(Tag.MESSAGE) or Fields())
        outcome = self.execute(msg, frame.get_str(Tag.ORIGIN),
                               frame.get_int(Tag.NODE_ID))
        self.node.send(frame.sender, frame.reply(
            FrameType.DELIVER_ACK, sender=self.node.endpoint,
            status=outcome.status,
            record=[json.dumps(r, sort_keys=True) for r in outcome.results],
            error=outcome.error or None,
        ))

    def execute(self, msg: ARMessage, origin: str,
                origin_id: int) -> ActionOutcome:
        """Runs the action here and dispatches its side effects."""
        try:
            outcome = self.node.rp.execute(msg, origin, origin_id)
        except RpmeshError as e:
            logger.warning(f'{msg.action.label} from {origin} failed: {e}')
            outcome = ActionOutcome('error', error=str(e))
        self.node.record('execute', action=msg.action.label,
                         profile=str(msg.profile), peer=origin)
        for notice in outcome.notifications:
            self.notify(notice)
        for ref, message in outcome.start:
            self._start_function(ref, message)
        return outcome

    def _start_function(self, ref: FunctionRef, message: ARMessage):
        logger.info(f'Starting function {ref.name} ({ref.runtime_tag}) for '
                    f'message {message.msg_id:x}')
        self.node.record('function', name=ref.name, msg_id=message.msg_id)

        def done(result, error):
            if error is not None:
                logger.error(f'Function {ref.name} failed: {error}')
                self.function_results.append({
                    'name': ref.name, 'status': 'error', 'error': str(error),
                })
                return
            self.function_results.append(result_dict(result))
        self.node.runtime.submit(self.node.executors.start, ref, message,
                                 on_done=done)

    # notifications
    def notify(self, notice: Notification):
        if notice.endpoint == self.node.endpoint or not notice.endpoint:
            self.accept(notice)
            return
        self.node.send(notice.endpoint, Frame(
            FrameType.NOTIFY, sender=self.node.endpoint, kind=notice.kind,
            profile=encode_profile(notice.profile), peer=notice.peer or None,
            data=notice.data or None,
        ))

    def on_notify(self, frame: Frame):
        self.accept(Notification(
            self.node.endpoint, frame.get_str(Tag.KIND),
            decode_profile(frame.get_nested(Tag.PROFILE) or Fields()),
            frame.get_str(Tag.PEER), frame.raw(Tag.DATA) or b'',
        ))

    def accept(self, notice: Notification):
        notice_id = notice.notice_id
        if notice_id in self._notices:
            return
        self._notices[notice_id] = None
        while len(self._notices) > NOTICE_LIMIT * 4:
            self._notices.popitem(last=False)
        self.notifications.append(notice)
        logger.info(f'Notification {notice.kind} for {notice.profile}'
                    + (f' from {notice.peer}' if notice.peer else ''))
        self.node.record('notify', kind=notice.kind, peer=notice.peer)
        for listener in list(self.listeners):
            try:
                listener(notice)
            except Exception as e:
                logger.error(f'Notification listener failed: {e}',
                             exc_info=True)

    # query
    def query(self, profile: Profile, on_done: DoneFn,
              location: Optional[GeoPoint] = None):
        """Entries matching ``profile``; ``on_done(list of StoredEntry)``."""
        overlay = self.overlay
        geo = location or overlay.me.geo
        if overlay.is_local(geo):
            self.query_local(profile, on_done)
            return

        def forwarded(frame: Frame, error):
            if error is not None:
                on_done(None, error)
                return
            on_done(_entries(frame), None)
        message = Fields(profile=encode_profile(profile))
        overlay.route_cross_region(KIND_QUERY, message, geo,
                                   self.node.endpoint,
                                   self._forward_timeout(), forwarded)

    def query_local(self, profile: Profile, on_done: DoneFn):
        merged: Dict[bytes, StoredEntry] = {}
        answered = []

        def targets_found(members: List[Member], hops: int, error):
            if error is not None:
                on_done(None, error)
                return

            def finished():
                if not answered:
                    on_done(None, PostFailed(f'no RP answered for {profile}'))
                    return
                entries = sorted(merged.values(),
                                 key=lambda e: (e.sfc_index, e.digest))
                on_done(entries, None)
            gather = _Gather(len(members), finished)

            def add(endpoint: str, entries: List[StoredEntry]):
                answered.append(endpoint)
                for entry in entries:
                    merged.setdefault(entry.digest, entry)
                gather.one()

            for member in members:
                if member.endpoint == self.node.endpoint:
                    add(member.endpoint, self.node.store.query(profile))
                    continue
                self._request(
                    member.endpoint,
                    Frame(FrameType.QUERY, sender=self.node.endpoint,
                          profile=encode_profile(profile)),
                    lambda f, m=member: add(m.endpoint, _entries(f)),
                    gather.one,
                )
        self.resolve(profile, targets_found)

    def on_query(self, frame: Frame):
        profile = decode_profile(frame.get_nested(Tag.PROFILE) or Fields())
        entries = self.node.store.query(profile)
        self.node.send(frame.sender, frame.reply(
            FrameType.QUERY_ACK, sender=self.node.endpoint,
            entry=[e.to_fields() for e in entries],
        ))

    # cross-region arrival
    def serve_forward(self, frame: Frame, hops: int):
        kind = frame.get_int(Tag.KIND)
        message = frame.get_nested(Tag.MESSAGE) or Fields()

        def reply(**values):
            self.node.send(frame.sender, frame.reply(
                FrameType.FORWARD_ACK, sender=self.node.endpoint, hops=hops,
                **values))

        if kind == KIND_QUERY:
            def answered(entries, error):
                if error is not None:
                    reply(error=str(error))
                    return
                reply(entry=[e.to_fields() for e in entries])
            self.query_local(decode_profile(
                message.get_nested(Tag.PROFILE) or Fields()), answered)
            return

        def delivered(receipt: Receipt, error):
            if error is not None:
                reply(error=str(error))
                return
            reply(receipt=json.dumps(receipt.as_dict(), sort_keys=True))
        self.deliver_local(ARMessage.from_fields(message),
                           frame.get_str(Tag.ORIGIN), 0, delivered, hops)

    # replication
    def replicate(self, entry: StoredEntry, on_done: DoneFn,
                  function: bool = False,
                  targets: Optional[List[Member]] = None):
        """Stores ``entry`` on its replica set; reports ReplicationResult."""
        if targets is not None:
            self._replicate_to(targets, entry, function, on_done)
            return

        def found(members: List[Member], hops: int, error):
            if error is not None:
                on_done(None, error)
                return
            self._replicate_to(members, entry, function, on_done)
        self.resolve(entry.key_profile, found)

    def _replicate_to(self, members: List[Member], entry: StoredEntry,
                      function: bool, on_done: DoneFn):
        result = ReplicationResult([], sorted(m.endpoint for m in members),
                                   quorum(self.config.replicas))

        def finished():
            result.acks.sort()
            if result.degraded:
                logger.warning(f'Replication of {entry.key_profile} reached '
                               f'{len(result.acks)} of {result.required} '
                               f'required')
            on_done(result, None)

        def acked(endpoint: str, frame: Optional[Frame] = None):
            if frame is None or not frame.get_str(Tag.ERROR):
                result.acks.append(endpoint)
            gather.one()

        gather = _Gather(len(members), finished)
        for member in members:
            if member.endpoint == self.node.endpoint:
                self._target_store(function).put(entry)
                acked(member.endpoint)
                continue
            self._request(
                member.endpoint,
                Frame(FrameType.STORE, sender=self.node.endpoint,
                      entry=entry.to_fields(), flag=function),
                lambda f, m=member: acked(m.endpoint, f),
                gather.one,
            )

    def _target_store(self, function: bool):
        return self.node.functions if function else self.node.store

    def on_store(self, frame: Frame):
        entry = StoredEntry.from_fields(frame.get_nested(Tag.ENTRY)
                                        or Fields())
        error = None
        try:
            self._target_store(frame.flag(Tag.FLAG)).put(entry)
        except RpmeshError as e:
            logger.error(f'Replica write failed: {e}')
            error = str(e)
        self.node.send(frame.sender, frame.reply(
            FrameType.STORE_ACK, sender=self.node.endpoint, error=error,
        ))

    def on_ring_change(self, old_ids: Set[int]):
        """Copies held entries to members that just became responsible."""
        overlay = self.overlay
        new_ids = overlay.ring_ids
        old_ids = sorted(old_ids)
        sent = 0
        for function, store in ((False, self.node.store),
                                (True, self.node.functions)):
            for entry in list(store.entries()):
                fresh = self.responsible_ids(entry.key_profile, new_ids) \
                    - self.responsible_ids(entry.key_profile, old_ids) \
                    - {overlay.node_id}
                targets = [overlay.ring[i] for i in sorted(fresh)
                           if i in overlay.ring]
                if targets:
                    sent += len(targets)
                    self.replicate(entry, _ignore, function, targets)
        if sent:
            logger.info(f'Handed off {sent} replicas after ring change')

    # streams
    def push(self, peer: str, msg: ARMessage, records: List[bytes],
             on_done: DoneFn, start: int = 0):
        """
        Streams ``records`` into ``peer``'s collection queue for the
        message profile; record ``i`` has sequence number ``start + i``.
        """
        stream = stream_key(msg.matching_profile)
        if peer == self.node.endpoint:
            head = self._append(stream, self.node.endpoint, start, records)
            on_done(PushResult(stream, start + len(records), head), None)
            return
        state = {'acked': start, 'head': 0}

        def send_batch():
            acked = state['acked']
            if acked >= start + len(records):
                on_done(PushResult(stream, acked, state['head']), None)
                return
            batch = records[acked - start:acked - start + PUSH_BATCH]
            self._request(
                peer,
                Frame(FrameType.PUSH, sender=self.node.endpoint,
                      stream=stream, offset=acked, record=batch),
                on_ack, broken,
            )

        def on_ack(frame: Frame):
            acked = frame.get_int(Tag.OFFSET)
            if frame.get_str(Tag.STATUS) == 'gap' and acked < start:
                on_done(None, StreamBroken(
                    f'{peer} lost records before {start}', resume_from=acked,
                ))
                return
            state['acked'] = acked
            state['head'] = frame.get_int(Tag.COUNT)
            send_batch()

        def broken():
            logger.warning(f'Stream {stream} to {peer} broken at '
                           f'{state["acked"]}')
            on_done(None, StreamBroken(f'{peer} stopped acknowledging',
                                       resume_from=state['acked']))
        send_batch()

    def _append(self, stream: str, producer: str, offset: int,
                records: List[bytes]) -> int:
        queue = self.node.queues.get(stream)
        expected = self._sessions.get((stream, producer), 0)
        fresh = records[expected - offset:] if offset < expected else records
        now = self.node.runtime.now()
        for payload in fresh:
            queue.append(payload, now)
            self._evaluate(payload, now)
        self._sessions[(stream, producer)] = max(expected,
                                                 offset + len(records))
        return queue.head

    def _evaluate(self, payload: bytes, now: int):
        rules = self.node.rules
        if rules is None:
            return
        item = DataTuple.from_json(payload, ingested_at=now)
        if item is not None:
            rules.evaluate(item, now)

    def on_push(self, frame: Frame):
        stream = frame.get_str(Tag.STREAM)
        offset = frame.get_int(Tag.OFFSET)
        expected = self._sessions.get((stream, frame.sender), 0)
        if offset > expected:
            self.node.send(frame.sender, frame.reply(
                FrameType.PUSH_ACK, sender=self.node.endpoint, status='gap',
                offset=expected,
            ))
            return
        records = frame.get_all(Tag.RECORD)
        try:
            head = self._append(stream, frame.sender, offset, records)
        except (RpmeshError, ValueError) as e:
            logger.error(f'Append to {stream} failed: {e}')
            self.node.send(frame.sender, frame.reply(
                FrameType.PUSH_ACK, sender=self.node.endpoint,
                status='error', error=str(e), offset=expected,
            ))
            return
        self.node.send(frame.sender, frame.reply(
            FrameType.PUSH_ACK, sender=self.node.endpoint, status='ok',
            offset=offset + len(records), count=head,
        ))

    def pull(self, peer: str, msg: ARMessage, consumer: str,
             on_done: DoneFn, offset: Optional[int] = None,
             limit: int = 100):
        """
        Reads from the consumer's committed position in ``peer``'s queue for
        the message profile, after committing ``offset`` when given.
        """
        stream = stream_key(msg.matching_profile)
        if peer == self.node.endpoint:
            try:
                on_done(self.read_stream(stream, consumer, offset, limit),
                        None)
            except (RpmeshError, ValueError) as e:
                on_done(None, e)
            return

        def answered(frame: Frame):
            error = frame.get_str(Tag.ERROR)
            if error:
                on_done(None, OffsetTrimmed(error) if error == 'trimmed'
                        else CursorRegression(error))
                return
            records = frame.get_all(Tag.RECORD)
            start = frame.get_int(Tag.OFFSET)
            on_done({'stream': stream, 'offset': start,
                     'next': start + len(records), 'records': records}, None)
        self._request(
            peer,
            Frame(FrameType.PULL, sender=self.node.endpoint, stream=stream,
                  name=consumer, offset=offset, limit=limit),
            answered,
            lambda: on_done(None, StreamBroken(f'{peer} did not answer')),
        )

    def read_stream(self, stream: str, consumer: str,
                    offset: Optional[int], limit: int) -> dict:
        queue = self.node.queues.get(stream)
        if offset is not None:
            queue.commit(consumer, offset)
        start = queue.committed(consumer)
        records = [r.payload for r in queue.read(start, limit)]
        return {'stream': stream, 'offset': start,
                'next': start + len(records), 'records': records}

    def on_pull(self, frame: Frame):
        offset = frame.get_int(Tag.OFFSET) if frame.has(Tag.OFFSET) else None
        try:
            body = self.read_stream(frame.get_str(Tag.STREAM),
                                    frame.get_str(Tag.NAME), offset,
                                    frame.get_int(Tag.LIMIT) or 100)
        except OffsetTrimmed:
            reply = frame.reply(FrameType.PULL_ACK, sender=self.node.endpoint,
                                error='trimmed')
        except (CursorRegression, ValueError) as e:
            reply = frame.reply(FrameType.PULL_ACK, sender=self.node.endpoint,
                                error=str(e))
        else:
            reply = frame.reply(FrameType.PULL_ACK, sender=self.node.endpoint,
                                offset=body['offset'],
                                record=body['records'])
        self.node.send(frame.sender, reply)


def _entries(frame: Frame) -> List[StoredEntry]:
    return [StoredEntry.from_fields(r)
            for r in frame.get_nested_all(Tag.ENTRY)]


def _ignore(result, error):
    if error is not None:
        logger.debug(f'Hand-off failed: {error}')
