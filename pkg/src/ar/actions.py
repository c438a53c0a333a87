"""
Reactive actions executed at a rendezvous point.

``RendezvousPoint`` owns the local state a delivered message acts on: the
data store, the function store, the standing registrations and the set of
START_FUNCTION ids already handled. ``execute`` is synchronous and returns
an ``ActionOutcome``; sending notifications and running functions is left
to the caller.
"""
import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from ..constants import API_NAME
from ..errors import FunctionStartFailed, ProtocolError
from ..executor import Executors
from ..misc import short_id
from ..store import Store, StoredEntry
from .message import ARMessage, Action, FunctionRef
from .profile import Profile, matches

__all__ = [
    'ActionOutcome',
    'Notification',
    'Registration',
    'RendezvousPoint',
]

logger = logging.getLogger(API_NAME)

SEEN_LIMIT = 4096


@dataclass(frozen=True)
class Registration:
    kind: Action
    profile: Profile
    endpoint: str
    node_id: int = 0
    created_at: int = 0

    @property
    def key(self) -> Tuple[int, str, str]:
        return int(self.kind), self.endpoint, str(self.profile)


@dataclass(frozen=True)
class Notification:
    """
    Sent to ``endpoint``. ``kind`` is ``consumer`` (a consumer wants the
    recipient's data), ``producer`` (a producer has data the recipient
    wants) or ``data`` (a stored entry matched the recipient's interest).
    """
    endpoint: str
    kind: str
    profile: Profile
    peer: str = ''
    data: bytes = b''

    @property
    def notice_id(self) -> str:
        h = hashlib.sha1()
        for part in (self.endpoint, self.kind, str(self.profile), self.peer):
            h.update(part.encode('utf-8') + b'\0')
        h.update(self.data)
        return h.hexdigest()


@dataclass
class ActionOutcome:
    status: str = 'ok'
    results: List[dict] = field(default_factory=list)
    notifications: List[Notification] = field(default_factory=list)
    start: List[Tuple[FunctionRef, ARMessage]] = field(default_factory=list)
    error: str = ''


def _pairs(producer: Registration, consumer: Registration) -> bool:
    return matches(producer.profile, consumer.profile)


class RendezvousPoint:
    def __init__(self, store: Store, functions: Store, executors: Executors,
                 node_id: int = 0,
                 clock: Callable[[], int] = lambda: 0,
                 is_leader: Callable[[StoredEntry, ARMessage], bool] = (
                     lambda e, m: True),
                 status: Optional[Callable[[], dict]] = None):
        self.store = store
        self.functions = functions
        self.executors = executors
        self.node_id = node_id
        self.clock = clock
        self.is_leader = is_leader
        self._status = status
        self.registrations: Dict[tuple, Registration] = {}
        self._seen: 'OrderedDict[int, None]' = OrderedDict()
        self.counters: Dict[str, int] = {a.label: 0 for a in Action}

    def __repr__(self):
        return (f'RendezvousPoint(node={short_id(self.node_id)}, '
                f'entries={len(self.store)}, '
                f'registrations={len(self.registrations)})')

    def execute(self, msg: ARMessage, origin: str = '',
                origin_id: int = 0) -> ActionOutcome:
        handler = self._handlers().get(msg.action)
        if handler is None:
            raise ProtocolError(f'unknown action {msg.action!r}')
        self.counters[msg.action.label] += 1
        if msg.credentials:
            logger.debug(f'{msg.action.label} from {origin} carries '
                         f'{len(msg.credentials)} credential bytes')
        return handler(msg, origin, origin_id)

    def _handlers(self):
        return {
            Action.STORE: self._store,
            Action.DELETE: self._delete,
            Action.STATISTICS: self._statistics,
            Action.STORE_FUNCTION: self._store_function,
            Action.START_FUNCTION: self._start_function,
            Action.STOP_FUNCTION: self._stop_function,
            Action.NOTIFY_INTEREST: self._notify_interest,
            Action.NOTIFY_DATA: self._notify_data,
        }

    def _entry(self, profile: Profile, data: bytes,
               origin_id: int) -> StoredEntry:
        return StoredEntry.create(profile, data, self.store.dimensions,
                                  self.store.order, origin=origin_id,
                                  stored_at=self.clock())

    # resource actions
    def _store(self, msg: ARMessage, origin: str,
               origin_id: int) -> ActionOutcome:
        entry = self._entry(msg.matching_profile, msg.data, origin_id)
        created = self.store.put(entry)
        outcome = ActionOutcome(results=[{
            'stored': created, 'digest': entry.digest.hex(),
        }])
        if created:
            outcome.notifications.extend(self.subscribers_of(entry))
        return outcome

    def subscribers_of(self, entry: StoredEntry) -> List[Notification]:
        """Standing NOTIFY_DATA registrations satisfied by ``entry``."""
        return [
            Notification(reg.endpoint, 'data', entry.key_profile,
                         data=entry.data)
            for reg in self.registrations.values()
            if reg.kind is Action.NOTIFY_DATA
            and matches(entry.key_profile, reg.profile)
        ]

    def _delete(self, msg: ARMessage, origin: str,
                origin_id: int) -> ActionOutcome:
        profile = msg.matching_profile
        removed = self.store.delete_matching(profile)
        functions = self.functions.delete_matching(profile)
        doomed = [key for key, reg in self.registrations.items()
                  if matches(reg.profile, profile)]
        for key in doomed:
            del self.registrations[key]
        return ActionOutcome(results=[{
            'deleted': removed, 'functions': functions,
            'registrations': len(doomed),
        }])

    def status(self) -> dict:
        out = {
            'node_id': f'{self.node_id:040x}',
            'store': self.store.status(),
            'functions': len(self.functions),
            'registrations': len(self.registrations),
            'actions': dict(self.counters),
            'executors': self.executors.status(),
        }
        if self._status is not None:
            out.update(self._status())
        return out

    def _statistics(self, msg: ARMessage, origin: str,
                    origin_id: int) -> ActionOutcome:
        return ActionOutcome(results=[self.status()])

    # function actions
    def _store_function(self, msg: ARMessage, origin: str,
                        origin_id: int) -> ActionOutcome:
        if msg.topology is None:
            return ActionOutcome('error', error='no function attached')
        entry = self._entry(msg.profile, msg.topology.to_bytes(), origin_id)
        created = self.functions.put(entry)
        return ActionOutcome(results=[{
            'function': msg.topology.name, 'digest': msg.topology.digest,
            'stored': created,
        }])

    def matching_functions(self, profile: Profile) -> List[StoredEntry]:
        return self.functions.query(profile)

    def _start_function(self, msg: ARMessage, origin: str,
                        origin_id: int) -> ActionOutcome:
        if msg.msg_id:
            if msg.msg_id in self._seen:
                return ActionOutcome('duplicate')
            self._seen[msg.msg_id] = None
            while len(self._seen) > SEEN_LIMIT:
                self._seen.popitem(last=False)
        outcome = ActionOutcome('no-match')
        for entry in self.matching_functions(msg.profile):
            if not self.is_leader(entry, msg):
                if outcome.status == 'no-match':
                    outcome.status = 'standby'
                continue
            ref = FunctionRef.from_bytes(entry.data)
            try:
                executor = self.executors.get(ref.runtime_tag)
            except FunctionStartFailed as e:
                return ActionOutcome('error', error=str(e))
            if not executor.admits(ref):
                return ActionOutcome(
                    'error', error=f'{ref.name}: {ref.runtime_tag} executor '
                                   f'refuses digest {ref.digest[:12]}'
                )
            outcome.status = 'ok'
            outcome.start.append((ref, msg))
            outcome.results.append({'starting': ref.name,
                                    'runtime': ref.runtime_tag})
        return outcome

    def _stop_function(self, msg: ARMessage, origin: str,
                       origin_id: int) -> ActionOutcome:
        names = {FunctionRef.from_bytes(e.data).name
                 for e in self.matching_functions(msg.profile)}
        stopped = sum(self.executors.stop(name) for name in sorted(names))
        return ActionOutcome(results=[{'stopped': stopped,
                                       'functions': sorted(names)}])

    # rendezvous actions
    def _register(self, kind: Action, msg: ARMessage, origin: str,
                  origin_id: int) -> Registration:
        reg = Registration(kind, msg.matching_profile, origin, origin_id,
                           self.clock())
        self.registrations.setdefault(reg.key, reg)
        return reg

    def _notify_interest(self, msg: ARMessage, origin: str,
                         origin_id: int) -> ActionOutcome:
        producer = self._register(Action.NOTIFY_INTEREST, msg, origin,
                                  origin_id)
        outcome = ActionOutcome()
        for reg in list(self.registrations.values()):
            if reg.kind is Action.NOTIFY_DATA and _pairs(producer, reg):
                outcome.notifications.extend(self._meet(producer, reg))
        return outcome

    def _notify_data(self, msg: ARMessage, origin: str,
                     origin_id: int) -> ActionOutcome:
        consumer = self._register(Action.NOTIFY_DATA, msg, origin, origin_id)
        outcome = ActionOutcome()
        for entry in self.store.query_wildcard(consumer.profile):
            outcome.notifications.append(Notification(
                origin, 'data', entry.key_profile, data=entry.data,
            ))
        for reg in list(self.registrations.values()):
            if reg.kind is Action.NOTIFY_INTEREST and _pairs(reg, consumer):
                outcome.notifications.extend(self._meet(reg, consumer))
        return outcome

    @staticmethod
    def _meet(producer: Registration,
              consumer: Registration) -> List[Notification]:
        logger.info(f'Rendezvous of producer {producer.endpoint} '
                    f'({producer.profile}) and consumer {consumer.endpoint} '
                    f'({consumer.profile})')
        return [
            Notification(producer.endpoint, 'consumer', consumer.profile,
                         peer=consumer.endpoint),
            Notification(consumer.endpoint, 'producer', producer.profile,
                         peer=producer.endpoint),
        ]
