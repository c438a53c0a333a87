"""
Overlay membership protocol run by every node: join, keep-alive, eviction,
master election, region split, iterative lookup and cross-region
forwarding. All methods run on the node's event loop.
"""
import logging
from dataclasses import dataclass
from functools import partial
from typing import Callable, Dict, List, Optional, Set

from ..constants import API_NAME
from ..errors import IncompatibleNetwork, LookupFailed, PostFailed
from ..misc import digest160, short_id
from ..wire import Fields, Frame, FrameType, Tag
from .election import HirschbergSinclair
from .geo import (
    GeoPoint,
    Member,
    QuadTreeSnapshot,
    RegionInfo,
    bounds_for_path,
)
from .routing import RoutingTable

__all__ = ['LookupResult', 'Overlay', 'node_id_for']

logger = logging.getLogger(API_NAME)

MAX_TTL = 8
EVICTED_PROBES = 20

IDLE = 'idle'
JOINING = 'joining'
MEMBER = 'member'
ELECTING = 'electing'
FAILED = 'failed'


def node_id_for(endpoint: str, salt: int) -> int:
    return digest160(endpoint.encode('utf-8'), salt.to_bytes(8, 'big'))


def _members(frame: Fields, tag: Tag = Tag.MEMBER) -> List[Member]:
    return [Member.from_fields(r) for r in frame.get_nested_all(tag)]


@dataclass
class LookupResult:
    members: List[Member]
    hops: int


class _Lookup:
    """
    Iterative XOR lookup: ask up to ``alpha`` of the closest not yet queried
    contacts per round until the ``count`` closest known have all answered.
    """

    def __init__(self, overlay: 'Overlay', key: int, count: int,
                 on_done: Callable):
        self.overlay = overlay
        self.key = key
        self.count = count
        self.on_done = on_done
        me = overlay.me
        width = overlay.config.bucket_size
        self.shortlist: Dict[int, Member] = {
            m.node_id: m for m in overlay.table.find_neighbors(key, width)
        }
        self.shortlist[me.node_id] = me
        self.queried: Set[int] = {me.node_id}
        self.failed: Set[int] = set()
        self.answered = 0
        self.rounds = 0
        self.outstanding = 0

    def _closest(self) -> List[Member]:
        alive = [m for i, m in self.shortlist.items() if i not in self.failed]
        alive.sort(key=lambda m: m.node_id ^ self.key)
        return alive

    def step(self):
        overlay = self.overlay
        batch = [m for m in self._closest()[:self.count]
                 if m.node_id not in self.queried][:overlay.config.alpha]
        if not batch:
            self._finish()
            return
        self.rounds += 1
        self.outstanding = len(batch)
        for member in batch:
            self.queried.add(member.node_id)
            op = overlay.requests.new_op()
            overlay.requests.expect(
                op, overlay.config.rpc_timeout_ms,
                partial(self._reply, member), partial(self._timeout, member),
            )
            overlay.node.send(member.endpoint, Frame(
                FrameType.LOOKUP, sender=overlay.me.endpoint,
                node_id=overlay.me.node_id, key=self.key,
                count=overlay.config.bucket_size, op=op,
            ))

    def _reply(self, member: Member, frame: Frame):
        self.answered += 1
        for contact in _members(frame, Tag.CONTACT):
            if contact.node_id in self.failed:
                continue
            self.shortlist.setdefault(contact.node_id, contact)
            if contact.node_id in self.overlay.ring:
                self.overlay.table.add(contact)
        self._settle()

    def _timeout(self, member: Member):
        self.failed.add(member.node_id)
        self.overlay.table.remove(member.node_id)
        logger.debug(f'Lookup contact {member} timed out')
        self._settle()

    def _settle(self):
        self.outstanding -= 1
        if self.outstanding == 0:
            self.step()

    def _finish(self):
        result = LookupResult(self._closest()[:self.count], self.rounds)
        if self.failed and not self.answered:
            logger.warning(f'Lookup for {self.key:040x} reached no contact')
            self.on_done(result, LookupFailed(
                'every contact timed out', partial=result.members,
            ))
            return
        self.on_done(result, None)


class Overlay:
    def __init__(self, node):
        self.node = node
        self.config = node.config
        self.runtime = node.runtime
        self.requests = node.requests
        self.salt = self.runtime.rng.getrandbits(63)
        geo = GeoPoint(self.config.lat, self.config.lon)
        self.me = Member(node_id_for(node.endpoint, self.salt),
                         node.endpoint, geo)
        self.table = RoutingTable(self.me.node_id, self.config.bucket_size)
        self.ring: Dict[int, Member] = {self.me.node_id: self.me}
        self.snapshot: Optional[QuadTreeSnapshot] = None
        self.region = ''
        self.master: Optional[Member] = None
        self.epoch = 0
        self.state = IDLE
        self.misses = 0
        self.last_seen: Dict[int, int] = {}
        self.evicted: Dict[int, List] = {}
        self.election: Optional[HirschbergSinclair] = None
        self.stats = {'elections': 0, 'splits': 0, 'evictions': 0,
                      'lookups': 0, 'election_messages': 0, 'joins': 0}
        self._deposed: Optional[Member] = None
        self._alive: Set[int] = set()
        self._election_timer = None
        self._tick_timer = None
        self._bootstraps: List[str] = []
        self._tried: Set[str] = set()
        self._on_joined: Optional[Callable] = None

    def __repr__(self):
        return (f'Overlay({self.me}, state={self.state}, '
                f'region={self.region!r}, ring={len(self.ring)})')

    @property
    def node_id(self) -> int:
        return self.me.node_id

    @property
    def is_master(self) -> bool:
        return self.master is not None \
            and self.master.node_id == self.me.node_id

    @property
    def joined(self) -> bool:
        return self.state in (MEMBER, ELECTING)

    @property
    def ring_ids(self) -> List[int]:
        return sorted(self.ring)

    @property
    def keepalive_ms(self) -> int:
        return self.config.keepalive_ms

    def _frame(self, frame_type: FrameType, **values) -> Frame:
        values.setdefault('sender', self.me.endpoint)
        return Frame(frame_type, **values)

    def _snapshot_key(self) -> dict:
        snap = self.snapshot
        return {'version': snap.version if snap else 0,
                'issuer': snap.issuer if snap else 0}

    def _newer_remote(self, frame: Frame) -> bool:
        remote = (frame.get_int(Tag.VERSION), frame.get_int(Tag.ISSUER))
        return self.snapshot is not None and remote > self.snapshot.key

    # bootstrap phase
    def start(self, on_joined: Optional[Callable] = None):
        self._on_joined = on_joined
        self._bootstraps = [b for b in self.config.bootstrap
                            if b != self.me.endpoint]
        self.state = JOINING
        self._try_bootstrap()

    def stop(self):
        for timer in (self._tick_timer, self._election_timer):
            if timer is not None:
                timer.cancel()
        self._tick_timer = self._election_timer = None
        self.state = IDLE

    def _try_bootstrap(self):
        if self.state != JOINING:
            return
        if not self._bootstraps:
            if self.snapshot is None:
                self._become_root()
            else:
                self._retry_join()
            return
        target = self._bootstraps.pop(0)
        op = self.requests.new_op()
        self.requests.expect(op, self.config.join_timeout_ms,
                             self._on_join_ack, self._try_bootstrap)
        logger.info(f'Node {self.me} joining through {target}')
        self.node.send(target, self._frame(
            FrameType.JOIN, node_id=self.me.node_id,
            geo=self.me.geo.to_bytes(), op=op, ttl=MAX_TTL,
        ))

    def _retry_join(self):
        """Rejoin target went silent; fall back to what the tree says."""
        leaf = self.snapshot.leaf_for(self.me.geo)
        if leaf is not None and leaf.master_id != self.me.node_id \
                and leaf.master_endpoint not in self._tried:
            self._tried.add(leaf.master_endpoint)
            self._bootstraps = [leaf.master_endpoint]
            self._try_bootstrap()
            return
        self._become_master_alone()

    def _become_root(self):
        self.snapshot = QuadTreeSnapshot.rooted_at(self.me)
        self._set_ring([self.me], '', self.me, 1)
        logger.info(f'No bootstrap answered; {self.me} is master of the '
                    f'root region')
        self.node.record('master', region='')
        self._joined()

    def _become_master_alone(self):
        leaf = self.snapshot.leaf_for(self.me.geo)
        path = leaf.path if leaf is not None else self.region
        info = RegionInfo(path, self.me.node_id, self.me.endpoint, 1)
        self.snapshot = self.snapshot.with_leaf(info).bumped(self.me.node_id)
        self._set_ring([self.me], path, self.me, self.epoch + 1)
        logger.info(f'{self.me} took over region {path!r} alone')
        self.node.record('master', region=path)
        self._broadcast_tree()
        self._joined()

    def _joined(self):
        first = self._on_joined
        self._on_joined = None
        self.state = MEMBER
        self.misses = 0
        self.stats['joins'] += 1
        if self._tick_timer is None:
            self._tick_timer = self.runtime.call_later(
                self.keepalive_ms, self._tick
            )
        if first is not None:
            first(self.me, None)

    def _on_join_ack(self, frame: Frame):
        error = frame.get_str(Tag.ERROR)
        if error == 'duplicate id':
            self.salt = self.runtime.rng.getrandbits(63)
            self.me = Member(node_id_for(self.me.endpoint, self.salt),
                             self.me.endpoint, self.me.geo)
            self.table = RoutingTable(self.me.node_id,
                                      self.config.bucket_size)
            logger.warning(f'Identifier taken; rejoining as {self.me}')
            self._bootstraps = [frame.sender] + list(self.config.bootstrap)
            self._try_bootstrap()
            return
        if error:
            self._fail(IncompatibleNetwork(error))
            return
        self._apply(frame, force=True)
        logger.info(f'{self.me} joined region {self.region!r} under '
                    f'master {self.master}')
        self.node.record('join', region=self.region)
        self._joined()

    def _fail(self, error: Exception):
        self.stop()
        self.state = FAILED
        logger.error(f'Join failed: {error}')
        callback, self._on_joined = self._on_joined, None
        if callback is not None:
            callback(None, error)

    def on_incompatible(self, endpoint: str, error: IncompatibleNetwork):
        if self.state == JOINING:
            self._fail(error)

    def on_join(self, frame: Frame):
        if self.snapshot is None or not self.joined:
            return
        joiner = Member(frame.get_int(Tag.NODE_ID), frame.sender,
                        GeoPoint.from_bytes(frame.raw(Tag.GEO)))
        leaf = self.snapshot.leaf_for(joiner.geo)
        if leaf is None:
            return
        if leaf.path == self.region and self.is_master:
            self._admit(joiner, frame)
            return
        ttl = frame.get_int(Tag.TTL)
        if ttl <= 0:
            logger.warning(f'Dropping JOIN of {joiner} after too many hops')
            return
        target = leaf.master_endpoint
        if leaf.path == self.region or target == self.me.endpoint:
            target = self.master.endpoint
        self.node.send(target, frame.relayed(ttl=ttl - 1,
                                             hops=frame.hops + 1))

    def _admit(self, joiner: Member, frame: Frame):
        known = self.ring.get(joiner.node_id)
        if known is not None and known.endpoint != joiner.endpoint:
            self.node.send(joiner.endpoint, frame.reply(
                FrameType.JOIN_ACK, sender=self.me.endpoint,
                error='duplicate id',
            ))
            return
        self.evicted.pop(joiner.node_id, None)
        if known != joiner:
            members = list(self.ring.values())
            members = [m for m in members if m.node_id != joiner.node_id]
            self._set_ring(members + [joiner], self.region, self.me,
                           self.epoch + 1)
            logger.info(f'{joiner} admitted to region {self.region!r} '
                        f'({len(self.ring)} members)')
        self.last_seen[joiner.node_id] = self.runtime.now()
        self.node.send(joiner.endpoint, frame.reply(
            FrameType.JOIN_ACK, **self._ring_fields()
        ))
        self._announce(exclude={joiner.node_id})
        self.maybe_split()

    # membership bookkeeping
    def _ring_fields(self) -> dict:
        return dict(
            sender=self.me.endpoint, region=self.region,
            node_id=self.master.node_id, peer=self.master.endpoint,
            member=[m.to_fields() for m in self.ring.values()],
            tree=self.snapshot.to_fields(), epoch=self.epoch,
        )

    def _set_ring(self, members: List[Member], region: str, master: Member,
                  epoch: int):
        old = set(self.ring)
        self.ring = {m.node_id: m for m in members}
        self.ring.setdefault(self.me.node_id, self.me)
        self.region = region
        self.master = master
        self.epoch = epoch
        self.table.clear()
        for member in self.ring.values():
            self.table.add(member)
        if self.is_master:
            now = self.runtime.now()
            self.last_seen = {i: self.last_seen.get(i, now)
                              for i in self.ring}
            self.snapshot = self.snapshot.resize(region, len(self.ring))
        if old != set(self.ring):
            self.node.ring_changed(old)

    def _apply(self, frame: Frame, force: bool = False) -> bool:
        """Adopts the tree and ring carried by ``frame`` unless stale."""
        tree = frame.get_nested(Tag.TREE)
        if tree is not None:
            snap = QuadTreeSnapshot.from_fields(tree)
            if self.snapshot is not None and self.snapshot.newer_than(snap):
                return False
            if snap.newer_than(self.snapshot):
                self.snapshot = snap
        if not frame.has(Tag.MEMBER) or not frame.has(Tag.REGION):
            return True
        members = _members(frame)
        by_id = {m.node_id: m for m in members}
        master = by_id.get(frame.get_int(Tag.NODE_ID))
        if master is None or self.me.node_id not in by_id:
            return True
        region = frame.get_str(Tag.REGION)
        epoch = frame.get_int(Tag.EPOCH)
        if force or region != self.region or self.master is None \
                or master.node_id != self.master.node_id \
                or epoch > self.epoch:
            was_master = self.is_master
            self._set_ring(members, region, master, epoch)
            if self.is_master and not was_master:
                logger.info(f'{self.me} is master of region {region!r}')
                self.node.record('master', region=region)
        return True

    def _announce(self, exclude: Set[int] = frozenset()):
        fields = self._ring_fields()
        for member in self.ring.values():
            if member.node_id != self.me.node_id \
                    and member.node_id not in exclude:
                self.node.send(member.endpoint,
                               self._frame(FrameType.SNAPSHOT, **fields))

    def _broadcast_tree(self, extra: List[str] = ()):
        frame = self._frame(FrameType.SNAPSHOT,
                            tree=self.snapshot.to_fields())
        targets = {info.master_endpoint for info in self.snapshot.masters()}
        targets.update(extra)
        targets.discard(self.me.endpoint)
        for endpoint in sorted(targets):
            self.node.send(endpoint, frame)

    def _check_placement(self, force: bool = False):
        leaf = self.snapshot.leaf_for(self.me.geo) if self.snapshot else None
        if leaf is None:
            return
        if leaf.master_id == self.me.node_id:
            # named master of a ring whose hand-off never reached us
            if force and not (self.is_master and leaf.path == self.region):
                self._become_master_alone()
            return
        if force or self.is_master or self.master is None \
                or leaf.master_id != self.master.node_id \
                or leaf.path != self.region:
            self._rejoin(leaf.master_endpoint)

    def _rejoin(self, via: str):
        if self.state == JOINING:
            return
        logger.info(f'{self.me} rejoining through {via}')
        if self.election is not None:
            self.election.finish()
            self.election = None
        self.master = None
        self.state = JOINING
        self._tried = {via}
        self._bootstraps = [via]
        self._try_bootstrap()

    # snapshots
    def on_snapshot(self, frame: Frame):
        if frame.flag(Tag.REQUEST):
            requester = frame.get_int(Tag.NODE_ID)
            if self.snapshot is None:
                return
            if self.is_master and requester in self.ring:
                reply = frame.reply(FrameType.SNAPSHOT, **self._ring_fields())
            else:
                reply = frame.reply(FrameType.SNAPSHOT,
                                    sender=self.me.endpoint,
                                    tree=self.snapshot.to_fields())
            self.node.send(frame.sender, reply)
            return
        if self.snapshot is None or self.state == JOINING:
            return
        if self._apply(frame):
            self._check_placement()
            if self.is_master:
                self.maybe_split()

    def pull_snapshot(self, endpoint: str,
                      then: Optional[Callable[[], None]] = None):
        op = self.requests.new_op()

        def pulled(frame: Frame):
            self.on_snapshot(frame)
            if then is not None:
                then()
        self.requests.expect(op, self.config.rpc_timeout_ms, pulled, then)
        self.node.send(endpoint, self._frame(
            FrameType.SNAPSHOT, request=True, node_id=self.me.node_id, op=op,
        ))

    # stabilization
    def _tick(self):
        self._tick_timer = self.runtime.call_later(self.keepalive_ms,
                                                   self._tick)
        if self.state != MEMBER:
            return
        if self.is_master:
            self._check_members()
            self._probe_evicted()
        elif self.master is not None:
            self._ping_master()

    def _ping_master(self):
        op = self.requests.new_op()
        self.requests.expect(op, self.keepalive_ms, self._on_pong,
                             self._missed)
        self.node.send(self.master.endpoint, self._frame(
            FrameType.PING, node_id=self.me.node_id, op=op,
            epoch=self.epoch, region=self.region, **self._snapshot_key(),
        ))

    def on_ping(self, frame: Frame):
        member = frame.get_int(Tag.NODE_ID)
        ours = self.is_master and member in self.ring
        if ours:
            self.last_seen[member] = self.runtime.now()
        self.node.send(frame.sender, frame.reply(
            FrameType.PONG, sender=self.me.endpoint,
            node_id=self.me.node_id, epoch=self.epoch, flag=ours,
            **self._snapshot_key(),
        ))
        if self._newer_remote(frame) and self.state == MEMBER:
            self.pull_snapshot(frame.sender)

    def _on_pong(self, frame: Frame):
        self.misses = 0
        if self.state != MEMBER:
            return
        if not frame.flag(Tag.FLAG):
            self.pull_snapshot(frame.sender,
                               then=lambda: self._check_placement(True))
            return
        if self._newer_remote(frame) or frame.get_int(Tag.EPOCH) > self.epoch:
            self.pull_snapshot(frame.sender)

    def on_pong(self, frame: Frame):
        """Unsolicited or late PONG: answers to the master's probes."""
        if self._newer_remote(frame) and self.state == MEMBER:
            self.pull_snapshot(frame.sender)

    def _missed(self):
        if self.state != MEMBER or self.is_master:
            return
        self.misses += 1
        logger.debug(f'{self.me} missed keep-alive {self.misses} from '
                     f'{self.master}')
        if self.misses >= self.config.miss_threshold:
            self.start_election()

    def _check_members(self):
        limit = self.config.miss_threshold * self.keepalive_ms
        now = self.runtime.now()
        dead = [m for i, m in self.ring.items()
                if i != self.me.node_id
                and now - self.last_seen.get(i, now) > limit]
        if not dead:
            return
        for member in dead:
            logger.warning(f'Evicting silent member {member} from region '
                           f'{self.region!r}')
            self.evicted[member.node_id] = [member, EVICTED_PROBES]
            self.last_seen.pop(member.node_id, None)
            self.node.record('evict', region=self.region,
                             peer=member.endpoint)
        self.stats['evictions'] += len(dead)
        gone = {m.node_id for m in dead}
        survivors = [m for i, m in self.ring.items() if i not in gone]
        self._set_ring(survivors, self.region, self.me, self.epoch + 1)
        self._announce()

    def _probe_evicted(self):
        for node_id, slot in list(self.evicted.items()):
            member, left = slot
            if left <= 0:
                del self.evicted[node_id]
                continue
            slot[1] = left - 1
            self.node.send(member.endpoint, self._frame(
                FrameType.PING, node_id=self.me.node_id, epoch=self.epoch,
                region=self.region, **self._snapshot_key(),
            ))

    # election
    def start_election(self):
        if self.state != MEMBER or self.master is None:
            return
        self.state = ELECTING
        self.misses = 0
        self._deposed = self.master
        self._alive = set()
        logger.warning(f'{self.me} lost master {self.master}; checking '
                       f'ring liveness before election')
        for member in self._candidates():
            if member.node_id == self.me.node_id:
                continue
            op = self.requests.new_op()
            self.requests.expect(
                op, self.config.rpc_timeout_ms,
                partial(self._mark_alive, member.node_id),
            )
            self.node.send(member.endpoint, self._frame(
                FrameType.PING, node_id=self.me.node_id, op=op,
                epoch=self.epoch, region=self.region,
                **self._snapshot_key(),
            ))
        self.runtime.call_later(self.config.rpc_timeout_ms + 1,
                                self._run_election)

    def _candidates(self) -> List[Member]:
        deposed = self._deposed.node_id if self._deposed else None
        return [m for i, m in self.ring.items() if i != deposed]

    def _mark_alive(self, node_id: int, frame: Frame):
        self._alive.add(node_id)

    def _run_election(self, failed: Set[int] = None):
        if self.state != ELECTING:
            return
        if self.election is None:
            ids = [m.node_id for m in self._candidates()]
            if failed is None:
                failed = set(ids) - self._alive - {self.me.node_id}
            self._new_election(ids, failed)
        self.election.start()

    def _new_election(self, ids: List[int], failed):
        if self._election_timer is not None:
            self._election_timer.cancel()
        self.election = HirschbergSinclair(
            self.me.node_id, ids, self._send_election, self._won, failed,
        )
        self._election_timer = self.runtime.call_later(
            4 * self.keepalive_ms, self._election_timeout,
        )

    def _election_timeout(self):
        self._election_timer = None
        if self.state != ELECTING:
            return
        logger.warning(f'Election in region {self.region!r} stalled; '
                       f'restarting')
        if self.election is not None:
            self.stats['election_messages'] += self.election.messages
            self.election.finish()
        self.election = None
        self.state = MEMBER
        self.start_election()

    def _send_election(self, kind: str, neighbor: int, candidate: int,
                       round_: int, hops: int, direction: int,
                       failed: List[int]):
        member = self.ring.get(neighbor)
        if member is None:
            return
        frame_type = (FrameType.ELECT_PROBE if kind == 'probe'
                      else FrameType.ELECT_REPLY)
        self.node.send(member.endpoint, self._frame(
            frame_type, node_id=self.me.node_id, candidate=candidate,
            round=round_, hops=hops, direction=direction, failed=failed,
        ))

    def _election_args(self, frame: Frame):
        failed = [int.from_bytes(raw, 'big')
                  for raw in frame.get_all(Tag.FAILED)]
        return (frame.get_int(Tag.CANDIDATE), frame.get_int(Tag.ROUND),
                frame.get_int(Tag.HOPS), frame.get_int(Tag.DIRECTION),
                failed)

    def _join_election(self, failed: List[int]):
        if self.state == MEMBER and self.master is not None:
            self.state = ELECTING
            self._deposed = self.master
            logger.info(f'{self.me} woken up by an election probe')
        if self.state != ELECTING:
            return False
        if self.election is None:
            ids = [m.node_id for m in self._candidates()]
            self._new_election(ids, failed)
        return True

    def on_elect_probe(self, frame: Frame):
        candidate, round_, hops, direction, failed = \
            self._election_args(frame)
        if not self._join_election(failed):
            return
        self.election.on_probe(candidate, round_, hops, direction, failed)

    def on_elect_reply(self, frame: Frame):
        candidate, round_, _, direction, failed = self._election_args(frame)
        if self.state != ELECTING or self.election is None:
            return
        self.election.on_reply(candidate, round_, direction, failed)

    def _won(self):
        election = self.election
        if self._election_timer is not None:
            self._election_timer.cancel()
            self._election_timer = None
        self.stats['elections'] += 1
        self.stats['election_messages'] += election.messages
        gone = set(election.failed)
        deposed = self._deposed
        if deposed is not None:
            gone.add(deposed.node_id)
        survivors = [m for i, m in self.ring.items() if i not in gone]
        info = RegionInfo(self.region, self.me.node_id, self.me.endpoint,
                          len(survivors))
        self.snapshot = self.snapshot.with_leaf(info).bumped(self.me.node_id)
        self.state = MEMBER
        self.election = None
        self.misses = 0
        self._set_ring(survivors, self.region, self.me, self.epoch + 1)
        logger.info(f'{self.me} won the election for region '
                    f'{self.region!r} ({len(survivors)} members)')
        self.node.record('master', region=self.region)
        fields = self._ring_fields()
        for member in survivors:
            if member.node_id != self.me.node_id:
                self.node.send(member.endpoint,
                               self._frame(FrameType.ELECT_WIN, **fields))
        extra = [deposed.endpoint] if deposed is not None else []
        self._broadcast_tree(extra)
        self.maybe_split()

    def on_elect_win(self, frame: Frame):
        if self.state == JOINING:
            return
        if self.election is not None:
            self.election.finish()
            self.election = None
        if self._election_timer is not None:
            self._election_timer.cancel()
            self._election_timer = None
        if self._apply(frame):
            self.state = MEMBER
            self.misses = 0
            self._deposed = None
            self._check_placement()

    # split
    def maybe_split(self) -> bool:
        if not self.is_master or self.state != MEMBER \
                or len(self.ring) <= self.config.capacity:
            return False
        box = bounds_for_path(self.region)
        groups: Dict[int, List[Member]] = {d: [] for d in range(4)}
        for member in self.ring.values():
            groups[box.quadrant_of(member.geo)].append(member)
        if any(len(g) < self.config.replicas for g in groups.values()):
            logger.debug(f'Split of region {self.region!r} deferred: '
                         f'{[len(g) for g in groups.values()]}')
            return False
        parent = self.region
        children = {}
        for digit, members in groups.items():
            members.sort(key=lambda m: m.node_id)
            chosen = self.runtime.rng.choice(members)
            children[digit] = RegionInfo(parent + str(digit), chosen.node_id,
                                         chosen.endpoint, len(members))
        old_masters = [i.master_endpoint for i in self.snapshot.masters()]
        self.snapshot = self.snapshot.split(parent, children.values(),
                                            self.me.node_id)
        epoch = self.epoch + 1
        tree = self.snapshot.to_fields()
        mine = None
        for digit, members in groups.items():
            info = children[digit]
            master = next(m for m in members if m.node_id == info.master_id)
            fields = dict(
                sender=self.me.endpoint, region=info.path,
                node_id=master.node_id, peer=master.endpoint,
                member=[m.to_fields() for m in members], tree=tree,
                epoch=epoch,
            )
            for member in members:
                if member.node_id == self.me.node_id:
                    mine = (members, info.path, master)
                else:
                    self.node.send(member.endpoint,
                                   self._frame(FrameType.SNAPSHOT, **fields))
        self.stats['splits'] += 1
        logger.info(f'Region {parent!r} split into '
                    f'{[len(g) for g in groups.values()]} members')
        self.node.record('split', region=parent)
        members, path, master = mine
        self._set_ring(members, path, master, epoch)
        self._broadcast_tree(old_masters)
        if self.is_master:
            self.node.record('master', region=path)
            self.maybe_split()
        return True

    # lookup
    def lookup(self, key: int, count: int, on_done: Callable):
        """``on_done(LookupResult, error)`` with the ``count`` closest."""
        self.stats['lookups'] += 1
        _Lookup(self, key, count, on_done).step()

    def on_lookup(self, frame: Frame):
        requester = frame.get_int(Tag.NODE_ID)
        count = frame.get_int(Tag.COUNT) or self.config.bucket_size
        key = frame.get_int(Tag.KEY)
        contacts = self.table.find_neighbors(key, count,
                                             exclude=[requester])
        contacts.append(self.me)
        self.node.send(frame.sender, frame.reply(
            FrameType.LOOKUP_ACK, sender=self.me.endpoint,
            contact=[m.to_fields() for m in contacts],
        ))

    # cross-region routing
    def leaf_for(self, geo: GeoPoint) -> Optional[RegionInfo]:
        return self.snapshot.leaf_for(geo) if self.snapshot else None

    def is_local(self, geo: GeoPoint) -> bool:
        leaf = self.leaf_for(geo)
        return leaf is None or leaf.path == self.region

    def route_cross_region(self, kind: int, message: Fields, geo: GeoPoint,
                           origin: str, timeout_ms: int,
                           on_done: Callable, attempts: int = 2):
        """
        Sends ``message`` to the master of the leaf holding ``geo`` through
        this region's master; ``on_done(FORWARD_ACK frame, error)``.
        """
        op = self.requests.new_op()

        def retry():
            if attempts <= 1:
                on_done(None, PostFailed('destination region unreachable'))
                return
            logger.warning('Cross-region forward timed out; refreshing '
                           'snapshot and retrying')

            def again():
                self.route_cross_region(kind, message, geo, origin,
                                        timeout_ms, on_done, attempts - 1)
            if self.master is not None and not self.is_master:
                self.pull_snapshot(self.master.endpoint, then=again)
            else:
                self.runtime.call_later(self.keepalive_ms, again)

        self.requests.expect(op, timeout_ms, lambda f: on_done(f, None),
                             retry)
        target = self.master.endpoint if self.master else self.me.endpoint
        self.node.send(target, self._frame(
            FrameType.FORWARD, op=op, hops=0, ttl=MAX_TTL, kind=kind,
            geo=geo.to_bytes(), message=message, origin=origin,
            peer=self.me.endpoint, **self._snapshot_key(),
        ))

    def on_forward(self, frame: Frame, deliver: Callable[[Frame, int], None],
                   refreshed: bool = False):
        if self.snapshot is None:
            return
        if self._newer_remote(frame) and not refreshed:
            self.pull_snapshot(
                frame.get_str(Tag.PEER) or frame.sender,
                then=lambda: self.on_forward(frame, deliver, True),
            )
            return
        if not self.is_master:
            if self.master is not None:
                self.node.send(self.master.endpoint, frame.relayed(
                    peer=self.me.endpoint, **self._snapshot_key()))
            return
        hops = frame.hops + 1
        leaf = self.leaf_for(GeoPoint.from_bytes(frame.raw(Tag.GEO)))
        if leaf is None or leaf.path == self.region:
            deliver(frame, hops)
            return
        ttl = frame.get_int(Tag.TTL)
        if ttl <= 0:
            logger.warning(f'Dropping FORWARD toward {leaf.path!r}: TTL')
            return
        self.node.record('forward', region=leaf.path)
        self.node.send(leaf.master_endpoint, frame.relayed(
            hops=hops, ttl=ttl - 1, peer=self.me.endpoint,
            **self._snapshot_key(),
        ))

    def status(self) -> dict:
        return {
            'node': str(self.me),
            'state': self.state,
            'region': self.region,
            'master': str(self.master) if self.master else None,
            'ring': len(self.ring),
            'epoch': self.epoch,
            'snapshot': list(self.snapshot.key) if self.snapshot else None,
            'leaves': len(self.snapshot.leaves) if self.snapshot else 0,
            'stats': dict(self.stats),
        }

    def short(self) -> str:
        return short_id(self.me.node_id)
