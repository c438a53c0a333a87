"""
Replicated profile store: an in-memory recency tier over an append-only
on-disk log.

Cold log ``entries.log``: records of u32 body length, u32 crc32(body) and a
tagged body holding either a PUT entry or a TOMBSTONE digest. The text index
``entries.idx`` starts with the log size it covers, followed by one
``digest sfc_index offset`` line per live entry; it is regenerated when
missing or stale.
"""
import bisect
import hashlib
import logging
import os
import struct
import time
import zlib
from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from typing import Dict, Iterator, List, Optional, Set, Tuple

from .ar.message import decode_profile, encode_profile
from .ar.profile import Profile, TermKind, matches
from .constants import API_NAME
from .errors import StoreFailed
from .sfc import (
    KeywordSpacePoint,
    encode_coords,
    encode_keyword,
    target_for_profile,
)
from .wire import Fields, Tag

__all__ = [
    'ColdTier',
    'LogColdTier',
    'Store',
    'StoreSnapshot',
    'StoredEntry',
    'profile_index',
    'term_intervals',
]

logger = logging.getLogger(API_NAME)

_RECORD = struct.Struct('>II')
_PUT = 1
_TOMBSTONE = 2
# Resolution of the per-term pre-filter intervals (ten keyword characters).
TERM_ORDER = 60


def profile_index(profile: Profile, dimensions: int, order: int) -> int:
    """Curve index of a profile: its point, or its region's lowest corner."""
    target = target_for_profile(profile, dimensions, order)
    if isinstance(target, KeywordSpacePoint):
        coords = target.coords
    else:
        coords = tuple(lo for lo, _ in target.ranges)
    return encode_coords(coords, order)


def term_intervals(profile: Profile) -> Tuple[Tuple[int, int], ...]:
    """
    One coordinate interval per term covering every keyword the term names;
    an attribute-only term also covers ``attr:<anything>``.
    """
    out = []
    for term in profile.terms:
        lo_text, hi_text = term.axis_text()
        if term.kind is TermKind.ATTRIBUTE:
            out.append(encode_keyword(lo_text + '*', TERM_ORDER))
        elif hi_text is None:
            out.append(encode_keyword(lo_text, TERM_ORDER))
        else:
            out.append((encode_keyword(lo_text, TERM_ORDER)[0],
                        encode_keyword(hi_text, TERM_ORDER)[1]))
    return tuple(out)


@dataclass(frozen=True)
class StoredEntry:
    key_profile: Profile
    sfc_index: int
    data: bytes
    digest: bytes
    stored_at: int
    origin: int = 0

    @classmethod
    def create(cls, profile: Profile, data: bytes, dimensions: int,
               order: int, origin: int = 0,
               stored_at: Optional[int] = None) -> 'StoredEntry':
        return cls(
            key_profile=profile,
            sfc_index=profile_index(profile, dimensions, order),
            data=data,
            digest=hashlib.sha256(profile.to_bytes() + data).digest(),
            stored_at=int(time.time() * 1000) if stored_at is None
            else stored_at,
            origin=origin,
        )

    def to_fields(self) -> Fields:
        return Fields(profile=encode_profile(self.key_profile),
                      key=self.sfc_index, data=self.data,
                      digest=self.digest, timestamp=self.stored_at,
                      origin=self.origin)

    @classmethod
    def from_fields(cls, record: Fields) -> 'StoredEntry':
        return cls(
            key_profile=decode_profile(
                record.get_nested(Tag.PROFILE) or Fields()
            ),
            sfc_index=record.get_int(Tag.KEY),
            data=record.raw(Tag.DATA) or b'',
            digest=record.raw(Tag.DIGEST) or b'',
            stored_at=record.get_int(Tag.TIMESTAMP),
            origin=record.get_int(Tag.ORIGIN),
        )

    def to_bytes(self) -> bytes:
        return self.to_fields().to_bytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> 'StoredEntry':
        return cls.from_fields(Fields.from_bytes(raw))


class ColdTier(ABC):
    """Backend seam for the durable tier."""

    @abstractmethod
    def append_put(self, entry: StoredEntry) -> int:
        """Persists ``entry`` and returns its position."""

    @abstractmethod
    def append_tombstone(self, digest: bytes) -> None:
        pass

    @abstractmethod
    def read(self, position: int) -> StoredEntry:
        pass

    @abstractmethod
    def replay(self, start: int = 0) -> Iterator[Tuple[int, object]]:
        """Yields ``(position, StoredEntry | tombstone digest)``."""

    @abstractmethod
    def rewrite(self, entries: List[StoredEntry]) -> List[int]:
        """Replaces the tier's content; returns the new positions."""

    @property
    @abstractmethod
    def size(self) -> int:
        pass

    def close(self) -> None:
        pass


class LogColdTier(ColdTier):
    def __init__(self, path: str, sync: bool = False):
        self.path = path
        self.sync = sync
        self._file = open(path, 'a+b')
        self._size = self._file.seek(0, os.SEEK_END)

    @property
    def size(self) -> int:
        return self._size

    def _append(self, body: bytes) -> int:
        position = self._size
        record = _RECORD.pack(len(body), zlib.crc32(body)) + body
        try:
            self._file.write(record)
            self._file.flush()
            if self.sync:
                os.fsync(self._file.fileno())
        except OSError as e:
            raise StoreFailed(f'cannot append to {self.path}: {e}')
        self._size += len(record)
        return position

    def append_put(self, entry: StoredEntry) -> int:
        body = Fields(kind=_PUT, entry=entry.to_fields()).to_bytes()
        return self._append(body)

    def append_tombstone(self, digest: bytes) -> None:
        self._append(Fields(kind=_TOMBSTONE, digest=digest).to_bytes())

    def _read_record(self, position: int) -> Optional[Tuple[int, bytes]]:
        self._file.seek(position)
        head = self._file.read(_RECORD.size)
        if len(head) < _RECORD.size:
            return None
        length, crc = _RECORD.unpack(head)
        body = self._file.read(length)
        if len(body) < length or zlib.crc32(body) != crc:
            return None
        return _RECORD.size + length, body

    def read(self, position: int) -> StoredEntry:
        found = self._read_record(position)
        if found is None:
            raise StoreFailed(f'unreadable record at {position}')
        record = Fields.from_bytes(found[1])
        return StoredEntry.from_fields(record.get_nested(Tag.ENTRY))

    def replay(self, start: int = 0) -> Iterator[Tuple[int, object]]:
        position = start
        while position < self._size:
            found = self._read_record(position)
            if found is None:
                logger.warning(
                    f'Torn store record at {position} in {self.path}, '
                    f'truncating {self._size - position} bytes'
                )
                self._file.truncate(position)
                self._size = position
                return
            length, body = found
            record = Fields.from_bytes(body)
            if record.get_int(Tag.KIND) == _PUT:
                yield position, StoredEntry.from_fields(
                    record.get_nested(Tag.ENTRY)
                )
            else:
                yield position, record.raw(Tag.DIGEST)
            position += length

    def rewrite(self, entries: List[StoredEntry]) -> List[int]:
        tmp = self.path + '.tmp'
        positions = []
        offset = 0
        with open(tmp, 'wb') as out:
            for entry in entries:
                body = Fields(kind=_PUT, entry=entry.to_fields()).to_bytes()
                out.write(_RECORD.pack(len(body), zlib.crc32(body)) + body)
                positions.append(offset)
                offset += _RECORD.size + len(body)
            out.flush()
            os.fsync(out.fileno())
        self._file.close()
        os.replace(tmp, self.path)
        self._file = open(self.path, 'a+b')
        self._size = offset
        return positions

    def close(self) -> None:
        self._file.close()


@dataclass
class _IndexEntry:
    digest: bytes
    sfc_index: int
    position: int
    key_profile: Profile
    intervals: Tuple[Tuple[int, int], ...]
    stored_at: int
    origin: int
    size: int


def _prefilter(stored: Tuple[Tuple[int, int], ...],
               query: Tuple[Tuple[int, int], ...]) -> bool:
    return all(
        any(slo <= qhi and qlo <= shi for slo, shi in stored)
        for qlo, qhi in query
    )


@dataclass
class StoreStats:
    puts: int = 0
    duplicates: int = 0
    deletes: int = 0
    evictions: int = 0
    scans: int = 0
    hot_hits: int = 0
    cold_reads: int = 0
    compactions: int = 0

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)


class StoreSnapshot:
    """Read-only view frozen at creation; safe to query off the loop."""

    def __init__(self, index: Dict[bytes, _IndexEntry], path: Optional[str],
                 hot: Dict[bytes, bytes]):
        self._index = index
        self._hot = hot
        self._file = open(path, 'rb') if path else None

    def _load(self, item: _IndexEntry) -> StoredEntry:
        data = self._hot.get(item.digest)
        if data is None:
            self._file.seek(item.position)
            length, _ = _RECORD.unpack(self._file.read(_RECORD.size))
            record = Fields.from_bytes(self._file.read(length))
            data = StoredEntry.from_fields(record.get_nested(Tag.ENTRY)).data
        return StoredEntry(item.key_profile, item.sfc_index, data,
                           item.digest, item.stored_at, item.origin)

    def query(self, profile: Profile) -> List[StoredEntry]:
        query_iv = term_intervals(profile)
        return [
            self._load(item)
            for item in sorted(self._index.values(),
                               key=lambda i: (i.sfc_index, i.digest))
            if _prefilter(item.intervals, query_iv)
            and matches(item.key_profile, profile)
        ]

    def close(self):
        if self._file is not None:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class Store:
    def __init__(self, path: str, dimensions: int, order: int,
                 hot_capacity_bytes: int = 64 * 1024 * 1024,
                 cold: Optional[ColdTier] = None, sync: bool = False):
        self.path = path
        self.dimensions = dimensions
        self.order = order
        self.hot_capacity_bytes = hot_capacity_bytes
        os.makedirs(path, exist_ok=True)
        self._log_path = os.path.join(path, 'entries.log')
        self._idx_path = os.path.join(path, 'entries.idx')
        self.cold = cold or LogColdTier(self._log_path, sync=sync)
        self.stats = StoreStats()
        self._index: Dict[bytes, _IndexEntry] = {}
        self._by_sfc: List[Tuple[int, bytes]] = []
        self._located: Dict[Profile, Set[bytes]] = {}
        self._hot: 'OrderedDict[bytes, bytes]' = OrderedDict()
        self._hot_bytes = 0
        self._compacted_size = 0
        self._recover()

    def __repr__(self):
        return (f'Store(path={self.path!r}, entries={len(self)}, '
                f'hot_bytes={self._hot_bytes})')

    # recovery
    def _recover(self):
        start = self._load_index_file()
        for position, item in self.cold.replay(start):
            if isinstance(item, StoredEntry):
                self._index_put(item, position)
            else:
                self._index_drop(item)
        self._compacted_size = self.cold.size
        if self._index:
            logger.info(f'Store {self.path} recovered {len(self)} entries')

    def _load_index_file(self) -> int:
        if not isinstance(self.cold, LogColdTier) \
                or not os.path.exists(self._idx_path):
            return 0
        try:
            with open(self._idx_path) as f:
                covered = int(f.readline().strip() or 0)
                if covered > self.cold.size:
                    return 0
                rows = [line.split() for line in f if line.strip()]
        except (OSError, ValueError):
            return 0
        for digest_hex, _, position in rows:
            try:
                entry = self.cold.read(int(position))
            except StoreFailed:
                self._index.clear()
                self._by_sfc.clear()
                self._located.clear()
                return 0
            if entry.digest.hex() == digest_hex:
                self._index_put(entry, int(position), warm=False)
        return covered

    def _write_index_file(self):
        if not isinstance(self.cold, LogColdTier):
            return
        tmp = self._idx_path + '.tmp'
        with open(tmp, 'w') as f:
            f.write(f'{self.cold.size}\n')
            for item in sorted(self._index.values(),
                               key=lambda i: i.position):
                f.write(f'{item.digest.hex()} {item.sfc_index} '
                        f'{item.position}\n')
        os.replace(tmp, self._idx_path)

    # index and hot tier
    def _index_put(self, entry: StoredEntry, position: int,
                   warm: bool = True):
        self._index_drop(entry.digest)
        self._index[entry.digest] = _IndexEntry(
            entry.digest, entry.sfc_index, position, entry.key_profile,
            term_intervals(entry.key_profile), entry.stored_at,
            entry.origin, len(entry.data),
        )
        bisect.insort(self._by_sfc, (entry.sfc_index, entry.digest))
        base = entry.key_profile.without_location()
        if base != entry.key_profile:
            self._located.setdefault(base, set()).add(entry.digest)
        if warm:
            self._warm(entry.digest, entry.data)

    def _index_drop(self, digest: bytes) -> bool:
        item = self._index.pop(digest, None)
        if item is None:
            return False
        pos = bisect.bisect_left(self._by_sfc, (item.sfc_index, digest))
        if pos < len(self._by_sfc) and self._by_sfc[pos][1] == digest:
            del self._by_sfc[pos]
        located = self._located.get(item.key_profile.without_location())
        if located is not None:
            located.discard(digest)
            if not located:
                del self._located[item.key_profile.without_location()]
        data = self._hot.pop(digest, None)
        if data is not None:
            self._hot_bytes -= len(data)
        return True

    def _warm(self, digest: bytes, data: bytes):
        if len(data) > self.hot_capacity_bytes:
            return
        old = self._hot.pop(digest, None)
        if old is not None:
            self._hot_bytes -= len(old)
        self._hot[digest] = data
        self._hot_bytes += len(data)
        while self._hot_bytes > self.hot_capacity_bytes:
            _, evicted = self._hot.popitem(last=False)
            self._hot_bytes -= len(evicted)
            self.stats.evictions += 1

    def _materialize(self, item: _IndexEntry) -> StoredEntry:
        data = self._hot.get(item.digest)
        if data is not None:
            self._hot.move_to_end(item.digest)
            self.stats.hot_hits += 1
        else:
            data = self.cold.read(item.position).data
            self.stats.cold_reads += 1
            self._warm(item.digest, data)
        return StoredEntry(item.key_profile, item.sfc_index, data,
                           item.digest, item.stored_at, item.origin)

    # operations
    def put(self, entry: StoredEntry) -> bool:
        """Returns False when an entry with the same digest existed."""
        existing = self._index.get(entry.digest)
        position = self.cold.append_put(entry)
        if existing is not None:
            existing.stored_at = entry.stored_at
            existing.position = position
            self.stats.duplicates += 1
            self._warm(entry.digest, entry.data)
            return False
        self._index_put(entry, position)
        self.stats.puts += 1
        self._maybe_compact()
        return True

    def get(self, digest: bytes) -> Optional[StoredEntry]:
        item = self._index.get(digest)
        return None if item is None else self._materialize(item)

    def query_exact(self, profile: Profile) -> List[StoredEntry]:
        """
        Entries stored under ``profile``, plus those stored under
        ``profile`` extended with a location.
        """
        index = profile_index(profile, self.dimensions, self.order)
        lo = bisect.bisect_left(self._by_sfc, (index, b''))
        digests = []
        for sfc_index, digest in self._by_sfc[lo:]:
            if sfc_index != index:
                break
            if self._index[digest].key_profile == profile:
                digests.append(digest)
        if profile.without_location() == profile:
            located = self._located.get(profile, ())
            digests.extend(sorted(
                located, key=lambda d: (self._index[d].sfc_index, d)
            ))
        return [self._materialize(self._index[d]) for d in digests]

    def query_wildcard(self, profile: Profile) -> List[StoredEntry]:
        self.stats.scans += 1
        query_iv = term_intervals(profile)
        out = []
        for _, digest in list(self._by_sfc):
            item = self._index[digest]
            if _prefilter(item.intervals, query_iv) \
                    and matches(item.key_profile, profile):
                out.append(self._materialize(item))
        return out

    def query(self, profile: Profile) -> List[StoredEntry]:
        if profile.is_simple:
            return self.query_exact(profile)
        return self.query_wildcard(profile)

    def delete_matching(self, profile: Profile) -> int:
        query_iv = term_intervals(profile)
        doomed = [
            item.digest for item in self._index.values()
            if _prefilter(item.intervals, query_iv)
            and matches(item.key_profile, profile)
        ]
        for digest in doomed:
            self.cold.append_tombstone(digest)
            self._index_drop(digest)
        self.stats.deletes += len(doomed)
        self._maybe_compact()
        return len(doomed)

    def entries(self) -> Iterator[StoredEntry]:
        for _, digest in list(self._by_sfc):
            item = self._index.get(digest)
            if item is not None:
                yield self._materialize(item)

    def snapshot(self) -> StoreSnapshot:
        index = {d: replace(i) for d, i in self._index.items()}
        path = self._log_path if isinstance(self.cold, LogColdTier) else None
        return StoreSnapshot(index, path, dict(self._hot))

    # maintenance
    def _maybe_compact(self):
        threshold = max(self._compacted_size, 64 * 1024) * 2
        if self.cold.size >= threshold:
            self.compact()

    def compact(self):
        live = sorted(self._index.values(), key=lambda i: i.position)
        entries = [self._materialize(item) for item in live]
        positions = self.cold.rewrite(entries)
        for item, position in zip(live, positions):
            item.position = position
        self._compacted_size = self.cold.size
        self.stats.compactions += 1
        self._write_index_file()
        logger.info(f'Store {self.path} compacted to {self.cold.size} bytes')

    @property
    def hot_bytes(self) -> int:
        return self._hot_bytes

    def status(self) -> Dict[str, int]:
        out = self.stats.as_dict()
        out.update(entries=len(self), hot_bytes=self._hot_bytes,
                   cold_bytes=self.cold.size)
        return out

    def __len__(self):
        return len(self._index)

    def __contains__(self, digest: bytes) -> bool:
        return digest in self._index

    def close(self):
        self._write_index_file()
        self.cold.close()
