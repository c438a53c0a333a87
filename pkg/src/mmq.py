"""
Data-collection queue over memory-mapped, fixed-size, append-only segments.

Segment layout: a 16-byte header (``RPMQ``, format byte, base offset u64)
followed by records of u32 total length (0 = no record), u32 crc32 of the
payload, u64 timestamp in ms and the payload. The length is written last,
so a record cut short by a crash reads as absent or fails its checksum.

Records survive a process crash through the page cache; ``sync_interval_ms``
adds periodic ``msync`` for stronger durability. Delivery is at-least-once:
consumers resume from their last committed offset.
"""
import bisect
import fcntl
import logging
import mmap
import os
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from typing import Dict, List, Optional

from .constants import API_NAME
from .errors import (
    AppendFailed,
    CursorRegression,
    OffsetTrimmed,
    PayloadTooLarge,
    QueueCorrupt,
    QueueLocked,
)

__all__ = [
    'CollectionQueues',
    'MappedQueue',
    'QueueRecord',
    'RECORD_HEADER',
    'SEGMENT_HEADER',
    'Segment',
    'frame_record',
    'segment_name',
]

logger = logging.getLogger(API_NAME)

SEGMENT_MAGIC = b'RPMQ'
SEGMENT_FORMAT = 1
SEGMENT_HEADER = struct.Struct('>4sB3xQ')
RECORD_HEADER = struct.Struct('>IIQ')
_LENGTH = struct.Struct('>I')
_CHECK = struct.Struct('>IQ')
CURSOR_FILE = 'cursors.tsv'
LOCK_FILE = 'queue.lock'


@dataclass(frozen=True)
class QueueRecord:
    offset: int
    timestamp: int
    crc: int
    payload: bytes


def frame_record(payload: bytes, timestamp: int) -> bytes:
    """One record in its on-disk framing."""
    return RECORD_HEADER.pack(RECORD_HEADER.size + len(payload),
                              zlib.crc32(payload), timestamp) + payload


def segment_name(base_offset: int) -> str:
    return f'segment-{base_offset:020d}.log'


class Segment:
    def __init__(self, path: str, base_offset: int, size: int,
                 create: bool = False):
        self.path = path
        self.base_offset = base_offset
        fd = os.open(path, os.O_RDWR | os.O_CREAT)
        try:
            actual = os.fstat(fd).st_size
            if create:
                _allocate(fd, size, path)
            elif actual < SEGMENT_HEADER.size:
                raise QueueCorrupt(f'segment {path} has no header')
            elif actual < size:
                # a tail cut short by the filesystem reads back as zeros
                os.ftruncate(fd, size)
            self.size = max(size, actual)
            self.mm = mmap.mmap(fd, self.size)
        finally:
            os.close(fd)
        if create:
            SEGMENT_HEADER.pack_into(self.mm, 0, SEGMENT_MAGIC,
                                     SEGMENT_FORMAT, base_offset)
        else:
            self._check_header()
        self.positions: Optional[List[int]] = None
        self.write_cursor = SEGMENT_HEADER.size
        if create:
            self.positions = []

    def __repr__(self):
        return (f'Segment(base_offset={self.base_offset}, '
                f'records={self.count}, write_cursor={self.write_cursor})')

    def _check_header(self):
        magic, fmt, base = SEGMENT_HEADER.unpack_from(self.mm, 0)
        if magic != SEGMENT_MAGIC or fmt != SEGMENT_FORMAT \
                or base != self.base_offset:
            raise QueueCorrupt(f'unreadable segment header in {self.path}')

    @property
    def count(self) -> int:
        return len(self.positions) if self.positions is not None else -1

    def scan(self, repair: bool) -> List[int]:
        """
        Indexes the records. With ``repair`` a bad record ends the segment
        and everything after the last good record is zeroed; without it a
        bad record is corruption.
        """
        positions = []
        pos = SEGMENT_HEADER.size
        while pos + RECORD_HEADER.size <= self.size:
            length, crc, _ = RECORD_HEADER.unpack_from(self.mm, pos)
            if length == 0:
                break
            end = pos + length
            valid = (length >= RECORD_HEADER.size and end <= self.size and
                     zlib.crc32(self.mm[pos + RECORD_HEADER.size:end]) == crc)
            if not valid:
                if not repair:
                    raise QueueCorrupt(
                        f'record at byte {pos} of {self.path} fails its '
                        f'checksum'
                    )
                stop = min(max(end, pos + RECORD_HEADER.size), self.size)
                self.mm[pos:stop] = bytes(stop - pos)
                logger.warning(
                    f'Torn record at byte {pos} of {self.path} truncated'
                )
                break
            positions.append(pos)
            pos = end
        if repair and pos < self.size and self.mm[pos:self.size].strip(b'\0'):
            self.mm[pos:self.size] = bytes(self.size - pos)
            self.mm.flush()
            logger.warning(
                f'Stray bytes after byte {pos} of {self.path} zeroed'
            )
        self.positions = positions
        self.write_cursor = pos
        return positions

    def fits(self, payload_size: int) -> bool:
        return (self.write_cursor + RECORD_HEADER.size + payload_size
                <= self.size)

    def append(self, payload: bytes, timestamp: int) -> None:
        pos = self.write_cursor
        start = pos + RECORD_HEADER.size
        self.mm[start:start + len(payload)] = payload
        _CHECK.pack_into(self.mm, pos + _LENGTH.size, zlib.crc32(payload),
                         timestamp)
        _LENGTH.pack_into(self.mm, pos, RECORD_HEADER.size + len(payload))
        self.positions.append(pos)
        self.write_cursor = start + len(payload)

    def record(self, index: int) -> QueueRecord:
        pos = self.positions[index]
        length, crc, timestamp = RECORD_HEADER.unpack_from(self.mm, pos)
        payload = bytes(self.mm[pos + RECORD_HEADER.size:pos + length])
        if zlib.crc32(payload) != crc:
            raise QueueCorrupt(
                f'record {self.base_offset + index} in {self.path} fails its '
                f'checksum'
            )
        return QueueRecord(self.base_offset + index, timestamp, crc, payload)

    def flush(self):
        self.mm.flush()

    def close(self):
        if not self.mm.closed:
            self.mm.close()


def _allocate(fd: int, size: int, path: str):
    try:
        if hasattr(os, 'posix_fallocate'):
            os.posix_fallocate(fd, 0, size)
        else:
            os.ftruncate(fd, size)
    except OSError as e:
        raise AppendFailed(f'cannot allocate segment {path}: {e}')


class MappedQueue:
    """One writer, any number of readers, per queue directory."""

    def __init__(self, path: str, segment_size: int = 64 * 1024 * 1024,
                 max_record_size: int = 16 * 1024 * 1024,
                 retain_segments: int = 0, sync_interval_ms: int = 0):
        self.path = path
        self.segment_size = segment_size
        self.max_record_size = max_record_size
        self.retain_segments = retain_segments
        self.sync_interval_ms = sync_interval_ms
        self._lock = threading.RLock()
        self._segments: List[Segment] = []
        self._cursors: Dict[str, int] = {}
        self._head = 0
        self._last_sync = time.monotonic()
        os.makedirs(path, exist_ok=True)
        self._lock_fd = self._take_lock()
        self.recover()

    def __repr__(self):
        return f'MappedQueue(path={self.path!r}, head={self._head})'

    def _take_lock(self) -> int:
        fd = os.open(os.path.join(self.path, LOCK_FILE),
                     os.O_RDWR | os.O_CREAT)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            os.close(fd)
            raise QueueLocked(f'queue {self.path} has another writer')
        return fd

    @property
    def head(self) -> int:
        """Offset the next append receives."""
        return self._head

    @property
    def tail(self) -> int:
        """Oldest readable offset."""
        return self._segments[0].base_offset if self._segments else 0

    @property
    def cursors(self) -> Dict[str, int]:
        return dict(self._cursors)

    def recover(self) -> int:
        with self._lock:
            for segment in self._segments:
                segment.close()
            self._segments = []
            names = sorted(
                name for name in os.listdir(self.path)
                if name.startswith('segment-') and name.endswith('.log')
            )
            for name in names:
                try:
                    base = int(name[len('segment-'):-len('.log')])
                except ValueError:
                    raise QueueCorrupt(f'unexpected segment name {name}')
                self._segments.append(Segment(
                    os.path.join(self.path, name), base, self.segment_size
                ))
            if self._segments:
                last = self._segments[-1]
                last.scan(repair=True)
                self._head = last.base_offset + last.count
            else:
                self._head = 0
            self._load_cursors()
            if self._head:
                logger.info(f'Queue {self.path} recovered, head {self._head}')
            return self._head

    def _load_cursors(self):
        self._cursors = {}
        path = os.path.join(self.path, CURSOR_FILE)
        if not os.path.exists(path):
            return
        with open(path) as f:
            for line in f:
                consumer, _, offset = line.rstrip('\n').partition('\t')
                if consumer and offset.isdigit():
                    self._cursors[consumer] = min(int(offset), self._head)

    def _save_cursors(self):
        path = os.path.join(self.path, CURSOR_FILE)
        tmp = path + '.tmp'
        with open(tmp, 'w') as f:
            for consumer in sorted(self._cursors):
                f.write(f'{consumer}\t{self._cursors[consumer]}\n')
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)

    def _roll(self, payload_size: int) -> Segment:
        size = max(self.segment_size,
                   SEGMENT_HEADER.size + RECORD_HEADER.size + payload_size)
        if self._segments:
            last = self._segments[-1]
            if last.count == 0:
                self._segments.pop()
                last.close()
                os.remove(last.path)
            else:
                last.flush()
        segment = Segment(
            os.path.join(self.path, segment_name(self._head)),
            self._head, size, create=True,
        )
        self._segments.append(segment)
        self._apply_retention()
        return segment

    def _apply_retention(self):
        if not self.retain_segments:
            return
        while len(self._segments) > self.retain_segments:
            end = self._segments[1].base_offset
            if self._cursors and min(self._cursors.values()) < end:
                break
            oldest = self._segments.pop(0)
            oldest.close()
            os.remove(oldest.path)
            logger.info(f'Queue {self.path} retired {oldest.path}')

    def append(self, payload: bytes, timestamp: Optional[int] = None) -> int:
        if len(payload) > self.max_record_size:
            raise PayloadTooLarge(len(payload), self.max_record_size)
        if timestamp is None:
            timestamp = int(time.time() * 1000)
        with self._lock:
            segment = self._segments[-1] if self._segments else None
            if segment is None or not segment.fits(len(payload)):
                segment = self._roll(len(payload))
            segment.append(payload, timestamp)
            offset = self._head
            self._head += 1
            self._maybe_sync(segment)
            return offset

    def _maybe_sync(self, segment: Segment):
        if self.sync_interval_ms <= 0:
            return
        now = time.monotonic()
        if (now - self._last_sync) * 1000 >= self.sync_interval_ms:
            segment.flush()
            self._last_sync = now

    def _segment_for(self, offset: int) -> int:
        bases = [s.base_offset for s in self._segments]
        return bisect.bisect_right(bases, offset) - 1

    def _positions(self, index: int) -> List[int]:
        segment = self._segments[index]
        if segment.positions is None:
            segment.scan(repair=False)
            expected = self._segments[index + 1].base_offset \
                - segment.base_offset
            if segment.count != expected:
                raise QueueCorrupt(
                    f'{segment.path} holds {segment.count} records, '
                    f'expected {expected}'
                )
        return segment.positions

    def read(self, from_offset: int,
             max_records: Optional[int] = None) -> List[QueueRecord]:
        with self._lock:
            head = self._head
            if from_offset >= head:
                return []
            if from_offset < self.tail:
                raise OffsetTrimmed(
                    f'offset {from_offset} is below the retained tail '
                    f'{self.tail}'
                )
            limit = head - from_offset if max_records is None \
                else min(max_records, head - from_offset)
            out: List[QueueRecord] = []
            index = self._segment_for(from_offset)
            offset = from_offset
            while len(out) < limit:
                segment = self._segments[index]
                positions = self._positions(index)
                local = offset - segment.base_offset
                while local < len(positions) and len(out) < limit:
                    out.append(segment.record(local))
                    local += 1
                offset = segment.base_offset + local
                index += 1
            return out

    def commit(self, consumer_id: str, offset: int) -> None:
        if not consumer_id or '\t' in consumer_id or '\n' in consumer_id:
            raise ValueError(f'bad consumer id {consumer_id!r}')
        with self._lock:
            if offset > self._head:
                raise ValueError(
                    f'offset {offset} is beyond the head {self._head}'
                )
            current = self._cursors.get(consumer_id, 0)
            if offset < current:
                raise CursorRegression(
                    f'{consumer_id} already committed {current}'
                )
            self._cursors[consumer_id] = offset
            self._save_cursors()

    def committed(self, consumer_id: str) -> int:
        return self._cursors.get(consumer_id, 0)

    def flush(self):
        with self._lock:
            for segment in self._segments[-1:]:
                segment.flush()

    def close(self):
        with self._lock:
            for segment in self._segments:
                segment.close()
            self._segments = []
            if self._lock_fd is not None:
                fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
                os.close(self._lock_fd)
                self._lock_fd = None


class CollectionQueues:
    """The node's named collection queues, opened on first use."""

    def __init__(self, root: str, **options):
        self.root = root
        self.options = options
        self._queues: Dict[str, MappedQueue] = {}
        os.makedirs(root, exist_ok=True)

    def get(self, name: str) -> MappedQueue:
        queue = self._queues.get(name)
        if queue is None:
            if not name or '/' in name or name.startswith('.'):
                raise ValueError(f'bad queue name {name!r}')
            queue = MappedQueue(os.path.join(self.root, name),
                                **self.options)
            self._queues[name] = queue
        return queue

    def names(self) -> List[str]:
        on_disk = {n for n in os.listdir(self.root)
                   if os.path.isdir(os.path.join(self.root, n))}
        return sorted(on_disk | set(self._queues))

    def status(self) -> Dict[str, int]:
        return {name: queue.head for name, queue in self._queues.items()}

    def flush(self):
        for queue in self._queues.values():
            queue.flush()

    def close(self):
        for queue in self._queues.values():
            queue.close()
        self._queues.clear()
