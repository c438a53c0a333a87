"""
Peer wire protocol.

Frame layout (big-endian)::

    magic "RPLS" | version u8 | constants digest 8B | type u8 |
    payload length u32 | payload

The payload is a run of tagged fields (tag u8, length u16, bytes). Values
longer than 65535 bytes are split; every chunk after the first repeats the
tag with the high bit set. Tags may repeat to carry lists.
"""
import struct
from collections import defaultdict
from enum import IntEnum
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

from .constants import WIRE_MAGIC, WIRE_VERSION
from .errors import IncompatibleNetwork, PayloadTooLarge, ProtocolError

__all__ = [
    'Fields',
    'Frame',
    'FrameDecoder',
    'FrameType',
    'HEADER',
    'Tag',
    'decode_fields',
    'encode_fields',
]

HEADER = struct.Struct('>4sB8sBI')
_FIELD = struct.Struct('>BH')
_CHUNK = 0xFFFF
_CONTINUATION = 0x80


class FrameType(IntEnum):
    JOIN = 1
    JOIN_ACK = 2
    PING = 3
    PONG = 4
    LOOKUP = 5
    LOOKUP_ACK = 6
    ELECT_PROBE = 7
    ELECT_REPLY = 8
    ELECT_WIN = 9
    SNAPSHOT = 10
    FORWARD = 11
    STORE = 12
    STORE_ACK = 13
    PUSH = 14
    PULL = 15
    DELIVER = 16
    DELIVER_ACK = 17
    FORWARD_ACK = 18
    NOTIFY = 19
    QUERY = 20
    QUERY_ACK = 21
    PUSH_ACK = 22
    PULL_ACK = 23


class Tag(IntEnum):
    SENDER = 1
    NODE_ID = 2
    OP = 3
    HOPS = 4
    GEO = 5
    REGION = 6
    MEMBER = 7
    TREE = 8
    VERSION = 9
    KEY = 10
    COUNT = 11
    CONTACT = 12
    MESSAGE = 13
    ENTRY = 14
    ERROR = 15
    FLAG = 16
    ROUND = 17
    DIRECTION = 18
    CANDIDATE = 19
    OFFSET = 20
    RECORD = 21
    STREAM = 22
    TTL = 23
    SALT = 24
    ISSUER = 25
    FAILED = 26
    STATUS = 27
    DEST = 28
    ORIGIN = 29
    TERM = 30
    KIND = 31
    ATTRIBUTE = 32
    VALUE = 33
    UPPER = 34
    PROFILE = 35
    ACTION = 36
    DATA = 37
    CREDENTIALS = 38
    FUNCTION = 39
    NAME = 40
    BLOB = 41
    RUNTIME = 42
    DIGEST = 43
    TIMESTAMP = 44
    PEER = 45
    LIMIT = 46
    RECEIPT = 47
    LEAF = 48
    EPOCH = 49
    REQUEST = 50


def encode_fields(fields: Iterable[Tuple[int, bytes]]) -> bytes:
    out = bytearray()
    for tag, value in fields:
        if not 0 < tag < _CONTINUATION:
            raise ProtocolError(f'tag {tag} out of range')
        view = memoryview(value)
        out += _FIELD.pack(tag, min(len(view), _CHUNK))
        out += view[:_CHUNK]
        pos = _CHUNK
        while pos < len(view):
            chunk = view[pos:pos + _CHUNK]
            out += _FIELD.pack(tag | _CONTINUATION, len(chunk))
            out += chunk
            pos += _CHUNK
    return bytes(out)


def decode_fields(payload: bytes) -> List[Tuple[int, bytes]]:
    fields: List[Tuple[int, bytearray]] = []
    pos = 0
    end = len(payload)
    while pos < end:
        if pos + _FIELD.size > end:
            raise ProtocolError('truncated field header')
        tag, length = _FIELD.unpack_from(payload, pos)
        pos += _FIELD.size
        if pos + length > end:
            raise ProtocolError(f'field {tag} overruns payload')
        value = payload[pos:pos + length]
        pos += length
        if tag & _CONTINUATION:
            base = tag & ~_CONTINUATION
            if not fields or fields[-1][0] != base:
                raise ProtocolError(f'orphan continuation for tag {base}')
            fields[-1][1].extend(value)
        else:
            fields.append((tag, bytearray(value)))
    return [(tag, bytes(value)) for tag, value in fields]


def _to_raw(value) -> bytes:
    if isinstance(value, bool):
        return struct.pack('>B', int(value))
    if isinstance(value, int):
        return value.to_bytes(max(8, -(-value.bit_length() // 8)), 'big')
    if isinstance(value, str):
        return value.encode('utf-8')
    if isinstance(value, float):
        return struct.pack('>d', value)
    if isinstance(value, Fields):
        return value.to_bytes()
    return bytes(value)


class Fields:
    """Tagged field container shared by frames and nested records."""

    def __init__(self, **values):
        self.fields: Dict[int, List[bytes]] = defaultdict(list)
        for name, value in values.items():
            if value is None:
                continue
            tag = Tag[name.upper()]
            items = value if isinstance(value, list) else [value]
            for item in items:
                self.put(tag, item)

    def put(self, tag: int, value) -> 'Fields':
        self.fields[int(tag)].append(_to_raw(value))
        return self

    def raw(self, tag: int) -> Optional[bytes]:
        values = self.fields.get(int(tag))
        return values[0] if values else None

    def get_all(self, tag: int) -> List[bytes]:
        return list(self.fields.get(int(tag), ()))

    def has(self, tag: int) -> bool:
        return bool(self.fields.get(int(tag)))

    def get_int(self, tag: int, default: int = 0) -> int:
        raw = self.raw(tag)
        return default if raw is None else int.from_bytes(raw, 'big')

    def get_str(self, tag: int, default: str = '') -> str:
        raw = self.raw(tag)
        return default if raw is None else raw.decode('utf-8')

    def get_float(self, tag: int, default: float = 0.0) -> float:
        raw = self.raw(tag)
        return default if raw is None else struct.unpack('>d', raw)[0]

    def get_nested(self, tag: int) -> Optional['Fields']:
        raw = self.raw(tag)
        return None if raw is None else Fields.from_bytes(raw)

    def get_nested_all(self, tag: int) -> List['Fields']:
        return [Fields.from_bytes(raw) for raw in self.get_all(tag)]

    def flag(self, tag: int) -> bool:
        return bool(self.get_int(tag))

    def ordered_fields(self) -> List[Tuple[int, bytes]]:
        return [
            (tag, value)
            for tag in sorted(self.fields)
            for value in self.fields[tag]
        ]

    def to_bytes(self) -> bytes:
        return encode_fields(self.ordered_fields())

    @classmethod
    def from_bytes(cls, data: bytes) -> 'Fields':
        record = cls()
        for tag, value in decode_fields(data):
            record.fields[tag].append(value)
        return record

    def _names(self) -> List[str]:
        names = []
        for tag in sorted(self.fields):
            try:
                names.append(Tag(tag).name.lower())
            except ValueError:
                names.append(str(tag))
        return names

    def __repr__(self):
        return f'Fields({self._names()})'


class Frame(Fields):
    def __init__(self, frame_type: FrameType, **values):
        self.type = FrameType(frame_type)
        super().__init__(**values)

    @property
    def sender(self) -> str:
        return self.get_str(Tag.SENDER)

    @property
    def op(self) -> int:
        return self.get_int(Tag.OP)

    @property
    def hops(self) -> int:
        return self.get_int(Tag.HOPS)

    def reply(self, frame_type: FrameType, **values) -> 'Frame':
        """Response frame correlated with this request."""
        values.setdefault('op', self.op)
        return Frame(frame_type, **values)

    def relayed(self, **values) -> 'Frame':
        """Copy of this frame with the given fields replaced."""
        clone = Frame(self.type)
        for tag, items in self.fields.items():
            clone.fields[tag] = list(items)
        for name, value in values.items():
            tag = int(Tag[name.upper()])
            clone.fields.pop(tag, None)
            if value is None:
                continue
            for item in value if isinstance(value, list) else [value]:
                clone.put(tag, item)
        return clone

    def encode(self, digest: bytes, max_bytes: Optional[int] = None) -> bytes:
        payload = self.to_bytes()
        if max_bytes is not None and len(payload) > max_bytes:
            raise PayloadTooLarge(len(payload), max_bytes)
        head = HEADER.pack(
            WIRE_MAGIC, WIRE_VERSION, digest, int(self.type), len(payload)
        )
        return head + payload

    @classmethod
    def decode(cls, data: bytes, digest: bytes) -> 'Frame':
        if len(data) < HEADER.size:
            raise ProtocolError('short frame')
        frame_type, length = _check_header(data[:HEADER.size], digest)
        payload = data[HEADER.size:]
        if len(payload) != length:
            raise ProtocolError('payload length mismatch')
        return _assemble(frame_type, payload)

    def __repr__(self):
        return f'Frame({self.type.name}, fields={self._names()})'


def _check_header(head: bytes, digest: bytes) -> Tuple[int, int]:
    magic, version, their_digest, frame_type, length = HEADER.unpack(head)
    if magic != WIRE_MAGIC:
        raise ProtocolError(f'bad magic {magic!r}')
    if version != WIRE_VERSION:
        raise IncompatibleNetwork(f'wire version {version} != {WIRE_VERSION}')
    if their_digest != digest:
        raise IncompatibleNetwork(
            f'constants digest {their_digest.hex()} != {digest.hex()}'
        )
    return frame_type, length


def _assemble(frame_type: int, payload: bytes) -> Frame:
    try:
        kind = FrameType(frame_type)
    except ValueError:
        raise ProtocolError(f'unknown frame type {frame_type}')
    frame = Frame(kind)
    for tag, value in decode_fields(payload):
        frame.fields[tag].append(value)
    return frame


class FrameDecoder:
    """Incremental decoder for a byte stream of frames."""

    def __init__(self, digest: bytes, max_bytes: int):
        self._digest = digest
        self._max_bytes = max_bytes
        self._buffer = bytearray()

    def feed(self, data: bytes) -> Iterator[Frame]:
        self._buffer.extend(data)
        while len(self._buffer) >= HEADER.size:
            frame_type, length = _check_header(
                bytes(self._buffer[:HEADER.size]), self._digest
            )
            if length > self._max_bytes:
                raise ProtocolError(
                    f'frame of {length} bytes exceeds {self._max_bytes}'
                )
            total = HEADER.size + length
            if len(self._buffer) < total:
                return
            payload = bytes(self._buffer[HEADER.size:total])
            del self._buffer[:total]
            yield _assemble(frame_type, payload)
