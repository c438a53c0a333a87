"""
The AR message quintuplet (header, action, data, location, topology) and its
tagged binary encoding.
"""
import hashlib
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

from ..errors import ProtocolError
from ..overlay.geo import GeoPoint
from ..wire import Fields, Tag
from .profile import Profile, Term, TermKind

__all__ = [
    'ARMessage',
    'Action',
    'FunctionRef',
    'decode_profile',
    'encode_profile',
]


class Action(IntEnum):
    STORE = 1
    STATISTICS = 2
    STORE_FUNCTION = 3
    START_FUNCTION = 4
    STOP_FUNCTION = 5
    NOTIFY_INTEREST = 6
    NOTIFY_DATA = 7
    DELETE = 8

    @classmethod
    def parse(cls, text: str) -> 'Action':
        try:
            return cls[text.strip().upper().replace('-', '_')]
        except KeyError:
            raise ValueError(f'unknown action {text!r}')

    @property
    def label(self) -> str:
        return self.name.lower().replace('_', '-')

    @property
    def on_functions(self) -> bool:
        return self in (Action.STORE_FUNCTION, Action.START_FUNCTION,
                        Action.STOP_FUNCTION)


def encode_profile(profile: Profile) -> Fields:
    record = Fields()
    for term in profile.terms:
        record.put(Tag.TERM, Fields(
            kind=int(term.kind), attribute=term.attribute,
            value=term.value, upper=term.upper,
        ))
    return record


def decode_profile(record: Fields) -> Profile:
    terms = []
    for item in record.get_nested_all(Tag.TERM):
        try:
            kind = TermKind(item.get_int(Tag.KIND))
        except ValueError:
            raise ProtocolError('unknown term kind')
        terms.append(Term(
            kind,
            item.get_str(Tag.ATTRIBUTE) if item.has(Tag.ATTRIBUTE) else None,
            item.get_str(Tag.VALUE) if item.has(Tag.VALUE) else None,
            item.get_str(Tag.UPPER) if item.has(Tag.UPPER) else None,
        ))
    return Profile(tuple(terms))


@dataclass(frozen=True)
class FunctionRef:
    name: str
    blob: bytes = b''
    runtime_tag: str = 'callback'

    def __post_init__(self):
        if not self.name:
            raise ValueError('function name must not be empty')

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.blob).hexdigest()

    def to_fields(self) -> Fields:
        return Fields(name=self.name, blob=self.blob,
                      runtime=self.runtime_tag, digest=self.digest)

    @classmethod
    def from_fields(cls, record: Fields) -> 'FunctionRef':
        ref = cls(record.get_str(Tag.NAME), record.raw(Tag.BLOB) or b'',
                  record.get_str(Tag.RUNTIME))
        if record.has(Tag.DIGEST) and record.get_str(Tag.DIGEST) != ref.digest:
            raise ProtocolError(f'function {ref.name} failed digest check')
        return ref

    def to_bytes(self) -> bytes:
        return self.to_fields().to_bytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> 'FunctionRef':
        return cls.from_fields(Fields.from_bytes(raw))


@dataclass(frozen=True)
class ARMessage:
    profile: Profile
    action: Action
    data: bytes = b''
    credentials: bytes = b''
    location: Optional[GeoPoint] = None
    topology: Optional[FunctionRef] = None
    msg_id: int = 0

    @property
    def matching_profile(self) -> Profile:
        """The profile extended with location terms when a place is given."""
        if self.location is None:
            return self.profile
        return self.profile.with_location(self.location.lat,
                                          self.location.lon)

    def to_fields(self) -> Fields:
        return Fields(
            profile=encode_profile(self.profile),
            action=int(self.action),
            data=self.data,
            credentials=self.credentials or None,
            geo=self.location.to_bytes() if self.location else None,
            function=self.topology.to_fields() if self.topology else None,
            key=self.msg_id,
        )

    @classmethod
    def from_fields(cls, record: Fields) -> 'ARMessage':
        try:
            action = Action(record.get_int(Tag.ACTION))
        except ValueError:
            raise ProtocolError(
                f'unknown action byte {record.get_int(Tag.ACTION)}'
            )
        function = record.get_nested(Tag.FUNCTION)
        return cls(
            profile=decode_profile(record.get_nested(Tag.PROFILE) or Fields()),
            action=action,
            data=record.raw(Tag.DATA) or b'',
            credentials=record.raw(Tag.CREDENTIALS) or b'',
            location=(GeoPoint.from_bytes(record.raw(Tag.GEO))
                      if record.has(Tag.GEO) else None),
            topology=FunctionRef.from_fields(function) if function else None,
            msg_id=record.get_int(Tag.KEY),
        )

    def to_bytes(self) -> bytes:
        return self.to_fields().to_bytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> 'ARMessage':
        return cls.from_fields(Fields.from_bytes(raw))
