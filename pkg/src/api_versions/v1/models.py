"""
Pydantic models for the rpmesh client API.
"""
import base64
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from ...ar.actions import Notification
from ...store import StoredEntry

ENCODING_PATTERN = '^(utf-8|base64)$'


def decode_payload(text: str, encoding: str) -> bytes:
    if encoding == 'base64':
        return base64.b64decode(text, validate=True)
    return text.encode('utf-8')


def encode_payload(raw: bytes, encoding: str) -> str:
    if encoding == 'base64':
        return base64.b64encode(raw).decode('ascii')
    return raw.decode('utf-8', 'replace')


class Error(BaseModel):
    detail: str


class FunctionSpec(BaseModel):
    name: str = Field(..., min_length=1, max_length=255)
    runtime: str = Field('callback', pattern='^(callback|subprocess)$')
    blob: str = Field('', description='Function body, e.g. a descriptor')
    argv: Optional[List[str]] = Field(
        None, description='Builds a subprocess descriptor when given'
    )


class MessageRequest(BaseModel):
    action: str = Field(..., examples=['notify-interest'])
    profile: str = Field(..., examples=['drone,lidar'])
    data: str = ''
    encoding: str = Field('utf-8', pattern=ENCODING_PATTERN)
    credentials: str = ''
    lat: Optional[float] = Field(None, ge=-90, le=90)
    lon: Optional[float] = Field(None, ge=-180, le=180)
    function: Optional[FunctionSpec] = None


class ReceiptResponse(BaseModel):
    reached: int
    targets: List[str] = []
    hops: int = 0
    master_hops: int = 0
    degraded: bool = False
    results: List[Dict[str, Any]] = []
    errors: List[str] = []

    model_config = ConfigDict(from_attributes=True)


class QueryRequest(BaseModel):
    profile: str
    lat: Optional[float] = Field(None, ge=-90, le=90)
    lon: Optional[float] = Field(None, ge=-180, le=180)
    encoding: str = Field('utf-8', pattern=ENCODING_PATTERN)


class EntryResponse(BaseModel):
    profile: str
    sfc_index: int
    data: str
    digest: str
    stored_at: int
    origin: str

    @classmethod
    def of(cls, entry: StoredEntry, encoding: str) -> 'EntryResponse':
        return cls(
            profile=str(entry.key_profile),
            sfc_index=entry.sfc_index,
            data=encode_payload(entry.data, encoding),
            digest=entry.digest.hex(),
            stored_at=entry.stored_at,
            origin=f'{entry.origin:040x}',
        )


class QueryResponse(BaseModel):
    count: int
    entries: List[EntryResponse]


class PushRequest(BaseModel):
    peer: str = Field(..., description='Endpoint from a rendezvous notice')
    profile: str
    records: List[str] = Field(..., min_length=1)
    encoding: str = Field('utf-8', pattern=ENCODING_PATTERN)
    start: int = Field(0, ge=0)
    lat: Optional[float] = Field(None, ge=-90, le=90)
    lon: Optional[float] = Field(None, ge=-180, le=180)


class PushResponse(BaseModel):
    stream: str
    acked: int
    head: int

    model_config = ConfigDict(from_attributes=True)


class PullRequest(BaseModel):
    peer: str
    profile: str
    consumer: str = Field(..., min_length=1)
    offset: Optional[int] = Field(None, ge=0)
    limit: int = Field(100, ge=1)
    encoding: str = Field('utf-8', pattern=ENCODING_PATTERN)
    lat: Optional[float] = Field(None, ge=-90, le=90)
    lon: Optional[float] = Field(None, ge=-180, le=180)


class PullResponse(BaseModel):
    stream: str
    offset: int
    next: int
    records: List[str]


class TupleRequest(BaseModel):
    fields: Dict[str, Union[bool, int, float, str]]


class TupleResponse(BaseModel):
    fired: Optional[str] = None
    stats: Dict[str, int]


class RulesResponse(BaseModel):
    path: Optional[str] = None
    rules: int


class NotificationResponse(BaseModel):
    endpoint: str
    kind: str
    profile: str
    peer: str = ''
    data: str = ''

    @classmethod
    def of(cls, notice: Notification) -> 'NotificationResponse':
        return cls(endpoint=notice.endpoint, kind=notice.kind,
                   profile=str(notice.profile), peer=notice.peer,
                   data=encode_payload(notice.data, 'utf-8'))


class FunctionLogResponse(BaseModel):
    log: List[Dict[str, Any]]
    results: List[Dict[str, Any]]
