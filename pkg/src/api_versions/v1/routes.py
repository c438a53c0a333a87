"""
Routes for rpmesh API version 1: user mode of the local node.
"""
import asyncio
import binascii
import logging
import os
from typing import List

from fastapi import APIRouter, HTTPException, Query, status

from . import models, version_constants
from .gateway import NodeUnavailable, gateway
from ...ar.message import Action, ARMessage, FunctionRef
from ...ar.profile import Profile
from ...errors import (
    ConfigError,
    CursorRegression,
    InvalidKeyword,
    LookupFailed,
    OffsetTrimmed,
    ParseError,
    PayloadTooLarge,
    PostFailed,
    ProfileTooWide,
    ProtocolError,
    StreamBroken,
)
from ...executor import SubprocessExecutor, read_executor_log
from ...overlay.geo import GeoPoint
from ...rules import DataTuple

main_router = APIRouter()

logger = logging.getLogger(version_constants.API_NAME)


def http_error(error: BaseException) -> HTTPException:
    if isinstance(error, NodeUnavailable):
        code = status.HTTP_503_SERVICE_UNAVAILABLE
    elif isinstance(error, PayloadTooLarge):
        code = status.HTTP_413_REQUEST_ENTITY_TOO_LARGE
    elif isinstance(error, (InvalidKeyword, ProfileTooWide, ParseError,
                            ConfigError, CursorRegression, ValueError,
                            binascii.Error)):
        code = status.HTTP_400_BAD_REQUEST
    elif isinstance(error, OffsetTrimmed):
        code = status.HTTP_410_GONE
    elif isinstance(error, (PostFailed, LookupFailed)):
        code = status.HTTP_404_NOT_FOUND
    elif isinstance(error, (StreamBroken, ProtocolError,
                            asyncio.TimeoutError)):
        code = status.HTTP_502_BAD_GATEWAY
    else:
        logger.error(f'Unexpected API failure: {error}', exc_info=error)
        code = status.HTTP_500_INTERNAL_SERVER_ERROR
    return HTTPException(status_code=code,
                         detail=str(error) or type(error).__name__)


def _location(lat, lon):
    if lat is None and lon is None:
        return None
    if lat is None or lon is None:
        raise ValueError('lat and lon must be given together')
    return GeoPoint(lat, lon)


def _function(spec: models.FunctionSpec) -> FunctionRef:
    if spec.argv is not None:
        blob = SubprocessExecutor.descriptor(spec.argv)
    else:
        blob = spec.blob.encode('utf-8')
    return FunctionRef(spec.name, blob, spec.runtime)


def _message(body: models.MessageRequest) -> ARMessage:
    action = Action.parse(body.action)
    if action is Action.STORE_FUNCTION and body.function is None:
        raise ValueError('store-function needs a function')
    return ARMessage(
        profile=Profile.parse(body.profile),
        action=action,
        data=models.decode_payload(body.data, body.encoding),
        credentials=body.credentials.encode('utf-8'),
        location=_location(body.lat, body.lon),
        topology=_function(body.function) if body.function else None,
    )


def _stream_message(body) -> ARMessage:
    return ARMessage(Profile.parse(body.profile), Action.NOTIFY_DATA,
                     location=_location(body.lat, body.lon))


@main_router.get('', include_in_schema=False)
async def root():
    return {'message': f'{version_constants.API_NAME} API '
                       f'v{version_constants.API_VERSION} active'}


@main_router.get('/status')
async def node_status():
    """Local node status: overlay, store, queues, rules and executors."""
    try:
        return gateway.require(joined=False).status()
    except NodeUnavailable as e:
        raise http_error(e)


@main_router.post('/post', response_model=models.ReceiptResponse,
                  responses={404: {'model': models.Error},
                             413: {'model': models.Error}})
async def post_message(body: models.MessageRequest):
    """
    Posts an associative-rendezvous message to every responsible RP

    A STORE reaching fewer replicas than the quorum is flagged `degraded`.
    """
    try:
        msg = _message(body)
        receipt = await gateway.call(lambda node, done: node.post(msg, done))
    except Exception as e:
        raise http_error(e)
    return models.ReceiptResponse.model_validate(receipt)


@main_router.post('/query', response_model=models.QueryResponse)
async def query_entries(body: models.QueryRequest):
    """Stored entries matching the profile, merged across replicas"""
    try:
        profile = Profile.parse(body.profile)
        location = _location(body.lat, body.lon)
        entries = await gateway.call(
            lambda node, done: node.query(profile, done, location)
        )
    except Exception as e:
        raise http_error(e)
    return models.QueryResponse(
        count=len(entries),
        entries=[models.EntryResponse.of(e, body.encoding) for e in entries],
    )


@main_router.post('/push', response_model=models.PushResponse)
async def push_records(body: models.PushRequest):
    """Streams records into a peer's collection queue for the profile"""
    try:
        msg = _stream_message(body)
        records = [models.decode_payload(r, body.encoding)
                   for r in body.records]
        result = await gateway.call(
            lambda node, done: node.push(body.peer, msg, records, done,
                                         body.start)
        )
    except StreamBroken as e:
        raise HTTPException(
            status_code=status.HTTP_502_BAD_GATEWAY,
            detail=f'{e}; resume from {e.resume_from}',
        )
    except Exception as e:
        raise http_error(e)
    return models.PushResponse.model_validate(result)


@main_router.post('/pull', response_model=models.PullResponse)
async def pull_records(body: models.PullRequest):
    limit = min(body.limit, version_constants.MAX_PULL_LIMIT)
    try:
        msg = _stream_message(body)
        result = await gateway.call(
            lambda node, done: node.pull(body.peer, msg, body.consumer, done,
                                         body.offset, limit)
        )
    except Exception as e:
        raise http_error(e)
    return models.PullResponse(
        stream=result['stream'], offset=result['offset'],
        next=result['next'],
        records=[models.encode_payload(r, body.encoding)
                 for r in result['records']],
    )


@main_router.post('/tuples', response_model=models.TupleResponse)
async def evaluate_tuple(body: models.TupleRequest):
    """Runs one rule cycle for the tuple on this node"""
    try:
        node = gateway.require(joined=False)
    except NodeUnavailable as e:
        raise http_error(e)
    if node.rules is None:
        raise HTTPException(status_code=404, detail='No rule file loaded')
    try:
        item = DataTuple(body.fields, ingested_at=node.runtime.now())
    except ValueError as e:
        raise http_error(e)
    fired = node.rules.evaluate(item, node.runtime.now())
    return models.TupleResponse(fired=fired.name if fired else None,
                                stats=dict(node.rules.stats))


@main_router.post('/rules/reload', response_model=models.RulesResponse)
async def reload_rules():
    try:
        node = gateway.require(joined=False)
    except NodeUnavailable as e:
        raise http_error(e)
    if node.rules is None:
        raise HTTPException(status_code=404, detail='No rule file loaded')
    try:
        count = node.rules.reload()
    except Exception as e:
        raise http_error(e)
    return models.RulesResponse(path=node.rules.path, rules=count)


@main_router.get('/notifications',
                 response_model=List[models.NotificationResponse])
async def list_notifications(clear: bool = Query(False)):
    """Rendezvous notifications received by this node, oldest first"""
    try:
        node = gateway.require(joined=False)
    except NodeUnavailable as e:
        raise http_error(e)
    notices = list(node.rendezvous.notifications)
    if clear:
        node.rendezvous.notifications.clear()
    return [models.NotificationResponse.of(n) for n in notices]


@main_router.get('/functions/log', response_model=models.FunctionLogResponse)
async def function_log():
    try:
        node = gateway.require(joined=False)
    except NodeUnavailable as e:
        raise http_error(e)
    path = os.path.join(node.config.data_dir, 'executor.log')
    return models.FunctionLogResponse(
        log=read_executor_log(path),
        results=list(node.rendezvous.function_results),
    )
