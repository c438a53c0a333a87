"""
Disaster-response workflow: a drone producer and an analysis consumer meet
through rendezvous, the producer streams LIDAR summaries into the
consumer's queue and every record with ``RESULT >= 10`` starts the stored
``post_processing_func``.
"""
import json
import logging
import random
import tempfile
import time
from typing import Dict, List, Optional

from .ar.message import Action, ARMessage, FunctionRef
from .ar.profile import Profile
from .constants import API_NAME
from .overlay.geo import GeoPoint
from .rules import RuleEngine, parse_rules
from .simnet import SimConfig, Simulation

__all__ = [
    'CONSUMER_PROFILE',
    'DEMO_RULES',
    'FUNCTION_NAME',
    'PRODUCER_PROFILE',
    'run_remote_demo',
    'run_simulated_demo',
    'synthetic_records',
]

logger = logging.getLogger(API_NAME)

FUNCTION_NAME = 'post_processing_func'
PRODUCER_PROFILE = 'drone,lidar'
CONSUMER_PROFILE = 'drone,lidar,lat:40*,long:-74*'
PRODUCER_AT = GeoPoint(40.0583, -74.4056)
THRESHOLD = 10

DEMO_RULES = f"""\
name: post-process
priority: 1
when: IF(RESULT >= {THRESHOLD})
then: post start-function {FUNCTION_NAME}
"""


def synthetic_records(count: int, seed: int = 7) -> List[bytes]:
    rng = random.Random(seed)
    return [
        json.dumps({'SEQ': i, 'RESULT': rng.randint(0, 20),
                    'QUALITY': rng.choice(['low', 'high'])},
                   sort_keys=True).encode()
        for i in range(count)
    ]


def _expected(records: List[bytes]) -> int:
    return sum(1 for r in records if json.loads(r)['RESULT'] >= THRESHOLD)


def _report(records: int, expected: int, fired: int,
            started: Optional[int], **extra) -> dict:
    report = {'records': records, 'expected': expected, 'fired': fired,
              'started': started,
              'ok': extra.get('rendezvous', True) and fired == expected
              and started in (None, expected)}
    report.update(extra)
    return report


def run_simulated_demo(records: int = 200, seed: int = 7,
                       data_dir: Optional[str] = None) -> dict:
    """Runs the workflow on a five-node simulated deployment."""
    with tempfile.TemporaryDirectory(prefix='rpmesh-demo-') as tmp:
        return _simulated(records, seed, data_dir or tmp)


def _simulated(count: int, seed: int, data_dir: str) -> dict:
    calls: List[ARMessage] = []

    def post_processing(message: ARMessage) -> bytes:
        calls.append(message)
        return b'processed'

    sim = Simulation(SimConfig(seed=seed), data_dir,
                     callbacks={FUNCTION_NAME: post_processing})
    try:
        for i in range(3):
            sim.join_and_wait(f'rp{i}', 40.05 + 0.01 * i, -74.40)
        producer = sim.join_and_wait('producer', PRODUCER_AT.lat,
                                     PRODUCER_AT.lon)
        engine = RuleEngine(parse_rules(DEMO_RULES, '<demo>'))
        consumer = sim.join_and_wait('consumer', 40.06, -74.41, engine)

        sim.wait(sim.post('consumer', ARMessage(
            Profile.of(FUNCTION_NAME), Action.STORE_FUNCTION,
            topology=FunctionRef(FUNCTION_NAME),
        )))
        sim.wait(sim.post('producer', ARMessage(
            Profile.parse(PRODUCER_PROFILE), Action.NOTIFY_INTEREST,
            location=PRODUCER_AT,
        )))
        sim.wait(sim.post('consumer', ARMessage(
            Profile.parse(CONSUMER_PROFILE), Action.NOTIFY_DATA,
        )))
        met = sim.scheduler.run_until(
            lambda: any(n.kind == 'consumer'
                        for n in producer.rendezvous.notifications),
            sim.now + 10_000,
        )
        if not met:
            logger.error('Producer never heard of a consumer')
            return _report(count, 0, 0, 0, rendezvous=False)
        peer = next(n.peer for n in producer.rendezvous.notifications
                    if n.kind == 'consumer')

        payloads = synthetic_records(count, seed)
        outcome: Dict[str, object] = {}
        stream_msg = ARMessage(Profile.parse(PRODUCER_PROFILE),
                               Action.NOTIFY_DATA, location=PRODUCER_AT)
        producer.push(peer, stream_msg, payloads,
                      lambda r, e: outcome.update(result=r, error=e))
        sim.scheduler.run_until(lambda: bool(outcome), sim.now + 60_000)
        sim.run_for(3000)
        if outcome.get('error') is not None:
            logger.error(f'Stream failed: {outcome["error"]}')
        queue = consumer.queues.get(outcome['result'].stream) \
            if outcome.get('result') else None
        return _report(
            count, _expected(payloads), engine.stats['fired'], len(calls),
            rendezvous=True, peer=peer,
            queued=queue.head if queue is not None else 0,
            virtual_ms=sim.now,
        )
    finally:
        sim.close()


def run_remote_demo(producer, consumer, records: int = 200, seed: int = 7,
                    argv: Optional[List[str]] = None,
                    wait_s: float = 30.0) -> dict:
    """
    Same workflow against two running daemons through their client APIs.
    The consumer daemon must run with ``docs/demo.rules`` and allow the
    digest of the stored subprocess descriptor.
    """
    consumer.post('store-function', FUNCTION_NAME, function={
        'name': FUNCTION_NAME, 'runtime': 'subprocess',
        'argv': argv or ['sh', '-c', 'cat > /dev/null'],
    })
    producer.post('notify-interest', PRODUCER_PROFILE,
                  lat=PRODUCER_AT.lat, lon=PRODUCER_AT.lon)
    consumer.post('notify-data', CONSUMER_PROFILE)
    deadline = time.monotonic() + wait_s
    peer = None
    while peer is None and time.monotonic() < deadline:
        peer = next((n['peer'] for n in producer.notifications()
                     if n['kind'] == 'consumer'), None)
        if peer is None:
            time.sleep(0.2)
    if peer is None:
        return _report(records, 0, 0, 0, rendezvous=False)
    payloads = synthetic_records(records, seed)
    before = (consumer.status().get('rules') or {}).get('fired', 0)
    pushed = producer.push(peer, PRODUCER_PROFILE,
                           [p.decode() for p in payloads],
                           lat=PRODUCER_AT.lat, lon=PRODUCER_AT.lon)
    time.sleep(min(wait_s, 5.0))
    fired = (consumer.status().get('rules') or {}).get('fired', 0) - before
    expected = _expected(payloads)
    # functions run on whichever RP holds them; only the rule count is local
    return _report(records, expected, fired, None, rendezvous=True,
                   peer=peer, queued=pushed['head'])
