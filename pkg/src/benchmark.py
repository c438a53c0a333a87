"""
Queue append throughput: the mapped queue against a baseline that writes,
flushes and fsyncs every record in the same framing.
"""
import logging
import os
import tempfile
import time
from typing import List, Optional

from .constants import API_NAME
from .mmq import MappedQueue, frame_record

__all__ = ['fsync_append', 'mapped_append', 'run_benchmark']

logger = logging.getLogger(API_NAME)


def _payloads(count: int, size: int) -> List[bytes]:
    return [(f'{i:012d}'.encode() * (size // 12 + 1))[:size]
            for i in range(count)]


def mapped_append(path: str, payloads: List[bytes]) -> float:
    """Seconds to append ``payloads`` to a fresh mapped queue."""
    segment_size = max(64 * 1024 * 1024,
                       4 * max((len(p) for p in payloads), default=0))
    queue = MappedQueue(path, segment_size=segment_size,
                        max_record_size=segment_size // 2)
    try:
        started = time.perf_counter()
        for payload in payloads:
            queue.append(payload)
        queue.flush()
        return time.perf_counter() - started
    finally:
        queue.close()


def fsync_append(path: str, payloads: List[bytes]) -> float:
    """Seconds for write, flush and fsync per record."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, 'baseline.log'), 'ab') as f:
        started = time.perf_counter()
        for payload in payloads:
            f.write(frame_record(payload, int(time.time() * 1000)))
            f.flush()
            os.fsync(f.fileno())
        return time.perf_counter() - started


def run_benchmark(records: int = 20_000, size: int = 1024,
                  directory: Optional[str] = None) -> List[dict]:
    payloads = _payloads(records, size)
    rows = []
    with tempfile.TemporaryDirectory(prefix='rpmesh-bench-',
                                     dir=directory) as root:
        for name, fn in (('mapped', mapped_append),
                         ('fsync-per-record', fsync_append)):
            seconds = fn(os.path.join(root, name), payloads)
            rate = records / seconds if seconds else float('inf')
            rows.append({
                'method': name, 'records': records, 'size': size,
                'seconds': round(seconds, 4),
                'records_per_s': round(rate, 1),
                'mb_per_s': round(rate * size / 1e6, 2),
            })
            logger.info(f'{name}: {rate:.0f} records/s')
    mapped, baseline = rows
    speedup = mapped['records_per_s'] / baseline['records_per_s'] \
        if baseline['records_per_s'] else 0.0
    for row in rows:
        row['speedup'] = round(row['records_per_s']
                               / baseline['records_per_s'], 2) \
            if baseline['records_per_s'] else 0.0
    logger.info(f'Mapped queue is {speedup:.1f}x the fsync baseline')
    return rows
