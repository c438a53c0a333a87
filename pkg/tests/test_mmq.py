import os
import random

import pytest

from src.errors import (
    CursorRegression,
    OffsetTrimmed,
    PayloadTooLarge,
    QueueCorrupt,
    QueueLocked,
)
from src.mmq import (
    RECORD_HEADER,
    SEGMENT_HEADER,
    CollectionQueues,
    MappedQueue,
    segment_name,
)

SEGMENT = 4096


def open_queue(path, **kwargs):
    kwargs.setdefault('segment_size', SEGMENT)
    return MappedQueue(str(path), **kwargs)


def test_dense_offsets_and_fifo_read(tmp_path):
    queue = open_queue(tmp_path)
    assert [queue.append(p) for p in (b'a', b'b', b'c')] == [0, 1, 2]
    records = queue.read(0)
    assert [r.payload for r in records] == [b'a', b'b', b'c']
    assert [r.offset for r in records] == [0, 1, 2]
    assert queue.read(3) == []
    assert [r.payload for r in queue.read(1, 1)] == [b'b']


def test_empty_directory_has_head_zero(tmp_path):
    queue = open_queue(tmp_path)
    assert queue.head == 0
    assert queue.read(0) == []


def test_rollover_lands_at_new_segment(tmp_path):
    queue = open_queue(tmp_path)
    payload = bytes(100)
    per_segment = (SEGMENT - SEGMENT_HEADER.size) // \
        (RECORD_HEADER.size + len(payload))
    for _ in range(per_segment + 1):
        queue.append(payload)
    assert os.path.exists(tmp_path / segment_name(0))
    assert os.path.exists(tmp_path / segment_name(per_segment))
    records = queue.read(per_segment - 2)
    assert [r.offset for r in records] == [per_segment - 2, per_segment - 1,
                                           per_segment]


def test_record_larger_than_segment(tmp_path):
    queue = open_queue(tmp_path, max_record_size=3 * SEGMENT)
    queue.append(b'x')
    big = os.urandom(2 * SEGMENT)
    assert queue.append(big) == 1
    assert queue.append(b'y') == 2
    assert queue.read(1, 1)[0].payload == big
    queue.close()
    reopened = open_queue(tmp_path)
    assert [r.payload for r in reopened.read(0)] == [b'x', big, b'y']


def test_payload_cap(tmp_path):
    queue = open_queue(tmp_path, max_record_size=16)
    with pytest.raises(PayloadTooLarge):
        queue.append(bytes(17))


def test_clean_restart_keeps_head(tmp_path):
    queue = open_queue(tmp_path)
    for i in range(100):
        queue.append(str(i).encode())
    queue.close()
    reopened = open_queue(tmp_path)
    assert reopened.head == 100
    assert reopened.read(99)[0].payload == b'99'


def test_single_writer_lock(tmp_path):
    queue = open_queue(tmp_path)
    with pytest.raises(QueueLocked):
        open_queue(tmp_path)
    queue.close()
    open_queue(tmp_path).close()


def test_torn_tail_truncated_on_recovery(tmp_path):
    queue = open_queue(tmp_path)
    for i in range(3):
        queue.append(b'record-%d' % i)
    queue.close()
    path = tmp_path / segment_name(0)
    record = RECORD_HEADER.size + len(b'record-0')
    cut = SEGMENT_HEADER.size + 2 * record + RECORD_HEADER.size + 3
    os.truncate(path, cut)
    reopened = open_queue(tmp_path)
    assert reopened.head == 2
    assert reopened.append(b'again') == 2
    assert [r.payload for r in reopened.read(0)] == \
        [b'record-0', b'record-1', b'again']


def test_payload_without_length_word_is_cleared(tmp_path):
    queue = open_queue(tmp_path)
    for i in range(3):
        queue.append(b'record-%d' % i)
    queue.close()
    record = RECORD_HEADER.size + len(b'record-0')
    stray = SEGMENT_HEADER.size + 3 * record + RECORD_HEADER.size
    with open(tmp_path / segment_name(0), 'r+b') as f:
        f.seek(stray)
        f.write(b'A' * 2000)

    reopened = open_queue(tmp_path)
    assert reopened.head == 3
    short = [b's%d' % i for i in range(4)]
    for payload in short:
        reopened.append(payload)
    reopened.append(b'B' * 3950)
    assert os.path.exists(tmp_path / segment_name(7))
    reopened.close()

    payloads = [r.payload for r in open_queue(tmp_path).read(0)]
    assert payloads == ([b'record-0', b'record-1', b'record-2'] + short +
                        [b'B' * 3950])


def test_randomized_kill_points(tmp_path):
    rng = random.Random(11)
    size = 40
    record = RECORD_HEADER.size + size
    for run in range(100):
        path = tmp_path / f'run{run}'
        queue = open_queue(path)
        payloads = [bytes(rng.randint(1, 255) for _ in range(size))
                    for _ in range(rng.randint(1, 30))]
        for payload in payloads:
            queue.append(payload)
        queue.close()
        end = SEGMENT_HEADER.size + len(payloads) * record
        cut = rng.randint(SEGMENT_HEADER.size, end)
        os.truncate(path / segment_name(0), cut)
        reopened = open_queue(path)
        survivors = (cut - SEGMENT_HEADER.size) // record
        assert reopened.head == survivors
        records = reopened.read(0)
        assert [r.payload for r in records] == payloads[:survivors]
        reopened.close()


def test_corrupt_sealed_segment_is_surfaced(tmp_path):
    queue = open_queue(tmp_path)
    payload = b'z' * 200
    while queue.head < 40:
        queue.append(payload)
    queue.close()
    path = tmp_path / segment_name(0)
    with open(path, 'r+b') as f:
        f.seek(SEGMENT_HEADER.size + RECORD_HEADER.size + 5)
        f.write(b'!')
    reopened = open_queue(tmp_path)
    with pytest.raises(QueueCorrupt):
        reopened.read(0)


def test_bad_segment_header(tmp_path):
    queue = open_queue(tmp_path)
    queue.append(b'a')
    queue.close()
    with open(tmp_path / segment_name(0), 'r+b') as f:
        f.write(b'XXXX')
    with pytest.raises(QueueCorrupt):
        open_queue(tmp_path)


def test_commit_survives_restart(tmp_path):
    queue = open_queue(tmp_path)
    for i in range(60):
        queue.append(b'%d' % i)
    queue.commit('consumer', 50)
    queue.close()
    reopened = open_queue(tmp_path)
    start = reopened.committed('consumer')
    assert start == 50
    assert reopened.read(start)[0].payload == b'50'
    assert reopened.committed('nobody') == 0


def test_cursors_are_independent_and_monotone(tmp_path):
    queue = open_queue(tmp_path)
    for _ in range(10):
        queue.append(b'.')
    queue.commit('a', 3)
    queue.commit('b', 7)
    assert queue.cursors == {'a': 3, 'b': 7}
    with pytest.raises(CursorRegression):
        queue.commit('b', 2)
    with pytest.raises(ValueError):
        queue.commit('a', 11)


def test_retention_waits_for_cursors(tmp_path):
    queue = open_queue(tmp_path, retain_segments=2)
    queue.commit('slow', 0)
    payload = bytes(1000)
    for _ in range(20):
        queue.append(payload)
    assert queue.tail == 0
    queue.commit('slow', 20)
    queue.append(payload)
    assert queue.tail > 0
    with pytest.raises(OffsetTrimmed):
        queue.read(0)


def test_collection_queues(tmp_path):
    queues = CollectionQueues(str(tmp_path), segment_size=SEGMENT)
    queues.get('stream-a').append(b'1')
    queues.get('stream-b').append(b'2')
    queues.get('stream-b').append(b'3')
    assert queues.names() == ['stream-a', 'stream-b']
    assert queues.status() == {'stream-a': 1, 'stream-b': 2}
    with pytest.raises(ValueError):
        queues.get('../escape')
    queues.close()
