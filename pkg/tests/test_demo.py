import json
import os

import pytest

from src.benchmark import run_benchmark
from src.demo import THRESHOLD, run_simulated_demo, synthetic_records


def test_synthetic_records_are_reproducible():
    first = synthetic_records(20, seed=3)
    assert first == synthetic_records(20, seed=3)
    assert first != synthetic_records(20, seed=4)
    assert [json.loads(r)['SEQ'] for r in first] == list(range(20))


def test_simulated_workflow(tmp_path):
    report = run_simulated_demo(40, seed=7, data_dir=str(tmp_path))
    expected = sum(1 for r in synthetic_records(40, 7)
                   if json.loads(r)['RESULT'] >= THRESHOLD)
    assert report['rendezvous']
    assert report['peer'] == 'consumer:7400'
    assert report['queued'] == 40
    assert report['expected'] == expected
    assert report['fired'] == expected
    assert report['started'] == expected
    assert report['ok']


def test_benchmark_rows(tmp_path):
    rows = run_benchmark(records=50, size=64, directory=str(tmp_path))
    assert [r['method'] for r in rows] == ['mapped', 'fsync-per-record']
    assert all(r['records'] == 50 and r['seconds'] >= 0 for r in rows)
    assert rows[1]['speedup'] == 1.0


@pytest.mark.skipif(not os.getenv('RPMESH_BENCH'),
                    reason='throughput depends on the disk; set RPMESH_BENCH')
@pytest.mark.parametrize('size', [64, 1024])
def test_mapped_queue_beats_fsync_per_record(tmp_path, size):
    mapped, baseline = run_benchmark(records=5000, size=size,
                                     directory=str(tmp_path))
    assert mapped['records_per_s'] >= 2 * baseline['records_per_s']
