import os
import random

import pytest

from src.ar.profile import Profile, matches
from src.store import Store, StoredEntry

D, B = 2, 12

WORDS = ['drone', 'lidar', 'radar', 'camera', 'temp', 'type:lidar',
         'type:radar', 'temp:12', 'temp:31', 'city:newark']
QUERY_TERMS = ['drone', 'li*', 'r*', '*', 'type:*', 'type:l*',
               'temp:10..20', 'temp:*', 'camera', 'city:new*', 'c*',
               'temp:00000031']


def entry(*words, data=b'payload', stored_at=1):
    return StoredEntry.create(Profile.of(*words), data, D, B,
                              stored_at=stored_at)


def digests(entries):
    return {e.digest for e in entries}


def open_store(path, **kwargs):
    return Store(str(path), D, B, **kwargs)


def test_put_then_exact_query(tmp_path):
    store = open_store(tmp_path)
    assert store.put(entry('drone', 'lidar'))
    found = store.query_exact(Profile.of('drone', 'lidar'))
    assert len(found) == 1
    assert found[0].data == b'payload'
    assert store.query_exact(Profile.of('drone', 'radar')) == []
    store.close()


def test_duplicate_digest_is_one_entry(tmp_path):
    store = open_store(tmp_path)
    assert store.put(entry('drone', 'lidar', stored_at=1))
    assert not store.put(entry('drone', 'lidar', stored_at=5))
    assert len(store) == 1
    assert store.query(Profile.of('drone', 'lidar'))[0].stored_at == 5
    assert store.stats.duplicates == 1


def test_hot_tier_stays_within_capacity(tmp_path):
    store = open_store(tmp_path, hot_capacity_bytes=4096)
    for i in range(64):
        store.put(entry('drone', f'n{i}', data=bytes(128)))
    assert store.hot_bytes <= 4096
    assert store.stats.evictions > 0
    assert len(store.query(Profile.of('drone', '*'))) == 64
    assert store.hot_bytes <= 4096


def test_wildcard_and_partial_queries(tmp_path):
    store = open_store(tmp_path)
    lidar = entry('drone', 'lidar')
    radar = entry('drone', 'radar')
    store.put(lidar)
    store.put(radar)
    both = store.query_wildcard(Profile.of('drone', '*'))
    assert digests(both) == {lidar.digest, radar.digest}
    only = store.query_wildcard(Profile.of('drone', 'li*'))
    assert digests(only) == {lidar.digest}


def test_delete_matching(tmp_path):
    store = open_store(tmp_path)
    store.put(entry('drone', 'lidar'))
    store.put(entry('drone', 'radar'))
    store.put(entry('camera'))
    assert store.delete_matching(Profile.of('drone', 'nothing')) == 0
    assert store.delete_matching(Profile.of('drone', 'li*')) == 1
    assert store.query(Profile.of('drone', 'li*')) == []
    assert store.delete_matching(Profile.of('*')) == 2
    assert len(store) == 0


def random_profile(rng):
    return Profile.of(*rng.sample(WORDS, rng.randint(1, 3)))


def random_query(rng):
    return Profile.of(*rng.sample(QUERY_TERMS, rng.randint(1, 2)))


def exact_oracle(corpus, query):
    return {d for d, e in corpus.items()
            if e.key_profile == query
            or e.key_profile.without_location() == query}


def check_against_linear_scan(path, size, seed):
    rng = random.Random(seed)
    store = open_store(path)
    corpus = {}
    for i in range(size):
        profile = random_profile(rng)
        if rng.random() < 0.2:
            profile = profile.with_location(rng.choice([40.5, -12.25]),
                                            rng.choice([-74.0, 3.5]))
        item = StoredEntry.create(profile, str(i % 97).encode(), D, B,
                                  stored_at=1)
        store.put(item)
        corpus[item.digest] = item
    for _ in range(200):
        query = random_query(rng)
        if query.is_simple:
            expected = exact_oracle(corpus, query)
        else:
            expected = {d for d, e in corpus.items()
                        if matches(e.key_profile, query)}
        assert digests(store.query(query)) == expected
        assert digests(store.query_wildcard(query)) == {
            d for d, e in corpus.items() if matches(e.key_profile, query)
        }
    for _ in range(50):
        query = random_profile(rng)
        assert digests(store.query_exact(query)) == \
            exact_oracle(corpus, query)
    query = Profile.of('drone', 'li*')
    expected = {d for d, e in corpus.items()
                if matches(e.key_profile, query)}
    assert store.delete_matching(query) == len(expected)
    for digest in expected:
        del corpus[digest]
    assert digests(store.entries()) == set(corpus)
    for _ in range(50):
        query = random_profile(rng)
        assert digests(store.query_exact(query)) == \
            exact_oracle(corpus, query)
    store.close()


def test_queries_agree_with_linear_scan(tmp_path):
    check_against_linear_scan(tmp_path, 2000, seed=7)


@pytest.mark.skipif(not os.getenv('RPMESH_BENCH'),
                    reason='set RPMESH_BENCH to run the full-size oracle')
def test_queries_agree_with_linear_scan_full_corpus(tmp_path):
    check_against_linear_scan(tmp_path, 10 ** 4, seed=8)


def test_exact_query_finds_location_extended_entries(tmp_path):
    store = open_store(tmp_path)
    here = StoredEntry.create(
        Profile.of('drone', 'lidar').with_location(10.0, 20.0),
        b'frame', D, B,
    )
    plain = entry('drone', 'lidar', data=b'plain')
    store.put(here)
    store.put(plain)
    found = store.query(Profile.of('drone', 'lidar'))
    assert digests(found) == {here.digest, plain.digest}
    assert digests(store.query(here.key_profile)) == {here.digest}
    assert store.query_exact(Profile.of('drone')) == []
    assert store.delete_matching(Profile.of('drone', 'lidar', 'lat:*')) == 1
    assert digests(store.query(Profile.of('drone', 'lidar'))) == \
        {plain.digest}


def test_recovery_without_clean_shutdown(tmp_path):
    store = open_store(tmp_path)
    kept = entry('drone', 'lidar')
    gone = entry('drone', 'radar')
    store.put(kept)
    store.put(gone)
    store.delete_matching(Profile.of('radar'))
    # no close(): the index file is never written
    reopened = open_store(tmp_path)
    assert digests(reopened.entries()) == {kept.digest}
    assert reopened.query_exact(Profile.of('drone', 'lidar'))[0].data == \
        b'payload'


def test_recovery_from_index_file_and_log_tail(tmp_path):
    store = open_store(tmp_path)
    first = entry('drone', 'lidar')
    store.put(first)
    store.close()
    assert os.path.exists(tmp_path / 'entries.idx')
    store = open_store(tmp_path)
    second = entry('camera')
    store.put(second)
    # crash after the second put: the index covers only the first
    reopened = open_store(tmp_path)
    assert digests(reopened.entries()) == {first.digest, second.digest}


def test_torn_tail_is_truncated(tmp_path):
    store = open_store(tmp_path)
    item = entry('drone', 'lidar')
    store.put(item)
    log = tmp_path / 'entries.log'
    good_size = log.stat().st_size
    with open(log, 'ab') as f:
        f.write(b'\x00\x00\x01\x00garbage')
    reopened = open_store(tmp_path)
    assert digests(reopened.entries()) == {item.digest}
    assert log.stat().st_size == good_size


def test_compaction_drops_tombstones(tmp_path):
    store = open_store(tmp_path)
    for i in range(50):
        store.put(entry('drone', f'n{i}'))
    store.delete_matching(Profile.of('drone', 'n1*'))
    before = store.cold.size
    store.compact()
    assert store.cold.size < before
    assert len(store.query(Profile.of('drone', '*'))) == 39
    store.close()
    reopened = open_store(tmp_path)
    assert len(reopened) == 39


def test_snapshot_sees_a_single_state(tmp_path):
    store = open_store(tmp_path)
    store.put(entry('drone', 'lidar'))
    with store.snapshot() as snap:
        store.put(entry('drone', 'radar'))
        store.delete_matching(Profile.of('lidar'))
        seen = snap.query(Profile.of('drone', '*'))
    assert [e.key_profile for e in seen] == [Profile.of('drone', 'lidar')]
    assert store.status()['entries'] == 1
