import os
import random

import pytest

from src.ar.profile import Profile
from src.constants import ID_BITS
from src.errors import InvalidIndex, InvalidKeyword, ProfileTooWide
from src.sfc import (
    KeywordSpacePoint,
    KeywordSpaceRegion,
    clusters_for_region,
    encode_keyword,
    hilbert_decode,
    hilbert_encode,
    index_to_key,
    profile_to_target,
    target_for_profile,
)

GOLDEN = os.path.join(os.path.dirname(__file__), 'data',
                      'hilbert_golden.txt')


def _golden():
    with open(GOLDEN) as f:
        for line in f:
            if not line.strip() or line.startswith('#'):
                continue
            left, index = line.split('->')
            d, b, coords = left.split()
            yield (int(d), int(b),
                   tuple(int(c) for c in coords.split(',')), int(index))


def test_golden_vectors():
    count = 0
    for d, b, coords, index in _golden():
        point = KeywordSpacePoint(coords, b)
        assert hilbert_encode(point) == index, (d, b, coords)
        assert hilbert_decode(index, d, b) == point
        count += 1
    assert count > 1000


@pytest.mark.parametrize('d, b', [(2, 1), (2, 3), (2, 6), (3, 2), (3, 4)])
def test_round_trip_and_adjacency(d, b):
    total = 1 << (d * b)
    seen = set()
    previous = None
    for index in range(total):
        point = hilbert_decode(index, d, b)
        assert hilbert_encode(point) == index
        seen.add(point.coords)
        if previous is not None:
            step = sum(abs(x - y) for x, y in zip(point.coords, previous))
            assert step == 1
        previous = point.coords
    assert len(seen) == total


def test_origin_is_index_zero():
    for d in (2, 3, 5):
        assert hilbert_encode(KeywordSpacePoint((0,) * d, 8)) == 0


def test_one_dimension_is_identity():
    for c in (0, 1, 77, 255):
        assert hilbert_encode(KeywordSpacePoint((c,), 8)) == c
        assert hilbert_decode(c, 1, 8).coords == (c,)


def test_decode_rejects_out_of_range_index():
    with pytest.raises(InvalidIndex):
        hilbert_decode(1 << 8, 2, 4)
    with pytest.raises(InvalidIndex):
        hilbert_decode(-1, 2, 4)


def test_keyword_order_and_prefixes():
    assert encode_keyword('abc', 32)[0] < encode_keyword('abd', 32)[0]
    assert encode_keyword('ab', 32)[0] < encode_keyword('abc', 32)[0]
    lo, hi = encode_keyword('comp*', 32)
    for word in ('comp', 'computer', 'compression'):
        assert lo <= encode_keyword(word, 32)[0] <= hi
    assert not lo <= encode_keyword('con', 32)[0] <= hi
    exact = encode_keyword('computer', 32)
    assert exact[0] == exact[1]


def test_long_prefix_fixes_the_whole_axis():
    lo, hi = encode_keyword('computer*', 16)
    assert lo == hi == encode_keyword('computer', 16)[0]


@pytest.mark.parametrize('term', ['', '*abc', 'a*b', 'spa ce', 'semi;colon'])
def test_bad_keywords(term):
    with pytest.raises(InvalidKeyword):
        encode_keyword(term, 16)


def _brute_index(order):
    return {
        hilbert_decode(i, 2, order).coords: i
        for i in range(1 << (2 * order))
    }


def test_clusters_match_cell_oracle_on_every_rectangle():
    order = 4
    index_of = _brute_index(order)
    side = 1 << order
    intervals = [(lo, hi) for lo in range(side) for hi in range(lo, side)]
    for rx in intervals:
        for ry in intervals:
            region = KeywordSpaceRegion((rx, ry), order)
            cluster = clusters_for_region(region)
            expected = {index_of[c] for c in region.cells()}
            covered = {i for lo, hi in cluster.segments
                       for i in range(lo, hi + 1)}
            assert cluster.exact
            assert covered == expected, region
            ends = [s for seg in cluster.segments for s in seg]
            assert ends == sorted(ends)


def test_segment_limit_bridges_gaps_and_stays_superset():
    region = KeywordSpaceRegion(((1, 6), (3, 12)), 4)
    full = clusters_for_region(region)
    assert len(full) > 2
    capped = clusters_for_region(region, max_segments=2)
    assert len(capped) == 2
    assert not capped.exact
    for lo, hi in full.segments:
        assert lo in capped and hi in capped


def test_whole_space_is_one_segment():
    cluster = clusters_for_region(KeywordSpaceRegion.full(3, 5))
    assert cluster.segments == ((0, (1 << 15) - 1),)


def test_random_regions_in_three_dimensions():
    rng = random.Random(11)
    order = 3
    index_of = {
        hilbert_decode(i, 3, order).coords: i for i in range(1 << 9)
    }
    for _ in range(200):
        ranges = []
        for _ in range(3):
            a, b = sorted(rng.randrange(8) for _ in range(2))
            ranges.append((a, b))
        region = KeywordSpaceRegion(tuple(ranges), order)
        cluster = clusters_for_region(region)
        assert {i for lo, hi in cluster.segments
                for i in range(lo, hi + 1)} \
            == {index_of[c] for c in region.cells()}


def test_profile_targets():
    point = profile_to_target(Profile.parse('drone,lidar,camera'), 3, 16)
    assert isinstance(point, KeywordSpacePoint)
    region = profile_to_target(Profile.parse('drone,lid*'), 3, 16)
    assert isinstance(region, KeywordSpaceRegion)
    # a missing trailing axis is a wildcard
    assert region.ranges[2] == (0, (1 << 16) - 1)
    with pytest.raises(ProfileTooWide):
        profile_to_target(Profile.parse('a,b,c,d'), 3, 16)
    routed = target_for_profile(Profile.parse('a,b,c,d'), 3, 16)
    assert routed == profile_to_target(Profile.parse('a,b,c'), 3, 16)


def test_index_scales_into_identifier_space():
    assert index_to_key(0, 3, 16) == 0
    assert index_to_key(1, 3, 16) == 1 << (ID_BITS - 48)
    top = (1 << 48) - 1
    assert index_to_key(top, 3, 16) < 1 << ID_BITS
