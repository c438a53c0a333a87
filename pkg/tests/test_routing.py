import math
import random
from collections import deque

import pytest

from src.constants import ID_BITS
from src.errors import ConfigError
from src.overlay.election import HirschbergSinclair
from src.overlay.geo import (
    ROOT_BOUNDS,
    GeoPoint,
    Member,
    QuadTreeSnapshot,
    RegionInfo,
    bounds_for_path,
)
from src.overlay.routing import (
    RoutingTable,
    closest,
    responsible_for_cluster,
    responsible_for_index,
    responsible_for_target,
)
from src.sfc import (
    KeywordSpacePoint,
    KeywordSpaceRegion,
    clusters_for_region,
    encode_coords,
)


def random_ids(rng, count):
    return [rng.getrandbits(ID_BITS) for _ in range(count)]


def member(node_id, name='n', geo=GeoPoint(0, 0)):
    return Member(node_id, f'{name}:7400', geo)


# geography

def test_quadrant_digits_and_edges():
    assert ROOT_BOUNDS.quadrant_of(GeoPoint(-10, -10)) == 0
    assert ROOT_BOUNDS.quadrant_of(GeoPoint(-10, 10)) == 1
    assert ROOT_BOUNDS.quadrant_of(GeoPoint(10, -10)) == 2
    assert ROOT_BOUNDS.quadrant_of(GeoPoint(10, 10)) == 3
    # a point on the split lines belongs to the lower digit
    assert ROOT_BOUNDS.quadrant_of(GeoPoint(0, 0)) == 0
    assert bounds_for_path('3').contains(GeoPoint(45, 90))
    assert bounds_for_path('30') == ROOT_BOUNDS.child(3).child(0)


@pytest.mark.parametrize('lat, lon', [(91, 0), (-91, 0), (0, 181)])
def test_coordinates_are_validated(lat, lon):
    with pytest.raises(ConfigError):
        GeoPoint(lat, lon)


def test_geo_point_text_and_bytes():
    point = GeoPoint.parse('40.0583,-74.4056')
    assert GeoPoint.from_bytes(point.to_bytes()) == point
    assert str(point) == '40.0583,-74.4056'


def test_snapshot_split_and_leaf_lookup():
    root = QuadTreeSnapshot.rooted_at(member(1))
    assert root.tiles_root()
    assert root.leaf_for(GeoPoint(40, -74)).path == ''
    children = [RegionInfo(str(d), 10 + d, f'm{d}:7400') for d in range(4)]
    split = root.split('', children, issuer=1)
    assert split.newer_than(root)
    assert split.tiles_root()
    assert split.leaf_for(GeoPoint(40, -74)).path == '2'
    assert split.leaf_for(GeoPoint(-40, 74)).master_id == 11
    deeper = split.split('2', [RegionInfo('2' + str(d), 20 + d, 'x')
                               for d in range(4)], issuer=12)
    assert deeper.leaf_for(GeoPoint(40, -74)).path == '21'
    assert len(deeper.masters()) == 7


def test_snapshot_gaps_do_not_tile():
    partial = QuadTreeSnapshot(2, 1, {
        '0': RegionInfo('0', 1, 'a'), '1': RegionInfo('1', 2, 'b'),
    })
    assert not partial.tiles_root()
    assert partial.leaf_for(GeoPoint(40, 40)) is None
    assert not QuadTreeSnapshot().tiles_root()


def test_snapshot_ordering_and_fields():
    a = QuadTreeSnapshot(3, 5)
    b = QuadTreeSnapshot(3, 9)
    assert b.newer_than(a) and not a.newer_than(b)
    assert a.newer_than(None)
    snap = QuadTreeSnapshot.rooted_at(member(7)).resize('', 4)
    copy = QuadTreeSnapshot.from_fields(snap.to_fields())
    assert copy.leaves == snap.leaves
    assert copy.key == snap.key


# routing

def test_buckets_keep_old_entries_when_full():
    table = RoutingTable(own_id=0, bucket_size=2)
    high = 1 << (ID_BITS - 1)
    assert table.add(member(high + 1))
    assert table.add(member(high + 2))
    assert not table.add(member(high + 3))
    assert high + 3 not in table
    assert table.add(member(1))
    assert not table.add(member(0))
    assert len(table) == 3
    assert table.remove(high + 1).node_id == high + 1
    assert table.add(member(high + 3))


def test_find_neighbors_orders_by_xor():
    rng = random.Random(3)
    ids = random_ids(rng, 50)
    table = RoutingTable(own_id=rng.getrandbits(ID_BITS), bucket_size=64)
    for node_id in ids:
        table.add(member(node_id))
    key = rng.getrandbits(ID_BITS)
    found = [m.node_id for m in table.find_neighbors(key, 5)]
    assert found == closest(ids, key, 5)
    excluded = table.find_neighbors(key, 5, exclude=found[:1])
    assert found[0] not in {m.node_id for m in excluded}


def _brute_cells(region, ids, count):
    out = set()
    for cell in region.cells():
        index = encode_coords(cell, region.order)
        out.update(responsible_for_index(index, ids, count,
                                         region.dimensions, region.order))
    return out


@pytest.mark.parametrize('seed', range(6))
def test_region_responsibility_matches_cellwise_union(seed):
    rng = random.Random(seed)
    d, b = 2, 4
    ids = random_ids(rng, rng.randint(1, 40))
    count = rng.randint(1, 4)
    for _ in range(20):
        ranges = tuple(tuple(sorted(rng.randrange(1 << b) for _ in range(2)))
                       for _ in range(d))
        region = KeywordSpaceRegion(ranges, b)
        expected = _brute_cells(region, ids, count)
        assert responsible_for_target(region, ids, count) == expected
        cluster = clusters_for_region(region)
        assert responsible_for_cluster(cluster, ids, count, d, b) \
            == expected


def test_point_target_uses_nearest_members():
    rng = random.Random(9)
    ids = random_ids(rng, 30)
    point = KeywordSpacePoint((3, 7, 1), 4)
    index = encode_coords(point.coords, 4)
    assert responsible_for_target(point, ids, 3) \
        == set(responsible_for_index(index, ids, 3, 3, 4))


# election

def run_ring(ids, starters, failed=()):
    nodes = {}
    won = []
    queue = deque()

    def make(node_id):
        def send(kind, neighbor, candidate, round_, hops, direction, bad):
            queue.append((kind, neighbor, candidate, round_, hops,
                          direction, bad))
        return HirschbergSinclair(node_id, ids, send,
                                  lambda: won.append(node_id), failed)

    for node_id in ids:
        if node_id not in failed:
            nodes[node_id] = make(node_id)
    for node_id in starters:
        nodes[node_id].start()
    while queue:
        kind, neighbor, candidate, round_, hops, direction, bad = \
            queue.popleft()
        target = nodes[neighbor]
        if kind == 'probe':
            target.on_probe(candidate, round_, hops, direction, bad)
        else:
            target.on_reply(candidate, round_, direction, bad)
    messages = sum(n.messages for n in nodes.values())
    return won, messages


@pytest.mark.parametrize('size', [1, 2, 3, 5, 8, 13])
def test_largest_id_wins(size):
    rng = random.Random(size)
    ids = random_ids(rng, size)
    won, messages = run_ring(ids, ids)
    assert won == [max(ids)]
    assert messages <= 8 * size * (1 + math.ceil(math.log2(size)))


def test_single_starter_wakes_the_ring():
    ids = list(range(1, 9))
    won, _ = run_ring(ids, [3])
    assert won == [8]


def test_failed_members_are_skipped():
    ids = list(range(1, 7))
    won, _ = run_ring(ids, [1, 2], failed=[6])
    assert won == [5]
