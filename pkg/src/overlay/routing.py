"""
XOR-metric routing inside one region ring and the responsibility mapping
from curve indices to rendezvous points.
"""
from collections import OrderedDict
from typing import Dict, Iterable, List, Optional, Sequence, Set, Union

from ..constants import ID_BITS
from ..sfc import (
    Cluster,
    KeywordSpacePoint,
    KeywordSpaceRegion,
    cube_of,
    encode_coords,
)
from .geo import Member

__all__ = [
    'RoutingTable',
    'closest',
    'responsible_for_cluster',
    'responsible_for_index',
    'responsible_for_target',
    'xor_distance',
]


def xor_distance(a: int, b: int) -> int:
    return a ^ b


def closest(ids: Iterable[int], key: int, count: int) -> List[int]:
    """The ``count`` identifiers nearest to ``key``, nearest first."""
    return sorted(ids, key=lambda i: i ^ key)[:count]


class RoutingTable:
    """
    Kademlia buckets indexed by the length of the shared identifier prefix.
    A full bucket keeps its long-lived entries.
    """

    def __init__(self, own_id: int, bucket_size: int = 20):
        self.own_id = own_id
        self.bucket_size = bucket_size
        self._buckets: Dict[int, 'OrderedDict[int, Member]'] = {}

    def _bucket_index(self, node_id: int) -> int:
        return (self.own_id ^ node_id).bit_length() - 1

    def add(self, member: Member) -> bool:
        if member.node_id == self.own_id:
            return False
        bucket = self._buckets.setdefault(
            self._bucket_index(member.node_id), OrderedDict()
        )
        if member.node_id in bucket:
            bucket[member.node_id] = member
            bucket.move_to_end(member.node_id)
            return True
        if len(bucket) >= self.bucket_size:
            return False
        bucket[member.node_id] = member
        return True

    def remove(self, node_id: int) -> Optional[Member]:
        bucket = self._buckets.get(self._bucket_index(node_id))
        if bucket is None:
            return None
        return bucket.pop(node_id, None)

    def get(self, node_id: int) -> Optional[Member]:
        bucket = self._buckets.get(self._bucket_index(node_id))
        return None if bucket is None else bucket.get(node_id)

    def __contains__(self, node_id: int) -> bool:
        return self.get(node_id) is not None

    def __len__(self):
        return sum(len(b) for b in self._buckets.values())

    def members(self) -> List[Member]:
        return [m for b in self._buckets.values() for m in b.values()]

    def find_neighbors(self, key: int, count: int,
                       exclude: Sequence[int] = ()) -> List[Member]:
        pool = [m for m in self.members() if m.node_id not in exclude]
        pool.sort(key=lambda m: m.node_id ^ key)
        return pool[:count]

    def clear(self):
        self._buckets.clear()


def _closest_union(prefix: int, length: int, ids: List[int], count: int,
                   out: Set[int], index_bits: int = ID_BITS):
    """
    Adds every identifier that is among the ``count`` nearest to at least
    one key starting with ``prefix`` (``length`` bits). Key bits after the
    first ``index_bits`` are always zero.
    """
    if count <= 0 or not ids:
        return
    if len(ids) <= count:
        out.update(ids)
        return
    shift = ID_BITS - length
    groups: Dict[int, List[int]] = {}
    for node_id in ids:
        groups.setdefault(node_id >> shift, []).append(node_id)
    taken = 0
    for high in sorted(groups, key=lambda h: h ^ prefix):
        group = groups[high]
        if taken + len(group) <= count:
            out.update(group)
            taken += len(group)
            if taken == count:
                return
            continue
        for bit in ((0, 1) if length < index_bits else (0,)):
            _closest_union((prefix << 1) | bit, length + 1, group,
                           count - taken, out, index_bits)
        return


def _aligned_blocks(lo: int, hi: int, total_bits: int):
    """Splits ``[lo, hi]`` into maximal aligned power-of-two blocks."""
    while lo <= hi:
        size = lo & -lo if lo else 1 << total_bits
        while size > hi - lo + 1:
            size >>= 1
        width = size.bit_length() - 1
        yield lo >> width, total_bits - width
        lo += size


def responsible_for_index(index: int, ids: Iterable[int], count: int,
                          dimensions: int, order: int) -> List[int]:
    key = index << (ID_BITS - dimensions * order)
    return closest(ids, key, count)


def responsible_for_cluster(cluster: Cluster, ids: Iterable[int],
                            count: int, dimensions: int,
                            order: int) -> Set[int]:
    """Union of the ``count`` nearest members over every clustered index."""
    ids = list(ids)
    out: Set[int] = set()
    total = dimensions * order
    for lo, hi in cluster.segments:
        for prefix, length in _aligned_blocks(lo, hi, total):
            _closest_union(prefix, length, ids, count, out, total)
    return out


def _constant_set(prefix: int, length: int, ids: List[int],
                  count: int) -> Optional[Set[int]]:
    """The nearest set when it is the same for every key in the block."""
    if len(ids) <= count:
        return set(ids)
    shift = ID_BITS - length
    groups: Dict[int, List[int]] = {}
    for node_id in ids:
        groups.setdefault(node_id >> shift, []).append(node_id)
    chosen: Set[int] = set()
    for high in sorted(groups, key=lambda h: h ^ prefix):
        group = groups[high]
        if len(chosen) + len(group) > count:
            return None
        chosen.update(group)
        if len(chosen) == count:
            return chosen
    return chosen


def _region_union(region: KeywordSpaceRegion, prefix: int, level: int,
                  ids: List[int], count: int, out: Set[int]):
    d, b = region.dimensions, region.order
    corner, side = cube_of(prefix, level, d, b)
    state = region.classify(corner, side)
    if state == 0:
        return
    if state == 2:
        _closest_union(prefix, level * d, ids, count, out, d * b)
        return
    fixed = _constant_set(prefix, level * d, ids, count)
    if fixed is not None:
        out.update(fixed)
        return
    for digit in range(1 << d):
        _region_union(region, (prefix << d) | digit, level + 1, ids,
                      count, out)


def responsible_for_target(
        target: Union[KeywordSpacePoint, KeywordSpaceRegion],
        ids: Iterable[int], count: int) -> Set[int]:
    """
    Every member among the ``count`` nearest to the scaled key of at least
    one cell of ``target``. Exact for any region size.
    """
    ids = list(ids)
    if isinstance(target, KeywordSpacePoint):
        index = encode_coords(target.coords, target.order)
        return set(responsible_for_index(
            index, ids, count, target.dimensions, target.order
        ))
    out: Set[int] = set()
    _region_union(target, 0, 0, ids, count, out)
    return out
