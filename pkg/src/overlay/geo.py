"""
Geographic partitioning: bounding boxes, quadrant digits and the quadtree
snapshot every master keeps.

Quadrant digits: 0 = south-west, 1 = south-east, 2 = north-west,
3 = north-east. A point on a shared edge belongs to the lower digit.
"""
import struct
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Tuple

from ..errors import ConfigError
from ..misc import short_id
from ..wire import Fields, Tag

__all__ = [
    'Bounds',
    'GeoPoint',
    'Member',
    'QuadTreeSnapshot',
    'ROOT_BOUNDS',
    'RegionInfo',
    'bounds_for_path',
]

_PAIR = struct.Struct('>dd')


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ConfigError(f'latitude {self.lat} outside [-90, 90]')
        if not -180.0 <= self.lon <= 180.0:
            raise ConfigError(f'longitude {self.lon} outside [-180, 180]')

    @classmethod
    def parse(cls, text: str) -> 'GeoPoint':
        lat, lon = (float(part) for part in text.split(','))
        return cls(lat, lon)

    def to_bytes(self) -> bytes:
        return _PAIR.pack(self.lat, self.lon)

    @classmethod
    def from_bytes(cls, raw: bytes) -> 'GeoPoint':
        return cls(*_PAIR.unpack(raw))

    def __str__(self):
        return f'{self.lat},{self.lon}'


@dataclass(frozen=True)
class Bounds:
    lat_lo: float
    lat_hi: float
    lon_lo: float
    lon_hi: float

    @property
    def mid(self) -> Tuple[float, float]:
        return ((self.lat_lo + self.lat_hi) / 2,
                (self.lon_lo + self.lon_hi) / 2)

    def contains(self, geo: GeoPoint) -> bool:
        return (self.lat_lo <= geo.lat <= self.lat_hi
                and self.lon_lo <= geo.lon <= self.lon_hi)

    def quadrant_of(self, geo: GeoPoint) -> int:
        mid_lat, mid_lon = self.mid
        return (0 if geo.lat <= mid_lat else 2) + \
            (0 if geo.lon <= mid_lon else 1)

    def child(self, digit: int) -> 'Bounds':
        mid_lat, mid_lon = self.mid
        north, east = digit >= 2, digit % 2 == 1
        return Bounds(
            mid_lat if north else self.lat_lo,
            self.lat_hi if north else mid_lat,
            mid_lon if east else self.lon_lo,
            self.lon_hi if east else mid_lon,
        )

    def children(self) -> List['Bounds']:
        return [self.child(d) for d in range(4)]


ROOT_BOUNDS = Bounds(-90.0, 90.0, -180.0, 180.0)


def bounds_for_path(path: str) -> Bounds:
    box = ROOT_BOUNDS
    for digit in path:
        box = box.child(int(digit))
    return box


@dataclass(frozen=True)
class Member:
    node_id: int
    endpoint: str
    geo: GeoPoint

    def to_fields(self) -> Fields:
        return Fields(node_id=self.node_id, sender=self.endpoint,
                      geo=self.geo.to_bytes())

    @classmethod
    def from_fields(cls, record: Fields) -> 'Member':
        return cls(record.get_int(Tag.NODE_ID), record.get_str(Tag.SENDER),
                   GeoPoint.from_bytes(record.raw(Tag.GEO)))

    def __str__(self):
        return f'{short_id(self.node_id)}@{self.endpoint}'


@dataclass(frozen=True)
class RegionInfo:
    """Leaf metadata replicated in snapshots; full membership is not."""
    path: str
    master_id: int
    master_endpoint: str
    ring_size: int = 1

    @property
    def bounds(self) -> Bounds:
        return bounds_for_path(self.path)

    @property
    def depth(self) -> int:
        return len(self.path)

    def to_fields(self) -> Fields:
        return Fields(region=self.path, node_id=self.master_id,
                      peer=self.master_endpoint, count=self.ring_size)

    @classmethod
    def from_fields(cls, record: Fields) -> 'RegionInfo':
        return cls(record.get_str(Tag.REGION), record.get_int(Tag.NODE_ID),
                   record.get_str(Tag.PEER), record.get_int(Tag.COUNT))


@dataclass
class QuadTreeSnapshot:
    version: int = 0
    issuer: int = 0
    leaves: Dict[str, RegionInfo] = field(default_factory=dict)

    @classmethod
    def rooted_at(cls, master: Member) -> 'QuadTreeSnapshot':
        root = RegionInfo('', master.node_id, master.endpoint, 1)
        return cls(1, master.node_id, {'': root})

    @property
    def key(self) -> Tuple[int, int]:
        """Ordering of competing snapshots: version, then issuer."""
        return self.version, self.issuer

    def newer_than(self, other: Optional['QuadTreeSnapshot']) -> bool:
        return other is None or self.key > other.key

    def leaf_for(self, geo: GeoPoint) -> Optional[RegionInfo]:
        path = ''
        box = ROOT_BOUNDS
        while path not in self.leaves:
            if len(path) > 32 or not self._has_below(path):
                return None
            digit = box.quadrant_of(geo)
            box = box.child(digit)
            path += str(digit)
        return self.leaves[path]

    def _has_below(self, path: str) -> bool:
        return any(p.startswith(path) for p in self.leaves)

    def masters(self) -> List[RegionInfo]:
        return [self.leaves[p] for p in sorted(self.leaves)]

    def with_leaf(self, info: RegionInfo) -> 'QuadTreeSnapshot':
        leaves = dict(self.leaves)
        leaves[info.path] = info
        return QuadTreeSnapshot(self.version, self.issuer, leaves)

    def bumped(self, issuer: int) -> 'QuadTreeSnapshot':
        return QuadTreeSnapshot(self.version + 1, issuer, dict(self.leaves))

    def split(self, path: str, children: Iterable[RegionInfo],
              issuer: int) -> 'QuadTreeSnapshot':
        leaves = {p: r for p, r in self.leaves.items() if p != path}
        for info in children:
            leaves[info.path] = info
        return QuadTreeSnapshot(self.version + 1, issuer, leaves)

    def resize(self, path: str, ring_size: int) -> 'QuadTreeSnapshot':
        info = self.leaves.get(path)
        if info is None or info.ring_size == ring_size:
            return self
        return self.with_leaf(replace(info, ring_size=ring_size))

    def tiles_root(self) -> bool:
        """True when the leaves partition the root box exactly."""
        def covered(path: str) -> bool:
            if path in self.leaves:
                return not any(p != path and p.startswith(path)
                               for p in self.leaves)
            if len(path) > 32 or not self._has_below(path):
                return False
            return all(covered(path + str(d)) for d in range(4))
        return covered('')

    def to_fields(self) -> Fields:
        return Fields(version=self.version, issuer=self.issuer,
                      leaf=[self.leaves[p].to_fields()
                            for p in sorted(self.leaves)])

    @classmethod
    def from_fields(cls, record: Fields) -> 'QuadTreeSnapshot':
        leaves = {}
        for item in record.get_nested_all(Tag.LEAF):
            info = RegionInfo.from_fields(item)
            leaves[info.path] = info
        return cls(record.get_int(Tag.VERSION), record.get_int(Tag.ISSUER),
                   leaves)
