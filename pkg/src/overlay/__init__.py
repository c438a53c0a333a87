"""
Location-aware overlay: a quadtree of regions, one XOR-routed ring per leaf.
"""
from .election import HirschbergSinclair
from .geo import (
    ROOT_BOUNDS,
    Bounds,
    GeoPoint,
    Member,
    QuadTreeSnapshot,
    RegionInfo,
    bounds_for_path,
)
from .routing import (
    RoutingTable,
    closest,
    responsible_for_cluster,
    responsible_for_target,
)
from .service import LookupResult, Overlay, node_id_for

__all__ = [
    'Bounds',
    'GeoPoint',
    'HirschbergSinclair',
    'LookupResult',
    'Member',
    'Overlay',
    'QuadTreeSnapshot',
    'ROOT_BOUNDS',
    'RegionInfo',
    'RoutingTable',
    'bounds_for_path',
    'closest',
    'node_id_for',
    'responsible_for_cluster',
    'responsible_for_target',
]
