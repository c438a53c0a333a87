"""
Keyword space and Hilbert curve indexing.

Keywords become coordinates by positional base-64 encoding (six bits per
alphabet rank, truncated to the curve order) so that every prefix maps to
one contiguous coordinate interval. Points map to indices through Skilling's
transpose form of the Hilbert curve with axis 0 as the most significant bit
of every interleaved digit; the origin cell is index 0.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, List, Optional, Sequence, Tuple, Union

from .ar.profile import Profile
from .constants import ALPHABET, DIGIT_BITS, ID_BITS
from .errors import InvalidIndex, InvalidKeyword, ProfileTooWide

__all__ = [
    'Cluster',
    'KeywordSpacePoint',
    'KeywordSpaceRegion',
    'clusters_for_region',
    'cube_of',
    'encode_keyword',
    'hilbert_decode',
    'hilbert_encode',
    'index_to_key',
    'profile_to_target',
    'target_for_profile',
]

_RANK = {ch: i + 1 for i, ch in enumerate(ALPHABET)}

Interval = Tuple[int, int]


@dataclass(frozen=True)
class KeywordSpacePoint:
    coords: Tuple[int, ...]
    order: int

    def __post_init__(self):
        if not self.coords:
            raise ValueError('a point needs at least one coordinate')
        limit = 1 << self.order
        if any(c < 0 or c >= limit for c in self.coords):
            raise ValueError(f'coordinate outside [0, {limit})')

    @property
    def dimensions(self) -> int:
        return len(self.coords)

    def as_region(self) -> 'KeywordSpaceRegion':
        return KeywordSpaceRegion(
            tuple((c, c) for c in self.coords), self.order
        )


@dataclass(frozen=True)
class KeywordSpaceRegion:
    ranges: Tuple[Interval, ...]
    order: int

    def __post_init__(self):
        limit = 1 << self.order
        for lo, hi in self.ranges:
            if lo > hi or lo < 0 or hi >= limit:
                raise ValueError(f'bad interval [{lo}, {hi}]')

    @classmethod
    def full(cls, dimensions: int, order: int) -> 'KeywordSpaceRegion':
        top = (1 << order) - 1
        return cls(tuple((0, top) for _ in range(dimensions)), order)

    @property
    def dimensions(self) -> int:
        return len(self.ranges)

    @property
    def cell_count(self) -> int:
        count = 1
        for lo, hi in self.ranges:
            count *= hi - lo + 1
        return count

    def contains(self, coords: Sequence[int]) -> bool:
        return all(lo <= c <= hi for c, (lo, hi) in zip(coords, self.ranges))

    def cells(self) -> Iterator[Tuple[int, ...]]:
        """Every cell of the region; only sensible for small grids."""
        def walk(axis, prefix):
            if axis == len(self.ranges):
                yield prefix
                return
            lo, hi = self.ranges[axis]
            for c in range(lo, hi + 1):
                yield from walk(axis + 1, prefix + (c,))
        return walk(0, ())

    def classify(self, corner: Sequence[int], side: int) -> int:
        """0 = disjoint, 1 = partial overlap, 2 = cube fully inside."""
        inside = True
        for c, (lo, hi) in zip(corner, self.ranges):
            top = c + side - 1
            if c > hi or top < lo:
                return 0
            if c < lo or top > hi:
                inside = False
        return 2 if inside else 1


@dataclass(frozen=True)
class Cluster:
    segments: Tuple[Interval, ...]
    exact: bool = True

    def __len__(self):
        return len(self.segments)

    def __contains__(self, index: int) -> bool:
        return any(lo <= index <= hi for lo, hi in self.segments)

    @property
    def size(self) -> int:
        return sum(hi - lo + 1 for lo, hi in self.segments)


def _keyword_value(word: str, order: int) -> int:
    chars = -(-order // DIGIT_BITS)
    acc = 0
    for i in range(chars):
        acc = (acc << DIGIT_BITS) | (_RANK[word[i]] if i < len(word) else 0)
    return acc >> (chars * DIGIT_BITS - order)


def encode_keyword(term: str, order: int) -> Interval:
    """
    Maps a keyword (optionally ending in ``*``) to a closed coordinate
    interval over ``[0, 2**order)``.
    """
    word = term.casefold()
    if not word:
        raise InvalidKeyword('empty keyword')
    partial = word.endswith('*')
    if partial:
        word = word[:-1]
    if '*' in word:
        raise InvalidKeyword(f"'*' must be the last character: {term!r}")
    for ch in word:
        if ch not in _RANK:
            raise InvalidKeyword(f'character {ch!r} not allowed in {term!r}')
    lo = _keyword_value(word, order)
    if not partial:
        return lo, lo
    free = max(order - len(word) * DIGIT_BITS, 0)
    return lo, lo | ((1 << free) - 1)


def _axes_to_transpose(coords: Sequence[int], order: int) -> List[int]:
    x = list(coords)
    n = len(x)
    q = 1 << (order - 1)
    while q > 1:
        p = q - 1
        for i in range(n):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q >>= 1
    for i in range(1, n):
        x[i] ^= x[i - 1]
    t = 0
    q = 1 << (order - 1)
    while q > 1:
        if x[n - 1] & q:
            t ^= q - 1
        q >>= 1
    return [v ^ t for v in x]


def _transpose_to_axes(x: List[int], order: int) -> List[int]:
    n = len(x)
    top = 2 << (order - 1)
    t = x[n - 1] >> 1
    for i in range(n - 1, 0, -1):
        x[i] ^= x[i - 1]
    x[0] ^= t
    q = 2
    while q != top:
        p = q - 1
        for i in range(n - 1, -1, -1):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q <<= 1
    return x


def encode_coords(coords: Sequence[int], order: int) -> int:
    if len(coords) == 1:
        return coords[0]
    x = _axes_to_transpose(coords, order)
    index = 0
    for bit in range(order - 1, -1, -1):
        for v in x:
            index = (index << 1) | ((v >> bit) & 1)
    return index


def decode_index(index: int, dimensions: int, order: int) -> Tuple[int, ...]:
    if dimensions == 1:
        return (index,)
    x = [0] * dimensions
    pos = dimensions * order - 1
    for bit in range(order - 1, -1, -1):
        for i in range(dimensions):
            x[i] |= ((index >> pos) & 1) << bit
            pos -= 1
    return tuple(_transpose_to_axes(x, order))


def hilbert_encode(point: KeywordSpacePoint) -> int:
    return encode_coords(point.coords, point.order)


def hilbert_decode(index: int, dimensions: int,
                   order: int) -> KeywordSpacePoint:
    if index < 0 or index >= 1 << (dimensions * order):
        raise InvalidIndex(
            f'index {index} outside [0, 2^{dimensions * order})'
        )
    return KeywordSpacePoint(decode_index(index, dimensions, order), order)


def cube_of(prefix: int, level: int, dimensions: int,
            order: int) -> Tuple[Tuple[int, ...], int]:
    """
    Aligned cube holding every cell whose index starts with ``prefix``
    (``level`` digits of ``dimensions`` bits). The coarse order of cubes
    is the lower-order curve itself.
    """
    shift = order - level
    if level == 0:
        return (0,) * dimensions, 1 << order
    corner = decode_index(prefix, dimensions, level)
    return tuple(c << shift for c in corner), 1 << shift


def _merge(pieces: List[Interval]) -> List[Interval]:
    merged: List[Interval] = []
    for lo, hi in sorted(pieces):
        if merged and lo <= merged[-1][1] + 1:
            if hi > merged[-1][1]:
                merged[-1] = (merged[-1][0], hi)
        else:
            merged.append((lo, hi))
    return merged


def _coarsen(segments: List[Interval], limit: int) -> List[Interval]:
    extra = len(segments) - limit
    if extra <= 0:
        return segments
    gaps = sorted(
        range(len(segments) - 1),
        key=lambda i: (segments[i + 1][0] - segments[i][1], i)
    )
    bridged = set(gaps[:extra])
    out = [segments[0]]
    for i in range(1, len(segments)):
        if i - 1 in bridged:
            out[-1] = (out[-1][0], segments[i][1])
        else:
            out.append(segments[i])
    return out


@lru_cache(maxsize=1024)
def clusters_for_region(region: KeywordSpaceRegion,
                        max_segments: Optional[int] = None,
                        budget: Optional[int] = None) -> Cluster:
    """
    Curve segments covering ``region``. Refinement descends the curve's
    aligned cubes level by level; once the partial frontier exceeds the
    budget the remaining partial cubes are taken whole. With more segments
    than ``max_segments`` the smallest gaps are bridged first.
    """
    d, b = region.dimensions, region.order
    if budget is None:
        budget = max(64 * (max_segments or 64), 4096)
    state = region.classify((0,) * d, 1 << b)
    if state == 2:
        return Cluster(((0, (1 << (d * b)) - 1),))
    exact = True
    pieces: List[Interval] = []
    frontier = [0]
    level = 0
    while frontier:
        level += 1
        span = 1 << (d * (b - level))
        nxt = []
        for prefix in frontier:
            for digit in range(1 << d):
                child = (prefix << d) | digit
                corner, side = cube_of(child, level, d, b)
                state = region.classify(corner, side)
                if state == 2:
                    pieces.append((child * span, child * span + span - 1))
                elif state == 1:
                    nxt.append(child)
        frontier = nxt
        if len(frontier) > budget:
            pieces.extend((p * span, p * span + span - 1) for p in frontier)
            exact = False
            break
    segments = _merge(pieces)
    if max_segments is not None and len(segments) > max_segments:
        segments = _coarsen(segments, max_segments)
        exact = False
    return Cluster(tuple(segments), exact)


def _axis_interval(term, order: int) -> Interval:
    lo_text, hi_text = term.axis_text()
    if hi_text is None:
        return encode_keyword(lo_text, order)
    return encode_keyword(lo_text, order)[0], encode_keyword(hi_text, order)[1]


def profile_to_target(
        profile: Profile, dimensions: int, order: int
) -> Union[KeywordSpacePoint, KeywordSpaceRegion]:
    """
    All-exact profile covering every axis -> point; anything else -> region.
    Missing trailing axes are wildcards.
    """
    if len(profile) > dimensions:
        raise ProfileTooWide(
            f'{len(profile)} terms for a {dimensions}-dimensional space'
        )
    ranges = [_axis_interval(t, order) for t in profile.terms]
    ranges.extend((0, (1 << order) - 1)
                  for _ in range(dimensions - len(ranges)))
    if all(lo == hi for lo, hi in ranges):
        return KeywordSpacePoint(tuple(lo for lo, _ in ranges), order)
    return KeywordSpaceRegion(tuple(ranges), order)


def target_for_profile(profile: Profile, dimensions: int, order: int):
    """Like ``profile_to_target`` but routes wide profiles by their head."""
    return profile_to_target(
        profile.routing_terms(dimensions), dimensions, order
    )


def index_to_key(index: int, dimensions: int, order: int) -> int:
    """Scales a curve index into the 160-bit identifier space."""
    return index << (ID_BITS - dimensions * order)
