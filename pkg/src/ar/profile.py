"""
Profile grammar and associative selection.

A term names a set of keyword strings; a stored profile satisfies a query
when every query term shares at least one keyword with some stored term.
Textual syntax: ``attr``, ``attr:value``, ``attr:prefix*``, ``attr:*``,
``attr:lo..hi``, bare ``prefix*``, bare ``lo..hi`` and bare ``*``, joined
by commas.
"""
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, List, Optional, Tuple

from ..constants import ALPHABET, NUMERIC_WIDTH
from ..errors import InvalidKeyword

__all__ = [
    'Profile',
    'Term',
    'TermKind',
    'matches',
    'normalize_keyword',
    'terms_overlap',
]

_ALLOWED = frozenset(ALPHABET)
LOCATION_ATTRIBUTES = ('lat', 'long')


class TermKind(IntEnum):
    EXACT = 1
    PARTIAL = 2
    WILDCARD = 3
    RANGE = 4
    ATTRIBUTE = 5


def normalize_keyword(text: str, pad_numbers: bool = True) -> str:
    """Case-folds and validates a keyword; all-digit values are padded."""
    word = text.strip().casefold()
    if not word:
        raise InvalidKeyword('empty keyword')
    bad = [ch for ch in word if ch not in _ALLOWED]
    if bad:
        raise InvalidKeyword(f'character {bad[0]!r} not allowed in {text!r}')
    if pad_numbers and word.isdigit():
        word = word.zfill(NUMERIC_WIDTH)
    return word


@dataclass(frozen=True)
class Term:
    kind: TermKind
    attribute: Optional[str] = None
    value: Optional[str] = None
    upper: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> 'Term':
        raw = text.strip().casefold()
        if not raw:
            raise InvalidKeyword('empty term')
        if raw == '*':
            return cls(TermKind.WILDCARD)
        if '*' in raw[:-1]:
            raise InvalidKeyword(f"'*' must be the last character: {text!r}")
        if ':' in raw:
            attr, val = raw.split(':', 1)
            if not attr or attr.endswith('*') or '..' in attr:
                raise InvalidKeyword(f'bad attribute in {text!r}')
            attr = normalize_keyword(attr, pad_numbers=False)
            if not val:
                raise InvalidKeyword(f'missing value in {text!r}')
            return cls._with_value(attr, val, text)
        return cls._with_value(None, raw, text)

    @classmethod
    def _with_value(cls, attr: Optional[str], val: str, text: str) -> 'Term':
        if val == '*':
            return cls(TermKind.WILDCARD, attr)
        if val.endswith('*'):
            prefix = val[:-1]
            if '..' in prefix:
                raise InvalidKeyword(f'range with wildcard in {text!r}')
            prefix = normalize_keyword(prefix, pad_numbers=False)
            return cls(TermKind.PARTIAL, attr, prefix)
        if '..' in val:
            parts = val.split('..')
            if len(parts) != 2 or not all(parts):
                raise InvalidKeyword(f'bad range in {text!r}')
            lo, hi = (normalize_keyword(p) for p in parts)
            if lo > hi:
                raise InvalidKeyword(f'range bounds out of order in {text!r}')
            return cls(TermKind.RANGE, attr, lo, hi)
        word = normalize_keyword(val)
        if attr is None:
            return cls(TermKind.ATTRIBUTE, word)
        return cls(TermKind.EXACT, attr, word)

    @property
    def text(self) -> str:
        head = f'{self.attribute}:' if self.attribute is not None else ''
        if self.kind is TermKind.ATTRIBUTE:
            return self.attribute
        if self.kind is TermKind.EXACT:
            return f'{head}{self.value}'
        if self.kind is TermKind.PARTIAL:
            return f'{head}{self.value}*'
        if self.kind is TermKind.WILDCARD:
            return f'{head}*'
        return f'{head}{self.value}..{self.upper}'

    @property
    def is_exact(self) -> bool:
        return self.kind in (TermKind.EXACT, TermKind.ATTRIBUTE)

    def keyword_space(self) -> List[tuple]:
        """
        Keyword language as atoms: ``('eq', word)``, ``('pre', prefix)``
        or ``('rng', lo, hi)`` in plain string order.
        """
        head = f'{self.attribute}:' if self.attribute is not None else ''
        if self.kind is TermKind.ATTRIBUTE:
            return [('eq', self.attribute), ('pre', self.attribute + ':')]
        if self.kind is TermKind.EXACT:
            return [('eq', head + self.value)]
        if self.kind is TermKind.PARTIAL:
            return [('pre', head + self.value)]
        if self.kind is TermKind.WILDCARD:
            return [('pre', head)]
        return [('rng', head + self.value, head + self.upper)]

    def axis_text(self) -> Tuple[str, Optional[str]]:
        """
        Keyword text routed on this term's axis: ``(word, None)`` for a
        point, ``(prefix + '*', None)`` for a prefix, ``(lo, hi)`` for a
        range.
        """
        head = f'{self.attribute}:' if self.attribute is not None else ''
        if self.kind is TermKind.ATTRIBUTE:
            return self.attribute, None
        if self.kind is TermKind.EXACT:
            return head + self.value, None
        if self.kind is TermKind.PARTIAL:
            return head + self.value + '*', None
        if self.kind is TermKind.WILDCARD:
            return head + '*', None
        return head + self.value, head + self.upper

    def __str__(self):
        return self.text


def _atoms_overlap(a: tuple, b: tuple) -> bool:
    if a[0] == 'rng' and b[0] != 'rng':
        a, b = b, a
    if a[0] == 'pre' and b[0] == 'eq':
        a, b = b, a
    kind_a, kind_b = a[0], b[0]
    if kind_a == 'eq':
        word = a[1]
        if kind_b == 'eq':
            return word == b[1]
        if kind_b == 'pre':
            return word.startswith(b[1])
        return b[1] <= word <= b[2]
    if kind_a == 'pre':
        prefix = a[1]
        if kind_b == 'pre':
            return prefix.startswith(b[1]) or b[1].startswith(prefix)
        lo, hi = b[1], b[2]
        return prefix <= hi and (lo.startswith(prefix) or lo <= prefix)
    return max(a[1], b[1]) <= min(a[2], b[2])


def terms_overlap(stored: Term, query: Term) -> bool:
    """True when the two terms name at least one common keyword."""
    return any(
        _atoms_overlap(x, y)
        for x in stored.keyword_space()
        for y in query.keyword_space()
    )


@dataclass(frozen=True)
class Profile:
    terms: Tuple[Term, ...] = ()

    @classmethod
    def parse(cls, text: str) -> 'Profile':
        if text is None or not text.strip():
            return cls(())
        return cls(tuple(Term.parse(part) for part in text.split(',')))

    @classmethod
    def of(cls, *words: str) -> 'Profile':
        return cls(tuple(Term.parse(w) for w in words))

    @property
    def is_simple(self) -> bool:
        return bool(self.terms) and all(t.is_exact for t in self.terms)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __str__(self):
        return ','.join(t.text for t in self.terms)

    def to_bytes(self) -> bytes:
        return str(self).encode('ascii')

    def routing_terms(self, dimensions: int) -> 'Profile':
        """Leading terms that fit the keyword space; the rest only filter."""
        return Profile(self.terms[:dimensions])

    def extended(self, terms: Iterable[Term]) -> 'Profile':
        return Profile(self.terms + tuple(terms))

    def with_location(self, lat: float, lon: float) -> 'Profile':
        return self.extended((
            Term(TermKind.EXACT, 'lat', normalize_keyword(repr(float(lat)))),
            Term(TermKind.EXACT, 'long', normalize_keyword(repr(float(lon)))),
        ))

    def without_location(self) -> 'Profile':
        """Drops the exact ``lat:``/``long:`` terms a location added."""
        return Profile(tuple(
            t for t in self.terms
            if not (t.kind is TermKind.EXACT
                    and t.attribute in LOCATION_ATTRIBUTES)
        ))


def matches(stored: Profile, query: Profile) -> bool:
    """Every query term must be satisfied by some stored term."""
    return all(
        any(terms_overlap(s, q) for s in stored.terms)
        for q in query.terms
    )
